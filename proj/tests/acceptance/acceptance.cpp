// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit when
// any criterion fails.

#include <chrono>
#include <functional>
#include <iomanip>
#include <numeric>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "forge/emg.hpp"
#include "forge/miniver.hpp"
#include "forge/pfg.hpp"
#include "forge/results.hpp"
#include "forge/sched.hpp"
#include "forge/taskgen.hpp"
#include "../unit/module_pipeline.hpp"
#include "../unit/sched_script.hpp"
#include "../unit/support.hpp"

using namespace forge;
using namespace forge::test;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Thrown by `expect` with the failed condition's description.
struct Failure {
    std::string what;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw Failure{what};
}

template <typename T>
std::string show(const std::set<T>& s) {
    std::ostringstream os;
    os << "{";
    for (const auto& e : s) {
        if constexpr (std::is_same_v<T, std::string>) {
            os << e << " ";
        } else {
            os << "[";
            for (const auto& x : e) os << x << " ";
            os << "]";
        }
    }
    os << "}";
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// 1 -------------------------------------------------------------------------

using K = emg::ProcessExpr::Kind;

emg::ProcessExpr random_process(std::mt19937& rng, int depth) {
    static const char* names[] = {"a", "b", "cb", "probe", "x_1", "reg"};
    auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<unsigned>(n)); };
    if (depth <= 1 || pick(3) == 0) {
        const char* n = names[pick(6)];
        switch (pick(5)) {
            case 0: return emg::ProcessExpr::leaf(K::Block, n);
            case 1: return emg::ProcessExpr::leaf(K::Receive, n, false);
            case 2: return emg::ProcessExpr::leaf(K::Receive, n, true);
            case 3: return emg::ProcessExpr::leaf(K::Send, n);
            default: return emg::ProcessExpr::leaf(K::Jump, n);
        }
    }
    std::vector<emg::ProcessExpr> kids;
    int count = 2 + pick(3);
    for (int i = 0; i < count; ++i) kids.push_back(random_process(rng, depth - 1));
    return pick(2) ? emg::ProcessExpr::seq(std::move(kids)) : emg::ProcessExpr::choice(std::move(kids));
}

std::string process_grammar() {
    auto start = std::chrono::steady_clock::now();
    std::mt19937 rng(2024);
    for (int i = 0; i < 1000; ++i) {
        auto ast = random_process(rng, 6);
        auto text = emg::print_process(ast);
        expect(emg::parse_process(text) == ast, "round trip failed for " + text);
    }
    auto B = [](const char* n) { return emg::ProcessExpr::leaf(K::Block, n); };
    auto scenario = emg::ProcessExpr::seq({emg::ProcessExpr::leaf(K::Receive, "a", true), B("b"),
                                       emg::ProcessExpr::choice({B("c"), emg::ProcessExpr::leaf(K::Jump, "d")}),
                                       emg::ProcessExpr::leaf(K::Send, "e")});
    expect(emg::parse_process("(!a).<b>.(<c> | {d}).[e]") == scenario, "scenario process string AST");
    auto callbacks = emg::ProcessExpr::seq(
        {emg::ProcessExpr::leaf(K::Receive, "callbacks", true), B("alloc"),
         emg::ProcessExpr::choice(
             {emg::ProcessExpr::seq({B("reg"), emg::ProcessExpr::choice({B("unreg"), B("fail")})}), B("skip")})});
    expect(emg::parse_process("(!callbacks).<alloc>.(<reg>.(<unreg> | <fail>) | <skip>)") == callbacks,
           "callbacks process string AST");
    double t = seconds_since(start);
    expect(t < 5.0, "took " + std::to_string(t) + "s, limit 5s");
    std::ostringstream os;
    os << "1000 random ASTs + 2 reference strings in " << std::fixed << std::setprecision(2) << t << "s (< 5s)";
    return os.str();
}

// 2 -------------------------------------------------------------------------

std::set<emg::Trace> harness_traces(const emg::HarnessBundle& harness, std::size_t max_len) {
    miniver::Program program(harness.main_source);
    miniver::Bounds bounds;
    bounds.loop_bound = 64;
    auto hits = [&](const miniver::Path& p) {
        return static_cast<std::size_t>(std::count_if(p.lines.begin(), p.lines.end(),
                                                      [&](std::size_t l) { return harness.action_lines.count(l); }));
    };
    auto ex = miniver::explore(program, harness.entry_point, bounds,
                               [&](const miniver::Path& partial) { return hits(partial) <= max_len; });
    std::set<emg::Trace> out;
    for (const auto& path : ex.paths) {
        if (path.status != miniver::PathStatus::Completed) continue;
        emg::Trace t;
        for (auto l : path.lines)
            if (auto it = harness.action_lines.find(l); it != harness.action_lines.end())
                t.push_back(it->second.action);
        out.insert(t);
    }
    return out;
}

std::string trace_semantics() {
    struct Case {
        const char* file;
        std::size_t max_len;
        std::set<emg::Trace> expected;  // by hand from the process strings
    };
    std::vector<Case> cases{
        {"models/scenario.json", 5, {{"a", "b", "c", "e"}, {"a", "b", "e"}, {"a", "b", "f", "e"}, {"a", "b", "f", "f", "e"}}},
        {"models/tty_callbacks.json",
         4,
         {{"callbacks", "alloc", "skip"}, {"callbacks", "alloc", "reg", "unreg"}, {"callbacks", "alloc", "reg", "fail"}}},
    };
    std::ostringstream os;
    for (const auto& c : cases) {
        auto model = emg::parse_model(load_fixture_json(c.file));
        expect(model.thread_models.size() == 1, std::string(c.file) + ": expected one scenario");
        auto enumerated = emg::enumerate_traces(model.thread_models.begin()->second, c.max_len);
        expect(enumerated == c.expected, std::string(c.file) + ": enumerate_traces gave " + show(enumerated));
        auto explored = harness_traces(emg::translate(model, {"fragment", {}, true}), c.max_len);
        expect(explored == c.expected, std::string(c.file) + ": miniver paths gave " + show(explored));
        os << fs::path(c.file).stem().string() << " " << c.expected.size() << " traces (len <= " << c.max_len << "); ";
    }
    return os.str() + "enumeration = harness exploration";
}

// 3 -------------------------------------------------------------------------

std::string end_to_end() {
    const std::string assert_text = "Decremented module reference counter should be greater than its initial state";
    auto start = std::chrono::steady_clock::now();
    TempDir tmp;
    auto prepared = prepare_module_tasks();
    for (const auto& t : prepared.tasks) taskgen::write_task(tmp.path() / "tasks" / taskgen::task_dir_name(t.id), t);
    tmp.write("job.json", R"({"id": "toy", "tasks_dir": "tasks"})");
    auto job = sched::load_job(tmp.path() / "job.json");
    expect(job.tasks.size() == 2, "expected 2 tasks, got " + std::to_string(job.tasks.size()));

    sched::CommandBackend backend({FORGE_EXE, "verify"});
    sched::SchedulerOptions opts;
    opts.workers = 2;
    std::vector<sched::Result> results;
    {
        sched::Scheduler scheduler(backend, opts);
        scheduler.submit(job);
        scheduler.wait();
        results = scheduler.results();
    }
    std::map<std::string, sched::Result> by_fragment;
    for (const auto& r : results) by_fragment[taskgen::read_task(r.task.dir).fragment] = r;
    expect(by_fragment.count("toy_unbalanced.ko") && by_fragment.count("toy_balanced.ko"), "missing results");

    const auto& bad = by_fragment.at("toy_unbalanced.ko");
    expect(bad.verdict.kind == sched::VerdictKind::Unsafe,
           "unbalanced module gave " + std::string(sched::to_string(bad.verdict.kind)) + " " + bad.verdict.reason);
    expect(bad.verdict.witness.has_value(), "no witness for the unbalanced module");
    auto merged = slurp(bad.task.dir / "cil.i");
    auto files = results::split_merged(merged, "cil.i");
    std::map<std::string, std::string> models;
    for (const auto& m : taskgen::read_task(bad.task.dir).models)
        if (files.count(m)) models[m] = files.at(m);
    auto trace = results::annotate_relevance(results::parse_witness(*bad.verdict.witness, merged), models);
    expect(!trace.events.empty(), "empty error trace");
    const auto& last = trace.events.back();
    expect(last.kind == results::TraceKind::Error, "trace does not end at the error event");
    expect(last.assert_desc && *last.assert_desc == assert_text,
           "error event carries \"" + last.assert_desc.value_or("") + "\"");

    const auto& good = by_fragment.at("toy_balanced.ko");
    expect(good.verdict.kind == sched::VerdictKind::Safe,
           "balanced module gave " + std::string(sched::to_string(good.verdict.kind)) + " " + good.verdict.reason);

    double t = seconds_since(start);
    expect(t < 10.0, "took " + std::to_string(t) + "s, limit 10s");
    std::ostringstream os;
    os << "unbalanced Unsafe (" << trace.events.size() << " events, ends at ASSERT), balanced Safe in " << std::fixed
       << std::setprecision(2) << t << "s (< 10s)";
    return os.str();
}

// 4 -------------------------------------------------------------------------

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string golden_formats() {
    auto golden = [](const char* name) { return slurp(fs::path(FORGE_GOLDEN) / name); };
    auto profile = taskgen::resolve_profile(load_fixture_json("specs/profiles.json"), "reachability", "CPAchecker",
                                            "trunk:31140");
    expect(taskgen::property_file(profile, "main") == golden("safe-prps.prp"), "property file differs from golden");
    auto yml = taskgen::task_definition();
    expect(yml == golden("cil.yml"), "task definition differs from golden");
    expect(yml.find("format_version: '1.0'") != std::string::npos, "format_version missing");
    expect(yml.find("input_files: 'cil.i'") != std::string::npos, "input_files missing");

    // The golden file elides options with "..."; its option lines must
    // appear in order inside <rundefinition>, everything else verbatim.
    auto xml = lines_of(taskgen::benchmark_definition(profile, "cpachecker", {}));
    auto want = lines_of(golden("benchmark.xml"));
    auto is_option = [](const std::string& l) { return l.find("<option ") != std::string::npos; };
    std::vector<std::string> want_frame, got_frame, want_opts, got_opts;
    for (const auto& l : want) {
        if (l.find("...") != std::string::npos) continue;
        (is_option(l) ? want_opts : want_frame).push_back(l);
    }
    for (const auto& l : xml) (is_option(l) ? got_opts : got_frame).push_back(l);
    expect(got_frame == want_frame, "benchmark definition frame differs from golden");
    auto at = got_opts.begin();
    for (const auto& o : want_opts) {
        at = std::find(at, got_opts.end(), o);
        expect(at != got_opts.end(), "option missing or out of order: " + o);
        ++at;
    }
    expect(xml[1].find("hardtimelimit=\"300\" timelimit=\"270\"") != std::string::npos, "default limits");
    return "property byte-equal, YAML byte-equal, benchmark frame equal with golden options in order, hardtimelimit=300 timelimit=270";
}

// 5 -------------------------------------------------------------------------

std::string profile_and_base() {
    auto profile = taskgen::resolve_profile(load_fixture_json("specs/profiles.json"), "reachability", "CPAchecker",
                                            "trunk:31140");
    auto has = [&](const std::string& flag, const std::string& value) {
        return std::find(profile.options.begin(), profile.options.end(), std::pair(flag, value)) != profile.options.end();
    };
    expect(has("-ldv-bam", ""), "-ldv-bam missing");
    expect(has("-setprop", "counterexample.export.exportExtendedWitness=true"), "extended witness option missing");

    auto specs = taskgen::resolve_req_specs(load_fixture_json("specs/requirements.json"));
    auto it = std::find_if(specs.begin(), specs.end(), [](const auto& s) { return s.id == "kernel:locking:rwlock"; });
    expect(it != specs.end(), "kernel:locking:rwlock not resolved");
    // Common models first, then the leaf's own model.
    std::vector<std::string> want{"linux/arch/asm/atomic.c", "linux/drivers/base/dd.c", "linux/kernel/locking/rwlock.c"};
    expect(it->model_files() == want, "rwlock models differ");
    return "reachability -> -ldv-bam + exportExtendedWitness; kernel:locking:rwlock models = common + rwlock.c";
}

// 6 -------------------------------------------------------------------------

std::string decomposition() {
    using Files = std::vector<std::string>;
    auto by_name = [](const std::vector<pfg::ProgramFragment>& fs) {
        std::map<std::string, Files> out;
        for (const auto& f : fs) out[f.name] = f.files;
        return out;
    };
    auto components = buildbase::ingest_build_base(fixture("components"));
    auto got = by_name(pfg::decompose(pfg::parse_config(load_fixture_json("components/pfg.json")), components, std::nullopt));
    std::map<std::string, Files> want{{"comp1.ko", {"comp1.c", "lib1.c", "lib2.c"}},
                                      {"comp2.ko", {"comp2.c", "helper.c", "lib1.c", "lib2.c"}}};
    expect(got == want, "component fragments differ from the oracle");

    auto bb = buildbase::ingest_build_base(fixture("busybox"));
    auto spec_doc = load_fixture_json("busybox/decomposition.json");
    auto spec = pfg::parse_spec(spec_doc);
    auto frags = pfg::decompose(pfg::parse_config(load_fixture_json("busybox/pfg.json")), bb, spec);
    expect(!frags.empty(), "no applet fragments");
    std::set<std::string> excluded;
    for (const auto& [_, v] : spec_doc.items())
        for (const auto& f : v.at("exclude from all fragments")) excluded.insert(f.get<std::string>());
    for (const auto& f : frags)
        for (const auto& file : f.files) expect(!excluded.count(file), f.name + " still contains " + file);
    std::map<std::string, Files> applets{
        {"ssl_client", {"libbb/wfopen.c", "libbb/wfopen_input.c", "networking/ssl_client.c", "networking/tls.c"}},
        {"tar", {"archival/tar.c", "archival/unpack.c", "libbb/wfopen.c", "libbb/wfopen_input.c"}},
        {"true", {"coreutils/true.c", "libbb/wfopen.c", "libbb/wfopen_input.c"}},
    };
    expect(by_name(frags) == applets, "applet fragments differ from the oracle");
    return "2 component fragments with library files; " + std::to_string(frags.size()) +
           " applet fragments free of " + std::to_string(excluded.size()) + " excluded files";
}

// 7 -------------------------------------------------------------------------

std::string statistics() {
    std::vector<results::VerdictRecord> v;
    v.insert(v.end(), 280, {"Unsafe", "", ""});
    v.insert(v.end(), 910, {"Safe", "", ""});
    v.insert(v.end(), 869, {"Unknown", "timeout", ""});
    auto s = results::verdict_statistics(v);
    int u = s.kinds.at("Unsafe").percent, sa = s.kinds.at("Safe").percent, un = s.kinds.at("Unknown").percent;
    expect(u == 14 && sa == 44 && un == 42,
           "got " + std::to_string(u) + "/" + std::to_string(sa) + "/" + std::to_string(un));

    // 24,000 of 37,000 lines under drivers/hid, spread over three files.
    std::map<std::string, results::FileTotals> totals{
        {"drivers/hid/hid-core.c", {20000, 0}}, {"drivers/hid/hid-input.c", {10000, 0}}, {"drivers/hid/usbhid/hid-quirks.c", {7000, 0}}};
    auto span = [](std::size_t n) {
        std::vector<std::size_t> l(n);
        std::iota(l.begin(), l.end(), 1);
        return l;
    };
    json report{{"files",
                 {{"drivers/hid/hid-core.c", {{"lines", span(17000)}}},
                  {"drivers/hid/hid-input.c", {{"lines", span(5000)}}},
                  {"drivers/hid/usbhid/hid-quirks.c", {{"lines", span(2000)}}}}}};
    auto merged = results::merge_coverage({report}, totals);
    const auto& hid = merged.directories.at("drivers/hid");
    expect(hid.lines_covered == 24000 && hid.lines_total == 37000, "hid rollup counts");
    int pct = results::coverage_percent(hid.lines_covered, hid.lines_total);
    expect(pct == 64, "hid coverage " + std::to_string(pct) + "%");
    return "280/910/869 -> 14%/44%/42%; hid 24000/37000 -> 64%";
}

// 8 -------------------------------------------------------------------------

std::string scheduler_properties() {
    auto start = std::chrono::steady_clock::now();
    std::mt19937 rng(20240601);
    std::size_t cancels = 0, tasks = 0;
    for (int i = 0; i < 200; ++i) {
        auto r = random_schedule(rng);
        cancels += r.cancel_job.has_value();
        for (const auto& j : r.jobs) tasks += j.tasks.size();
        auto why = check_random_schedule(r);
        expect(why.empty(), "schedule " + std::to_string(i) + ": " + why);
    }
    double t = seconds_since(start);
    expect(t < 30.0, "took " + std::to_string(t) + "s, limit 30s");
    std::ostringstream os;
    os << "200 schedules (" << tasks << " tasks, " << cancels << " with cancel) in " << std::fixed << std::setprecision(2)
       << t << "s (< 30s)";
    return os.str();
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<std::string()> run;
    };
    std::vector<Criterion> criteria{
        {"process-grammar round-trip", process_grammar},
        {"trace-semantics oracle", trace_semantics},
        {"end-to-end fault discovery", end_to_end},
        {"format golden files", golden_formats},
        {"profile/base resolution", profile_and_base},
        {"decomposition fixtures", decomposition},
        {"statistics reproduction", statistics},
        {"scheduler properties", scheduler_properties},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            detail = c.run();
            ok = true;
        } catch (const Failure& f) {
            detail = f.what;
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  " << c.name << ": " << detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
