#include "doctest.h"

#include "forge/error.hpp"
#include "forge/miniver.hpp"
#include "forge/taskgen.hpp"
#include "support.hpp"

using namespace forge;
using namespace forge::taskgen;
using forge::test::TempDir;
using forge::test::fixture;
using forge::test::slurp;
using nlohmann::json;

namespace {

json load(const std::string& rel) { return json::parse(slurp(fixture(rel))); }

const ResolvedReqSpec& find(const std::vector<ResolvedReqSpec>& specs, const std::string& id) {
    for (const auto& s : specs)
        if (s.id == id) return s;
    throw std::runtime_error("no spec " + id);
}

bool has_option(const ResolvedProfile& p, const std::string& flag, const std::string& value) {
    return std::find(p.options.begin(), p.options.end(), std::pair(flag, value)) != p.options.end();
}

}  // namespace

TEST_CASE("requirement specifications base resolution") {
    auto specs = resolve_req_specs(load("specs/requirements.json"));
    std::vector<std::string> ids;
    for (const auto& s : specs) ids.push_back(s.id);
    CHECK(ids == std::vector<std::string>{"kernel:locking:rwlock", "kernel:locking:spinlock", "kernel:module",
                                          "memory safety"});

    const auto& rwlock = find(specs, "kernel:locking:rwlock");
    CHECK(rwlock.template_name == "loadable kernel modules and kernel subsystems");
    CHECK(rwlock.model_files() ==
          std::vector<std::string>{"linux/arch/asm/atomic.c", "linux/drivers/base/dd.c", "linux/kernel/locking/rwlock.c"});
    REQUIRE(rwlock.plugin("RSG"));
    CHECK(rwlock.plugin("RSG")->at("model compiler input file") == "scripts/mod/empty.c");
    CHECK(rwlock.verifier_profile() == "reachability");
    CHECK(rwlock.verifier_name() == "CPAchecker");
    CHECK(rwlock.verifier_version() == "trunk:31140");
    std::vector<std::string> order;
    for (const auto& p : rwlock.plugins) order.push_back(p.name);
    CHECK(order == std::vector<std::string>{"EMG", "RSG", "FVTP"});

    const auto& mem = find(specs, "memory safety");
    CHECK(mem.template_name == "memory safety for loadable kernel modules and kernel subsystems");
    CHECK(mem.verifier_profile() == "memory safety checking");
    CHECK(mem.model_files() == std::vector<std::string>{"linux/memory.c"});
}

TEST_CASE("requirement specifications: small trees and errors") {
    auto one = resolve_req_specs(json::parse(R"j({
        "templates": {"t": {"plugins": [{"name": "FVTP", "options": {"verifier profile": "p"}}]}},
        "requirement specifications": {"identifier": "only", "template": "t"}})j"));
    REQUIRE(one.size() == 1);
    CHECK(one[0].id == "only");

    CHECK_THROWS_AS(resolve_req_specs(json::parse(R"j({
        "templates": {},
        "requirement specifications": {"children": [{"identifier": "x"}]}})j")),
                    ConfigError);
    CHECK_THROWS_AS(resolve_req_specs(json::parse(R"j({
        "templates": {"t": {"plugins": [{"name": "A"}]}},
        "requirement specifications": {"template": "t", "children": [{"identifier": "x"}, {"identifier": "x"}]}})j")),
                    ConfigError);
    CHECK_THROWS_AS(resolve_req_specs(json::parse(R"j({
        "requirement specifications": {"template": "missing", "children": [{"identifier": "x"}]}})j")),
                    ConfigError);

    // Node options override template options per key, other keys survive.
    auto merged = resolve_req_specs(json::parse(R"j({
        "templates": {"t": {"plugins": [{"name": "A", "options": {"k": 1, "keep": true}}]}},
        "requirement specifications": {"template": "t", "children": [
            {"identifier": "x", "plugins": [{"name": "A", "options": {"k": 2}}, {"name": "B"}]}]}})j"));
    CHECK(merged[0].plugin("A")->at("k") == 2);
    CHECK(merged[0].plugin("A")->at("keep") == true);
    CHECK(merged[0].plugin("B"));
}

TEST_CASE("verifier profile resolution") {
    auto store = load("specs/profiles.json");
    auto reach = resolve_profile(store, "reachability", "CPAchecker", "trunk:31140");
    CHECK(has_option(reach, "-ldv-bam", ""));
    CHECK(has_option(reach, "-setprop", "counterexample.export.exportExtendedWitness=true"));
    // Root-first concatenation.
    CHECK(reach.options.front() == std::pair<std::string, std::string>("-setprop",
                                                                         "counterexample.export.exportExtendedWitness=true"));
    CHECK(reach.safety_properties ==
          std::vector<std::string>{"CHECK( init({entry_point}()), LTL(G ! call(__VERIFIER_error())) )"});

    auto mem = resolve_profile(store, "memory safety checking", "CPAchecker", "trunk:31140");
    CHECK(has_option(mem, "-smg-ldv", ""));
    CHECK_FALSE(has_option(mem, "-ldv-bam", ""));
    CHECK(mem.safety_properties.front() == "CHECK( init({entry_point}()), LTL(G valid-free) )");

    CHECK_THROWS_AS(resolve_profile(store, "reachability", "CPAchecker", "trunk:1"), ConfigError);
    CHECK_THROWS_AS(resolve_profile(store, "nothing", "CPAchecker", "trunk:31140"), ConfigError);

    auto cyclic = json::parse(R"j({"templates": {"a": {"inherit": "b"}, "b": {"inherit": "a"}},
        "profiles": {"p": {"T": {"1": {"inherit": "a"}}}}})j");
    CHECK_THROWS_AS(resolve_profile(cyclic, "p", "T", "1"), ConfigError);

    auto flat = json::parse(R"j({"profiles": {"p": {"T": {"1": {
        "safety properties": ["X"], "add options": [{"-a": "1"}, {"-b": ""}]}}}}})j");
    auto f = resolve_profile(flat, "p", "T", "1");
    CHECK(f.options == std::vector<std::pair<std::string, std::string>>{{"-a", "1"}, {"-b", ""}});

    // Unrelated profiles declared in another order change nothing.
    auto reordered = json::parse(R"j({"profiles": {"q": {"T": {"1": {"safety properties": ["Y"]}}},
        "p": {"T": {"1": {"safety properties": ["X"], "add options": [{"-a": "1"}, {"-b": ""}]}}}}})j");
    CHECK(resolve_profile(reordered, "p", "T", "1").options == f.options);
}

TEST_CASE("task files") {
    auto store = load("specs/profiles.json");
    auto specs = resolve_req_specs(load("specs/requirements.json"));
    auto profile = resolve_profile(store, "reachability", "CPAchecker", "trunk:31140");
    auto task = emit_task("drivers/usb/serial/usbserial.ko", find(specs, "kernel:module"), profile, "int entry_point(void) { return 0; }\n");

    CHECK(task.property == "CHECK( init(entry_point()), LTL(G ! call(__VERIFIER_error())) )\n");
    CHECK(property_file(profile, "main") == "CHECK( init(main()), LTL(G ! call(__VERIFIER_error())) )\n");
    CHECK(task.task_def ==
          "format_version: '1.0'\n\ninput_files: 'cil.i'\n\nproperties:\n  - property_file: safe-prps.prp\n");
    CHECK(task.benchmark.rfind("<?xml version=\"1.0\" ?>\n<benchmark hardtimelimit=\"300\" timelimit=\"270\" "
                               "tool=\"cpachecker\">\n",
                               0) == 0);
    CHECK(task.benchmark.find("        <option name=\"-setprop\">counterexample.export.exportExtendedWitness=true</option>\n") !=
          std::string::npos);
    CHECK(task.benchmark.find("        <option name=\"-ldv-bam\"/>\n") != std::string::npos);
    CHECK(task.benchmark.find("    <tasks>\n        <include>cil.yml</include>\n    </tasks>\n    "
                              "<propertyfile>safe-prps.prp</propertyfile>\n</benchmark>\n") != std::string::npos);

    // Property lines substitute every placeholder.
    auto mem = resolve_profile(store, "memory safety checking", "CPAchecker", "trunk:31140");
    auto prp = property_file(mem, "entry_point");
    CHECK(prp.find("{entry_point}") == std::string::npos);
    CHECK(std::count(prp.begin(), prp.end(), '\n') == 3);

    CHECK_THROWS_AS(emit_task("f", find(specs, "kernel:module"), profile, "  \n"), TaskError);
    Limits bad;
    bad.cpu_seconds = 0;
    CHECK_THROWS_AS(emit_task("f", find(specs, "kernel:module"), profile, "x", bad), TaskError);
}

TEST_CASE("hard time limit follows the 300/270 ratio") {
    for (std::int64_t t = 1; t <= 2000; ++t) {
        Limits l;
        l.cpu_seconds = t;
        // Oracle: smallest h with h * 270 >= t * 300.
        std::int64_t h = 0;
        while (h * 270 < t * 300) ++h;
        CHECK(l.hard_time_limit() == h);
    }
    Limits one;
    one.cpu_seconds = 1;
    CHECK(one.hard_time_limit() == 2);
    CHECK(Limits{}.hard_time_limit() == 300);
}

TEST_CASE("task bundles round-trip through a directory") {
    auto store = load("specs/profiles.json");
    auto specs = resolve_req_specs(load("specs/requirements.json"));
    auto profile = resolve_profile(store, "reachability", "CPAchecker", "trunk:31140");
    auto task = emit_task("a/b.ko", find(specs, "kernel:locking:rwlock"), profile, "int entry_point(void){return 0;}\n",
                          {}, "entry_point", 3);
    TempDir dir;
    auto where = dir.path() / task_dir_name(task.id);
    CHECK(task_dir_name(task.id) == "a_b.ko_kernel_locking_rwlock");
    write_task(where, task);
    for (const char* f : {"cil.i", "safe-prps.prp", "cil.yml", "benchmark.xml", "task.json"})
        CHECK(std::filesystem::exists(where / f));
    auto back = read_task(where);
    CHECK(back.id == task.id);
    CHECK(back.priority == 3);
    CHECK(back.benchmark == task.benchmark);
    CHECK(back.limits.memory_bytes == task.limits.memory_bytes);
    // Byte-stable across emissions.
    auto again = emit_task("a/b.ko", find(specs, "kernel:locking:rwlock"), profile, "int entry_point(void){return 0;}\n",
                           {}, "entry_point", 3);
    CHECK(again.benchmark == task.benchmark);
    CHECK(again.property == task.property);
}

TEST_CASE("prepare: one task per target fragment and requirement") {
    auto dir = fixture("module");
    auto base = buildbase::ingest_build_base(dir);
    auto fragments = pfg::decompose(pfg::parse_config(json{{"decomposition_tactic", "linker"},
                                                           {"targets", {"toy_unbalanced.c", "toy_balanced.c"}}}),
                                    base, std::nullopt);
    PrepareInput in;
    in.base = &base;
    in.fragments = fragments;
    in.spec_base = load("module/requirements.json");
    in.profiles = load("specs/profiles.json");
    in.models_dir = dir;
    in.spec_dir = dir;
    auto prepared = prepare(in);
    std::size_t targets = std::count_if(fragments.begin(), fragments.end(), [](const auto& f) { return f.is_target; });
    CHECK(prepared.tasks.size() == targets * resolve_req_specs(in.spec_base).size());
    REQUIRE(prepared.tasks.size() == 2);

    std::map<std::string, miniver::VerdictKind> verdicts;
    for (const auto& t : prepared.tasks) {
        CHECK(t.requirement == "kernel:module");
        CHECK(t.benchmark.find("tool=\"miniver\"") != std::string::npos);
        CHECK(t.program.find("# 1 \"module.c\"") != std::string::npos);
        CHECK(t.program.find("ldv_weave_module_put") != std::string::npos);
        verdicts[t.fragment] = miniver::check(t.program, t.property).kind;
    }
    CHECK(verdicts.at("toy_unbalanced.ko") == miniver::VerdictKind::Unsafe);
    CHECK(verdicts.at("toy_balanced.ko") == miniver::VerdictKind::Safe);

    in.requirements = {"kernel:nothing"};
    CHECK_THROWS_AS(prepare(in), ConfigError);
}
