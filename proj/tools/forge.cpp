// forge: command line front end for the verification pipeline.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "forge/bridge.hpp"
#include "forge/buildbase.hpp"
#include "forge/emg.hpp"
#include "forge/error.hpp"
#include "forge/miniver.hpp"
#include "forge/pfg.hpp"
#include "forge/sched.hpp"
#include "forge/taskgen.hpp"
#include "forge/weave.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace forge;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json load_json(const fs::path& p) {
    try {
        return json::parse(slurp(p));
    } catch (const json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    f << text;
    if (!f) throw ConfigError("cannot write " + out);
}

std::vector<pfg::ProgramFragment> decompose_dir(const buildbase::BuildBase& base, const std::string& config,
                                                const std::string& spec, const std::string& version) {
    std::optional<pfg::DecompositionSpec> s;
    if (!spec.empty()) s = pfg::parse_spec(load_json(spec), version);
    return pfg::decompose(pfg::parse_config(load_json(config)), base, s);
}

fs::path self_path(const char* argv0) {
    std::error_code ec;
    auto p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? fs::absolute(argv0) : p;
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forge: build base to verification verdicts"};
    app.require_subcommand(1);

    std::string base_dir, out, config, spec, version, fragments_file, fragment_name, pipeline, aspect, source;
    std::string requirements, profiles, models_dir, spec_dir, job_file, store_dir, task_dir;
    std::vector<std::string> reqs, backend_cmd;
    std::size_t workers = 1;
    int port = 8080;
    bool no_speculation = false;

    auto* cmd_base = app.add_subcommand("buildbase", "Ingest and validate a build base, print it as JSON");
    cmd_base->add_option("dir", base_dir, "Build base directory")->required();
    cmd_base->add_option("-o,--output", out, "Output file");

    auto* cmd_dec = app.add_subcommand("decompose", "Split a build base into program fragments");
    cmd_dec->add_option("dir", base_dir, "Build base directory")->required();
    cmd_dec->add_option("-c,--config", config, "Decomposition configuration (JSON)")->required();
    cmd_dec->add_option("-s,--spec", spec, "Decomposition specification (JSON)");
    cmd_dec->add_option("--version", version, "Program version in the specification");
    cmd_dec->add_option("-o,--output", out, "Output file");

    auto* cmd_gen = app.add_subcommand("generate", "Build and translate an environment model for one fragment");
    cmd_gen->add_option("dir", base_dir, "Build base directory")->required();
    cmd_gen->add_option("-f,--fragments", fragments_file, "Fragments (JSON from decompose)")->required();
    cmd_gen->add_option("-n,--fragment", fragment_name, "Fragment name")->required();
    cmd_gen->add_option("-p,--pipeline", pipeline, "Generator pipeline (JSON)")->required();
    cmd_gen->add_option("-o,--output", out, "Output directory")->required();

    auto* cmd_weave = app.add_subcommand("weave", "Apply an aspect file to a C source");
    cmd_weave->add_option("source", source, "C source")->required();
    cmd_weave->add_option("-a,--aspect", aspect, "Aspect file")->required();
    cmd_weave->add_option("-o,--output", out, "Output file");

    auto* cmd_prep = app.add_subcommand("prepare", "Generate verification tasks for every target fragment");
    cmd_prep->add_option("dir", base_dir, "Build base directory")->required();
    cmd_prep->add_option("-c,--config", config, "Decomposition configuration (JSON)")->required();
    cmd_prep->add_option("-s,--spec", spec, "Decomposition specification (JSON)");
    cmd_prep->add_option("--version", version, "Program version in the specification");
    cmd_prep->add_option("-r,--requirements", requirements, "Requirement specifications base (JSON)")->required();
    cmd_prep->add_option("-P,--profiles", profiles, "Verifier profiles (JSON)")->required();
    cmd_prep->add_option("-m,--models", models_dir, "Directory of requirement models and aspects")->required();
    cmd_prep->add_option("--spec-dir", spec_dir, "Base for relative paths in generator options");
    cmd_prep->add_option("--requirement", reqs, "Restrict to these requirement ids");
    cmd_prep->add_option("-o,--output", out, "Directory receiving one subdirectory per task")->required();

    auto* cmd_verify = app.add_subcommand("verify", "Run miniver on a task directory");
    cmd_verify->alias("miniver");
    cmd_verify->add_option("task", task_dir, "Task directory")->required();

    auto* cmd_run = app.add_subcommand("run", "Schedule a job file and print verdicts as they arrive");
    cmd_run->add_option("-j,--job", job_file, "Job file (JSON)")->required();
    cmd_run->add_option("-w,--workers", workers, "Parallel verifier runs")->check(CLI::PositiveNumber);
    cmd_run->add_flag("--no-speculation", no_speculation, "Run every task with its full memory limit");
    cmd_run->add_option("--backend", backend_cmd, "Verifier command; the task directory is appended");

    auto* cmd_serve = app.add_subcommand("serve", "Serve the HTTP API over a store directory");
    cmd_serve->add_option("--store", store_dir, "Store directory")->required();
    cmd_serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
    cmd_serve->add_option("-w,--workers", workers, "Parallel verifier runs")->check(CLI::PositiveNumber);
    cmd_serve->add_flag("--no-speculation", no_speculation, "Run every task with its full memory limit");
    cmd_serve->add_option("--backend", backend_cmd, "Verifier command; the task directory is appended");

    CLI11_PARSE(app, argc, argv);

    if (backend_cmd.empty()) backend_cmd = {self_path(argv[0]).string(), "verify"};

    try {
        if (*cmd_base) {
            auto base = buildbase::ingest_build_base(base_dir);
            buildbase::validate(base);
            emit(buildbase::to_json(base).dump(2) + "\n", out);
        } else if (*cmd_dec) {
            auto base = buildbase::ingest_build_base(base_dir);
            emit(pfg::to_json(decompose_dir(base, config, spec, version)).dump(2) + "\n", out);
        } else if (*cmd_gen) {
            auto base = buildbase::ingest_build_base(base_dir);
            auto fragments = pfg::fragments_from_json(load_json(fragments_file));
            auto it = std::find_if(fragments.begin(), fragments.end(),
                                   [&](const auto& f) { return f.name == fragment_name; });
            if (it == fragments.end()) throw ConfigError("no fragment named " + fragment_name);
            auto model = emg::run_generator_pipeline(*it, base, emg::parse_pipeline(load_json(pipeline)));
            auto harness = emg::translate(model, *it);
            fs::create_directories(out);
            emit(emg::to_json(model).dump(2) + "\n", (fs::path(out) / "model.json").string());
            emit(harness.main_source, (fs::path(out) / "environment.c").string());
            for (const auto& [name, text] : harness.aspects) emit(text, (fs::path(out) / name).string());
            std::cout << "entry point " << harness.entry_point << ", " << harness.aspects.size() << " aspect(s)\n";
        } else if (*cmd_weave) {
            auto woven = weave::weave(slurp(source), weave::parse_aspect(slurp(aspect)));
            emit(woven.text, out);
            for (std::size_t i = 0; i < woven.report.matches.size(); ++i)
                std::cerr << "advice " << i + 1 << ": " << woven.report.matches[i] << " match(es)\n";
        } else if (*cmd_prep) {
            auto base = buildbase::ingest_build_base(base_dir);
            taskgen::PrepareInput in;
            in.base = &base;
            in.fragments = decompose_dir(base, config, spec, version);
            in.spec_base = load_json(requirements);
            in.profiles = load_json(profiles);
            in.requirements = reqs;
            in.models_dir = models_dir;
            in.spec_dir = spec_dir.empty() ? fs::path(requirements).parent_path() : fs::path(spec_dir);
            auto prepared = taskgen::prepare(in);
            for (const auto& w : prepared.warnings) std::cerr << "warning: " << w << "\n";
            for (const auto& t : prepared.tasks) {
                auto dir = fs::path(out) / taskgen::task_dir_name(t.id);
                taskgen::write_task(dir, t);
                std::cout << dir.string() << "\n";
            }
        } else if (*cmd_verify) {
            auto v = miniver::run_task_dir(task_dir);
            std::cout << miniver::to_string(v.kind);
            if (!v.reason.empty()) std::cout << " (" << v.reason << ")";
            std::cout << "\n";
            if (!v.diagnostic.empty()) std::cerr << v.diagnostic << "\n";
        } else if (*cmd_run) {
            auto job = sched::load_job(job_file);
            sched::CommandBackend backend(backend_cmd);
            sched::SchedulerOptions opts;
            opts.workers = workers;
            opts.speculative = !no_speculation;
            sched::Scheduler scheduler(backend, opts, [](const sched::Result& r) {
                std::cout << r.task.id << "\t" << sched::to_string(r.verdict.kind);
                if (!r.verdict.reason.empty()) std::cout << "\t" << r.verdict.reason;
                std::cout << "\t" << r.measurement.wall_seconds << "s" << std::endl;
            });
            scheduler.submit(job);
            scheduler.wait();
            auto p = scheduler.progress(job.id);
            std::cout << p.solved << "/" << p.total << " solved in " << p.elapsed_seconds << "s\n";
        } else if (*cmd_serve) {
            sched::CommandBackend backend(backend_cmd);
            bridge::Options opts;
            opts.store_dir = store_dir;
            opts.workers = workers;
            opts.speculative = !no_speculation;
            bridge::Service service(opts, backend);
            httplib::Server server;
            service.mount(server);
            g_server = &server;
            std::signal(SIGINT, [](int) { g_server->stop(); });
            std::signal(SIGTERM, [](int) { g_server->stop(); });
            std::cerr << "listening on port " << port << "\n";
            if (!server.listen("0.0.0.0", port)) {
                std::cerr << "error: cannot listen on port " << port << "\n";
                return 1;
            }
        }
    } catch (const forge::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
