#pragma once

// Requirement-specification bases, verifier profiles and the four-file
// verification task bundle (program, property, task definition, benchmark).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "forge/buildbase.hpp"
#include "forge/pfg.hpp"

namespace forge::taskgen {

struct PluginOptions {
    std::string name;
    nlohmann::json options = nlohmann::json::object();
};

struct ResolvedReqSpec {
    std::string id;  // e.g. kernel:locking:rwlock
    std::string template_name;
    std::vector<PluginOptions> plugins;  // template order, node-only plugins appended

    const nlohmann::json* plugin(const std::string& name) const;
    std::string verifier_profile() const;
    std::string verifier_name() const;
    std::string verifier_version() const;
    /// RSG "common models" followed by the spec's own "models".
    std::vector<std::string> model_files() const;
};

/// Leaves of the "requirement specifications" tree in depth-first order.
std::vector<ResolvedReqSpec> resolve_req_specs(const nlohmann::json& base);

struct ResolvedProfile {
    std::vector<std::pair<std::string, std::string>> options;  // flag, value ("" for bare flags)
    std::vector<std::string> safety_properties;                // with {entry_point} placeholders
};

ResolvedProfile resolve_profile(const nlohmann::json& store, const std::string& name, const std::string& tool,
                                const std::string& version);

struct Limits {
    std::int64_t cpu_seconds = 270;
    std::int64_t wall_seconds = 600;
    std::int64_t memory_bytes = std::int64_t{1} << 30;

    /// ceil(cpu_seconds * 300 / 270)
    std::int64_t hard_time_limit() const;
};

struct VerificationTask {
    std::string id;
    std::string fragment;
    std::string requirement;
    std::string program;    // cil.i
    std::string property;   // safe-prps.prp
    std::string task_def;   // cil.yml
    std::string benchmark;  // benchmark.xml
    Limits limits;
    int priority = 0;
    std::string tool;
    /// Files of the merged program that are models rather than fragment code.
    std::vector<std::string> models;
};

std::string property_file(const ResolvedProfile& profile, const std::string& entry_point);
std::string task_definition();
std::string benchmark_definition(const ResolvedProfile& profile, const std::string& tool, const Limits& limits);

VerificationTask emit_task(const std::string& fragment, const ResolvedReqSpec& spec, const ResolvedProfile& profile,
                           const std::string& harness, const Limits& limits = {},
                           const std::string& entry_point = "entry_point", int priority = 0);

/// Directory name of a task: its id with path-hostile characters replaced.
std::string task_dir_name(const std::string& id);

/// Writes cil.i, safe-prps.prp, cil.yml, benchmark.xml and task.json.
void write_task(const std::filesystem::path& dir, const VerificationTask& task);
VerificationTask read_task(const std::filesystem::path& dir);
nlohmann::json task_metadata(const VerificationTask& task);

struct PrepareInput {
    const buildbase::BuildBase* base = nullptr;
    std::vector<pfg::ProgramFragment> fragments;  // targets only are used
    nlohmann::json spec_base;
    nlohmann::json profiles;
    std::vector<std::string> requirements;        // empty: all
    std::filesystem::path models_dir;             // RSG model files and their aspects
    std::filesystem::path spec_dir;               // relative paths in generator options
    Limits limits;
};

struct Prepared {
    std::vector<VerificationTask> tasks;
    std::vector<std::string> warnings;
};

/// One task per (target fragment, selected requirement).
Prepared prepare(const PrepareInput& input);

}  // namespace forge::taskgen
