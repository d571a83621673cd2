#pragma once

// Build base: compile/link commands, source inventory and the function
// callgraph of the program under verification.

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "forge/ctop.hpp"

namespace forge::buildbase {

struct CompileCommand {
    std::string id;
    std::string input;   // one .c file, relative to the root
    std::string output;  // object file
    std::vector<std::string> options;

    friend bool operator==(const CompileCommand&, const CompileCommand&) = default;
};

enum class LinkKind { LD, AR };

struct LinkCommand {
    std::string id;
    std::vector<std::string> inputs;
    std::string output;
    LinkKind kind = LinkKind::LD;

    friend bool operator==(const LinkCommand&, const LinkCommand&) = default;
};

struct FunctionInfo {
    std::string name;
    std::string file;
    std::size_t line = 0;
    bool is_static = false;
    std::string return_type;
    std::vector<ctop::Param> params;

    friend bool operator==(const FunctionInfo&, const FunctionInfo&) = default;
};

struct CallSite {
    std::string caller;
    std::string callee;
    std::string file;
    std::size_t line = 0;
    std::size_t column = 0;  // byte offset of the callee token

    auto key() const { return std::tie(file, line, column, caller, callee); }
    friend bool operator<(const CallSite& a, const CallSite& b) { return a.key() < b.key(); }
    friend bool operator==(const CallSite& a, const CallSite& b) { return a.key() == b.key(); }
};

/// Result of scanning one source file.
struct Symbols {
    std::vector<FunctionInfo> definitions;  // file field left empty
    std::vector<CallSite> calls;            // file field left empty
    std::map<std::string, bool> static_flags;
};

class Callgraph {
public:
    void add_file(const std::string& file, Symbols symbols);

    const std::vector<FunctionInfo>& definitions() const noexcept { return definitions_; }
    const std::set<CallSite>& calls() const noexcept { return calls_; }
    const std::map<std::pair<std::string, std::string>, bool>& static_flags() const noexcept {
        return static_flags_;
    }

    /// Definitions named `name`, ordered by file.
    std::vector<const FunctionInfo*> lookup(std::string_view name) const;

    /// Files a call to `callee` from `from_file` resolves to: the static
    /// definition in the same file if any, otherwise every external one.
    std::vector<std::string> resolve(std::string_view callee, std::string_view from_file) const;

    /// Function names defined in `file`.
    std::set<std::string> defined_in(std::string_view file) const;

private:
    std::vector<FunctionInfo> definitions_;
    std::set<CallSite> calls_;
    std::map<std::pair<std::string, std::string>, bool> static_flags_;
};

struct BuildBase {
    std::filesystem::path root_dir;
    std::vector<CompileCommand> cc_commands;
    std::vector<LinkCommand> ld_commands;
    std::set<std::string> source_files;
    Callgraph callgraph;
    std::string provenance;

    std::filesystem::path absolute(const std::string& rel) const { return root_dir / rel; }
    std::string read_source(const std::string& rel) const;

    /// Number of lines of every source file, for coverage denominators.
    std::map<std::string, std::size_t> line_counts() const;
};

struct FileEdge {
    std::string caller_file;
    std::string callee_file;
    std::size_t weight = 0;

    friend bool operator==(const FileEdge&, const FileEdge&) = default;
};

struct FileGraph {
    std::set<std::string> nodes;
    std::vector<FileEdge> edges;  // sorted by (caller, callee)

    std::set<std::string> successors(const std::string& file) const;
};

/// Scans one C source text.
Symbols extract_symbols(std::string_view source);

/// Reads `build_base.json` or `compile_commands.json` from `dir`.
BuildBase ingest_build_base(const std::filesystem::path& dir);

/// Validates command/file invariants; throws IntegrityError or ConfigError.
void validate(const BuildBase& base);

FileGraph build_file_graph(const BuildBase& base);

/// For every link command id, the ids of commands producing its inputs.
std::map<std::string, std::vector<std::string>> command_dependencies(const BuildBase& base);

/// Source files of compile commands transitively feeding link output `output`.
std::set<std::string> sources_of(const BuildBase& base, const std::string& output);

nlohmann::json to_json(const BuildBase& base);
BuildBase from_json(const nlohmann::json& j);

}  // namespace forge::buildbase
