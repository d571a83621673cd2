#pragma once

// A bounded explicit-state reachability checker for a small C subset.
// Every nondeterministic choice is enumerated over a finite value set;
// paths are explored depth-first by replaying recorded choice prefixes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace forge::miniver {

struct Bounds {
    std::vector<std::int64_t> nondet_values{0, 1};
    std::size_t loop_bound = 16;     // back jumps to one target per activation
    std::size_t call_depth = 64;
    std::size_t max_steps = 200000;  // per path
    std::size_t max_paths = 200000;
};

enum class EventKind { Call, Return, Statement, Branch, Error };

std::string_view to_string(EventKind kind);

struct Event {
    std::string function;
    std::size_t line = 0;
    EventKind kind = EventKind::Statement;
    std::string callee;       // Call/Return
    std::string condition;    // Branch: source text of the condition
    bool taken = false;       // Branch outcome
};

enum class PathStatus { Completed, Error, Infeasible, Bounded, Pruned };

struct Path {
    PathStatus status = PathStatus::Completed;
    std::vector<std::size_t> lines;     // executed statement lines, in order
    std::vector<Event> events;
    std::vector<std::size_t> choices;   // index into the value set per choice point
};

/// A parsed program; throws ParseError or SyntaxError outside the subset.
class Program {
public:
    explicit Program(std::string_view text);
    ~Program();
    Program(Program&&) noexcept;
    Program& operator=(Program&&) noexcept;

    bool defines(const std::string& function) const;
    std::vector<std::string> functions() const;
    /// Line of each function definition.
    std::map<std::string, std::size_t> function_lines() const;
    /// Lines that hold at least one statement.
    std::set<std::size_t> statement_lines() const;

    struct Impl;
    const Impl& impl() const { return *impl_; }

private:
    std::unique_ptr<Impl> impl_;
};

/// Called after every executed statement with the path so far; returning
/// false prunes the path.
using LineObserver = std::function<bool(const Path& partial)>;

struct Exploration {
    std::vector<Path> paths;
    bool path_limit_hit = false;
};

/// Explores every path from `entry`. With `stop_at_error` the walk ends at
/// the first path reaching `__VERIFIER_error()`.
Exploration explore(const Program& program, const std::string& entry, const Bounds& bounds = {},
                    const LineObserver& observer = {}, bool stop_at_error = false);

/// Re-executes one path from its recorded choices.
Path replay(const Program& program, const std::string& entry, const std::vector<std::size_t>& choices,
            const Bounds& bounds = {});

enum class VerdictKind { Safe, Unsafe, Unknown };

std::string_view to_string(VerdictKind kind);

struct Verdict {
    VerdictKind kind = VerdictKind::Unknown;
    std::string reason;                 // Unknown only: timeout, unsupported, tool-failure
    std::vector<Event> trace;           // Unsafe only
    std::vector<std::size_t> choices;   // Unsafe only
    std::size_t explored_paths = 0;
    std::string witness;                // GraphML, Unsafe only
    nlohmann::json coverage;            // {"files": {name: {"lines": [...], "functions": {...}}}}
    std::string diagnostic;
};

/// Entry function named by a reachability property `CHECK( init(f()), LTL(G ! call(__VERIFIER_error())) )`;
/// empty when the property is of another kind.
std::string reachability_entry(std::string_view property);

/// Decides the reachability property for `program_text`; never throws.
Verdict check(std::string_view program_text, std::string_view property, const Bounds& bounds = {},
              const std::string& program_name = "cil.i");

/// GraphML violation witness of `trace`.
std::string witness_graphml(const std::vector<Event>& trace, const std::string& program_name);

/// Runs the checker on a task directory holding cil.i and safe-prps.prp and
/// writes verdict.txt, plus witness.graphml and coverage.json. Returns the verdict.
Verdict run_task_dir(const std::string& dir, const Bounds& bounds = {});

}  // namespace forge::miniver
