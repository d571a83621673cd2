#pragma once

// Error traces from violation witnesses, NOTE/ASSERT relevance, merged
// coverage with directory rollups, verdict statistics and expert marks.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "forge/buildbase.hpp"

namespace forge::results {

enum class TraceKind { Call, Return, Statement, Assumption, Error };

std::string_view to_string(TraceKind kind);

struct TraceEvent {
    std::string file;          // original file
    std::size_t line = 0;      // line in `file`
    std::size_t merged_line = 0;
    TraceKind kind = TraceKind::Statement;
    std::string function;      // enclosing function
    std::string text;          // source line, callee, or assumption
    bool relevant = true;
    std::optional<std::string> note;
    std::optional<std::string> assert_desc;
};

struct ErrorTrace {
    std::string program;  // name of the merged file
    std::vector<TraceEvent> events;
    /// merged line -> original (file, line), for every line the trace visits.
    std::map<std::size_t, std::pair<std::string, std::size_t>> source_refs;
};

/// Origin of each line of a text carrying `# N "file"` markers; marker lines
/// themselves map to ("", 0).
std::vector<std::pair<std::string, std::size_t>> line_origins(std::string_view text, const std::string& name);

/// Texts of the original files inside a merged program, placed at their
/// original line numbers.
std::map<std::string, std::string> split_merged(std::string_view merged, const std::string& name);

/// Linearizes the path from the entry node to a violation node. Throws
/// WitnessError on malformed XML or when no violation node is reachable.
ErrorTrace parse_witness(std::string_view graphml, std::string_view merged_source,
                         const std::string& program_name = "cil.i");

struct Annotation {
    enum Kind { Note, Assert } kind;
    std::string text;
};

/// NOTE/ASSERT comments of a model file, keyed by the line of the statement
/// each one precedes.
std::map<std::size_t, Annotation> model_annotations(std::string_view source);

/// `model_sources` maps original file names to their text. Events in those
/// files are relevant only when annotated; other events stay relevant. The
/// error event takes the description of the closest preceding assertion.
ErrorTrace annotate_relevance(ErrorTrace trace, const std::map<std::string, std::string>& model_sources);

nlohmann::json to_json(const ErrorTrace& trace);
ErrorTrace trace_from_json(const nlohmann::json& j);

// Coverage ------------------------------------------------------------------

struct FileTotals {
    std::size_t lines = 0;
    std::size_t functions = 0;
};

/// Line counts and defined-function counts of every source in the base.
std::map<std::string, FileTotals> file_totals(const buildbase::BuildBase& base);
/// The same for file texts, e.g. from split_merged().
std::map<std::string, FileTotals> file_totals(const std::map<std::string, std::string>& sources);

struct Counts {
    std::size_t lines_total = 0;
    std::size_t lines_covered = 0;
    std::size_t functions_total = 0;
    std::size_t functions_covered = 0;

    Counts& operator+=(const Counts& o);
    friend bool operator==(const Counts&, const Counts&) = default;
};

struct FileCoverage {
    Counts counts;
    std::set<std::size_t> lines;
    std::set<std::string> functions;  // covered
    std::set<std::string> known_functions;

    friend bool operator==(const FileCoverage&, const FileCoverage&) = default;
};

enum class Denominator { Considered, AllSources };

struct CoverageReport {
    std::map<std::string, FileCoverage> files;
    /// Every ancestor directory of a file, "" being the root.
    std::map<std::string, Counts> directories;
    /// Files named by reports but absent from the totals.
    std::set<std::string> flagged;

    friend bool operator==(const CoverageReport&, const CoverageReport&) = default;
};

/// Truncating integer percentage (24000 of 37000 is 64).
int coverage_percent(std::size_t covered, std::size_t total);

/// Reports use the miniver layout {"files": {f: {"lines": [...], "functions": {fn: bool}}}}.
CoverageReport merge_coverage(const std::vector<nlohmann::json>& reports, const std::map<std::string, FileTotals>& totals,
                              Denominator denominator = Denominator::Considered);

/// `file:line` per line; blank lines and '#' comments ignored.
nlohmann::json parse_hit_list(std::string_view text);

nlohmann::json to_json(const CoverageReport& report);

// Statistics ----------------------------------------------------------------

struct Share {
    std::size_t count = 0;
    int percent = 0;
};

/// Nearest-integer percentages of each count over their sum (half rounds up).
std::map<std::string, Share> shares(const std::map<std::string, std::size_t>& counts);

struct VerdictRecord {
    std::string kind;                 // Safe, Unsafe, Unknown
    std::string unknown_reason;       // for Unknown
    std::string false_alarm_reason;   // assessed Unsafe: environment, requirement_spec, verifier, other
};

struct VerdictStatistics {
    std::size_t total = 0;
    std::map<std::string, Share> kinds;
    std::map<std::string, Share> unknown_reasons;
    std::map<std::string, Share> false_alarm_reasons;
};

VerdictStatistics verdict_statistics(const std::vector<VerdictRecord>& verdicts);
nlohmann::json to_json(const VerdictStatistics& stats);

// Marks ---------------------------------------------------------------------

enum class VerdictClass { Fault, FalseAlarmEnvironment, FalseAlarmRequirementSpec, FalseAlarmVerifier, FalseAlarmOther };

std::string_view to_string(VerdictClass c);
/// Throws ConfigError on an unknown name.
VerdictClass verdict_class_from(std::string_view name);

struct SignatureEntry {
    std::string function;
    std::string text;

    friend bool operator==(const SignatureEntry&, const SignatureEntry&) = default;
    friend auto operator<=>(const SignatureEntry&, const SignatureEntry&) = default;
};

struct Signature {
    std::vector<SignatureEntry> events;  // unsafe results
    std::string failure;                 // internal failures, digits stripped

    bool empty() const { return events.empty() && failure.empty(); }
    friend bool operator==(const Signature&, const Signature&) = default;
};

/// Relevant annotated events as (function, text), plus relevant calls into
/// non-model code as (function, "call f"). Consecutive repeats collapse.
Signature mark_signature(const ErrorTrace& trace);
Signature failure_signature(std::string_view reason);
std::string strip_digits(std::string_view text);

nlohmann::json to_json(const Signature& s);
Signature signature_from_json(const nlohmann::json& j);

struct MarkRevision {
    std::size_t version = 1;
    VerdictClass verdict_class = VerdictClass::Fault;
    std::string description;
    std::vector<std::string> tags;
    std::string author;
};

struct Mark {
    std::string id;
    Signature signature;
    std::vector<MarkRevision> history;  // append-only, last is current

    const MarkRevision& current() const { return history.back(); }
};

nlohmann::json to_json(const Mark& m);
Mark mark_from_json(const nlohmann::json& j);

enum class AssessmentMode { Manual, Automatic };

struct Assessment {
    std::string task;
    std::string mark;
    AssessmentMode mode = AssessmentMode::Automatic;

    friend bool operator==(const Assessment&, const Assessment&) = default;
};

/// One automatic assessment per mark whose signature equals `signature`.
std::vector<Assessment> auto_assess(const std::string& task, const Signature& signature, const std::vector<Mark>& marks);

}  // namespace forge::results
