#pragma once

// Aspect files, token-level weaving of `around` advice into C sources, and
// merging of several sources into one translation unit.

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/ctop.hpp"

namespace forge::weave {

enum class AdviceKind { Call, Execution };

struct Advice {
    AdviceKind kind = AdviceKind::Call;
    ctop::Signature signature;
    std::string body;  // text between the braces
};

/// Parses `around: call(...) {...}` and `around: execution(...) {...}`
/// clauses; other advice words raise SyntaxError.
std::vector<Advice> parse_aspect(std::string_view text);

struct WeaveReport {
    std::vector<std::size_t> matches;                          // per advice
    std::vector<std::pair<std::size_t, std::size_t>> ranges;   // replaced [begin, end) in the input
};

struct Woven {
    std::string text;
    WeaveReport report;
};

/// Wrapper functions generated for call advice carry this prefix.
inline constexpr std::string_view kWrapperPrefix = "ldv_weave_";

/// Applies advice to `source`. Line numbers of the input are preserved.
Woven weave(std::string_view source, const std::vector<Advice>& advice);

struct SourceFile {
    std::string name;
    std::string text;
};

struct LineOrigin {
    std::string file;  // empty for generated lines
    std::size_t line = 0;
};

struct MergeOptions {
    std::string entry = "entry_point";
    bool prune = true;
};

struct Merged {
    std::string text;
    std::vector<LineOrigin> lines;          // index = merged line - 1
    std::vector<std::string> pruned;        // removed function definitions
    std::map<std::string, std::string> renamed;  // "file:name" -> new name
};

/// Concatenates sources into one unit: file-scope statics are renamed
/// `name__fN`, repeated identical type definitions dropped, and functions
/// unreachable from the entry point and weave wrappers removed. Throws
/// MergeError for a function defined non-statically in two files.
Merged merge(const std::vector<SourceFile>& sources, const MergeOptions& options = {});

}  // namespace forge::weave
