#pragma once

#include <regex>
#include <string>
#include <string_view>

namespace forge {

/// Anchored full-match regular expression with POSIX-extended syntax.
class Pattern {
public:
    explicit Pattern(std::string source);

    bool matches(std::string_view text) const;
    const std::string& source() const noexcept { return source_; }

private:
    std::string source_;
    std::regex re_;
};

/// Shell-style wildcard match (`*`, `?`), as used for entry-point patterns.
bool glob_match(std::string_view pattern, std::string_view text);

}  // namespace forge
