#include "forge/pattern.hpp"

#include <fnmatch.h>

#include "forge/error.hpp"

namespace forge {

Pattern::Pattern(std::string source) : source_(std::move(source)) {
    try {
        re_ = std::regex(source_, std::regex::extended);
    } catch (const std::regex_error& e) {
        throw ConfigError("invalid pattern '" + source_ + "': " + e.what());
    }
}

bool Pattern::matches(std::string_view text) const {
    return std::regex_match(text.begin(), text.end(), re_);
}

bool glob_match(std::string_view pattern, std::string_view text) {
    std::string p(pattern);
    std::string t(text);
    return fnmatch(p.c_str(), t.c_str(), 0) == 0;
}

}  // namespace forge
