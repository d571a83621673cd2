#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace forge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FORGE_DEFINE_ERROR(Name)                 \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    }

FORGE_DEFINE_ERROR(ConfigError);
FORGE_DEFINE_ERROR(SpecError);
FORGE_DEFINE_ERROR(SemanticError);
FORGE_DEFINE_ERROR(TypeError);
FORGE_DEFINE_ERROR(GenerationError);
FORGE_DEFINE_ERROR(TranslationError);
FORGE_DEFINE_ERROR(MergeError);
FORGE_DEFINE_ERROR(TaskError);
FORGE_DEFINE_ERROR(SchedulerError);
FORGE_DEFINE_ERROR(WitnessError);

#undef FORGE_DEFINE_ERROR

/// A referenced file is missing from the build base.
class IntegrityError : public Error {
public:
    explicit IntegrityError(std::string path)
        : Error("dangling file reference: " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SyntaxError : public Error {
public:
    SyntaxError(const std::string& what, std::size_t column)
        : Error(what + " (column " + std::to_string(column) + ")"), column_(column) {}
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

/// No verification target survived pattern resolution.
class TargetError : public Error {
public:
    using Error::Error;
};

}  // namespace forge
