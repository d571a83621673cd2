#pragma once

// File-scope structure of a C translation unit, recovered from tokens:
// function definitions with their bodies and parameters, and the remaining
// top-level declarations.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "forge/clex.hpp"

namespace forge::ctop {

struct Param {
    std::string type;  // normalized token text without the name
    std::string name;  // empty when unnamed

    friend bool operator==(const Param&, const Param&) = default;
};

struct FunctionDef {
    std::string name;
    std::size_t line = 0;
    bool is_static = false;
    std::string return_type;    // without storage-class words
    std::vector<Param> params;  // `(void)` yields none
    bool variadic = false;
    std::size_t decl_begin = 0;  // token index where the declaration starts
    std::size_t name_tok = 0;
    std::size_t params_open = 0;
    std::size_t params_close = 0;
    std::size_t body_open = 0;   // token index of '{'
    std::size_t body_close = 0;  // token index of matching '}'
};

enum class DeclKind { Typedef, Aggregate, Prototype, Variable, Other };

struct TopDecl {
    DeclKind kind = DeclKind::Other;
    std::size_t begin = 0;  // first token
    std::size_t end = 0;    // index of terminating ';'
    bool is_static = false;
    std::string name;       // declared name for prototypes, variables, typedefs
};

struct Unit {
    clex::Lexed lexed;
    std::vector<FunctionDef> functions;
    std::vector<TopDecl> decls;

    const std::vector<clex::Token>& tokens() const noexcept { return lexed.tokens; }
};

/// Scans `source`; throws ParseError on unbalanced braces.
Unit scan(std::string_view source);

/// Parameters of the parenthesized list [open, close].
std::vector<Param> parse_params(const std::vector<clex::Token>& toks, std::size_t open,
                                std::size_t close, bool* variadic = nullptr);

/// A function declarator such as `static inline void *kmalloc(size_t size, gfp_t flags)`.
struct Signature {
    std::string return_type;
    std::string name;
    std::vector<Param> params;
    bool variadic = false;
    bool is_static = false;

    /// Text of the declaration with the given function name.
    std::string render(const std::string& as_name) const;
};

/// Parses a function declaration (trailing ';' optional); throws
/// SyntaxError when no function name is found.
Signature parse_signature(std::string_view decl);

/// One parameter or variable declaration, e.g. `struct tty_driver *driver`.
Param parse_declaration(std::string_view decl);

/// Declares `name` with type text `type`, placing the name inside
/// function-pointer parentheses or before array brackets when present.
std::string declare(const std::string& type, const std::string& name);

/// Storage-class and function-specifier words dropped from return types.
bool is_storage_word(std::string_view w) noexcept;

}  // namespace forge::ctop
