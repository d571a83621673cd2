#pragma once

// Token-level scanner for C sources. Comments are dropped, preprocessor
// directive lines are skipped (never expanded). Every token keeps its byte
// offset so callers can splice the original text.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace forge::clex {

enum class Kind { Identifier, Number, String, Char, Punct };

struct Token {
    Kind kind;
    std::string_view text;
    std::size_t offset;  // byte offset in the source
    std::size_t line;    // 1-based

    bool is(std::string_view s) const noexcept { return text == s; }
    bool ident() const noexcept { return kind == Kind::Identifier; }
    std::size_t end() const noexcept { return offset + text.size(); }
};

struct Comment {
    std::string_view text;  // including delimiters
    std::size_t offset;
    std::size_t line;       // line where the comment starts
    std::size_t end_line;   // line where it ends
};

struct Lexed {
    std::vector<Token> tokens;
    std::vector<Comment> comments;
};

/// Tokenizes `source`. The returned views point into `source`.
Lexed lex(std::string_view source);

inline std::vector<Token> tokens(std::string_view source) { return lex(source).tokens; }

bool is_keyword(std::string_view word) noexcept;

/// Words that start a declaration (type names and storage/qualifier keywords).
bool is_type_word(std::string_view word) noexcept;

/// Index of the token closing the bracket opened at `open`, or `toks.size()`.
std::size_t match_close(const std::vector<Token>& toks, std::size_t open);

/// Token texts of [from, to) joined by single spaces; a whitespace-insensitive
/// normal form for declarations and types.
std::string join(const std::vector<Token>& toks, std::size_t from, std::size_t to);

bool is_identifier(std::string_view s) noexcept;

std::size_t count_lines(std::string_view text);

}  // namespace forge::clex
