#include "forge/clex.hpp"

#include <algorithm>
#include <iterator>
#include <cctype>

#include "forge/error.hpp"

namespace forge::clex {

namespace {

constexpr std::string_view kKeywords[] = {
    "auto",     "break",    "case",     "char",          "const",        "continue", "default",
    "do",       "double",   "else",     "enum",          "extern",       "float",    "for",
    "goto",     "if",       "inline",   "int",           "long",         "register", "restrict",
    "return",   "short",    "signed",   "sizeof",        "static",       "struct",   "switch",
    "typedef",  "union",    "unsigned", "void",          "volatile",     "while",    "_Bool",
    "_Alignof", "_Generic", "typeof",   "__typeof__",    "__attribute__", "asm",     "__asm__",
    "__inline", "__inline__"};

constexpr std::string_view kTypeWords[] = {
    "void",     "char",   "short",    "int",    "long",     "float",  "double",  "signed",
    "unsigned", "_Bool",  "bool",     "struct", "union",    "enum",   "const",   "volatile",
    "static",   "extern", "register", "inline", "typedef", "size_t"};

constexpr std::string_view kPunct3[] = {
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==",
    "!=",  "&&",  "||",  "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^="};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

bool is_keyword(std::string_view word) noexcept {
    return std::find(std::begin(kKeywords), std::end(kKeywords), word) != std::end(kKeywords);
}

bool is_type_word(std::string_view word) noexcept {
    return std::find(std::begin(kTypeWords), std::end(kTypeWords), word) != std::end(kTypeWords);
}

bool is_identifier(std::string_view s) noexcept {
    if (s.empty() || !ident_start(s.front())) return false;
    return std::all_of(s.begin(), s.end(), ident_char);
}

std::size_t count_lines(std::string_view text) {
    if (text.empty()) return 0;
    auto n = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    return text.back() == '\n' ? n : n + 1;
}

Lexed lex(std::string_view src) {
    Lexed out;
    std::size_t i = 0;
    std::size_t line = 1;
    bool at_line_start = true;
    const std::size_t n = src.size();

    auto newline = [&] {
        ++line;
        at_line_start = true;
    };

    while (i < n) {
        char c = src[i];
        if (c == '\n') {
            newline();
            ++i;
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        if (c == '#' && at_line_start) {
            // Directive: skip to end of line, honoring continuations.
            while (i < n && src[i] != '\n') {
                if (src[i] == '\\' && i + 1 < n && src[i + 1] == '\n') {
                    i += 2;
                    ++line;
                    continue;
                }
                ++i;
            }
            continue;
        }
        at_line_start = false;
        if (c == '/' && i + 1 < n && src[i + 1] == '/') {
            std::size_t start = i;
            while (i < n && src[i] != '\n') ++i;
            out.comments.push_back({src.substr(start, i - start), start, line, line});
            continue;
        }
        if (c == '/' && i + 1 < n && src[i + 1] == '*') {
            std::size_t start = i;
            std::size_t start_line = line;
            i += 2;
            while (i < n && !(src[i] == '*' && i + 1 < n && src[i + 1] == '/')) {
                if (src[i] == '\n') ++line;
                ++i;
            }
            if (i >= n) throw ParseError("unterminated comment", start_line);
            i += 2;
            out.comments.push_back({src.substr(start, i - start), start, start_line, line});
            continue;
        }
        std::size_t start = i;
        if (ident_start(c)) {
            while (i < n && ident_char(src[i])) ++i;
            out.tokens.push_back({Kind::Identifier, src.substr(start, i - start), start, line});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            while (i < n && (ident_char(src[i]) || src[i] == '.' ||
                             ((src[i] == '+' || src[i] == '-') &&
                              (src[i - 1] == 'e' || src[i - 1] == 'E' || src[i - 1] == 'p' ||
                               src[i - 1] == 'P'))))
                ++i;
            out.tokens.push_back({Kind::Number, src.substr(start, i - start), start, line});
            continue;
        }
        if (c == '"' || c == '\'') {
            std::size_t start_line = line;
            ++i;
            while (i < n && src[i] != c) {
                if (src[i] == '\\' && i + 1 < n) {
                    if (src[i + 1] == '\n') ++line;
                    i += 2;
                    continue;
                }
                if (src[i] == '\n') throw ParseError("unterminated literal", start_line);
                ++i;
            }
            if (i >= n) throw ParseError("unterminated literal", start_line);
            ++i;
            out.tokens.push_back({c == '"' ? Kind::String : Kind::Char, src.substr(start, i - start),
                                  start, start_line});
            continue;
        }
        std::size_t len = 1;
        for (auto p : kPunct3) {
            if (src.substr(i, p.size()) == p) {
                len = p.size();
                break;
            }
        }
        out.tokens.push_back({Kind::Punct, src.substr(i, len), start, line});
        i += len;
    }
    return out;
}

std::size_t match_close(const std::vector<Token>& toks, std::size_t open) {
    if (open >= toks.size()) return toks.size();
    std::string_view o = toks[open].text;
    std::string_view c = o == "(" ? ")" : o == "[" ? "]" : o == "{" ? "}" : "";
    if (c.empty()) return toks.size();
    int depth = 0;
    for (std::size_t i = open; i < toks.size(); ++i) {
        if (toks[i].kind != Kind::Punct) continue;
        if (toks[i].text == o) {
            ++depth;
        } else if (toks[i].text == c) {
            if (--depth == 0) return i;
        }
    }
    return toks.size();
}

std::string join(const std::vector<Token>& toks, std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to && i < toks.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += toks[i].text;
    }
    return out;
}

}  // namespace forge::clex
