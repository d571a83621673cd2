#include "forge/ctop.hpp"

#include "forge/error.hpp"

namespace forge::ctop {

using clex::Kind;
using clex::Token;

bool is_storage_word(std::string_view w) noexcept {
    return w == "static" || w == "inline" || w == "extern" || w == "__inline" ||
           w == "__inline__" || w == "register" || w == "_Noreturn";
}

namespace {

// Index of the '(' matching the ')' at `close`, scanning backwards.
std::size_t match_open_backward(const std::vector<Token>& toks, std::size_t close) {
    int depth = 0;
    for (std::size_t i = close + 1; i-- > 0;) {
        if (toks[i].kind != Kind::Punct) continue;
        if (toks[i].is(")")) {
            ++depth;
        } else if (toks[i].is("(")) {
            if (--depth == 0) return i;
        }
    }
    return toks.size();
}

// Skips trailing `__attribute__((...))` groups before `pos` (exclusive);
// returns the index of the last token that is not part of one.
std::size_t skip_attributes_backward(const std::vector<Token>& toks, std::size_t pos) {
    std::size_t i = pos;
    while (i > 0) {
        std::size_t last = i - 1;
        if (!toks[last].is(")")) return last;
        std::size_t open = match_open_backward(toks, last);
        if (open == toks.size() || open == 0) return last;
        const Token& before = toks[open - 1];
        if (before.is("__attribute__") || before.is("__attribute") || before.is("asm") ||
            before.is("__asm__")) {
            i = open - 1;
            continue;
        }
        return last;
    }
    return toks.size();
}

std::string return_type_text(const std::vector<Token>& toks, std::size_t begin, std::size_t name) {
    std::string out;
    for (std::size_t i = begin; i < name; ++i) {
        if (is_storage_word(toks[i].text)) continue;
        if (toks[i].is("__attribute__")) {
            std::size_t open = i + 1;
            std::size_t close = clex::match_close(toks, open);
            i = close;
            continue;
        }
        if (!out.empty()) out += ' ';
        out += toks[i].text;
    }
    return out;
}

TopDecl classify(const std::vector<Token>& toks, std::size_t begin, std::size_t end) {
    TopDecl d;
    d.begin = begin;
    d.end = end;
    for (std::size_t i = begin; i < end; ++i) {
        if (toks[i].is("static")) d.is_static = true;
    }
    if (begin >= end) return d;
    if (toks[begin].is("typedef")) {
        d.kind = DeclKind::Typedef;
        for (std::size_t i = begin; i < end; ++i) {
            if (toks[i].is("(") && i + 2 < end && toks[i + 1].is("*") && toks[i + 2].ident()) {
                d.name = std::string(toks[i + 2].text);
                return d;
            }
        }
        for (std::size_t i = end; i-- > begin;) {
            if (toks[i].ident() && !clex::is_keyword(toks[i].text)) {
                d.name = std::string(toks[i].text);
                break;
            }
            if (toks[i].is("}")) break;
        }
        return d;
    }
    bool has_brace = false;
    bool has_assign = false;
    for (std::size_t i = begin; i < end; ++i) {
        if (toks[i].is("{")) has_brace = true;
        if (toks[i].is("=")) {
            has_assign = true;
            break;
        }
    }
    const Token& first = toks[begin];
    if (has_brace && !has_assign &&
        (first.is("struct") || first.is("union") || first.is("enum"))) {
        d.kind = DeclKind::Aggregate;
        return d;
    }
    // Prototype: identifier directly before the first top-level '('.
    for (std::size_t i = begin; i < end; ++i) {
        if (toks[i].is("=") || toks[i].is("{")) break;
        if (toks[i].is("(")) {
            if (i > begin && toks[i - 1].ident() && !clex::is_keyword(toks[i - 1].text)) {
                d.kind = DeclKind::Prototype;
                d.name = std::string(toks[i - 1].text);
                return d;
            }
            if (i + 2 < end && toks[i + 1].is("*") && toks[i + 2].ident()) {
                d.kind = DeclKind::Variable;
                d.name = std::string(toks[i + 2].text);
                return d;
            }
            break;
        }
    }
    std::size_t stop = end;
    for (std::size_t i = begin; i < end; ++i) {
        if (toks[i].is("=") || toks[i].is("[") || toks[i].is(",")) {
            stop = i;
            break;
        }
    }
    if (stop > begin && toks[stop - 1].ident() && !clex::is_keyword(toks[stop - 1].text) &&
        stop - begin >= 2 && !(toks[stop - 2].is("struct") || toks[stop - 2].is("union") ||
                               toks[stop - 2].is("enum"))) {
        d.kind = DeclKind::Variable;
        d.name = std::string(toks[stop - 1].text);
        return d;
    }
    d.kind = (first.is("struct") || first.is("union") || first.is("enum")) ? DeclKind::Aggregate
                                                                           : DeclKind::Other;
    return d;
}

}  // namespace

std::vector<Param> parse_params(const std::vector<Token>& toks, std::size_t open,
                                std::size_t close, bool* variadic) {
    std::vector<Param> params;
    if (variadic) *variadic = false;
    std::vector<std::pair<std::size_t, std::size_t>> parts;
    std::size_t start = open + 1;
    int depth = 0;
    for (std::size_t i = open + 1; i < close; ++i) {
        const Token& t = toks[i];
        if (t.is("(") || t.is("[") || t.is("{")) ++depth;
        if (t.is(")") || t.is("]") || t.is("}")) --depth;
        if (depth == 0 && t.is(",")) {
            parts.emplace_back(start, i);
            start = i + 1;
        }
    }
    if (start < close) parts.emplace_back(start, close);
    if (parts.size() == 1 && parts[0].second - parts[0].first == 1 && toks[parts[0].first].is("void"))
        return params;
    for (auto [b, e] : parts) {
        if (e - b == 1 && toks[b].is("...")) {
            if (variadic) *variadic = true;
            continue;
        }
        std::size_t name_idx = e;
        for (std::size_t i = b; i + 2 < e; ++i) {
            if (toks[i].is("(") && toks[i + 1].is("*") && toks[i + 2].ident()) {
                name_idx = i + 2;
                break;
            }
        }
        if (name_idx == e) {
            std::size_t last = e - 1;
            while (last > b && toks[last].is("]")) {
                std::size_t j = last;
                while (j > b && !toks[j].is("[")) --j;
                last = j > b ? j - 1 : b;
            }
            if (last > b && toks[last].ident() && !clex::is_type_word(toks[last].text) &&
                !clex::is_keyword(toks[last].text) &&
                !(toks[last - 1].is("struct") || toks[last - 1].is("union") ||
                  toks[last - 1].is("enum")))
                name_idx = last;
        }
        Param p;
        std::string type;
        for (std::size_t i = b; i < e; ++i) {
            if (i == name_idx) continue;
            if (!type.empty()) type += ' ';
            type += toks[i].text;
        }
        p.type = type;
        if (name_idx != e) p.name = std::string(toks[name_idx].text);
        params.push_back(std::move(p));
    }
    return params;
}

Unit scan(std::string_view source) {
    Unit unit;
    unit.lexed = clex::lex(source);
    const auto& toks = unit.lexed.tokens;
    std::size_t decl_begin = 0;
    std::size_t i = 0;
    while (i < toks.size()) {
        const Token& t = toks[i];
        if (t.is("}")) throw ParseError("unbalanced '}'", t.line);
        if (t.is("(") || t.is("[")) {
            std::size_t close = clex::match_close(toks, i);
            if (close == toks.size()) throw ParseError("unbalanced '" + std::string(t.text) + "'", t.line);
            i = close + 1;
            continue;
        }
        if (t.is(";")) {
            if (i > decl_begin) unit.decls.push_back(classify(toks, decl_begin, i));
            decl_begin = ++i;
            continue;
        }
        if (!t.is("{")) {
            ++i;
            continue;
        }
        std::size_t close = clex::match_close(toks, i);
        if (close == toks.size()) throw ParseError("unbalanced '{'", t.line);
        std::size_t before = skip_attributes_backward(toks, i);
        bool is_function = false;
        if (before < toks.size() && before >= decl_begin && toks[before].is(")")) {
            std::size_t open = match_open_backward(toks, before);
            if (open != toks.size() && open > decl_begin && toks[open - 1].ident() &&
                !clex::is_keyword(toks[open - 1].text)) {
                bool has_assign = false;
                for (std::size_t k = decl_begin; k < open; ++k)
                    if (toks[k].is("=")) has_assign = true;
                if (!has_assign) {
                    FunctionDef f;
                    f.name_tok = open - 1;
                    f.name = std::string(toks[f.name_tok].text);
                    f.line = toks[f.name_tok].line;
                    f.decl_begin = decl_begin;
                    f.params_open = open;
                    f.params_close = before;
                    f.body_open = i;
                    f.body_close = close;
                    for (std::size_t k = decl_begin; k < f.name_tok; ++k)
                        if (toks[k].is("static")) f.is_static = true;
                    f.return_type = return_type_text(toks, decl_begin, f.name_tok);
                    f.params = parse_params(toks, open, before, &f.variadic);
                    unit.functions.push_back(std::move(f));
                    is_function = true;
                }
            }
        }
        i = close + 1;
        if (is_function) decl_begin = i;
    }
    return unit;
}

Signature parse_signature(std::string_view decl) {
    auto toks = clex::tokens(decl);
    std::size_t end = toks.size();
    while (end > 0 && (toks[end - 1].is(";") || toks[end - 1].is("{"))) --end;
    Signature sig;
    for (std::size_t i = 0; i < end; ++i) {
        if (!toks[i].is("(")) continue;
        if (i == 0 || !toks[i - 1].ident() || clex::is_keyword(toks[i - 1].text)) break;
        std::size_t close = clex::match_close(toks, i);
        if (close >= end && close != toks.size()) close = toks.size();
        if (close == toks.size()) throw SyntaxError("unbalanced parameter list in '" + std::string(decl) + "'", toks[i].offset);
        sig.name = std::string(toks[i - 1].text);
        for (std::size_t k = 0; k + 1 < i; ++k)
            if (toks[k].is("static")) sig.is_static = true;
        sig.return_type = return_type_text(toks, 0, i - 1);
        sig.params = parse_params(toks, i, close, &sig.variadic);
        return sig;
    }
    throw SyntaxError("no function declarator in '" + std::string(decl) + "'", 0);
}

std::string Signature::render(const std::string& as_name) const {
    std::string out = return_type;
    if (!out.empty() && out.back() != '*') out += ' ';
    out += as_name + "(";
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (i) out += ", ";
        out += params[i].name.empty() ? params[i].type : declare(params[i].type, params[i].name);
    }
    if (variadic) out += params.empty() ? "..." : ", ...";
    if (params.empty() && !variadic) out += "void";
    return out + ")";
}

Param parse_declaration(std::string_view decl) {
    std::string wrapped = "(" + std::string(decl) + ")";
    auto toks = clex::tokens(wrapped);
    while (!toks.empty() && toks[toks.size() - 2].is(";")) toks.erase(toks.end() - 2);
    auto params = parse_params(toks, 0, toks.size() - 1);
    if (params.size() != 1) throw SyntaxError("expected one declaration in '" + std::string(decl) + "'", 0);
    return params[0];
}

std::string declare(const std::string& type, const std::string& name) {
    auto fp = type.find("( *");
    if (fp != std::string::npos) return type.substr(0, fp + 3) + " " + name + type.substr(fp + 3);
    fp = type.find("(*");
    if (fp != std::string::npos) return type.substr(0, fp + 2) + name + type.substr(fp + 2);
    auto arr = type.find('[');
    if (arr != std::string::npos) {
        std::string head = type.substr(0, arr);
        while (!head.empty() && head.back() == ' ') head.pop_back();
        std::string tail = type.substr(arr);
        std::erase(tail, ' ');
        return head + " " + name + tail;
    }
    if (!type.empty() && type.back() == '*') return type + name;
    return type + " " + name;
}

}  // namespace forge::ctop
