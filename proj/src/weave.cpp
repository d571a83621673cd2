#include "forge/weave.hpp"

#include <algorithm>
#include <set>

#include "forge/clex.hpp"
#include "forge/error.hpp"

namespace forge::weave {

using clex::Token;

namespace {

std::string normalize(std::string_view text) {
    auto toks = clex::tokens(text);
    return clex::join(toks, 0, toks.size());
}

std::string strip_storage(const std::string& type) {
    auto toks = clex::tokens(type);
    std::string out;
    for (const auto& t : toks) {
        if (ctop::is_storage_word(t.text)) continue;
        if (!out.empty()) out += ' ';
        out += t.text;
    }
    return out;
}

// Token texts joined on one line, with identifiers renamed through `rename`.
std::string one_line(std::string_view text, const std::map<std::string, std::string>& rename = {}) {
    auto toks = clex::tokens(text);
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        std::string t(toks[i].text);
        bool member = i > 0 && (toks[i - 1].is(".") || toks[i - 1].is("->"));
        if (toks[i].ident() && !member) {
            auto it = rename.find(t);
            if (it != rename.end()) t = it->second;
        }
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::size_t count_args(const std::vector<Token>& toks, std::size_t open, std::size_t close) {
    if (close == open + 1) return 0;
    std::size_t n = 1;
    int depth = 0;
    for (std::size_t i = open + 1; i < close; ++i) {
        if (toks[i].is("(") || toks[i].is("[") || toks[i].is("{")) ++depth;
        if (toks[i].is(")") || toks[i].is("]") || toks[i].is("}")) --depth;
        if (depth == 0 && toks[i].is(",")) ++n;
    }
    return n;
}

struct Edit {
    std::size_t begin, end;
    std::string text;
};

std::string apply_edits(std::string_view source, std::vector<Edit> edits) {
    std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::string out;
    std::size_t pos = 0;
    for (const auto& e : edits) {
        out.append(source.substr(pos, e.begin - pos));
        out += e.text;
        pos = e.end;
    }
    out.append(source.substr(pos));
    return out;
}

// Newlines only, so removed text keeps the line layout.
std::string blank(std::string_view text) {
    return std::string(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), '\n');
}

std::size_t line_start(std::string_view source, std::size_t offset) {
    auto nl = source.rfind('\n', offset == 0 ? 0 : offset - 1);
    return (nl == std::string_view::npos || offset == 0) ? 0 : nl + 1;
}

}  // namespace

std::vector<Advice> parse_aspect(std::string_view text) {
    auto toks = clex::tokens(text);
    std::vector<Advice> out;
    std::size_t i = 0;
    while (i < toks.size()) {
        const Token& word = toks[i];
        if (!word.ident() || i + 1 >= toks.size() || !toks[i + 1].is(":"))
            throw SyntaxError("expected an advice clause", word.offset);
        if (!word.is("around"))
            throw SyntaxError("unsupported advice '" + std::string(word.text) + "'", word.offset);
        if (i + 3 >= toks.size()) throw SyntaxError("truncated advice", word.offset);
        const Token& kind = toks[i + 2];
        Advice a;
        if (kind.is("call"))
            a.kind = AdviceKind::Call;
        else if (kind.is("execution"))
            a.kind = AdviceKind::Execution;
        else
            throw SyntaxError("unknown pointcut '" + std::string(kind.text) + "'", kind.offset);
        std::size_t open = i + 3;
        if (!toks[open].is("(")) throw SyntaxError("expected '('", toks[open].offset);
        // The declaration ends at the matching ')' or, when that is missing,
        // at the brace opening the body.
        std::size_t close = open + 1;
        std::size_t body_open = toks.size();
        int depth = 1;
        for (; close < toks.size(); ++close) {
            if (toks[close].is("(")) ++depth;
            if (toks[close].is(")") && --depth == 0) {
                body_open = close + 1;
                break;
            }
            if (toks[close].is("{")) {
                body_open = close;
                break;
            }
        }
        if (body_open >= toks.size() || !toks[body_open].is("{"))
            throw SyntaxError("expected advice body", close < toks.size() ? toks[close].offset : text.size());
        std::size_t body_close = clex::match_close(toks, body_open);
        if (body_close == toks.size()) throw SyntaxError("unbalanced advice body", toks[body_open].offset);
        std::size_t decl_end = toks[close].is(")") && body_open == close + 1 ? close : body_open;
        std::string decl(text.substr(toks[open + 1].offset, toks[decl_end - 1].end() - toks[open + 1].offset));
        a.signature = ctop::parse_signature(decl);
        a.body = std::string(text.substr(toks[body_open].end(), toks[body_close].offset - toks[body_open].end()));
        out.push_back(std::move(a));
        i = body_close + 1;
    }
    return out;
}

Woven weave(std::string_view source, const std::vector<Advice>& advice) {
    Woven result;
    result.report.matches.assign(advice.size(), 0);
    if (advice.empty()) {
        result.text = std::string(source);
        return result;
    }
    auto unit = ctop::scan(source);
    const auto& toks = unit.tokens();
    std::vector<Edit> edits;

    // Wrapper names: one per call advice.
    std::map<std::string, std::size_t> per_name;
    for (const auto& a : advice)
        if (a.kind == AdviceKind::Call) ++per_name[a.signature.name];
    std::vector<std::string> wrapper(advice.size());
    for (std::size_t k = 0; k < advice.size(); ++k) {
        if (advice[k].kind != AdviceKind::Call) continue;
        const auto& n = advice[k].signature.name;
        wrapper[k] = std::string(kWrapperPrefix) + n + (per_name[n] > 1 ? "_" + std::to_string(k) : "");
    }

    std::vector<bool> replaced_body(unit.functions.size(), false);
    for (std::size_t f = 0; f < unit.functions.size(); ++f) {
        const auto& fd = unit.functions[f];
        std::size_t chosen = advice.size();
        for (std::size_t k = 0; k < advice.size(); ++k) {
            const auto& a = advice[k];
            if (a.kind != AdviceKind::Execution || a.signature.name != fd.name ||
                a.signature.params.size() != fd.params.size())
                continue;
            bool same_type = normalize(strip_storage(a.signature.return_type)) == normalize(fd.return_type);
            if (chosen == advice.size() || same_type) chosen = k;
            if (same_type) break;
        }
        if (chosen == advice.size()) continue;
        const auto& a = advice[chosen];
        std::map<std::string, std::string> rename;
        for (std::size_t p = 0; p < fd.params.size(); ++p)
            if (!a.signature.params[p].name.empty() && !fd.params[p].name.empty())
                rename[a.signature.params[p].name] = fd.params[p].name;
        std::size_t b = toks[fd.body_open].offset, e = toks[fd.body_close].end();
        std::size_t span = toks[fd.body_close].line - toks[fd.body_open].line;
        edits.push_back({b, e, "{ " + one_line(a.body, rename) + " " + std::string(span, '\n') + "}"});
        result.report.ranges.emplace_back(b, e);
        ++result.report.matches[chosen];
        replaced_body[f] = true;
    }

    std::map<std::size_t, std::set<std::size_t>> wrappers_before;  // function index -> advice
    for (std::size_t f = 0; f < unit.functions.size(); ++f) {
        if (replaced_body[f]) continue;
        const auto& fd = unit.functions[f];
        for (std::size_t i = fd.body_open + 1; i < fd.body_close; ++i) {
            if (!toks[i].ident() || i + 1 >= fd.body_close || !toks[i + 1].is("(")) continue;
            if (toks[i - 1].is(".") || toks[i - 1].is("->")) continue;
            std::size_t close = clex::match_close(toks, i + 1);
            std::size_t argc = count_args(toks, i + 1, close);
            for (std::size_t k = 0; k < advice.size(); ++k) {
                const auto& a = advice[k];
                if (a.kind != AdviceKind::Call || a.signature.name != toks[i].text || a.signature.params.size() != argc)
                    continue;
                edits.push_back({toks[i].offset, toks[i].end(), wrapper[k]});
                result.report.ranges.emplace_back(toks[i].offset, toks[i].end());
                ++result.report.matches[k];
                bool seen = false;
                for (const auto& [g, set] : wrappers_before) seen = seen || set.count(k);
                if (!seen) wrappers_before[f].insert(k);
                break;
            }
        }
    }
    for (const auto& [f, set] : wrappers_before) {
        std::string text;
        for (std::size_t k : set) {
            const auto& a = advice[k];
            auto sig = a.signature;
            sig.is_static = true;
            text += "static " + sig.render(wrapper[k]) + " { " + one_line(a.body) + " } ";
        }
        std::size_t at = line_start(source, toks[unit.functions[f].decl_begin].offset);
        edits.push_back({at, at, text});
    }
    result.text = apply_edits(source, std::move(edits));
    return result;
}

Merged merge(const std::vector<SourceFile>& sources, const MergeOptions& options) {
    Merged out;
    std::vector<std::string> texts;
    std::set<std::string> seen_types;
    std::map<std::string, std::string> defined_in;

    for (std::size_t n = 0; n < sources.size(); ++n) {
        const auto& src = sources[n];
        auto unit = ctop::scan(src.text);
        const auto& toks = unit.tokens();
        std::string suffix = "__f" + std::to_string(n);

        std::set<std::string> statics;
        for (const auto& fd : unit.functions)
            if (fd.is_static) statics.insert(fd.name);
        for (const auto& d : unit.decls)
            if (d.is_static && !d.name.empty() &&
                (d.kind == ctop::DeclKind::Variable || d.kind == ctop::DeclKind::Prototype))
                statics.insert(d.name);
        for (const auto& fd : unit.functions) {
            if (fd.is_static) continue;
            auto [it, fresh] = defined_in.emplace(fd.name, src.name);
            if (!fresh) throw MergeError("function '" + fd.name + "' is defined in both " + it->second + " and " + src.name);
        }

        // Struct and union bodies hold member names, never file-scope symbols.
        std::vector<std::pair<std::size_t, std::size_t>> aggregates;
        for (const auto& d : unit.decls)
            if (d.kind == ctop::DeclKind::Aggregate || d.kind == ctop::DeclKind::Typedef)
                aggregates.emplace_back(d.begin, d.end);
        auto in_aggregate = [&](std::size_t i) {
            return std::any_of(aggregates.begin(), aggregates.end(),
                               [&](const auto& r) { return i >= r.first && i <= r.second; });
        };

        std::vector<Edit> edits;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (!toks[i].ident() || !statics.count(std::string(toks[i].text))) continue;
            if (i > 0 && (toks[i - 1].is(".") || toks[i - 1].is("->"))) continue;
            if (in_aggregate(i)) continue;
            edits.push_back({toks[i].offset, toks[i].end(), std::string(toks[i].text) + suffix});
        }
        for (const auto& s : statics) out.renamed[src.name + ":" + s] = s + suffix;
        for (const auto& d : unit.decls) {
            if (d.kind != ctop::DeclKind::Typedef && d.kind != ctop::DeclKind::Aggregate) continue;
            std::string key = clex::join(toks, d.begin, d.end + 1);
            if (seen_types.insert(key).second) continue;
            std::size_t b = toks[d.begin].offset, e = toks[d.end].end();
            // Drop any rename edits inside the removed declaration.
            edits.erase(std::remove_if(edits.begin(), edits.end(),
                                       [&](const Edit& x) { return x.begin >= b && x.end <= e; }),
                        edits.end());
            edits.push_back({b, e, blank(src.text.substr(b, e - b))});
        }
        std::string text = apply_edits(src.text, std::move(edits));
        if (!text.empty() && text.back() != '\n') text += '\n';
        texts.push_back(std::move(text));
    }

    std::string body;
    std::vector<LineOrigin> lines;
    auto add = [&](const std::string& chunk, const std::string& file) {
        std::size_t line = 1;
        for (char c : chunk)
            if (c == '\n') lines.push_back({file, file.empty() ? 0 : line++});
        body += chunk;
    };
    add("/* Merged translation unit of " + std::to_string(sources.size()) + " files. */\n", "");
    for (std::size_t n = 0; n < sources.size(); ++n) {
        add("# 1 \"" + sources[n].name + "\"\n", "");
        add(texts[n], sources[n].name);
    }

    if (options.prune) {
        auto unit = ctop::scan(body);
        const auto& toks = unit.tokens();
        std::map<std::string, const ctop::FunctionDef*> defs;
        for (const auto& fd : unit.functions) defs[fd.name] = &fd;
        if (defs.count(options.entry)) {
            std::set<std::string> reached;
            std::vector<std::string> work{options.entry};
            for (const auto& [name, fd] : defs)
                if (name.rfind(kWrapperPrefix, 0) == 0) work.push_back(name);
            for (const auto& d : unit.decls)
                for (std::size_t i = d.begin; i <= d.end && i < toks.size(); ++i)
                    if (toks[i].ident() && defs.count(std::string(toks[i].text)) &&
                        d.kind != ctop::DeclKind::Prototype)
                        work.emplace_back(toks[i].text);
            while (!work.empty()) {
                std::string name = work.back();
                work.pop_back();
                if (!reached.insert(name).second) continue;
                const auto* fd = defs.at(name);
                for (std::size_t i = fd->body_open; i < fd->body_close; ++i)
                    if (toks[i].ident() && defs.count(std::string(toks[i].text)) &&
                        !reached.count(std::string(toks[i].text)))
                        work.emplace_back(toks[i].text);
            }
            std::vector<Edit> edits;
            for (const auto& fd : unit.functions) {
                if (reached.count(fd.name)) continue;
                std::size_t b = toks[fd.decl_begin].offset, e = toks[fd.body_close].end();
                edits.push_back({b, e, blank(std::string_view(body).substr(b, e - b))});
                out.pruned.push_back(fd.name);
            }
            body = apply_edits(body, std::move(edits));
        }
    }
    out.text = std::move(body);
    out.lines = std::move(lines);
    return out;
}

}  // namespace forge::weave
