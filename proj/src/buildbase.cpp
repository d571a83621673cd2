#include "forge/buildbase.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "forge/clex.hpp"
#include "forge/error.hpp"

namespace forge::buildbase {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IntegrityError(p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

std::vector<std::string> split_command(const std::string& cmd) {
    std::vector<std::string> out;
    std::string cur;
    bool in_token = false;
    char quote = 0;
    for (std::size_t i = 0; i < cmd.size(); ++i) {
        char c = cmd[i];
        if (quote) {
            if (c == quote) {
                quote = 0;
            } else if (c == '\\' && quote == '"' && i + 1 < cmd.size()) {
                cur += cmd[++i];
            } else {
                cur += c;
            }
            continue;
        }
        if (c == '"' || c == '\'') {
            quote = c;
            in_token = true;
        } else if (c == '\\' && i + 1 < cmd.size()) {
            cur += cmd[++i];
            in_token = true;
        } else if (c == ' ' || c == '\t' || c == '\n') {
            if (in_token) out.push_back(std::move(cur));
            cur.clear();
            in_token = false;
        } else {
            cur += c;
            in_token = true;
        }
    }
    if (in_token) out.push_back(std::move(cur));
    return out;
}

std::string normalize_rel(const fs::path& p) { return p.lexically_normal().generic_string(); }

std::string relative_to(const fs::path& file, const fs::path& directory, const fs::path& root) {
    fs::path abs = file.is_absolute() ? file : directory / file;
    fs::path rel = abs.lexically_normal().lexically_relative(root.lexically_normal());
    if (rel.empty()) return normalize_rel(file);
    return normalize_rel(rel);
}

LinkKind parse_kind(const std::string& s) {
    if (s == "LD" || s == "ld") return LinkKind::LD;
    if (s == "AR" || s == "ar") return LinkKind::AR;
    throw ConfigError("unknown link command kind '" + s + "'");
}

BuildBase from_manifest(const json& j, const fs::path& dir) {
    BuildBase base;
    fs::path root = j.contains("root") ? fs::path(j.at("root").get<std::string>()) : fs::path(".");
    base.root_dir = (root.is_absolute() ? root : dir / root).lexically_normal();
    try {
        for (const auto& c : j.value("cc", json::array())) {
            CompileCommand cc;
            cc.id = c.at("id").get<std::string>();
            cc.input = normalize_rel(c.at("in").get<std::string>());
            cc.output = normalize_rel(c.at("out").get<std::string>());
            cc.options = c.value("opts", std::vector<std::string>{});
            base.cc_commands.push_back(std::move(cc));
        }
        for (const auto& l : j.value("ld", json::array())) {
            LinkCommand ld;
            ld.id = l.at("id").get<std::string>();
            for (const auto& in : l.at("ins")) ld.inputs.push_back(normalize_rel(in.get<std::string>()));
            ld.output = normalize_rel(l.at("out").get<std::string>());
            ld.kind = parse_kind(l.value("kind", std::string("LD")));
            base.ld_commands.push_back(std::move(ld));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed build base manifest: ") + e.what());
    }
    base.provenance = "manifest " + (dir / "build_base.json").string();
    return base;
}

BuildBase from_compile_db(const json& j, const fs::path& dir) {
    if (!j.is_array()) throw ConfigError("compile_commands.json must be an array");
    BuildBase base;
    base.root_dir = dir.lexically_normal();
    std::size_t n = 0;
    for (const auto& e : j) {
        fs::path directory = e.value("directory", dir.string());
        if (directory.is_relative()) directory = dir / directory;
        std::vector<std::string> args;
        if (e.contains("arguments")) {
            args = e.at("arguments").get<std::vector<std::string>>();
        } else if (e.contains("command")) {
            args = split_command(e.at("command").get<std::string>());
        } else {
            throw ConfigError("compile command without arguments or command");
        }
        CompileCommand cc;
        cc.id = "cc" + std::to_string(n++);
        cc.input = relative_to(e.at("file").get<std::string>(), directory, base.root_dir);
        for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i] == "-o" && i + 1 < args.size()) {
                cc.output = relative_to(args[++i], directory, base.root_dir);
                continue;
            }
            if (relative_to(args[i], directory, base.root_dir) == cc.input) continue;
            cc.options.push_back(args[i]);
        }
        if (cc.output.empty()) cc.output = fs::path(cc.input).replace_extension(".o").generic_string();
        base.cc_commands.push_back(std::move(cc));
    }
    base.provenance = "compile database " + (dir / "compile_commands.json").string();
    return base;
}

void populate(BuildBase& base) {
    std::sort(base.cc_commands.begin(), base.cc_commands.end(),
              [](const auto& a, const auto& b) { return std::tie(a.input, a.id) < std::tie(b.input, b.id); });
    std::sort(base.ld_commands.begin(), base.ld_commands.end(),
              [](const auto& a, const auto& b) { return std::tie(a.output, a.id) < std::tie(b.output, b.id); });
    for (const auto& cc : base.cc_commands) base.source_files.insert(cc.input);
    validate(base);
    for (const auto& file : base.source_files) {
        std::string text = base.read_source(file);
        try {
            base.callgraph.add_file(file, extract_symbols(text));
        } catch (const ParseError& e) {
            throw ParseError(file + ": " + e.what(), e.line());
        }
    }
}

}  // namespace

Symbols extract_symbols(std::string_view source) {
    ctop::Unit unit = ctop::scan(source);
    const auto& toks = unit.tokens();
    Symbols out;
    for (const auto& f : unit.functions) {
        FunctionInfo info;
        info.name = f.name;
        info.line = f.line;
        info.is_static = f.is_static;
        info.return_type = f.return_type;
        info.params = f.params;
        out.definitions.push_back(info);
        out.static_flags[f.name] = f.is_static;

        std::set<std::string_view> locals;
        for (const auto& p : f.params)
            if (!p.name.empty()) locals.insert(p.name);
        for (std::size_t i = f.body_open; i + 2 < f.body_close; ++i) {
            if (toks[i].is("(") && toks[i + 1].is("*") && toks[i + 2].ident())
                locals.insert(toks[i + 2].text);
        }
        for (std::size_t i = f.body_open + 1; i + 1 < f.body_close; ++i) {
            const auto& t = toks[i];
            if (!t.ident() || !toks[i + 1].is("(")) continue;
            if (clex::is_keyword(t.text) || locals.count(t.text)) continue;
            const auto& prev = toks[i - 1];
            if (prev.is(".") || prev.is("->")) continue;
            if (prev.ident() && clex::is_type_word(prev.text)) continue;  // local prototype
            out.calls.push_back({f.name, std::string(t.text), "", t.line, t.offset});
        }
    }
    return out;
}

void Callgraph::add_file(const std::string& file, Symbols symbols) {
    for (auto& d : symbols.definitions) {
        d.file = file;
        static_flags_[{file, d.name}] = d.is_static;
        definitions_.push_back(std::move(d));
    }
    std::sort(definitions_.begin(), definitions_.end(), [](const auto& a, const auto& b) {
        return std::tie(a.file, a.line, a.name) < std::tie(b.file, b.line, b.name);
    });
    for (auto& c : symbols.calls) {
        c.file = file;
        calls_.insert(std::move(c));
    }
}

std::vector<const FunctionInfo*> Callgraph::lookup(std::string_view name) const {
    std::vector<const FunctionInfo*> out;
    for (const auto& d : definitions_)
        if (d.name == name) out.push_back(&d);
    return out;
}

std::vector<std::string> Callgraph::resolve(std::string_view callee, std::string_view from_file) const {
    std::vector<std::string> out;
    for (const auto* d : lookup(callee)) {
        if (d->is_static && d->file == from_file) return {d->file};
    }
    for (const auto* d : lookup(callee)) {
        if (!d->is_static && (out.empty() || out.back() != d->file)) out.push_back(d->file);
    }
    return out;
}

std::set<std::string> Callgraph::defined_in(std::string_view file) const {
    std::set<std::string> out;
    for (const auto& d : definitions_)
        if (d.file == file) out.insert(d.name);
    return out;
}

std::string BuildBase::read_source(const std::string& rel) const { return read_file(absolute(rel)); }

std::map<std::string, std::size_t> BuildBase::line_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& f : source_files) out[f] = clex::count_lines(read_source(f));
    return out;
}

std::set<std::string> FileGraph::successors(const std::string& file) const {
    std::set<std::string> out;
    for (const auto& e : edges)
        if (e.caller_file == file) out.insert(e.callee_file);
    return out;
}

void validate(const BuildBase& base) {
    if (base.source_files.empty()) throw ConfigError("build base has no source files");
    std::set<std::string> outputs;
    std::set<std::string> ids;
    auto claim = [&](const std::string& id, const std::string& out) {
        if (!ids.insert(id).second) throw ConfigError("duplicate command id '" + id + "'");
        if (!outputs.insert(out).second) throw ConfigError("duplicate command output '" + out + "'");
    };
    for (const auto& cc : base.cc_commands) {
        claim(cc.id, cc.output);
        if (fs::path(cc.input).extension() != ".c")
            throw ConfigError("compile command " + cc.id + " input is not a C file: " + cc.input);
        if (fs::path(cc.input).is_absolute())
            throw ConfigError("source path must be relative to the root: " + cc.input);
        if (!fs::exists(base.absolute(cc.input))) throw IntegrityError(cc.input);
    }
    for (const auto& ld : base.ld_commands) {
        claim(ld.id, ld.output);
        if (ld.inputs.empty()) throw ConfigError("link command " + ld.id + " has no inputs");
    }
    for (const auto& ld : base.ld_commands) {
        for (const auto& in : ld.inputs) {
            if (!outputs.count(in) && !base.source_files.count(in)) throw IntegrityError(in);
        }
    }
}

BuildBase ingest_build_base(const fs::path& dir) {
    BuildBase base;
    if (fs::exists(dir / "build_base.json")) {
        json j = read_json(dir / "build_base.json");
        base = j.contains("callgraph") ? from_json(j) : from_manifest(j, dir);
        if (j.contains("callgraph")) {
            if (!j.contains("root") || fs::path(j.at("root").get<std::string>()).is_relative())
                base.root_dir = (dir / j.value("root", std::string("."))).lexically_normal();
            base.callgraph = Callgraph{};
            base.source_files.clear();
        }
    } else if (fs::exists(dir / "compile_commands.json")) {
        base = from_compile_db(read_json(dir / "compile_commands.json"), dir);
    } else {
        throw ConfigError("no build_base.json or compile_commands.json in " + dir.string());
    }
    populate(base);
    return base;
}

FileGraph build_file_graph(const BuildBase& base) {
    FileGraph g;
    g.nodes = base.source_files;
    std::map<std::pair<std::string, std::string>, std::size_t> weights;
    for (const auto& call : base.callgraph.calls()) {
        for (const auto& target : base.callgraph.resolve(call.callee, call.file)) {
            if (target == call.file) continue;
            ++weights[{call.file, target}];
        }
    }
    for (const auto& [k, w] : weights) g.edges.push_back({k.first, k.second, w});
    return g;
}

std::map<std::string, std::vector<std::string>> command_dependencies(const BuildBase& base) {
    std::map<std::string, std::string> producer;
    for (const auto& cc : base.cc_commands) producer[cc.output] = cc.id;
    for (const auto& ld : base.ld_commands) producer[ld.output] = ld.id;
    std::map<std::string, std::vector<std::string>> deps;
    for (const auto& ld : base.ld_commands) {
        auto& d = deps[ld.id];
        for (const auto& in : ld.inputs) {
            auto it = producer.find(in);
            if (it != producer.end()) d.push_back(it->second);
        }
        std::sort(d.begin(), d.end());
        d.erase(std::unique(d.begin(), d.end()), d.end());
    }
    return deps;
}

std::set<std::string> sources_of(const BuildBase& base, const std::string& output) {
    std::map<std::string, const CompileCommand*> cc_by_out;
    std::map<std::string, const LinkCommand*> ld_by_out;
    for (const auto& cc : base.cc_commands) cc_by_out[cc.output] = &cc;
    for (const auto& ld : base.ld_commands) ld_by_out[ld.output] = &ld;
    std::set<std::string> result;
    std::set<std::string> seen;
    std::vector<std::string> stack{output};
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        if (!seen.insert(cur).second) continue;
        if (auto it = cc_by_out.find(cur); it != cc_by_out.end()) {
            result.insert(it->second->input);
        } else if (auto lt = ld_by_out.find(cur); lt != ld_by_out.end()) {
            for (const auto& in : lt->second->inputs) stack.push_back(in);
        } else if (base.source_files.count(cur)) {
            result.insert(cur);
        }
    }
    return result;
}

json to_json(const BuildBase& base) {
    json j;
    j["root"] = base.root_dir.generic_string();
    j["provenance"] = base.provenance;
    j["cc"] = json::array();
    for (const auto& cc : base.cc_commands)
        j["cc"].push_back({{"id", cc.id}, {"in", cc.input}, {"out", cc.output}, {"opts", cc.options}});
    j["ld"] = json::array();
    for (const auto& ld : base.ld_commands)
        j["ld"].push_back({{"id", ld.id},
                           {"ins", ld.inputs},
                           {"out", ld.output},
                           {"kind", ld.kind == LinkKind::LD ? "LD" : "AR"}});
    json defs = json::array();
    for (const auto& d : base.callgraph.definitions()) {
        json params = json::array();
        for (const auto& p : d.params) params.push_back({{"type", p.type}, {"name", p.name}});
        defs.push_back({{"name", d.name},
                        {"file", d.file},
                        {"line", d.line},
                        {"static", d.is_static},
                        {"return_type", d.return_type},
                        {"params", params}});
    }
    json calls = json::array();
    for (const auto& c : base.callgraph.calls())
        calls.push_back({{"caller", c.caller},
                         {"callee", c.callee},
                         {"file", c.file},
                         {"line", c.line},
                         {"column", c.column}});
    j["callgraph"] = {{"definitions", defs}, {"calls", calls}};
    return j;
}

BuildBase from_json(const json& j) {
    BuildBase base;
    try {
        base.root_dir = j.value("root", std::string("."));
        base.provenance = j.value("provenance", std::string());
        for (const auto& c : j.at("cc"))
            base.cc_commands.push_back({c.at("id"), c.at("in"), c.at("out"),
                                        c.value("opts", std::vector<std::string>{})});
        for (const auto& l : j.value("ld", json::array()))
            base.ld_commands.push_back({l.at("id"), l.at("ins").get<std::vector<std::string>>(),
                                        l.at("out"), parse_kind(l.value("kind", std::string("LD")))});
        for (const auto& cc : base.cc_commands) base.source_files.insert(cc.input);
        if (j.contains("callgraph")) {
            std::map<std::string, Symbols> per_file;
            for (const auto& d : j["callgraph"].at("definitions")) {
                FunctionInfo f;
                f.name = d.at("name");
                f.line = d.at("line");
                f.is_static = d.at("static");
                f.return_type = d.value("return_type", std::string());
                for (const auto& p : d.value("params", json::array()))
                    f.params.push_back({p.at("type"), p.at("name")});
                auto& s = per_file[d.at("file").get<std::string>()];
                s.static_flags[f.name] = f.is_static;
                s.definitions.push_back(std::move(f));
            }
            for (const auto& c : j["callgraph"].at("calls")) {
                per_file[c.at("file").get<std::string>()].calls.push_back(
                    {c.at("caller"), c.at("callee"), "", c.at("line"), c.at("column")});
            }
            for (auto& [file, syms] : per_file) base.callgraph.add_file(file, std::move(syms));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed build base: ") + e.what());
    }
    return base;
}

}  // namespace forge::buildbase
