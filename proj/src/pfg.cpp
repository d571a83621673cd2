#include "forge/pfg.hpp"

#include <algorithm>
#include <deque>

#include "forge/error.hpp"
#include "forge/pattern.hpp"

namespace forge::pfg {

using buildbase::BuildBase;
using buildbase::FileGraph;
using nlohmann::json;

namespace {

void normalize(std::vector<std::string>& files) {
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
}

bool under_directory(const std::string& file, const std::string& dir) {
    if (dir.empty()) return false;
    std::string prefix = dir.back() == '/' ? dir : dir + "/";
    return file.compare(0, prefix.size(), prefix) == 0;
}

std::vector<std::string> string_list(const json& options, const char* key,
                                     std::vector<std::string> fallback) {
    if (!options.contains(key)) return fallback;
    return options.at(key).get<std::vector<std::string>>();
}

// Files named by a specification entry: a fragment, a file, a function
// (its defining file) or a regular expression over file paths.
std::vector<std::string> resolve_entry(const std::string& entry, const FragmentGraph& graph,
                                       const BuildBase& base) {
    if (const auto* f = graph.find(entry)) return f->files;
    if (base.source_files.count(entry)) return {entry};
    auto defs = base.callgraph.lookup(entry);
    if (!defs.empty()) {
        std::vector<std::string> out;
        for (const auto* d : defs) out.push_back(d->file);
        normalize(out);
        return out;
    }
    std::vector<std::string> out;
    try {
        Pattern p(entry);
        for (const auto& file : base.source_files)
            if (p.matches(file)) out.push_back(file);
    } catch (const ConfigError&) {
    }
    if (out.empty()) throw SpecError("unresolvable name in decomposition specification: " + entry);
    return out;
}

}  // namespace

void ProgramFragment::add_files(const std::vector<std::string>& more) {
    files.insert(files.end(), more.begin(), more.end());
    normalize(files);
}

void FragmentGraph::put(ProgramFragment fragment) {
    normalize(fragment.files);
    std::string name = fragment.name;
    fragments_[name] = std::move(fragment);
}

void FragmentGraph::erase(const std::string& name) {
    fragments_.erase(name);
    for (auto it = edges_.begin(); it != edges_.end();) {
        if (it->first == name || it->second == name)
            it = edges_.erase(it);
        else
            ++it;
    }
}

const ProgramFragment* FragmentGraph::find(const std::string& name) const {
    auto it = fragments_.find(name);
    return it == fragments_.end() ? nullptr : &it->second;
}

ProgramFragment* FragmentGraph::find(const std::string& name) {
    auto it = fragments_.find(name);
    return it == fragments_.end() ? nullptr : &it->second;
}

void FragmentGraph::recompute_edges(const BuildBase& base) {
    edges_.clear();
    std::map<std::string, std::vector<std::string>> owners;  // file -> fragments
    for (const auto& [name, frag] : fragments_)
        for (const auto& file : frag.files) owners[file].push_back(name);
    std::set<std::pair<std::string, std::string>> file_pairs;
    for (const auto& call : base.callgraph.calls())
        for (const auto& target : base.callgraph.resolve(call.callee, call.file))
            file_pairs.emplace(call.file, target);
    for (const auto& [from, to] : file_pairs) {
        auto fi = owners.find(from);
        auto ti = owners.find(to);
        if (fi == owners.end() || ti == owners.end()) continue;
        for (const auto& f : fi->second)
            for (const auto& t : ti->second)
                if (f != t) edges_.emplace(f, t);
    }
}

std::map<std::string, DecompositionTactic>& decomposition_tactics() {
    static std::map<std::string, DecompositionTactic> table = {
        {"linker", linker_tactic},
        {"closure", closure_tactic},
        {"per_file",
         [](const BuildBase& base, const FileGraph&, const json&) {
             FragmentGraph g;
             for (const auto& file : base.source_files) g.put({file, {file}, false});
             g.recompute_edges(base);
             return g;
         }},
    };
    return table;
}

std::map<std::string, CompositionTactic>& composition_tactics() {
    static std::map<std::string, CompositionTactic> table = {{"greedy", greedy_composition}};
    return table;
}

FragmentGraph linker_tactic(const BuildBase& base, const FileGraph&, const json& options) {
    auto suffixes = string_list(options, "patterns", {".ko", "built-in.o", "built-in.a"});
    FragmentGraph g;
    for (const auto& ld : base.ld_commands) {
        bool selected = std::any_of(suffixes.begin(), suffixes.end(), [&](const std::string& s) {
            return ld.output.size() >= s.size() &&
                   ld.output.compare(ld.output.size() - s.size(), s.size(), s) == 0;
        });
        if (!selected) continue;
        auto sources = buildbase::sources_of(base, ld.output);
        if (sources.empty()) continue;
        g.put({ld.output, {sources.begin(), sources.end()}, false});
    }
    g.recompute_edges(base);
    return g;
}

FragmentGraph closure_tactic(const BuildBase& base, const FileGraph& files, const json& options) {
    Pattern entry(options.value("entry_pattern", std::string(".*_main")));
    std::string library = options.value("library_dir", std::string("libbb"));
    bool include_library = options.value("include_library", true);

    std::vector<std::string> library_files;
    for (const auto& f : base.source_files)
        if (under_directory(f, library)) library_files.push_back(f);

    std::vector<std::pair<std::string, std::string>> mains;  // (entry function, main file)
    for (const auto& d : base.callgraph.definitions())
        if (!under_directory(d.file, library) && entry.matches(d.name)) mains.emplace_back(d.name, d.file);
    std::sort(mains.begin(), mains.end());
    if (mains.empty())
        throw TargetError("no function matches entry pattern '" + entry.source() + "'");

    FragmentGraph g;
    if (!library_files.empty()) g.put({library, library_files, false});
    for (const auto& [function, main_file] : mains) {
        std::set<std::string> seen{main_file};
        std::deque<std::string> queue{main_file};
        while (!queue.empty()) {
            std::string cur = queue.front();
            queue.pop_front();
            for (const auto& next : files.successors(cur)) {
                if (under_directory(next, library) || !seen.insert(next).second) continue;
                queue.push_back(next);
            }
        }
        ProgramFragment frag;
        frag.name = function;
        if (frag.name.size() > 5 && frag.name.compare(frag.name.size() - 5, 5, "_main") == 0)
            frag.name.resize(frag.name.size() - 5);
        frag.files.assign(seen.begin(), seen.end());
        if (include_library) frag.add_files(library_files);
        g.put(std::move(frag));
    }
    g.recompute_edges(base);
    return g;
}

FragmentGraph refine_fragments(const FragmentGraph& graph, const DecompositionSpec& spec,
                               const BuildBase& base) {
    if (spec.empty()) return graph;
    FragmentGraph out = graph;
    for (const auto& [name, entries] : spec.fragments) {
        ProgramFragment frag{name, {}, false};
        if (const auto* old = graph.find(name)) frag.is_target = old->is_target;
        for (const auto& e : entries) frag.add_files(resolve_entry(e, graph, base));
        out.put(std::move(frag));
    }
    std::set<std::string> excluded;
    for (const auto& e : spec.exclude_all)
        for (auto& f : resolve_entry(e, graph, base)) excluded.insert(f);
    std::vector<std::string> added;
    for (const auto& e : spec.add_all) {
        auto files = resolve_entry(e, graph, base);
        added.insert(added.end(), files.begin(), files.end());
    }
    std::vector<std::string> names;
    for (const auto& [name, _] : out.fragments()) names.push_back(name);
    for (const auto& name : names) {
        ProgramFragment frag = *out.find(name);
        frag.add_files(added);
        std::erase_if(frag.files, [&](const std::string& f) { return excluded.count(f) > 0; });
        if (frag.files.empty())
            out.erase(name);
        else
            out.put(std::move(frag));
    }
    out.recompute_edges(base);
    return out;
}

FragmentGraph resolve_targets(const FragmentGraph& graph, const std::vector<std::string>& targets,
                              const BuildBase& base, std::vector<std::string>* unmatched) {
    std::vector<Pattern> patterns;
    for (const auto& t : targets) patterns.emplace_back(t);
    std::vector<bool> used(patterns.size(), false);

    auto file_matches = [&](const std::string& file) {
        bool any = false;
        for (std::size_t i = 0; i < patterns.size(); ++i) {
            const Pattern& p = patterns[i];
            bool hit = p.matches(file);
            if (!hit) {
                for (const auto& fn : base.callgraph.defined_in(file))
                    if (p.matches(fn)) {
                        hit = true;
                        break;
                    }
            }
            if (!hit) {
                for (auto pos = file.find('/'); pos != std::string::npos; pos = file.find('/', pos + 1)) {
                    if (p.matches(file.substr(0, pos)) || p.matches(file.substr(0, pos + 1))) {
                        hit = true;
                        break;
                    }
                }
            }
            if (hit) {
                used[i] = true;
                any = true;
            }
        }
        return any;
    };

    std::set<std::string> target_files;
    for (const auto& file : base.source_files)
        if (file_matches(file)) target_files.insert(file);

    FragmentGraph out = graph;
    for (const auto& [name, frag] : graph.fragments()) {
        ProgramFragment copy = frag;
        copy.is_target = std::any_of(frag.files.begin(), frag.files.end(),
                                     [&](const std::string& f) { return target_files.count(f) > 0; });
        out.put(std::move(copy));
    }
    if (unmatched) {
        unmatched->clear();
        for (std::size_t i = 0; i < patterns.size(); ++i)
            if (!used[i]) unmatched->push_back(targets[i]);
    }
    out.recompute_edges(base);
    return out;
}

std::vector<ProgramFragment> greedy_composition(const ProgramFragment& target, const FragmentGraph& graph,
                                                const BuildBase& base, const json& options) {
    std::size_t bound = options.value("max_fragments", std::size_t{3});
    const auto& cg = base.callgraph;
    std::set<std::string> current(target.files.begin(), target.files.end());
    std::vector<ProgramFragment> added;
    std::set<std::string> taken{target.name};
    std::map<std::string, std::set<std::string>> exported;  // file -> non-static definitions
    for (const auto& d : cg.definitions())
        if (!d.is_static) exported[d.file].insert(d.name);

    while (added.size() < bound) {
        std::set<std::string> defined;
        for (const auto& f : current)
            for (const auto& name : cg.defined_in(f)) defined.insert(name);
        std::set<std::string> missing;
        for (const auto& call : cg.calls())
            if (current.count(call.file) && !defined.count(call.callee)) missing.insert(call.callee);

        const ProgramFragment* best = nullptr;
        std::size_t best_score = 0;
        for (const auto& [name, frag] : graph.fragments()) {
            if (taken.count(name)) continue;
            std::set<std::string> provides;
            for (const auto& f : frag.files) {
                auto it = exported.find(f);
                if (it == exported.end()) continue;
                for (const auto& name : it->second)
                    if (missing.count(name)) provides.insert(name);
            }
            if (provides.size() > best_score) {
                best_score = provides.size();
                best = &frag;
            }
        }
        if (!best) break;
        taken.insert(best->name);
        current.insert(best->files.begin(), best->files.end());
        added.push_back(*best);
    }
    return added;
}

std::vector<ProgramFragment> decompose(const PfgConfig& conf, const BuildBase& base,
                                       const std::optional<DecompositionSpec>& spec) {
    auto& dtactics = decomposition_tactics();
    auto dit = dtactics.find(conf.decomposition_tactic);
    if (dit == dtactics.end())
        throw ConfigError("unknown decomposition tactic '" + conf.decomposition_tactic + "'");
    const CompositionTactic* compose = nullptr;
    if (conf.composition_tactic) {
        auto& ctactics = composition_tactics();
        auto cit = ctactics.find(*conf.composition_tactic);
        if (cit == ctactics.end())
            throw ConfigError("unknown composition tactic '" + *conf.composition_tactic + "'");
        compose = &cit->second;
    }
    if (conf.targets.empty()) throw ConfigError("no verification targets configured");

    FileGraph file_graph = buildbase::build_file_graph(base);
    FragmentGraph fragments = dit->second(base, file_graph, conf.tactic_options);
    if (spec) fragments = refine_fragments(fragments, *spec, base);
    std::vector<std::string> unmatched;
    fragments = resolve_targets(fragments, conf.targets, base, &unmatched);

    std::vector<ProgramFragment> result;
    for (const auto& [name, frag] : fragments.fragments()) {
        if (!frag.is_target) continue;
        ProgramFragment composed{name, frag.files, true};
        if (compose)
            for (const auto& extra : (*compose)(frag, fragments, base, conf.tactic_options))
                composed.add_files(extra.files);
        for (const auto& f : composed.files)
            if (!base.source_files.count(f)) throw IntegrityError(f);
        result.push_back(std::move(composed));
    }
    if (result.empty()) {
        std::string list;
        for (const auto& p : unmatched.empty() ? conf.targets : unmatched) list += (list.empty() ? "" : ", ") + p;
        throw TargetError("no target program fragments; unmatched patterns: " + list);
    }
    return result;
}

PfgConfig parse_config(const json& j) {
    PfgConfig c;
    try {
        c.decomposition_tactic = j.at("decomposition_tactic").get<std::string>();
        if (j.contains("composition_tactic") && !j.at("composition_tactic").is_null())
            c.composition_tactic = j.at("composition_tactic").get<std::string>();
        c.targets = j.at("targets").get<std::vector<std::string>>();
        if (j.contains("tactic_options")) c.tactic_options = j.at("tactic_options");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed decomposition configuration: ") + e.what());
    }
    return c;
}

DecompositionSpec parse_spec(const json& j, const std::string& version) {
    if (!j.is_object() || j.empty()) throw SpecError("decomposition specification must be a non-empty object");
    std::string key = version;
    if (key.empty()) {
        if (j.size() != 1) throw SpecError("decomposition specification holds several versions; choose one");
        key = j.begin().key();
    }
    if (!j.contains(key)) throw SpecError("no decomposition specification for version " + key);
    const json& body = j.at(key);
    DecompositionSpec s;
    s.version = key;
    try {
        if (body.contains("fragments"))
            for (const auto& [name, entries] : body.at("fragments").items())
                s.fragments[name] = entries.get<std::vector<std::string>>();
        s.add_all = body.value("add to all fragments", std::vector<std::string>{});
        s.exclude_all = body.value("exclude from all fragments", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw SpecError(std::string("malformed decomposition specification: ") + e.what());
    }
    return s;
}

json to_json(const std::vector<ProgramFragment>& fragments) {
    json out = json::array();
    for (const auto& f : fragments) out.push_back({{"name", f.name}, {"files", f.files}, {"target", f.is_target}});
    return out;
}

std::vector<ProgramFragment> fragments_from_json(const json& j) {
    std::vector<ProgramFragment> out;
    for (const auto& f : j)
        out.push_back({f.at("name").get<std::string>(), f.at("files").get<std::vector<std::string>>(),
                       f.value("target", false)});
    return out;
}

}  // namespace forge::pfg
