#pragma once

// Program fragment generation: decomposition tactics, refinement by a
// decomposition specification, target resolution and composition.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "forge/buildbase.hpp"

namespace forge::pfg {

struct ProgramFragment {
    std::string name;
    std::vector<std::string> files;  // sorted, unique
    bool is_target = false;

    void add_files(const std::vector<std::string>& more);
    friend bool operator==(const ProgramFragment&, const ProgramFragment&) = default;
};

class FragmentGraph {
public:
    /// Adds or replaces a fragment by name; files are sorted and deduplicated.
    void put(ProgramFragment fragment);
    void erase(const std::string& name);
    const ProgramFragment* find(const std::string& name) const;
    ProgramFragment* find(const std::string& name);

    const std::map<std::string, ProgramFragment>& fragments() const noexcept { return fragments_; }
    const std::set<std::pair<std::string, std::string>>& edges() const noexcept { return edges_; }

    /// Recomputes caller->callee fragment edges from the callgraph.
    void recompute_edges(const buildbase::BuildBase& base);

private:
    std::map<std::string, ProgramFragment> fragments_;
    std::set<std::pair<std::string, std::string>> edges_;
};

struct DecompositionSpec {
    std::string version;
    std::map<std::string, std::vector<std::string>> fragments;
    std::vector<std::string> add_all;
    std::vector<std::string> exclude_all;

    bool empty() const { return fragments.empty() && add_all.empty() && exclude_all.empty(); }
};

struct PfgConfig {
    std::string decomposition_tactic;
    std::optional<std::string> composition_tactic;
    std::vector<std::string> targets;
    nlohmann::json tactic_options = nlohmann::json::object();
};

using DecompositionTactic = std::function<FragmentGraph(
    const buildbase::BuildBase&, const buildbase::FileGraph&, const nlohmann::json& options)>;
using CompositionTactic = std::function<std::vector<ProgramFragment>(
    const ProgramFragment& target, const FragmentGraph&, const buildbase::BuildBase&,
    const nlohmann::json& options)>;

/// Name -> tactic tables. Builtins: decomposition "linker", "closure",
/// "per_file"; composition "greedy".
std::map<std::string, DecompositionTactic>& decomposition_tactics();
std::map<std::string, CompositionTactic>& composition_tactics();

FragmentGraph linker_tactic(const buildbase::BuildBase& base, const buildbase::FileGraph& files,
                            const nlohmann::json& options);
FragmentGraph closure_tactic(const buildbase::BuildBase& base, const buildbase::FileGraph& files,
                             const nlohmann::json& options);

FragmentGraph refine_fragments(const FragmentGraph& graph, const DecompositionSpec& spec,
                               const buildbase::BuildBase& base);

/// Marks fragments containing files matched by `targets`; returns the
/// patterns that matched nothing through `unmatched`.
FragmentGraph resolve_targets(const FragmentGraph& graph, const std::vector<std::string>& targets,
                              const buildbase::BuildBase& base,
                              std::vector<std::string>* unmatched = nullptr);

std::vector<ProgramFragment> greedy_composition(const ProgramFragment& target,
                                                const FragmentGraph& graph,
                                                const buildbase::BuildBase& base,
                                                const nlohmann::json& options);

std::vector<ProgramFragment> decompose(const PfgConfig& conf, const buildbase::BuildBase& base,
                                       const std::optional<DecompositionSpec>& spec);

PfgConfig parse_config(const nlohmann::json& j);

/// Parses a specification file keyed by program version. With an empty
/// `version` the file must hold exactly one version.
DecompositionSpec parse_spec(const nlohmann::json& j, const std::string& version = {});

nlohmann::json to_json(const std::vector<ProgramFragment>& fragments);
std::vector<ProgramFragment> fragments_from_json(const nlohmann::json& j);

}  // namespace forge::pfg
