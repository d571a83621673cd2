#include "forge/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "forge/emg.hpp"
#include "forge/error.hpp"
#include "forge/weave.hpp"

namespace forge::taskgen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<PluginOptions> parse_plugins(const json& list, const std::string& where) {
    if (!list.is_array()) throw ConfigError(where + ": 'plugins' must be a list");
    std::vector<PluginOptions> out;
    for (const auto& p : list) {
        if (!p.is_object() || !p.contains("name")) throw ConfigError(where + ": plugin without a name");
        out.push_back({p.at("name").get<std::string>(), p.value("options", json::object())});
    }
    return out;
}

void overlay(std::vector<PluginOptions>& into, const std::vector<PluginOptions>& node) {
    for (const auto& p : node) {
        auto it = std::find_if(into.begin(), into.end(), [&](const PluginOptions& q) { return q.name == p.name; });
        if (it == into.end()) {
            into.push_back(p);
            continue;
        }
        for (const auto& [k, v] : p.options.items()) it->options[k] = v;
    }
}

struct Walk {
    const json& templates;
    std::vector<ResolvedReqSpec>& out;
    std::set<std::string> ids;

    void node(const json& n, const std::vector<std::string>& path, const std::string& tmpl,
              std::vector<std::vector<PluginOptions>> layers) {
        std::string here = tmpl;
        if (n.contains("template")) here = n.at("template").get<std::string>();
        auto p = path;
        if (n.contains("identifier")) p.push_back(n.at("identifier").get<std::string>());
        std::string id;
        for (const auto& s : p) id += (id.empty() ? "" : ":") + s;
        if (n.contains("plugins")) layers.push_back(parse_plugins(n.at("plugins"), id.empty() ? "root" : id));
        // Layers gathered above the node that switched templates do not carry over.
        if (n.contains("template") && n.contains("plugins")) layers = {layers.back()};
        else if (n.contains("template")) layers.clear();

        if (n.contains("children") && !n.at("children").empty()) {
            for (const auto& c : n.at("children")) node(c, p, here, layers);
            return;
        }
        if (id.empty()) throw ConfigError("requirement specification without identifier");
        if (here.empty()) throw ConfigError("requirement specification '" + id + "' has no template");
        if (!templates.contains(here))
            throw ConfigError("requirement specification '" + id + "' refers to unknown template '" + here + "'");
        if (!ids.insert(id).second) throw ConfigError("duplicate requirement specification '" + id + "'");
        ResolvedReqSpec spec;
        spec.id = id;
        spec.template_name = here;
        spec.plugins = parse_plugins(templates.at(here).value("plugins", json::array()), here);
        for (const auto& layer : layers) overlay(spec.plugins, layer);
        if (spec.plugins.empty()) throw ConfigError("requirement specification '" + id + "' has no plugins");
        out.push_back(std::move(spec));
    }
};

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw TaskError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw TaskError("cannot write " + p.string());
    out << text;
}

}  // namespace

const json* ResolvedReqSpec::plugin(const std::string& name) const {
    for (const auto& p : plugins)
        if (p.name == name) return &p.options;
    return nullptr;
}

std::string ResolvedReqSpec::verifier_profile() const {
    const auto* fvtp = plugin("FVTP");
    if (!fvtp || !fvtp->contains("verifier profile"))
        throw ConfigError("requirement specification '" + id + "' names no verifier profile");
    return fvtp->at("verifier profile").get<std::string>();
}

std::string ResolvedReqSpec::verifier_name() const {
    const auto* fvtp = plugin("FVTP");
    if (!fvtp || !fvtp->contains("verifier")) throw ConfigError("requirement specification '" + id + "' names no verifier");
    return fvtp->at("verifier").at("name").get<std::string>();
}

std::string ResolvedReqSpec::verifier_version() const {
    const auto* fvtp = plugin("FVTP");
    if (!fvtp || !fvtp->contains("verifier")) throw ConfigError("requirement specification '" + id + "' names no verifier");
    return fvtp->at("verifier").at("version").get<std::string>();
}

std::vector<std::string> ResolvedReqSpec::model_files() const {
    std::vector<std::string> out;
    const auto* rsg = plugin("RSG");
    if (!rsg) return out;
    for (const char* key : {"common models", "models"})
        if (rsg->contains(key))
            for (const auto& m : rsg->at(key)) out.push_back(m.get<std::string>());
    return out;
}

std::vector<ResolvedReqSpec> resolve_req_specs(const json& base) {
    if (!base.is_object() || !base.contains("requirement specifications"))
        throw ConfigError("requirement specifications base lacks 'requirement specifications'");
    static const json empty = json::object();
    const json& templates = base.contains("templates") ? base.at("templates") : empty;
    std::vector<ResolvedReqSpec> out;
    Walk walk{templates, out, {}};
    walk.node(base.at("requirement specifications"), {}, "", {});
    return out;
}

ResolvedProfile resolve_profile(const json& store, const std::string& name, const std::string& tool,
                                const std::string& version) {
    if (!store.contains("profiles") || !store.at("profiles").contains(name))
        throw ConfigError("unknown verifier profile '" + name + "'");
    const auto& by_tool = store.at("profiles").at(name);
    if (!by_tool.contains(tool)) throw ConfigError("verifier profile '" + name + "' has no entry for " + tool);
    if (!by_tool.at(tool).contains(version))
        throw ConfigError("verifier profile '" + name + "' has no " + tool + " version " + version);

    // Leaf first, then its ancestors.
    std::vector<const json*> chain{&by_tool.at(tool).at(version)};
    std::set<std::string> seen;
    while (chain.back()->contains("inherit")) {
        auto parent = chain.back()->at("inherit").get<std::string>();
        if (!seen.insert(parent).second) throw ConfigError("verifier profile inheritance cycle at '" + parent + "'");
        if (!store.contains("templates") || !store.at("templates").contains(parent))
            throw ConfigError("unknown verifier profile template '" + parent + "'");
        chain.push_back(&store.at("templates").at(parent));
    }
    ResolvedProfile out;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        const json& node = **it;
        if (node.contains("safety properties"))
            out.safety_properties = node.at("safety properties").get<std::vector<std::string>>();
        if (node.contains("add options"))
            for (const auto& opt : node.at("add options"))
                for (const auto& [flag, value] : opt.items())
                    out.options.emplace_back(flag, value.is_string() ? value.get<std::string>() : value.dump());
    }
    if (out.safety_properties.empty()) throw ConfigError("verifier profile '" + name + "' has no safety properties");
    return out;
}

std::int64_t Limits::hard_time_limit() const { return (cpu_seconds * 300 + 269) / 270; }

std::string property_file(const ResolvedProfile& profile, const std::string& entry_point) {
    std::string out;
    for (auto p : profile.safety_properties) {
        for (auto at = p.find("{entry_point}"); at != std::string::npos; at = p.find("{entry_point}"))
            p.replace(at, 13, entry_point);
        out += p + "\n";
    }
    return out;
}

std::string task_definition() {
    return "format_version: '1.0'\n"
           "\n"
           "input_files: 'cil.i'\n"
           "\n"
           "properties:\n"
           "  - property_file: safe-prps.prp\n";
}

std::string benchmark_definition(const ResolvedProfile& profile, const std::string& tool, const Limits& limits) {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" ?>\n"
        << "<benchmark hardtimelimit=\"" << limits.hard_time_limit() << "\" timelimit=\"" << limits.cpu_seconds
        << "\" tool=\"" << xml_escape(lower(tool)) << "\">\n"
        << "    <rundefinition>\n";
    for (const auto& [flag, value] : profile.options) {
        if (value.empty())
            out << "        <option name=\"" << xml_escape(flag) << "\"/>\n";
        else
            out << "        <option name=\"" << xml_escape(flag) << "\">" << xml_escape(value) << "</option>\n";
    }
    out << "    </rundefinition>\n"
        << "    <tasks>\n"
        << "        <include>cil.yml</include>\n"
        << "    </tasks>\n"
        << "    <propertyfile>safe-prps.prp</propertyfile>\n"
        << "</benchmark>\n";
    return out.str();
}

VerificationTask emit_task(const std::string& fragment, const ResolvedReqSpec& spec, const ResolvedProfile& profile,
                           const std::string& harness, const Limits& limits, const std::string& entry_point,
                           int priority) {
    if (harness.find_first_not_of(" \t\r\n") == std::string::npos)
        throw TaskError("empty program for fragment '" + fragment + "' and '" + spec.id + "'");
    if (limits.cpu_seconds <= 0 || limits.wall_seconds <= 0 || limits.memory_bytes <= 0)
        throw TaskError("limits must be positive");
    VerificationTask t;
    t.id = fragment + "@" + spec.id;
    t.fragment = fragment;
    t.requirement = spec.id;
    t.program = harness;
    t.property = property_file(profile, entry_point);
    t.task_def = task_definition();
    const auto* fvtp = spec.plugin("FVTP");
    t.tool = fvtp && fvtp->contains("verifier") ? spec.verifier_name() : "miniver";
    t.benchmark = benchmark_definition(profile, t.tool, limits);
    t.limits = limits;
    t.priority = priority;
    return t;
}

std::string task_dir_name(const std::string& id) {
    std::string out;
    for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    return out;
}

json task_metadata(const VerificationTask& task) {
    return {{"id", task.id},
            {"fragment", task.fragment},
            {"requirement", task.requirement},
            {"tool", task.tool},
            {"priority", task.priority},
            {"models", task.models},
            {"limits",
             {{"cpu_seconds", task.limits.cpu_seconds},
              {"wall_seconds", task.limits.wall_seconds},
              {"memory_bytes", task.limits.memory_bytes}}}};
}

void write_task(const fs::path& dir, const VerificationTask& task) {
    fs::create_directories(dir);
    write_file(dir / "cil.i", task.program);
    write_file(dir / "safe-prps.prp", task.property);
    write_file(dir / "cil.yml", task.task_def);
    write_file(dir / "benchmark.xml", task.benchmark);
    write_file(dir / "task.json", task_metadata(task).dump(2) + "\n");
}

VerificationTask read_task(const fs::path& dir) {
    VerificationTask t;
    json meta;
    try {
        meta = json::parse(read_file(dir / "task.json"));
        t.id = meta.at("id");
        t.fragment = meta.value("fragment", "");
        t.requirement = meta.value("requirement", "");
        t.tool = meta.value("tool", "miniver");
        t.priority = meta.value("priority", 0);
        t.models = meta.value("models", std::vector<std::string>{});
        const auto& l = meta.at("limits");
        t.limits.cpu_seconds = l.at("cpu_seconds");
        t.limits.wall_seconds = l.at("wall_seconds");
        t.limits.memory_bytes = l.at("memory_bytes");
    } catch (const json::exception& e) {
        throw TaskError(dir.string() + "/task.json: " + e.what());
    }
    t.program = read_file(dir / "cil.i");
    t.property = read_file(dir / "safe-prps.prp");
    t.task_def = read_file(dir / "cil.yml");
    t.benchmark = read_file(dir / "benchmark.xml");
    return t;
}

Prepared prepare(const PrepareInput& input) {
    if (!input.base) throw ConfigError("prepare needs a build base");
    Prepared out;
    auto specs = resolve_req_specs(input.spec_base);
    if (!input.requirements.empty()) {
        for (const auto& r : input.requirements)
            if (std::none_of(specs.begin(), specs.end(), [&](const ResolvedReqSpec& s) { return s.id == r; }))
                throw ConfigError("unknown requirement specification '" + r + "'");
        std::erase_if(specs, [&](const ResolvedReqSpec& s) {
            return std::find(input.requirements.begin(), input.requirements.end(), s.id) == input.requirements.end();
        });
    }
    for (const auto& fragment : input.fragments) {
        if (!fragment.is_target) continue;
        for (const auto& spec : specs) {
            auto profile =
                resolve_profile(input.profiles, spec.verifier_profile(), spec.verifier_name(), spec.verifier_version());

            json stages = json::array();
            if (const auto* emg_opts = spec.plugin("EMG"); emg_opts && emg_opts->contains("generators options"))
                stages = emg_opts->at("generators options");
            for (auto& s : stages)
                if (s.is_object() && s.contains("options") && s["options"].contains("file")) {
                    fs::path f = s["options"]["file"].get<std::string>();
                    if (f.is_relative()) s["options"]["file"] = (input.spec_dir / f).string();
                }
            auto model = emg::run_generator_pipeline(fragment, *input.base, emg::parse_pipeline(stages));
            for (const auto& w : model.warnings) out.warnings.push_back(fragment.name + ": " + w);
            auto harness = emg::translate(model, fragment);

            std::vector<weave::Advice> advice;
            for (const auto& [name, text] : harness.aspects) {
                auto a = weave::parse_aspect(text);
                advice.insert(advice.end(), a.begin(), a.end());
            }
            std::vector<weave::SourceFile> sources;
            for (const auto& m : spec.model_files()) {
                fs::path p = input.models_dir / m;
                sources.push_back({m, read_file(p)});
                auto aspect = p;
                aspect.replace_extension(".aspect");
                if (fs::exists(aspect)) {
                    auto a = weave::parse_aspect(read_file(aspect));
                    advice.insert(advice.end(), a.begin(), a.end());
                }
            }
            sources.push_back({"environment.c", harness.main_source});
            for (const auto& f : fragment.files)
                sources.push_back({f, weave::weave(input.base->read_source(f), advice).text});
            auto merged = weave::merge(sources);
            auto task = emit_task(fragment.name, spec, profile, merged.text, input.limits, harness.entry_point);
            task.models = spec.model_files();
            task.models.push_back("environment.c");
            out.tasks.push_back(std::move(task));
        }
    }
    return out;
}

}  // namespace forge::taskgen
