#include <fstream>
#include <sstream>

#include "forge/ctop.hpp"
#include "forge/emg.hpp"
#include "forge/error.hpp"
#include "forge/pattern.hpp"

namespace forge::emg {

using nlohmann::json;

namespace {

IntermediateModel compose_user_model(const pfg::ProgramFragment&, const buildbase::BuildBase&, const json& options,
                                     const IntermediateModel&) {
    if (options.contains("model")) return parse_model(options.at("model"));
    if (options.contains("file")) {
        std::ifstream in(options.at("file").get<std::string>());
        if (!in) throw ConfigError("cannot read model file " + options.at("file").get<std::string>());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_model(json::parse(ss.str()));
    }
    throw ConfigError("user_model_composer needs a 'model' or 'file' option");
}

void absorb(IntermediateModel& into, IntermediateModel part) {
    for (auto& [n, m] : part.function_models) into.function_models.insert_or_assign(n, std::move(m));
    for (auto& [n, m] : part.thread_models) into.thread_models.insert_or_assign(n, std::move(m));
    into.supplementary_sources.insert(into.supplementary_sources.end(), part.supplementary_sources.begin(),
                                      part.supplementary_sources.end());
    if (part.entry_order != "sequence") into.entry_order = part.entry_order;
}

}  // namespace

std::map<std::string, Generator>& generators() {
    static std::map<std::string, Generator> table = {
        {"entry_caller",
         [](const pfg::ProgramFragment& f, const buildbase::BuildBase& b, const json& o, const IntermediateModel&) {
             return entry_caller_generate(f, b, o);
         }},
        {"user_model_composer", compose_user_model},
    };
    return table;
}

std::vector<GeneratorStage> parse_pipeline(const json& j) {
    std::vector<GeneratorStage> stages;
    for (const auto& s : j) {
        if (s.is_string()) {
            stages.push_back({s.get<std::string>(), json::object()});
            continue;
        }
        stages.push_back({s.at("name").get<std::string>(), s.value("options", json::object())});
    }
    return stages;
}

IntermediateModel run_generator_pipeline(const pfg::ProgramFragment& fragment, const buildbase::BuildBase& base,
                                         const std::vector<GeneratorStage>& stages) {
    if (stages.empty()) throw GenerationError("empty generator pipeline: no entry point derivable");
    IntermediateModel model;
    for (const auto& stage : stages) {
        auto it = generators().find(stage.name);
        if (it == generators().end()) throw GenerationError("stage '" + stage.name + "': unknown generator");
        try {
            absorb(model, it->second(fragment, base, stage.options, model));
        } catch (const GenerationError&) {
            throw;
        } catch (const std::exception& e) {
            throw GenerationError("stage '" + stage.name + "': " + e.what());
        }
    }
    model.warnings.clear();
    try {
        validate(model);
    } catch (const Error& e) {
        throw GenerationError(std::string("merged model: ") + e.what());
    }
    return model;
}

IntermediateModel entry_caller_generate(const pfg::ProgramFragment& fragment, const buildbase::BuildBase& base,
                                        const json& options) {
    std::set<std::string> files(fragment.files.begin(), fragment.files.end());
    std::vector<std::string> explicit_list;
    if (options.contains("entry_points")) explicit_list = options.at("entry_points").get<std::vector<std::string>>();
    std::string pattern = options.value("pattern", std::string("*_main"));

    std::map<std::string, const buildbase::FunctionInfo*> chosen;
    for (const auto& d : base.callgraph.definitions()) {
        if (!files.count(d.file)) continue;
        bool hit = explicit_list.empty()
                       ? glob_match(pattern, d.name)
                       : std::find(explicit_list.begin(), explicit_list.end(), d.name) != explicit_list.end();
        if (hit) chosen.emplace(d.name, &d);
    }
    if (chosen.empty())
        throw GenerationError("stage 'entry_caller': no entry function in fragment '" + fragment.name + "'");

    IntermediateModel model;
    model.entry_order = options.value("order", std::string("sequence"));
    for (const auto& [name, fn] : chosen) {
        ScenarioModel m;
        m.name = name;
        m.category = "entry_caller";
        std::string call = name + "(";
        for (std::size_t i = 0; i < fn->params.size(); ++i) {
            std::string label = "ldv_arg_" + std::to_string(i);
            Label l;
            l.type = fn->params[i].type;
            l.declaration = ctop::declare(l.type, label);
            if (l.type.find('*') != std::string::npos) l.value = "external_allocated_data()";
            m.labels[label] = l;
            call += (i ? ", %" : "%") + label + "%";
        }
        call += ");";
        Action a;
        a.comment = "Call " + name + ".";
        a.statements.push_back(call);
        m.actions["call"] = a;
        m.process = ProcessExpr::leaf(ProcessExpr::Kind::Block, "call");
        model.thread_models[name] = std::move(m);
    }
    return model;
}

}  // namespace forge::emg
