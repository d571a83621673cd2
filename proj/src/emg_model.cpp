#include <regex>

#include "forge/clex.hpp"
#include "forge/ctop.hpp"
#include "forge/emg.hpp"
#include "forge/error.hpp"

namespace forge::emg {

using nlohmann::json;
using Kind = ProcessExpr::Kind;

namespace {

const std::regex& label_ref() {
    static const std::regex re("%([A-Za-z_][A-Za-z0-9_]*)%");
    return re;
}

std::string join_conditions(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    std::vector<std::string> parts = j.get<std::vector<std::string>>();
    if (parts.size() == 1) return parts[0];
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "(" : " && (") + p + ")";
    return out;
}

std::string strip_percent(const std::string& s) {
    if (s.size() >= 2 && s.front() == '%' && s.back() == '%') return s.substr(1, s.size() - 2);
    return s;
}

ActionKind usage_kind(Kind k) {
    switch (k) {
    case Kind::Receive: return ActionKind::Receive;
    case Kind::Send: return ActionKind::Send;
    case Kind::Jump: return ActionKind::Jump;
    default: return ActionKind::Block;
    }
}

const char* kind_name(ActionKind k) {
    switch (k) {
    case ActionKind::Block: return "block";
    case ActionKind::Receive: return "receive";
    case ActionKind::Send: return "send";
    case ActionKind::Jump: return "jump";
    }
    return "?";
}

void collect_leaves(const ProcessExpr& e, std::vector<const ProcessExpr*>& out) {
    if (e.is_leaf()) {
        out.push_back(&e);
        return;
    }
    for (const auto& c : e.children) collect_leaves(c, out);
}

// Leaves that can be the first event of `e`.
void head_leaves(const ProcessExpr& e, std::set<const ProcessExpr*>& out) {
    if (e.is_leaf()) {
        out.insert(&e);
    } else if (e.kind == Kind::Seq) {
        head_leaves(e.children.front(), out);
    } else {
        for (const auto& c : e.children) head_leaves(c, out);
    }
}

ScenarioModel parse_scenario(const std::string& name, const json& j, bool function_model) {
    ScenarioModel m;
    m.name = name;
    try {
        auto slash = name.find('/');
        m.category = j.value("category", slash == std::string::npos ? std::string() : name.substr(0, slash));
        if (j.contains("labels")) {
            for (const auto& [lname, lj] : j.at("labels").items()) {
                Label l;
                l.declaration = lj.at("declaration").get<std::string>();
                if (lj.contains("value") && !lj.at("value").is_null()) l.value = lj.at("value").get<std::string>();
                l.type = ctop::parse_declaration(l.declaration).type;
                m.labels[lname] = std::move(l);
            }
        }
        std::map<std::string, std::string> jump_texts;
        if (j.contains("actions")) {
            for (const auto& [aname, aj] : j.at("actions").items()) {
                Action a;
                a.comment = aj.value("comment", std::string());
                if (aj.contains("statements")) a.statements = aj.at("statements").get<std::vector<std::string>>();
                if (aj.contains("condition") && !aj.at("condition").empty())
                    a.condition = join_conditions(aj.at("condition"));
                if (aj.contains("postcondition") && !aj.at("postcondition").empty())
                    a.postcondition = join_conditions(aj.at("postcondition"));
                if (aj.contains("parameters"))
                    for (const auto& p : aj.at("parameters")) a.parameters.push_back(strip_percent(p.get<std::string>()));
                if (aj.contains("process")) {
                    a.process = parse_process(aj.at("process").get<std::string>());
                    a.kind = ActionKind::Jump;
                }
                m.actions[aname] = std::move(a);
            }
        }
        if (!j.contains("process")) throw SemanticError("scenario '" + name + "' has no process");
        m.process = parse_process(j.at("process").get<std::string>());
        if (function_model) {
            m.declaration = j.value("declaration", std::string());
            if (m.declaration.empty())
                throw SemanticError("function model '" + name + "' has no declaration");
            if (j.contains("retval") && !j.at("retval").is_null())
                m.retval = strip_percent(j.at("retval").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw SemanticError("malformed scenario '" + name + "': " + e.what());
    }

    // Action kinds follow from how the processes use them.
    std::vector<const ProcessExpr*> leaves;
    collect_leaves(m.process, leaves);
    for (const auto& [aname, a] : m.actions)
        if (a.process) collect_leaves(*a.process, leaves);
    std::map<std::string, ActionKind> used;
    for (const auto* leaf : leaves) {
        auto it = m.actions.find(leaf->name);
        if (it == m.actions.end())
            throw SemanticError("undeclared action '" + leaf->name + "' in scenario '" + name + "'");
        ActionKind k = usage_kind(leaf->kind);
        auto [u, fresh] = used.emplace(leaf->name, k);
        if (!fresh && u->second != k)
            throw SemanticError("action '" + leaf->name + "' used both as " + kind_name(u->second) + " and " +
                                kind_name(k));
        if (k == ActionKind::Jump && !it->second.process)
            throw SemanticError("jump '" + leaf->name + "' has no process");
        if (k != ActionKind::Jump && it->second.process)
            throw SemanticError("action '" + leaf->name + "' has a process but is not used as a jump");
        it->second.kind = k;
    }
    return m;
}

json scenario_json(const ScenarioModel& m, bool function_model) {
    json j;
    if (!m.category.empty()) j["category"] = m.category;
    json labels = json::object();
    for (const auto& [n, l] : m.labels) {
        json lj{{"declaration", l.declaration}};
        if (l.value) lj["value"] = *l.value;
        labels[n] = lj;
    }
    j["labels"] = labels;
    json actions = json::object();
    for (const auto& [n, a] : m.actions) {
        json aj = json::object();
        if (!a.comment.empty()) aj["comment"] = a.comment;
        if (!a.statements.empty()) aj["statements"] = a.statements;
        if (a.condition) aj["condition"] = json::array({*a.condition});
        if (a.postcondition) aj["postcondition"] = json::array({*a.postcondition});
        if (a.kind == ActionKind::Send || a.kind == ActionKind::Receive) {
            json params = json::array();
            for (const auto& p : a.parameters) params.push_back("%" + p + "%");
            aj["parameters"] = params;
        }
        if (a.process) aj["process"] = print_process(*a.process);
        actions[n] = aj;
    }
    j["actions"] = actions;
    j["process"] = print_process(m.process);
    if (function_model) {
        j["declaration"] = m.declaration;
        if (m.retval) j["retval"] = "%" + *m.retval + "%";
    }
    return j;
}

void check_labels(const ScenarioModel& m, const std::string& text, std::set<std::string>& referenced) {
    for (std::sregex_iterator it(text.begin(), text.end(), label_ref()), end; it != end; ++it) {
        std::string name = (*it)[1];
        if (!m.labels.count(name))
            throw SemanticError("undeclared label '" + name + "' in scenario '" + m.name + "'");
        referenced.insert(name);
    }
}

void check_block_statement(const ScenarioModel& m, const std::string& action, const std::string& stmt) {
    auto toks = clex::tokens(stmt);
    auto where = "statement of action '" + action + "' in scenario '" + m.name + "'";
    for (const auto& t : toks)
        if (t.is("goto")) throw SemanticError("goto in " + where);
    if (toks.size() >= 2 && toks[0].ident() && toks[1].is(":") && !clex::is_keyword(toks[0].text))
        throw SemanticError("label definition in " + where);
    if (!toks.empty() && clex::is_type_word(toks[0].text) && !toks[0].is("sizeof"))
        throw SemanticError("variable declaration in " + where);
}

void validate_scenario(ScenarioModel& m, bool function_model, std::vector<std::string>& warnings) {
    std::set<std::string> referenced;
    for (const auto& [lname, l] : m.labels)
        if (l.value) check_labels(m, *l.value, referenced);
    for (const auto& [aname, a] : m.actions) {
        for (const auto& s : a.statements) check_labels(m, s, referenced);
        if (a.condition) check_labels(m, *a.condition, referenced);
        if (a.postcondition) check_labels(m, *a.postcondition, referenced);
        for (const auto& p : a.parameters) {
            if (!m.labels.count(p))
                throw SemanticError("undeclared label '" + p + "' in scenario '" + m.name + "'");
            referenced.insert(p);
        }
        if (a.kind == ActionKind::Send && a.postcondition)
            throw SemanticError("send action '" + aname + "' has a postcondition");
        if (a.kind == ActionKind::Block)
            for (const auto& s : a.statements) check_block_statement(m, aname, s);
    }
    if (m.retval) {
        if (!m.labels.count(*m.retval))
            throw SemanticError("undeclared label '" + *m.retval + "' in scenario '" + m.name + "'");
        referenced.insert(*m.retval);
    }
    for (const auto& [lname, l] : m.labels)
        if (!referenced.count(lname)) warnings.push_back("label '" + lname + "' of scenario '" + m.name + "' is never used");

    std::set<std::string> used;
    std::vector<const ProcessExpr*> leaves;
    collect_leaves(m.process, leaves);
    for (const auto& [aname, a] : m.actions)
        if (a.process) collect_leaves(*a.process, leaves);
    for (const auto* l : leaves) used.insert(l->name);
    for (const auto& [aname, a] : m.actions)
        if (!used.count(aname)) warnings.push_back("action '" + aname + "' of scenario '" + m.name + "' is never used");

    std::set<const ProcessExpr*> heads;
    head_leaves(m.process, heads);
    for (const auto* l : leaves) {
        if (!l->first) continue;
        if (function_model || !heads.count(l))
            throw SemanticError("'(!" + l->name + ")' is only allowed as the first action of a thread model");
    }
}

}  // namespace

std::vector<const ScenarioModel*> IntermediateModel::scenarios() const {
    std::vector<const ScenarioModel*> out;
    for (const auto& [n, m] : function_models) out.push_back(&m);
    for (const auto& [n, m] : thread_models) out.push_back(&m);
    return out;
}

IntermediateModel parse_model(const json& doc) {
    if (!doc.is_object()) throw SemanticError("model document must be an object");
    IntermediateModel model;
    for (const auto& [key, value] : doc.items()) {
        if (key == "functions models") {
            for (const auto& [fn, sj] : value.items()) model.function_models[fn] = parse_scenario(fn, sj, true);
        } else if (key == "environment processes") {
            for (const auto& [n, sj] : value.items()) model.thread_models[n] = parse_scenario(n, sj, false);
        } else if (key == "sources") {
            model.supplementary_sources = value.get<std::vector<std::string>>();
        } else if (key == "entry order") {
            model.entry_order = value.get<std::string>();
        } else {
            model.thread_models[key] = parse_scenario(key, value, false);
        }
    }
    validate(model);
    return model;
}

void validate(IntermediateModel& model) {
    if (model.function_models.empty() && model.thread_models.empty())
        throw SemanticError("model has no scenario models");
    if (model.entry_order != "sequence" && model.entry_order != "random")
        throw SemanticError("unknown entry order '" + model.entry_order + "'");
    for (auto& [n, m] : model.function_models) validate_scenario(m, true, model.warnings);
    for (auto& [n, m] : model.thread_models) validate_scenario(m, false, model.warnings);
}

json to_json(const IntermediateModel& model) {
    json functions = json::object();
    for (const auto& [n, m] : model.function_models) functions[n] = scenario_json(m, true);
    json threads = json::object();
    for (const auto& [n, m] : model.thread_models) threads[n] = scenario_json(m, false);
    json j{{"functions models", functions}, {"environment processes", threads}, {"entry order", model.entry_order}};
    if (!model.supplementary_sources.empty()) j["sources"] = model.supplementary_sources;
    return j;
}

SignalPairing pair_signals(const IntermediateModel& model) {
    SignalPairing out;
    auto scenarios = model.scenarios();
    auto types = [](const ScenarioModel& m, const Action& a) {
        std::vector<std::string> t;
        for (const auto& p : a.parameters) t.push_back(m.labels.at(p).type);
        return t;
    };
    std::set<std::pair<std::string, std::string>> matched_receives;
    for (const auto* s : scenarios) {
        for (const auto& [sname, send] : s->actions) {
            if (send.kind != ActionKind::Send) continue;
            bool matched = false;
            for (const auto* r : scenarios) {
                if (r == s) continue;
                auto it = r->actions.find(sname);
                if (it == r->actions.end() || it->second.kind != ActionKind::Receive) continue;
                if (types(*s, send) != types(*r, it->second))
                    throw TypeError("parameter types of send '" + s->name + "." + sname + "' and receive '" +
                                    r->name + "." + sname + "' differ");
                out.pairs.insert({s->name, sname, r->name, sname});
                matched_receives.emplace(r->name, sname);
                matched = true;
            }
            if (!matched) out.warnings.push_back("send '" + s->name + "." + sname + "' has no receiver");
        }
    }
    for (const auto* r : scenarios)
        for (const auto& [rname, recv] : r->actions)
            if (recv.kind == ActionKind::Receive && !matched_receives.count({r->name, rname}))
                out.warnings.push_back("receive '" + r->name + "." + rname + "' has no sender");
    return out;
}

namespace {

struct TraceWalker {
    const ScenarioModel& model;
    std::size_t max_len;
    std::size_t jump_budget;
    std::set<Trace> out;

    // `pending` is a stack: the back is the next expression to run.
    void walk(std::vector<const ProcessExpr*> pending, Trace& trace, std::size_t idle_jumps) {
        while (!pending.empty()) {
            const ProcessExpr* e = pending.back();
            pending.pop_back();
            switch (e->kind) {
            case Kind::Seq:
                for (auto it = e->children.rbegin(); it != e->children.rend(); ++it) pending.push_back(&*it);
                break;
            case Kind::Choice:
                for (const auto& c : e->children) {
                    auto branch = pending;
                    branch.push_back(&c);
                    std::size_t mark = trace.size();
                    walk(std::move(branch), trace, idle_jumps);
                    trace.resize(mark);
                }
                return;
            case Kind::Jump:
                if (++idle_jumps > jump_budget) return;
                pending.clear();
                pending.push_back(&*model.actions.at(e->name).process);
                break;
            default:
                if (trace.size() == max_len) return;
                trace.push_back(e->name);
                idle_jumps = 0;
                break;
            }
        }
        out.insert(trace);
    }
};

}  // namespace

std::set<Trace> enumerate_traces(const ScenarioModel& model, std::size_t max_len) {
    TraceWalker w{model, max_len, model.actions.size() + 1, {}};
    Trace t;
    w.walk({&model.process}, t, 0);
    return w.out;
}

std::map<std::string, std::set<Trace>> enumerate_traces(const IntermediateModel& model, std::size_t max_len) {
    std::map<std::string, std::set<Trace>> out;
    for (const auto* s : model.scenarios()) out[s->name] = enumerate_traces(*s, max_len);
    return out;
}

}  // namespace forge::emg
