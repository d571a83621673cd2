#include <regex>

#include "forge/ctop.hpp"
#include "forge/emg.hpp"
#include "forge/error.hpp"

namespace forge::emg {

using Kind = ProcessExpr::Kind;

namespace {

const char* const kPrelude[] = {
    "int __VERIFIER_nondet_int(void);",
    "void *__VERIFIER_nondet_pointer(void);",
    "void __VERIFIER_assume(int expression);",
    "void *external_allocated_data(void);",
};

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ? c : '_';
    return out;
}

std::string variable(const std::string& label) {
    return label.rfind("ldv_", 0) == 0 ? label : "ldv_emg_" + label;
}

std::string arg_name(std::size_t i) { return "ldv_emg_arg_" + std::to_string(i); }

std::string comment_text(const std::string& s) {
    std::string out = s;
    for (std::size_t p; (p = out.find("*/")) != std::string::npos;) out.replace(p, 2, "* /");
    return out;
}

class Writer {
public:
    void line(int indent, const std::string& text) { lines_.push_back(std::string(4 * indent, ' ') + text); }
    void raw(const std::string& text) {
        std::size_t start = 0;
        while (start <= text.size()) {
            auto nl = text.find('\n', start);
            if (nl == std::string::npos) {
                if (start < text.size()) lines_.push_back(text.substr(start));
                break;
            }
            lines_.push_back(text.substr(start, nl - start));
            start = nl + 1;
        }
    }
    std::size_t next_line() const { return lines_.size() + 1; }
    std::string text() const {
        std::string out;
        for (const auto& l : lines_) out += l + "\n";
        return out;
    }

private:
    std::vector<std::string> lines_;
};

void head_receives(const ProcessExpr& e, std::vector<const ProcessExpr*>& out) {
    if (e.kind == Kind::Receive) {
        out.push_back(&e);
    } else if (e.kind == Kind::Seq) {
        head_receives(e.children.front(), out);
    } else if (e.kind == Kind::Choice) {
        for (const auto& c : e.children) head_receives(c, out);
    }
}

class Translator {
public:
    Translator(const IntermediateModel& model, HarnessBundle& bundle)
        : model_(model), bundle_(bundle), pairing_(pair_signals(model)) {
        for (const auto* s : model.scenarios()) {
            bool fn = model.function_models.count(s->name) && &model.function_models.at(s->name) == s;
            bundle_.control_functions[s->name] = "ldv_emg_" + sanitize(s->name);
            signatures_[s->name] = signature(*s, fn);
        }
    }

    std::string run(const pfg::ProgramFragment& fragment) {
        w_.line(0, "/* Environment model for " + comment_text(fragment.name) + " */");
        w_.line(0, "");
        for (const char* p : kPrelude) w_.line(0, p);
        w_.line(0, "");
        for (const auto& src : model_.supplementary_sources) {
            w_.raw(src);
            w_.line(0, "");
        }
        for (const auto* s : model_.scenarios()) w_.line(0, signatures_[s->name] + ";");
        w_.line(0, "");
        for (const auto* s : model_.scenarios()) {
            control_function(*s);
            w_.line(0, "");
        }
        entry_point();
        return w_.text();
    }

private:
    const IntermediateModel& model_;
    HarnessBundle& bundle_;
    SignalPairing pairing_;
    Writer w_;
    std::map<std::string, std::string> signatures_;
    std::map<std::string, std::size_t> arity_;  // control-function parameter count

    // Per control function.
    const ScenarioModel* cur_ = nullptr;
    std::set<std::string> placed_jumps_;
    bool uses_exit_ = false;

    bool is_function_model(const ScenarioModel& s) const {
        auto it = model_.function_models.find(s.name);
        return it != model_.function_models.end() && &it->second == &s;
    }

    std::string signature(const ScenarioModel& s, bool function_model) {
        std::string name = "ldv_emg_" + sanitize(s.name);
        if (function_model) {
            auto sig = ctop::parse_signature(s.declaration);
            for (std::size_t i = 0; i < sig.params.size(); ++i) sig.params[i].name = arg_name(i);
            arity_[s.name] = sig.params.size();
            return sig.render(name);
        }
        std::vector<const ProcessExpr*> heads;
        head_receives(s.process, heads);
        std::vector<std::string> params;
        for (const auto* h : heads) {
            const auto& a = s.actions.at(h->name);
            if (params.empty()) {
                for (std::size_t i = 0; i < a.parameters.size(); ++i)
                    params.push_back(ctop::declare(s.labels.at(a.parameters[i]).type, arg_name(i)));
            } else if (a.parameters.size() != params.size()) {
                throw TranslationError("first receives of scenario '" + s.name + "' disagree on parameter count");
            }
        }
        arity_[s.name] = params.size();
        std::string out = "void " + name + "(";
        for (std::size_t i = 0; i < params.size(); ++i) out += (i ? ", " : "") + params[i];
        return out + (params.empty() ? "void)" : ")");
    }

    std::string substitute(const std::string& text) const {
        static const std::regex re("%([A-Za-z_][A-Za-z0-9_]*)%");
        std::string out;
        auto begin = std::sregex_iterator(text.begin(), text.end(), re);
        std::size_t last = 0;
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
            std::string label = (*it)[1];
            if (!cur_->labels.count(label))
                throw TranslationError("unsubstituted %" + label + "% in scenario '" + cur_->name + "'");
            out += text.substr(last, it->position() - last) + variable(label);
            last = it->position() + it->length();
        }
        out += text.substr(last);
        if (out.find('%') != std::string::npos && std::regex_search(out, re))
            throw TranslationError("unsubstituted label in '" + text + "'");
        return out;
    }

    void control_function(const ScenarioModel& s) {
        cur_ = &s;
        placed_jumps_.clear();
        uses_exit_ = false;
        bool fn = is_function_model(s);
        std::string ret_type;
        if (fn) {
            ret_type = ctop::parse_signature(s.declaration).return_type;
            if (ret_type == "void") ret_type.clear();
        }
        w_.line(0, signatures_[s.name]);
        w_.line(0, "{");
        for (const auto& [name, l] : s.labels) w_.line(1, ctop::declare(l.type, variable(name)) + ";");
        if (!ret_type.empty() && !s.retval) w_.line(1, ctop::declare(ret_type, "ldv_emg_ret") + ";");
        for (const auto& [name, l] : s.labels)
            if (l.value) w_.line(1, variable(name) + " = " + substitute(*l.value) + ";");
        emit(s.process, 1, true, true);
        if (uses_exit_) w_.line(0, "ldv_emg_out:");
        if (!ret_type.empty())
            w_.line(1, "return " + (s.retval ? variable(*s.retval) : std::string("ldv_emg_ret")) + ";");
        else if (uses_exit_)
            w_.line(1, "return;");
        w_.line(0, "}");
    }

    void emit(const ProcessExpr& e, int indent, bool head, bool tail) {
        switch (e.kind) {
        case Kind::Seq:
            for (std::size_t i = 0; i < e.children.size(); ++i)
                emit(e.children[i], indent, head && i == 0, tail && i + 1 == e.children.size());
            return;
        case Kind::Choice:
            for (std::size_t i = 0; i < e.children.size(); ++i) {
                if (i == 0)
                    w_.line(indent, "if (__VERIFIER_nondet_int()) {");
                else if (i + 1 < e.children.size())
                    w_.line(indent, "} else if (__VERIFIER_nondet_int()) {");
                else
                    w_.line(indent, "} else {");
                emit(e.children[i], indent + 1, head, tail);
            }
            w_.line(indent, "}");
            return;
        case Kind::Jump: {
            std::string label = "ldv_emg_jump_" + e.name;
            if (!placed_jumps_.insert(e.name).second) {
                w_.line(indent, "goto " + label + ";");
                return;
            }
            w_.line(0, label + ":");
            emit(*cur_->actions.at(e.name).process, indent, false, true);
            w_.line(indent, "goto ldv_emg_out;");
            uses_exit_ = true;
            return;
        }
        default: action(e, indent, head, tail);
        }
    }

    void action(const ProcessExpr& leaf, int indent, bool head, bool tail) {
        const Action& a = cur_->actions.at(leaf.name);
        if (!a.comment.empty()) w_.line(indent, "/* " + comment_text(a.comment) + " */");
        bundle_.action_lines[w_.next_line()] = {cur_->name, leaf.name};
        std::vector<std::string> code;
        if (a.condition) code.push_back("__VERIFIER_assume(" + substitute(*a.condition) + ");");
        switch (a.kind) {
        case ActionKind::Receive:
            if (!head)
                throw TranslationError("receive '" + leaf.name + "' of scenario '" + cur_->name +
                                       "' is not a first action");
            for (std::size_t i = 0; i < a.parameters.size(); ++i) {
                if (i >= arity_[cur_->name])
                    throw TranslationError("receive '" + leaf.name + "' has more parameters than its function");
                code.push_back(variable(a.parameters[i]) + " = " + arg_name(i) + ";");
            }
            if (a.postcondition) code.push_back("__VERIFIER_assume(" + substitute(*a.postcondition) + ");");
            break;
        case ActionKind::Send: {
            if (!tail)
                throw TranslationError("send '" + leaf.name + "' of scenario '" + cur_->name +
                                       "' is not a last action");
            for (const auto& p : pairing_.pairs) {
                if (p.sender_model != cur_->name || p.send_action != leaf.name) continue;
                if (model_.function_models.count(p.receiver_model))
                    throw TranslationError("signal '" + leaf.name + "' targets function model '" +
                                           p.receiver_model + "'");
                std::string call = bundle_.control_functions.at(p.receiver_model) + "(";
                for (std::size_t i = 0; i < a.parameters.size(); ++i)
                    call += (i ? ", " : "") + variable(a.parameters[i]);
                code.push_back(call + ");");
            }
            break;
        }
        default: break;
        }
        for (const auto& s : a.statements) code.push_back(substitute(s));
        if (code.empty()) code.push_back(";");
        for (const auto& c : code) w_.line(indent, c);
    }

    void entry_point() {
        std::set<std::string> triggered;
        for (const auto& p : pairing_.pairs) triggered.insert(p.receiver_model);
        std::vector<const ScenarioModel*> roots;
        for (const auto& [name, s] : model_.thread_models)
            if (!triggered.count(name)) roots.push_back(&s);

        w_.line(0, "void " + bundle_.entry_point + "(void)");
        w_.line(0, "{");
        auto call = [&](const ScenarioModel& s, int indent) {
            std::string args;
            for (std::size_t i = 0; i < arity_[s.name]; ++i) args += (i ? ", " : "") + std::string("0");
            w_.line(indent, bundle_.control_functions.at(s.name) + "(" + args + ");");
        };
        if (model_.entry_order == "random" && roots.size() > 1) {
            for (std::size_t i = 0; i < roots.size(); ++i) w_.line(1, "int ldv_emg_called_" + std::to_string(i) + " = 0;");
            for (std::size_t round = 0; round < roots.size(); ++round) {
                for (std::size_t i = 0; i < roots.size(); ++i) {
                    std::string flag = "ldv_emg_called_" + std::to_string(i);
                    std::string cond = i + 1 < roots.size() ? "__VERIFIER_nondet_int() && !" + flag : "!" + flag;
                    w_.line(1, std::string(i ? "} else if (" : "if (") + cond + ") {");
                    w_.line(2, flag + " = 1;");
                    call(*roots[i], 2);
                }
                w_.line(1, "} else {");
                w_.line(2, "__VERIFIER_assume(0);");
                w_.line(1, "}");
            }
        } else {
            for (const auto* s : roots) call(*s, 1);
        }
        w_.line(0, "}");
    }
};

}  // namespace

HarnessBundle translate(const IntermediateModel& model, const pfg::ProgramFragment& fragment) {
    HarnessBundle bundle;
    Translator t(model, bundle);
    bundle.main_source = t.run(fragment);
    for (const auto& [fn, m] : model.function_models) {
        auto sig = ctop::parse_signature(m.declaration);
        std::string args;
        for (std::size_t i = 0; i < sig.params.size(); ++i) {
            if (sig.params[i].name.empty()) sig.params[i].name = "arg" + std::to_string(i);
            args += (i ? ", " : "") + sig.params[i].name;
        }
        std::string call = bundle.control_functions.at(fn) + "(" + args + ");";
        std::string text = "around: call(" + sig.render(fn) + ")\n{\n";
        text += sig.return_type == "void" ? "    " + call + "\n" : "    return " + call + "\n";
        text += "}\n";
        bundle.aspects[sanitize(fn) + ".aspect"] = text;
    }
    return bundle;
}

}  // namespace forge::emg
