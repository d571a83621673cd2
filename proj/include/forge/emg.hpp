#pragma once

// Environment models: the process notation, scenario and intermediate
// models, signal pairing, trace enumeration, the generator pipeline and the
// sequential translator to C.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "forge/buildbase.hpp"
#include "forge/pfg.hpp"

namespace forge::emg {

struct ProcessExpr {
    enum class Kind { Block, Receive, Send, Jump, Seq, Choice };

    Kind kind = Kind::Block;
    std::string name;                  // leaves only
    bool first = false;                // `(!name)` receive
    std::vector<ProcessExpr> children; // Seq and Choice only

    static ProcessExpr leaf(Kind kind, std::string name, bool first = false);
    static ProcessExpr seq(std::vector<ProcessExpr> children);
    static ProcessExpr choice(std::vector<ProcessExpr> children);

    bool is_leaf() const noexcept { return kind != Kind::Seq && kind != Kind::Choice; }
    friend bool operator==(const ProcessExpr&, const ProcessExpr&) = default;
};

/// Throws SyntaxError with the offending column (0-based).
ProcessExpr parse_process(std::string_view text);
std::string print_process(const ProcessExpr& expr);

enum class ActionKind { Block, Receive, Send, Jump };

struct Label {
    std::string declaration;           // e.g. "struct tty_driver *driver"
    std::optional<std::string> value;  // C initializer text
    std::string type;                  // declaration without the name
};

struct Action {
    ActionKind kind = ActionKind::Block;
    std::string comment;
    std::vector<std::string> statements;
    std::optional<std::string> condition;
    std::optional<std::string> postcondition;
    std::vector<std::string> parameters;  // label names, without '%'
    std::optional<ProcessExpr> process;   // jumps
};

struct ScenarioModel {
    std::string name;
    std::string category;
    std::map<std::string, Label> labels;
    std::map<std::string, Action> actions;
    ProcessExpr process;
    // Function models only: the modeled function's declaration and the
    // label whose value the model returns.
    std::string declaration;
    std::optional<std::string> retval;
};

struct IntermediateModel {
    std::vector<std::string> supplementary_sources;
    std::map<std::string, ScenarioModel> function_models;
    std::map<std::string, ScenarioModel> thread_models;
    std::string entry_order = "sequence";  // or "random"
    std::vector<std::string> warnings;

    std::vector<const ScenarioModel*> scenarios() const;  // function models first, by name
};

/// Parses and validates a model document. Top-level keys are thread models
/// except the reserved keys "functions models", "environment processes",
/// "sources" and "entry order".
IntermediateModel parse_model(const nlohmann::json& doc);
nlohmann::json to_json(const IntermediateModel& model);

/// Checks references, action usage and block contents; appends warnings.
void validate(IntermediateModel& model);

struct SignalPair {
    std::string sender_model, send_action, receiver_model, receive_action;
    friend auto operator<=>(const SignalPair&, const SignalPair&) = default;
};

struct SignalPairing {
    std::set<SignalPair> pairs;
    std::vector<std::string> warnings;
};

/// Throws TypeError when equally named send/receive actions disagree on
/// parameter types.
SignalPairing pair_signals(const IntermediateModel& model);

using Trace = std::vector<std::string>;

/// Complete action sequences of at most `max_len` events.
std::set<Trace> enumerate_traces(const ScenarioModel& model, std::size_t max_len);
std::map<std::string, std::set<Trace>> enumerate_traces(const IntermediateModel& model, std::size_t max_len);

struct GeneratorStage {
    std::string name;
    nlohmann::json options = nlohmann::json::object();
};

/// A generator returns scenario models to add to (or replace in) the model
/// built so far.
using Generator = std::function<IntermediateModel(const pfg::ProgramFragment&, const buildbase::BuildBase&,
                                                  const nlohmann::json& options, const IntermediateModel& so_far)>;

/// Builtins: "entry_caller", "user_model_composer".
std::map<std::string, Generator>& generators();

IntermediateModel run_generator_pipeline(const pfg::ProgramFragment& fragment, const buildbase::BuildBase& base,
                                         const std::vector<GeneratorStage>& stages);
std::vector<GeneratorStage> parse_pipeline(const nlohmann::json& j);

IntermediateModel entry_caller_generate(const pfg::ProgramFragment& fragment, const buildbase::BuildBase& base,
                                        const nlohmann::json& options);

struct ActionRef {
    std::string scenario;
    std::string action;
    friend bool operator==(const ActionRef&, const ActionRef&) = default;
};

struct HarnessBundle {
    std::string main_source;                      // environment.c
    std::map<std::string, std::string> aspects;   // file name -> aspect text
    std::map<std::size_t, ActionRef> action_lines;  // first line of each emitted action
    std::map<std::string, std::string> control_functions;  // scenario -> C function
    std::string entry_point = "entry_point";
};

HarnessBundle translate(const IntermediateModel& model, const pfg::ProgramFragment& fragment);

}  // namespace forge::emg
