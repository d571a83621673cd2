#include "forge/results.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <regex>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "forge/clex.hpp"
#include "forge/ctop.hpp"
#include "forge/error.hpp"

namespace forge::results {

using json = nlohmann::json;
namespace pt = boost::property_tree;

std::string_view to_string(TraceKind kind) {
    switch (kind) {
        case TraceKind::Call: return "call";
        case TraceKind::Return: return "return";
        case TraceKind::Statement: return "statement";
        case TraceKind::Assumption: return "assumption";
        case TraceKind::Error: return "error";
    }
    return "statement";
}

namespace {

TraceKind trace_kind_from(const std::string& s) {
    for (auto k : {TraceKind::Call, TraceKind::Return, TraceKind::Statement, TraceKind::Assumption, TraceKind::Error})
        if (to_string(k) == s) return k;
    throw WitnessError("unknown trace event kind " + s);
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            out.push_back(text.substr(start));
            break;
        }
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

// Line span of every function definition. Woven wrappers may share a line
// with the function after them, so a line can belong to several functions.
struct FunctionSpans {
    std::map<std::string, std::pair<std::size_t, std::size_t>> spans;
    std::map<std::size_t, std::string> last_on_line;

    bool contains(const std::string& fn, std::size_t line) const {
        auto it = spans.find(fn);
        return it != spans.end() && it->second.first <= line && line <= it->second.second;
    }
};

FunctionSpans function_spans(std::string_view source) {
    FunctionSpans out;
    ctop::Unit unit;
    try {
        unit = ctop::scan(source);
    } catch (const Error&) {
        return out;
    }
    const auto& toks = unit.tokens();
    for (const auto& f : unit.functions) {
        auto first = toks[f.name_tok].line, last = toks[f.body_close].line;
        out.spans[f.name] = {first, last};
        for (auto l = first; l <= last; ++l) out.last_on_line[l] = f.name;
    }
    return out;
}

bool is_error_function(const std::string& name) {
    return name == "__VERIFIER_error" || name == "reach_error";
}

std::string collapse_ws(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

}  // namespace

std::vector<std::pair<std::string, std::size_t>> line_origins(std::string_view text, const std::string& name) {
    std::vector<std::pair<std::string, std::size_t>> out;
    static const std::regex marker(R"(^#\s*(?:line\s+)?(\d+)\s+\"([^\"]*)\".*)");
    std::string file = name;
    std::size_t next = 1;
    for (auto sv : split_lines(text)) {
        std::string line(sv);
        std::smatch m;
        if (!line.empty() && line[0] == '#' && std::regex_match(line, m, marker)) {
            out.emplace_back("", 0);
            file = m[2];
            next = std::stoul(m[1]);
        } else {
            out.emplace_back(file, next++);
        }
    }
    return out;
}

std::map<std::string, std::string> split_merged(std::string_view merged, const std::string& name) {
    std::map<std::string, std::vector<std::string_view>> lines;
    auto origins = line_origins(merged, name);
    auto text = split_lines(merged);
    for (std::size_t i = 0; i < origins.size(); ++i) {
        const auto& [file, line] = origins[i];
        if (file.empty() || line == 0) continue;
        auto& v = lines[file];
        if (v.size() < line) v.resize(line);
        v[line - 1] = text[i];
    }
    std::map<std::string, std::string> out;
    for (const auto& [file, v] : lines) {
        std::string joined;
        for (const auto& l : v) {
            joined += l;
            joined += '\n';
        }
        out[file] = std::move(joined);
    }
    return out;
}

ErrorTrace parse_witness(std::string_view graphml, std::string_view merged_source, const std::string& program_name) {
    if (trim(graphml).empty()) throw WitnessError("empty witness");
    pt::ptree doc;
    try {
        std::istringstream in{std::string(graphml)};
        pt::read_xml(in, doc);
    } catch (const pt::xml_parser_error& e) {
        throw WitnessError(std::string("malformed witness: ") + e.what());
    }
    auto graphml_node = doc.get_child_optional("graphml");
    if (!graphml_node) throw WitnessError("no graphml element");
    auto graph = graphml_node->get_child_optional("graph");
    if (!graph) throw WitnessError("no graph element");

    struct Edge {
        std::string target;
        std::map<std::string, std::string> data;
    };
    std::vector<std::string> node_order;
    std::set<std::string> violation;
    std::string entry;
    std::map<std::string, std::vector<Edge>> out_edges;
    auto data_of = [](const pt::ptree& n) {
        std::map<std::string, std::string> d;
        for (const auto& [tag, child] : n)
            if (tag == "data") d[child.get<std::string>("<xmlattr>.key", "")] = trim(child.data());
        return d;
    };
    for (const auto& [tag, child] : *graph) {
        if (tag == "node") {
            auto id = child.get<std::string>("<xmlattr>.id", "");
            node_order.push_back(id);
            auto d = data_of(child);
            if (d["entry"] == "true") entry = id;
            if (d["violation"] == "true") violation.insert(id);
        } else if (tag == "edge") {
            auto src = child.get<std::string>("<xmlattr>.source", "");
            out_edges[src].push_back({child.get<std::string>("<xmlattr>.target", ""), data_of(child)});
        }
    }
    if (node_order.empty()) throw WitnessError("witness has no nodes");
    if (entry.empty()) entry = node_order.front();
    if (violation.empty()) throw WitnessError("witness has no violation node");

    // Shortest path from entry to a violation node.
    std::map<std::string, std::pair<std::string, const Edge*>> parent;
    std::deque<std::string> queue{entry};
    std::set<std::string> seen{entry};
    std::string reached;
    while (!queue.empty() && reached.empty()) {
        auto n = queue.front();
        queue.pop_front();
        if (violation.count(n)) {
            reached = n;
            break;
        }
        for (const auto& e : out_edges[n]) {
            if (!seen.insert(e.target).second) continue;
            parent[e.target] = {n, &e};
            queue.push_back(e.target);
        }
    }
    if (reached.empty()) throw WitnessError("no path to a violation node");
    std::vector<const Edge*> path;
    for (auto n = reached; n != entry; n = parent.at(n).first) path.push_back(parent.at(n).second);
    std::reverse(path.begin(), path.end());

    auto origins = line_origins(merged_source, program_name);
    auto lines = split_lines(merged_source);
    auto spans = function_spans(merged_source);
    std::vector<std::string> stack;  // tracked through call and return edges

    ErrorTrace trace;
    trace.program = program_name;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const auto& d = path[i]->data;
        TraceEvent ev;
        auto sl = d.find("startline");
        if (sl != d.end() && !sl->second.empty()) {
            try {
                ev.merged_line = std::stoul(sl->second);
            } catch (const std::exception&) {
                throw WitnessError("bad startline " + sl->second);
            }
        }
        if (ev.merged_line >= 1 && ev.merged_line <= origins.size() && !origins[ev.merged_line - 1].first.empty()) {
            std::tie(ev.file, ev.line) = origins[ev.merged_line - 1];
        } else {
            ev.file = program_name;
            ev.line = ev.merged_line;
        }
        if (ev.merged_line) trace.source_refs[ev.merged_line] = {ev.file, ev.line};
        if (!stack.empty() && spans.contains(stack.back(), ev.merged_line)) {
            ev.function = stack.back();
        } else if (auto f = spans.last_on_line.find(ev.merged_line); f != spans.last_on_line.end()) {
            ev.function = f->second;
        }
        std::string source_line =
            ev.merged_line >= 1 && ev.merged_line <= lines.size() ? trim(lines[ev.merged_line - 1]) : "";

        auto has = [&](const char* k) { return d.count(k) && !d.at(k).empty(); };
        bool error_call = has("enterFunction") && is_error_function(d.at("enterFunction"));
        bool last = i + 1 == path.size();
        if (error_call || (last && !has("enterFunction") && !has("returnFrom"))) {
            ev.kind = TraceKind::Error;
            ev.text = has("sourcecode") ? d.at("sourcecode") : source_line;
        } else if (has("enterFunction")) {
            ev.kind = TraceKind::Call;
            ev.text = d.at("enterFunction");
        } else if (has("returnFrom")) {
            ev.kind = TraceKind::Return;
            ev.text = d.at("returnFrom");
        } else if (has("assumption")) {
            ev.kind = TraceKind::Assumption;
            ev.text = d.at("assumption");
        } else if (has("control")) {
            ev.kind = TraceKind::Assumption;
            std::string cond = has("sourcecode") ? d.at("sourcecode") : source_line;
            ev.text = d.at("control") == "condition-false" ? "!(" + cond + ")" : cond;
        } else {
            ev.kind = TraceKind::Statement;
            ev.text = has("sourcecode") ? d.at("sourcecode") : source_line;
        }
        if (ev.kind == TraceKind::Call) {
            if (stack.empty() && !ev.function.empty()) stack.push_back(ev.function);
            stack.push_back(ev.text);
        } else if (ev.kind == TraceKind::Return) {
            if (!stack.empty() && stack.back() == ev.text) {
                ev.function = ev.text;
                stack.pop_back();
            }
        }
        trace.events.push_back(std::move(ev));
    }
    return trace;
}

std::map<std::size_t, Annotation> model_annotations(std::string_view source) {
    std::map<std::size_t, Annotation> out;
    auto lexed = clex::lex(source);
    for (const auto& c : lexed.comments) {
        std::string_view body = c.text;
        if (body.starts_with("/*")) {
            body.remove_prefix(2);
            if (body.ends_with("*/")) body.remove_suffix(2);
        } else if (body.starts_with("//")) {
            body.remove_prefix(2);
        }
        std::string text = collapse_ws(body);
        Annotation::Kind kind;
        if (text.starts_with("NOTE")) {
            kind = Annotation::Note;
            text = trim(text.substr(4));
        } else if (text.starts_with("ASSERT")) {
            kind = Annotation::Assert;
            text = trim(text.substr(6));
        } else {
            continue;
        }
        auto end = c.offset + c.text.size();
        auto tok = std::find_if(lexed.tokens.begin(), lexed.tokens.end(),
                                [&](const clex::Token& t) { return t.offset >= end; });
        if (tok == lexed.tokens.end()) continue;
        out[tok->line] = Annotation{kind, text};
    }
    return out;
}

ErrorTrace annotate_relevance(ErrorTrace trace, const std::map<std::string, std::string>& model_sources) {
    std::map<std::string, std::map<std::size_t, Annotation>> notes;
    for (const auto& [file, text] : model_sources) notes[file] = model_annotations(text);
    std::optional<std::string> last_assert;
    for (auto& ev : trace.events) {
        auto m = notes.find(ev.file);
        if (ev.kind == TraceKind::Error) {
            ev.relevant = true;
            if (last_assert) ev.assert_desc = last_assert;
            continue;
        }
        if (m == notes.end()) continue;
        auto a = m->second.find(ev.line);
        ev.relevant = a != m->second.end();
        if (!ev.relevant) continue;
        if (a->second.kind == Annotation::Note) {
            ev.note = a->second.text;
        } else {
            ev.assert_desc = a->second.text;
            last_assert = a->second.text;
        }
    }
    return trace;
}

json to_json(const ErrorTrace& trace) {
    json events = json::array();
    for (const auto& e : trace.events) {
        json j{{"file", e.file},
               {"line", e.line},
               {"merged_line", e.merged_line},
               {"kind", to_string(e.kind)},
               {"function", e.function},
               {"text", e.text},
               {"relevant", e.relevant}};
        if (e.note) j["note"] = *e.note;
        if (e.assert_desc) j["assert_desc"] = *e.assert_desc;
        events.push_back(std::move(j));
    }
    json refs = json::object();
    for (const auto& [merged, origin] : trace.source_refs)
        refs[std::to_string(merged)] = {{"file", origin.first}, {"line", origin.second}};
    return {{"program", trace.program}, {"events", events}, {"source_refs", refs}};
}

ErrorTrace trace_from_json(const json& j) {
    ErrorTrace t;
    try {
        t.program = j.value("program", "");
        for (const auto& e : j.at("events")) {
            TraceEvent ev;
            ev.file = e.at("file");
            ev.line = e.at("line");
            ev.merged_line = e.value("merged_line", std::size_t{0});
            ev.kind = trace_kind_from(e.at("kind"));
            ev.function = e.value("function", "");
            ev.text = e.value("text", "");
            ev.relevant = e.value("relevant", true);
            if (e.contains("note")) ev.note = e.at("note").get<std::string>();
            if (e.contains("assert_desc")) ev.assert_desc = e.at("assert_desc").get<std::string>();
            t.events.push_back(std::move(ev));
        }
        if (j.contains("source_refs"))
            for (const auto& [k, v] : j.at("source_refs").items())
                t.source_refs[std::stoul(k)] = {v.at("file"), v.at("line")};
    } catch (const json::exception& e) {
        throw WitnessError(std::string("bad trace document: ") + e.what());
    }
    return t;
}

// Coverage ------------------------------------------------------------------

std::map<std::string, FileTotals> file_totals(const buildbase::BuildBase& base) {
    std::map<std::string, FileTotals> out;
    for (const auto& [file, lines] : base.line_counts()) {
        out[file].lines = lines;
        out[file].functions = base.callgraph.defined_in(file).size();
    }
    return out;
}

std::map<std::string, FileTotals> file_totals(const std::map<std::string, std::string>& sources) {
    std::map<std::string, FileTotals> out;
    for (const auto& [file, text] : sources) {
        out[file].lines = clex::count_lines(text);
        try {
            out[file].functions = ctop::scan(text).functions.size();
        } catch (const Error&) {
        }
    }
    return out;
}

Counts& Counts::operator+=(const Counts& o) {
    lines_total += o.lines_total;
    lines_covered += o.lines_covered;
    functions_total += o.functions_total;
    functions_covered += o.functions_covered;
    return *this;
}

int coverage_percent(std::size_t covered, std::size_t total) {
    if (total == 0) return 0;
    return static_cast<int>(covered * 100 / total);
}

CoverageReport merge_coverage(const std::vector<json>& reports, const std::map<std::string, FileTotals>& totals,
                              Denominator denominator) {
    CoverageReport r;
    for (const auto& report : reports) {
        if (!report.contains("files")) continue;
        for (const auto& [file, data] : report.at("files").items()) {
            auto& fc = r.files[file];
            if (data.contains("lines"))
                for (const auto& l : data.at("lines")) fc.lines.insert(l.get<std::size_t>());
            if (data.contains("functions"))
                for (const auto& [fn, hit] : data.at("functions").items()) {
                    fc.known_functions.insert(fn);
                    if (hit.get<bool>()) fc.functions.insert(fn);
                }
        }
    }
    if (denominator == Denominator::AllSources)
        for (const auto& [file, _] : totals) r.files[file];

    for (auto& [file, fc] : r.files) {
        auto t = totals.find(file);
        if (t == totals.end()) {
            r.flagged.insert(file);
            fc.counts.lines_total = fc.lines.size();
            fc.counts.functions_total = fc.known_functions.size();
        } else {
            fc.counts.lines_total = t->second.lines;
            fc.counts.functions_total = std::max(t->second.functions, fc.known_functions.size());
        }
        fc.counts.lines_covered = fc.lines.size();
        fc.counts.functions_covered = fc.functions.size();
        if (fc.counts.lines_covered > fc.counts.lines_total) {
            r.flagged.insert(file);
            fc.counts.lines_total = fc.counts.lines_covered;
        }
        // Every ancestor directory, the root included.
        std::string dir = file;
        for (;;) {
            auto slash = dir.rfind('/');
            dir = slash == std::string::npos ? "" : dir.substr(0, slash);
            r.directories[dir] += fc.counts;
            if (dir.empty()) break;
        }
    }
    return r;
}

json parse_hit_list(std::string_view text) {
    std::map<std::string, std::set<std::size_t>> files;
    std::size_t n = 0;
    for (auto sv : split_lines(text)) {
        ++n;
        auto line = trim(sv);
        if (line.empty() || line[0] == '#') continue;
        auto colon = line.rfind(':');
        if (colon == std::string::npos || colon == 0) throw ParseError("expected file:line", n);
        try {
            std::size_t used = 0;
            auto num = std::stoul(line.substr(colon + 1), &used);
            if (used != line.size() - colon - 1) throw std::invalid_argument("trailing");
            files[line.substr(0, colon)].insert(num);
        } catch (const std::logic_error&) {
            throw ParseError("bad line number in '" + line + "'", n);
        }
    }
    json out = json::object();
    for (const auto& [f, ls] : files) out[f]["lines"] = std::vector<std::size_t>(ls.begin(), ls.end());
    return {{"files", out}};
}

namespace {

json counts_json(const Counts& c) {
    return {{"lines_total", c.lines_total},
            {"lines_covered", c.lines_covered},
            {"line_percent", coverage_percent(c.lines_covered, c.lines_total)},
            {"functions_total", c.functions_total},
            {"functions_covered", c.functions_covered},
            {"function_percent", coverage_percent(c.functions_covered, c.functions_total)}};
}

}  // namespace

json to_json(const CoverageReport& report) {
    json files = json::object();
    for (const auto& [f, fc] : report.files) {
        auto j = counts_json(fc.counts);
        j["covered_lines"] = std::vector<std::size_t>(fc.lines.begin(), fc.lines.end());
        j["covered_functions"] = std::vector<std::string>(fc.functions.begin(), fc.functions.end());
        files[f] = j;
    }
    json dirs = json::object();
    for (const auto& [d, c] : report.directories) dirs[d.empty() ? "." : d] = counts_json(c);
    return {{"files", files},
            {"directories", dirs},
            {"flagged", std::vector<std::string>(report.flagged.begin(), report.flagged.end())}};
}

// Statistics ----------------------------------------------------------------

std::map<std::string, Share> shares(const std::map<std::string, std::size_t>& counts) {
    std::size_t total = 0;
    for (const auto& [_, c] : counts) total += c;
    std::map<std::string, Share> out;
    for (const auto& [k, c] : counts) {
        Share s;
        s.count = c;
        s.percent = total ? static_cast<int>((c * 200 + total) / (2 * total)) : 0;
        out[k] = s;
    }
    return out;
}

VerdictStatistics verdict_statistics(const std::vector<VerdictRecord>& verdicts) {
    std::map<std::string, std::size_t> kinds{{"Safe", 0}, {"Unsafe", 0}, {"Unknown", 0}};
    std::map<std::string, std::size_t> reasons, alarms;
    for (const auto& v : verdicts) {
        ++kinds[v.kind];
        if (v.kind == "Unknown" && !v.unknown_reason.empty()) ++reasons[v.unknown_reason];
        if (!v.false_alarm_reason.empty()) ++alarms[v.false_alarm_reason];
    }
    VerdictStatistics s;
    s.total = verdicts.size();
    s.kinds = shares(kinds);
    s.unknown_reasons = shares(reasons);
    s.false_alarm_reasons = shares(alarms);
    return s;
}

json to_json(const VerdictStatistics& stats) {
    auto block = [](const std::map<std::string, Share>& m) {
        json j = json::object();
        for (const auto& [k, s] : m) j[k] = {{"count", s.count}, {"percent", s.percent}};
        return j;
    };
    return {{"total", stats.total},
            {"kinds", block(stats.kinds)},
            {"unknown_reasons", block(stats.unknown_reasons)},
            {"false_alarm_reasons", block(stats.false_alarm_reasons)}};
}

// Marks ---------------------------------------------------------------------

std::string_view to_string(VerdictClass c) {
    switch (c) {
        case VerdictClass::Fault: return "fault";
        case VerdictClass::FalseAlarmEnvironment: return "false_alarm:environment";
        case VerdictClass::FalseAlarmRequirementSpec: return "false_alarm:requirement_spec";
        case VerdictClass::FalseAlarmVerifier: return "false_alarm:verifier";
        case VerdictClass::FalseAlarmOther: return "false_alarm:other";
    }
    return "fault";
}

VerdictClass verdict_class_from(std::string_view name) {
    for (auto c : {VerdictClass::Fault, VerdictClass::FalseAlarmEnvironment, VerdictClass::FalseAlarmRequirementSpec,
                   VerdictClass::FalseAlarmVerifier, VerdictClass::FalseAlarmOther})
        if (to_string(c) == name) return c;
    throw ConfigError("unknown verdict class '" + std::string(name) + "'");
}

Signature mark_signature(const ErrorTrace& trace) {
    Signature s;
    for (const auto& e : trace.events) {
        if (!e.relevant) continue;
        SignatureEntry entry;
        entry.function = e.function;
        if (e.assert_desc) entry.text = *e.assert_desc;
        else if (e.note) entry.text = *e.note;
        else if (e.kind == TraceKind::Call) entry.text = "call " + e.text;
        else continue;
        if (!s.events.empty() && s.events.back() == entry) continue;
        s.events.push_back(std::move(entry));
    }
    return s;
}

std::string strip_digits(std::string_view text) {
    std::string out;
    for (char c : text)
        if (!std::isdigit(static_cast<unsigned char>(c))) out += c;
    return out;
}

Signature failure_signature(std::string_view reason) {
    Signature s;
    s.failure = collapse_ws(strip_digits(reason));
    return s;
}

json to_json(const Signature& s) {
    json events = json::array();
    for (const auto& e : s.events) events.push_back({{"function", e.function}, {"text", e.text}});
    json j{{"events", events}};
    if (!s.failure.empty()) j["failure"] = s.failure;
    return j;
}

Signature signature_from_json(const json& j) {
    Signature s;
    if (j.contains("events"))
        for (const auto& e : j.at("events")) s.events.push_back({e.at("function"), e.at("text")});
    s.failure = j.value("failure", "");
    return s;
}

json to_json(const Mark& m) {
    json history = json::array();
    for (const auto& r : m.history)
        history.push_back({{"version", r.version},
                           {"verdict_class", to_string(r.verdict_class)},
                           {"description", r.description},
                           {"tags", r.tags},
                           {"author", r.author}});
    const auto& cur = m.current();
    return {{"id", m.id},
            {"verdict_class", to_string(cur.verdict_class)},
            {"description", cur.description},
            {"tags", cur.tags},
            {"version", cur.version},
            {"signature", to_json(m.signature)},
            {"history", history}};
}

Mark mark_from_json(const json& j) {
    Mark m;
    try {
        m.id = j.at("id");
        m.signature = signature_from_json(j.at("signature"));
        for (const auto& r : j.at("history")) {
            MarkRevision rev;
            rev.version = r.at("version");
            rev.verdict_class = verdict_class_from(r.at("verdict_class").get<std::string>());
            rev.description = r.value("description", "");
            rev.tags = r.value("tags", std::vector<std::string>{});
            rev.author = r.value("author", "");
            m.history.push_back(std::move(rev));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad mark document: ") + e.what());
    }
    if (m.history.empty()) throw ConfigError("mark " + m.id + " has no history");
    return m;
}

std::vector<Assessment> auto_assess(const std::string& task, const Signature& signature, const std::vector<Mark>& marks) {
    std::vector<Assessment> out;
    if (signature.empty()) return out;
    for (const auto& m : marks)
        if (m.signature == signature) out.push_back({task, m.id, AssessmentMode::Automatic});
    return out;
}

}  // namespace forge::results
