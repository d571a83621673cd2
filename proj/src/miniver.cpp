#include "forge/miniver.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "forge/clex.hpp"
#include "forge/ctop.hpp"
#include "forge/error.hpp"
#include "forge/results.hpp"

namespace forge::miniver {

using clex::Token;

namespace {

struct Expr;
using ExprP = std::shared_ptr<Expr>;

struct Expr {
    enum Kind { Const, Var, Call, Unary, Binary, Logical, Assign, Ternary, BoolCast, AddrOf, IncDec, Comma } kind;
    std::string op;
    std::string name;
    std::int64_t value = 0;
    bool prefix = false;
    std::vector<ExprP> kids;
    std::size_t line = 0;
};

struct Instr {
    enum Op { Eval, Decl, Branch, Jump, Return, Nop, Switch } op = Nop;
    ExprP expr;
    std::string var;          // Decl
    std::size_t target = 0;   // Branch/Jump
    bool jump_when = false;   // Branch jumps when the condition equals this
    std::size_t line = 0;
    bool record = false;
    std::string text;         // Branch condition text
    std::string label;        // unresolved goto
    std::vector<std::pair<std::int64_t, std::size_t>> cases;
    std::size_t default_target = 0;
};

struct Function {
    std::string name;
    std::vector<std::string> params;
    std::vector<Instr> code;
    std::size_t line = 0;
    std::size_t end_line = 0;
};

struct Global {
    std::string name;
    ExprP init;  // null: zero
};

std::int64_t wrap(std::uint64_t v) { return static_cast<std::int64_t>(v); }

std::int64_t parse_number(std::string_view text, std::size_t line) {
    std::string t(text);
    while (!t.empty() && (t.back() == 'u' || t.back() == 'U' || t.back() == 'l' || t.back() == 'L')) t.pop_back();
    try {
        std::size_t used = 0;
        auto v = std::stoull(t, &used, 0);
        if (used != t.size()) throw ParseError("unsupported number '" + std::string(text) + "'", line);
        return wrap(v);
    } catch (const std::logic_error&) {
        throw ParseError("unsupported number '" + std::string(text) + "'", line);
    }
}

std::int64_t parse_char(std::string_view text, std::size_t line) {
    if (text.size() == 3) return text[1];
    if (text.size() == 4 && text[1] == '\\') {
        switch (text[2]) {
            case 'n': return '\n';
            case 't': return '\t';
            case 'r': return '\r';
            case '0': return 0;
            default: return text[2];
        }
    }
    throw ParseError("unsupported character constant", line);
}

class Parser {
public:
    Parser(const std::vector<Token>& toks, std::size_t pos, std::size_t end, const std::set<std::string>& typedefs,
           const std::set<std::string>& bool_types)
        : toks_(toks), pos_(pos), end_(end), typedefs_(typedefs), bool_types_(bool_types) {}

    Function function(const ctop::FunctionDef& fd) {
        Function f;
        f.name = fd.name;
        f.line = fd.line;
        f.end_line = toks_[fd.body_close].line;
        for (std::size_t i = 0; i < fd.params.size(); ++i) f.params.push_back(fd.params[i].name);
        code_ = &f.code;
        pos_ = fd.body_open + 1;
        end_ = fd.body_close;
        while (pos_ < end_) statement();
        Instr ret;
        ret.op = Instr::Return;
        ret.line = f.end_line;
        emit(ret);
        for (auto& in : f.code) {
            if (in.label.empty()) continue;
            auto it = labels_.find(in.label);
            if (it == labels_.end()) throw ParseError("undefined label '" + in.label + "'", in.line);
            in.target = it->second;
        }
        return f;
    }

    ExprP expression_until_end() {
        auto e = assignment();
        if (pos_ != end_) fail("unexpected token");
        return e;
    }

    // Declarators of a declaration starting at the current token; returns
    // (name, initializer) pairs and consumes the terminating ';'.
    std::vector<std::pair<std::string, ExprP>> declaration() {
        skip_specifiers();
        std::vector<std::pair<std::string, ExprP>> out;
        while (true) {
            std::string name = declarator();
            ExprP init;
            if (accept("=")) {
                if (peek().is("{")) {
                    pos_ = clex::match_close(toks_, pos_) + 1;
                } else {
                    init = assignment();
                }
            }
            if (!name.empty()) out.emplace_back(name, init);
            if (accept(",")) continue;
            expect(";");
            break;
        }
        return out;
    }

    bool starts_declaration() const {
        if (pos_ >= end_) return false;
        const auto& t = toks_[pos_];
        if (!t.ident()) return false;
        if (clex::is_type_word(t.text)) return true;
        if (typedefs_.count(std::string(t.text))) {
            // `T x` or `T *x`, not `T = ...` or a call.
            return pos_ + 1 < end_ && (toks_[pos_ + 1].ident() || toks_[pos_ + 1].is("*"));
        }
        return false;
    }

private:
    const std::vector<Token>& toks_;
    std::size_t pos_, end_;
    const std::set<std::string>& typedefs_;
    const std::set<std::string>& bool_types_;
    std::vector<Instr>* code_ = nullptr;
    std::map<std::string, std::size_t> labels_;
    std::vector<std::vector<std::size_t>*> breaks_;
    std::vector<std::vector<std::size_t>*> continues_;
    struct SwitchCtx {
        std::size_t instr;
    };
    std::vector<SwitchCtx> switches_;

    [[noreturn]] void fail(const std::string& what) const {
        std::size_t line = pos_ < toks_.size() ? toks_[pos_].line : (toks_.empty() ? 0 : toks_.back().line);
        std::string near = pos_ < toks_.size() ? " near '" + std::string(toks_[pos_].text) + "'" : "";
        throw ParseError(what + near, line);
    }

    const Token& peek(std::size_t k = 0) const {
        if (pos_ + k >= end_) fail("unexpected end of input");
        return toks_[pos_ + k];
    }
    bool at(std::string_view s) const { return pos_ < end_ && toks_[pos_].is(s); }
    bool accept(std::string_view s) {
        if (!at(s)) return false;
        ++pos_;
        return true;
    }
    void expect(std::string_view s) {
        if (!accept(s)) fail("expected '" + std::string(s) + "'");
    }
    std::size_t here() const { return pos_ < toks_.size() ? toks_[pos_].line : 0; }

    std::size_t emit(Instr in) {
        code_->push_back(std::move(in));
        return code_->size() - 1;
    }
    std::size_t next() const { return code_->size(); }

    void skip_specifiers() {
        while (pos_ < end_) {
            const auto& t = toks_[pos_];
            if (t.is("struct") || t.is("union") || t.is("enum")) {
                ++pos_;
                if (pos_ < end_ && toks_[pos_].ident()) ++pos_;
                if (at("{")) pos_ = clex::match_close(toks_, pos_) + 1;
                continue;
            }
            if (t.is("__attribute__")) {
                ++pos_;
                if (at("(")) pos_ = clex::match_close(toks_, pos_) + 1;
                continue;
            }
            if (t.ident() && (clex::is_type_word(t.text) || typedefs_.count(std::string(t.text)))) {
                ++pos_;
                continue;
            }
            break;
        }
    }

    std::string declarator() {
        while (accept("*") || accept("const") || accept("volatile") || accept("restrict")) {
        }
        std::string name;
        if (at("(")) {
            // Function pointer `(*name)(...)`.
            std::size_t close = clex::match_close(toks_, pos_);
            for (std::size_t i = pos_; i < close; ++i)
                if (toks_[i].ident()) name = std::string(toks_[i].text);
            pos_ = close + 1;
        } else if (pos_ < end_ && toks_[pos_].ident()) {
            name = std::string(toks_[pos_++].text);
        }
        while (at("[") || at("(")) pos_ = clex::match_close(toks_, pos_) + 1;
        return name;
    }

    std::string text_of(std::size_t from, std::size_t to) const { return clex::join(toks_, from, to); }

    void statement() {
        std::size_t line = here();
        const Token& t = peek();
        if (t.is("{")) {
            ++pos_;
            while (!at("}")) statement();
            ++pos_;
            return;
        }
        if (t.is(";")) {
            ++pos_;
            Instr in;
            in.line = line;
            in.record = true;
            emit(in);
            return;
        }
        if (t.ident() && pos_ + 1 < end_ && toks_[pos_ + 1].is(":") && !clex::is_keyword(t.text)) {
            std::string name(t.text);
            pos_ += 2;
            if (labels_.count(name)) fail("duplicate label '" + name + "'");
            labels_[name] = next();
            if (!at("}")) statement();
            return;
        }
        if (t.is("if")) {
            ++pos_;
            expect("(");
            std::size_t from = pos_;
            auto cond = assignment();
            std::string text = text_of(from, pos_);
            expect(")");
            Instr br;
            br.op = Instr::Branch;
            br.expr = cond;
            br.line = line;
            br.record = true;
            br.text = text;
            std::size_t b = emit(br);
            statement();
            if (accept("else")) {
                Instr j;
                j.op = Instr::Jump;
                j.line = line;
                std::size_t jmp = emit(j);
                (*code_)[b].target = next();
                statement();
                (*code_)[jmp].target = next();
            } else {
                (*code_)[b].target = next();
            }
            return;
        }
        if (t.is("while")) {
            ++pos_;
            expect("(");
            std::size_t from = pos_;
            auto cond = assignment();
            std::string text = text_of(from, pos_);
            expect(")");
            std::size_t top = next();
            Instr br;
            br.op = Instr::Branch;
            br.expr = cond;
            br.line = line;
            br.record = true;
            br.text = text;
            std::size_t b = emit(br);
            loop_body(top);
            Instr j;
            j.op = Instr::Jump;
            j.target = top;
            j.line = line;
            emit(j);
            (*code_)[b].target = next();
            return;
        }
        if (t.is("do")) {
            ++pos_;
            std::size_t top = next();
            std::vector<std::size_t> brk, cont;
            breaks_.push_back(&brk);
            continues_.push_back(&cont);
            statement();
            breaks_.pop_back();
            continues_.pop_back();
            std::size_t cond_at = next();
            expect("while");
            std::size_t cond_line = here();
            expect("(");
            std::size_t from = pos_;
            auto cond = assignment();
            std::string text = text_of(from, pos_);
            expect(")");
            expect(";");
            Instr br;
            br.op = Instr::Branch;
            br.expr = cond;
            br.jump_when = true;
            br.target = top;
            br.line = cond_line;
            br.record = true;
            br.text = text;
            emit(br);
            for (auto i : cont) (*code_)[i].target = cond_at;
            for (auto i : brk) (*code_)[i].target = next();
            return;
        }
        if (t.is("for")) {
            ++pos_;
            expect("(");
            if (starts_declaration()) {
                for (auto& [name, init] : declaration()) declare(name, init, line);
            } else {
                if (!at(";")) eval(assignment(), line);
                expect(";");
            }
            std::size_t top = next();
            std::size_t b = SIZE_MAX;
            if (!at(";")) {
                std::size_t from = pos_;
                auto cond = assignment();
                Instr br;
                br.op = Instr::Branch;
                br.expr = cond;
                br.line = line;
                br.record = true;
                br.text = text_of(from, pos_);
                b = emit(br);
            }
            expect(";");
            ExprP step;
            if (!at(")")) step = assignment();
            expect(")");
            std::vector<std::size_t> brk, cont;
            breaks_.push_back(&brk);
            continues_.push_back(&cont);
            statement();
            breaks_.pop_back();
            continues_.pop_back();
            std::size_t step_at = next();
            if (step) eval(step, line);
            Instr j;
            j.op = Instr::Jump;
            j.target = top;
            j.line = line;
            emit(j);
            if (b != SIZE_MAX) (*code_)[b].target = next();
            for (auto i : cont) (*code_)[i].target = step_at;
            for (auto i : brk) (*code_)[i].target = next();
            return;
        }
        if (t.is("switch")) {
            ++pos_;
            expect("(");
            auto value = assignment();
            expect(")");
            Instr sw;
            sw.op = Instr::Switch;
            sw.expr = value;
            sw.line = line;
            sw.record = true;
            sw.default_target = SIZE_MAX;
            std::size_t at_sw = emit(sw);
            switches_.push_back({at_sw});
            std::vector<std::size_t> brk;
            breaks_.push_back(&brk);
            statement();
            breaks_.pop_back();
            switches_.pop_back();
            auto& s = (*code_)[at_sw];
            if (s.default_target == SIZE_MAX) s.default_target = next();
            for (auto i : brk) (*code_)[i].target = next();
            return;
        }
        if (t.is("case") || t.is("default")) {
            if (switches_.empty()) fail("case outside switch");
            ++pos_;
            auto& s = (*code_)[switches_.back().instr];
            if (t.is("case")) {
                auto e = conditional();
                s.cases.emplace_back(constant(e), next());
            } else {
                s.default_target = next();
            }
            expect(":");
            return;
        }
        if (t.is("break") || t.is("continue")) {
            bool is_break = t.is("break");
            ++pos_;
            expect(";");
            auto& stack = is_break ? breaks_ : continues_;
            if (stack.empty()) fail(is_break ? "break outside loop" : "continue outside loop");
            Instr j;
            j.op = Instr::Jump;
            j.line = line;
            j.record = true;
            stack.back()->push_back(emit(j));
            return;
        }
        if (t.is("return")) {
            ++pos_;
            Instr r;
            r.op = Instr::Return;
            r.line = line;
            r.record = true;
            if (!at(";")) r.expr = assignment();
            expect(";");
            emit(r);
            return;
        }
        if (t.is("goto")) {
            ++pos_;
            if (!peek().ident()) fail("expected label");
            Instr j;
            j.op = Instr::Jump;
            j.line = line;
            j.record = true;
            j.label = std::string(toks_[pos_++].text);
            expect(";");
            emit(j);
            return;
        }
        if (starts_declaration()) {
            for (auto& [name, init] : declaration()) declare(name, init, line);
            return;
        }
        auto e = assignment();
        expect(";");
        eval(e, line);
    }

    void loop_body(std::size_t top) {
        std::vector<std::size_t> brk, cont;
        breaks_.push_back(&brk);
        continues_.push_back(&cont);
        statement();
        breaks_.pop_back();
        continues_.pop_back();
        for (auto i : cont) (*code_)[i].target = top;
        // Break targets resolve after the back jump, which the caller emits next.
        for (auto i : brk) (*code_)[i].target = next() + 1;
    }

    void eval(ExprP e, std::size_t line) {
        Instr in;
        in.op = Instr::Eval;
        in.expr = std::move(e);
        in.line = line;
        in.record = true;
        emit(in);
    }

    void declare(const std::string& name, ExprP init, std::size_t line) {
        Instr in;
        in.op = Instr::Decl;
        in.var = name;
        in.expr = std::move(init);
        in.line = line;
        in.record = static_cast<bool>(in.expr);
        emit(in);
    }

    std::int64_t constant(const ExprP& e) const {
        if (e->kind == Expr::Const) return e->value;
        if (e->kind == Expr::Unary && e->op == "-" && e->kids[0]->kind == Expr::Const) return -e->kids[0]->value;
        throw ParseError("non-constant case label", e->line);
    }

    ExprP make(Expr::Kind kind, std::string op, std::vector<ExprP> kids, std::size_t line) {
        auto e = std::make_shared<Expr>();
        e->kind = kind;
        e->op = std::move(op);
        e->kids = std::move(kids);
        e->line = line;
        return e;
    }

public:
    ExprP assignment() {
        std::size_t line = here();
        auto lhs = conditional();
        static const std::set<std::string> ops{"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="};
        if (pos_ < end_ && ops.count(std::string(toks_[pos_].text))) {
            std::string op(toks_[pos_++].text);
            if (lhs->kind != Expr::Var) fail("unsupported assignment target");
            auto rhs = assignment();
            auto e = make(Expr::Assign, op, {rhs}, line);
            e->name = lhs->name;
            return e;
        }
        return lhs;
    }

private:
    ExprP conditional() {
        std::size_t line = here();
        auto c = binary(1);
        if (accept("?")) {
            auto a = assignment();
            expect(":");
            auto b = conditional();
            return make(Expr::Ternary, "?", {c, a, b}, line);
        }
        return c;
    }

    static int precedence(std::string_view op) {
        static const std::map<std::string_view, int> table{
            {"||", 1}, {"&&", 2}, {"|", 3},  {"^", 4},  {"&", 5},  {"==", 6}, {"!=", 6}, {"<", 7}, {"<=", 7},
            {">", 7},  {">=", 7}, {"<<", 8}, {">>", 8}, {"+", 9},  {"-", 9},  {"*", 10}, {"/", 10}, {"%", 10}};
        auto it = table.find(op);
        return it == table.end() ? 0 : it->second;
    }

    ExprP binary(int min_prec) {
        auto lhs = unary();
        while (pos_ < end_) {
            std::string_view op = toks_[pos_].text;
            if (toks_[pos_].kind != clex::Kind::Punct) break;
            int p = precedence(op);
            if (p == 0 || p < min_prec) break;
            std::size_t line = here();
            ++pos_;
            auto rhs = binary(p + 1);
            bool logical = op == "&&" || op == "||";
            lhs = make(logical ? Expr::Logical : Expr::Binary, std::string(op), {lhs, rhs}, line);
        }
        return lhs;
    }

    bool type_start(std::size_t i) const {
        if (i >= end_ || !toks_[i].ident()) return false;
        return clex::is_type_word(toks_[i].text) || typedefs_.count(std::string(toks_[i].text));
    }

    ExprP unary() {
        std::size_t line = here();
        const Token& t = peek();
        if (t.is("!") || t.is("-") || t.is("+") || t.is("~")) {
            ++pos_;
            return make(Expr::Unary, std::string(t.text), {unary()}, line);
        }
        if (t.is("++") || t.is("--")) {
            ++pos_;
            auto target = unary();
            if (target->kind != Expr::Var) fail("unsupported increment target");
            auto e = make(Expr::IncDec, std::string(t.text), {}, line);
            e->name = target->name;
            e->prefix = true;
            return e;
        }
        if (t.is("&")) {
            ++pos_;
            auto target = unary();
            if (target->kind != Expr::Var) fail("unsupported address-of operand");
            auto e = make(Expr::AddrOf, "&", {}, line);
            e->name = target->name;
            return e;
        }
        if (t.is("*")) fail("pointer dereference is outside the supported subset");
        if (t.is("sizeof")) {
            ++pos_;
            if (at("(")) pos_ = clex::match_close(toks_, pos_) + 1;
            else unary();
            auto e = make(Expr::Const, "", {}, line);
            e->value = 8;
            return e;
        }
        if (t.is("(") && type_start(pos_ + 1)) {
            std::size_t close = clex::match_close(toks_, pos_);
            bool to_bool = false, pointer = false;
            for (std::size_t i = pos_ + 1; i < close; ++i) {
                if (toks_[i].is("*")) pointer = true;
                if (toks_[i].is("_Bool") || bool_types_.count(std::string(toks_[i].text))) to_bool = true;
            }
            pos_ = close + 1;
            auto operand = unary();
            if (to_bool && !pointer) return make(Expr::BoolCast, "", {operand}, line);
            return operand;
        }
        return postfix();
    }

    ExprP postfix() {
        auto e = primary();
        while (pos_ < end_) {
            std::size_t line = here();
            if (at("(")) {
                if (e->kind != Expr::Var) fail("unsupported indirect call");
                ++pos_;
                auto call = make(Expr::Call, "", {}, line);
                call->name = e->name;
                if (!accept(")")) {
                    while (true) {
                        call->kids.push_back(assignment());
                        if (accept(")")) break;
                        expect(",");
                    }
                }
                e = call;
                continue;
            }
            if (at("++") || at("--")) {
                if (e->kind != Expr::Var) fail("unsupported increment target");
                auto inc = make(Expr::IncDec, std::string(toks_[pos_].text), {}, line);
                inc->name = e->name;
                ++pos_;
                e = inc;
                continue;
            }
            if (at("[") || at(".") || at("->")) fail("memory access is outside the supported subset");
            break;
        }
        return e;
    }

    ExprP primary() {
        std::size_t line = here();
        const Token& t = peek();
        ++pos_;
        switch (t.kind) {
            case clex::Kind::Number: {
                auto e = make(Expr::Const, "", {}, line);
                e->value = parse_number(t.text, line);
                return e;
            }
            case clex::Kind::Char: {
                auto e = make(Expr::Const, "", {}, line);
                e->value = parse_char(t.text, line);
                return e;
            }
            case clex::Kind::String: {
                while (pos_ < end_ && toks_[pos_].kind == clex::Kind::String) ++pos_;
                auto e = make(Expr::Const, "", {}, line);
                e->value = 0x7f000000 + static_cast<std::int64_t>(t.offset);
                return e;
            }
            case clex::Kind::Identifier: {
                if (clex::is_keyword(t.text)) {
                    --pos_;
                    fail("unexpected keyword");
                }
                auto e = make(Expr::Var, "", {}, line);
                e->name = std::string(t.text);
                return e;
            }
            case clex::Kind::Punct:
                if (t.is("(")) {
                    std::size_t from = pos_;
                    auto e = assignment();
                    while (accept(",")) e = make(Expr::Comma, ",", {e, assignment()}, line);
                    if (!accept(")")) {
                        pos_ = from;
                        fail("expected ')'");
                    }
                    return e;
                }
                --pos_;
                fail("unexpected token");
        }
        fail("unexpected token");
    }
};

}  // namespace

struct Program::Impl {
    std::map<std::string, Function> functions;
    std::vector<Global> globals;
    std::set<std::string> void_functions;  // declared or defined with void result
    std::set<std::size_t> statement_lines;
};

Program::Program(std::string_view text) : impl_(std::make_unique<Impl>()) {
    auto unit = ctop::scan(text);
    const auto& toks = unit.tokens();
    std::set<std::string> typedefs, bool_types{"bool"};
    for (const auto& d : unit.decls) {
        if (d.kind != ctop::DeclKind::Typedef || d.name.empty()) continue;
        typedefs.insert(d.name);
        for (std::size_t i = d.begin; i < d.end; ++i)
            if (toks[i].is("_Bool") || toks[i].is("bool")) bool_types.insert(d.name);
    }
    typedefs.insert(bool_types.begin(), bool_types.end());
    for (const auto& d : unit.decls) {
        if (d.kind == ctop::DeclKind::Prototype) {
            try {
                auto sig = ctop::parse_signature(clex::join(toks, d.begin, d.end));
                if (sig.return_type == "void") impl_->void_functions.insert(sig.name);
            } catch (const Error&) {
            }
            continue;
        }
        if (d.kind != ctop::DeclKind::Variable) continue;
        Parser p(toks, d.begin, d.end + 1, typedefs, bool_types);
        for (auto& [name, init] : p.declaration()) impl_->globals.push_back({name, init});
    }
    for (const auto& fd : unit.functions) {
        Parser p(toks, fd.body_open + 1, fd.body_close, typedefs, bool_types);
        auto f = p.function(fd);
        if (fd.return_type == "void") impl_->void_functions.insert(fd.name);
        for (const auto& in : f.code)
            if (in.record) impl_->statement_lines.insert(in.line);
        impl_->functions[fd.name] = std::move(f);
    }
}

Program::~Program() = default;
Program::Program(Program&&) noexcept = default;
Program& Program::operator=(Program&&) noexcept = default;

bool Program::defines(const std::string& function) const { return impl_->functions.count(function) > 0; }

std::vector<std::string> Program::functions() const {
    std::vector<std::string> out;
    for (const auto& [name, f] : impl_->functions) out.push_back(name);
    return out;
}

std::map<std::string, std::size_t> Program::function_lines() const {
    std::map<std::string, std::size_t> out;
    for (const auto& [name, f] : impl_->functions) out[name] = f.line;
    return out;
}

std::set<std::size_t> Program::statement_lines() const { return impl_->statement_lines; }

std::string_view to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Call: return "call";
        case EventKind::Return: return "return";
        case EventKind::Statement: return "statement";
        case EventKind::Branch: return "branch";
        case EventKind::Error: return "error";
    }
    return "statement";
}

std::string_view to_string(VerdictKind kind) {
    switch (kind) {
        case VerdictKind::Safe: return "Safe";
        case VerdictKind::Unsafe: return "Unsafe";
        case VerdictKind::Unknown: return "Unknown";
    }
    return "Unknown";
}

namespace {

struct PathEnd {
    PathStatus status;
};

class Runner {
public:
    Runner(const Program::Impl& prog, const Bounds& bounds, const std::vector<std::size_t>& prefix,
           const LineObserver& observer)
        : prog_(prog), bounds_(bounds), prefix_(prefix), observer_(observer) {}

    Path run(const std::string& entry) {
        Path path;
        path_ = &path;
        try {
            for (const auto& g : prog_.globals) globals_[g.name] = g.init ? eval(*g.init, nullptr) : 0;
            auto it = prog_.functions.find(entry);
            if (it == prog_.functions.end()) throw Error("entry function '" + entry + "' is not defined");
            call(it->second, {}, 0, "");
            path.status = PathStatus::Completed;
        } catch (const PathEnd& end) {
            path.status = end.status;
        }
        path.choices = taken_;
        arity_.resize(taken_.size());
        return path;
    }

    const std::vector<std::size_t>& arity() const { return arity_; }

private:
    using Locals = std::map<std::string, std::int64_t>;

    const Program::Impl& prog_;
    const Bounds& bounds_;
    const std::vector<std::size_t>& prefix_;
    const LineObserver& observer_;
    Path* path_ = nullptr;
    std::map<std::string, std::int64_t> globals_;
    std::vector<std::size_t> taken_, arity_;
    std::size_t steps_ = 0, depth_ = 0;
    std::int64_t next_fresh_ = 0x10000;
    std::vector<const Function*> stack_;

    std::int64_t choose() {
        std::size_t n = bounds_.nondet_values.size();
        std::size_t idx = taken_.size() < prefix_.size() ? prefix_[taken_.size()] : 0;
        taken_.push_back(idx);
        arity_.push_back(n);
        return bounds_.nondet_values.at(idx);
    }

    void step(const Function& f, const Instr& in) {
        if (++steps_ > bounds_.max_steps) throw PathEnd{PathStatus::Bounded};
        if (!in.record) return;
        path_->lines.push_back(in.line);
        if (in.op != Instr::Branch) path_->events.push_back({f.name, in.line, EventKind::Statement, "", "", false});
        if (observer_ && !observer_(*path_)) throw PathEnd{PathStatus::Pruned};
    }

    std::int64_t& lvalue(const std::string& name, Locals* locals) {
        if (locals) {
            auto it = locals->find(name);
            if (it != locals->end()) return it->second;
        }
        auto g = globals_.find(name);
        if (g != globals_.end()) return g->second;
        throw Error("undeclared variable '" + name + "'");
    }

    std::int64_t address_of(const std::string& name) const {
        return 0x20000000 + static_cast<std::int64_t>(std::hash<std::string>{}(name) & 0xffffff) * 8;
    }

    std::int64_t call(const Function& f, const std::vector<std::int64_t>& args, std::size_t line,
                      const std::string& caller) {
        if (++depth_ > bounds_.call_depth) throw PathEnd{PathStatus::Bounded};
        if (!caller.empty()) path_->events.push_back({caller, line, EventKind::Call, f.name, "", false});
        Locals locals;
        for (std::size_t i = 0; i < f.params.size(); ++i)
            if (!f.params[i].empty()) locals[f.params[i]] = i < args.size() ? args[i] : 0;
        std::map<std::size_t, std::size_t> back_jumps;
        std::size_t pc = 0;
        std::int64_t result = 0;
        auto jump = [&](std::size_t target) {
            if (target <= pc && ++back_jumps[target] > bounds_.loop_bound) throw PathEnd{PathStatus::Bounded};
            pc = target;
        };
        while (pc < f.code.size()) {
            const Instr& in = f.code[pc];
            step(f, in);
            switch (in.op) {
                case Instr::Nop:
                    ++pc;
                    break;
                case Instr::Eval:
                    eval(*in.expr, &locals, false);
                    ++pc;
                    break;
                case Instr::Decl:
                    locals[in.var] = in.expr ? eval(*in.expr, &locals) : 0;
                    ++pc;
                    break;
                case Instr::Branch: {
                    bool value = eval(*in.expr, &locals) != 0;
                    path_->events.push_back({f.name, in.line, EventKind::Branch, "", in.text, value});
                    if (value == in.jump_when) jump(in.target);
                    else ++pc;
                    break;
                }
                case Instr::Jump:
                    jump(in.target);
                    break;
                case Instr::Switch: {
                    auto v = eval(*in.expr, &locals);
                    std::size_t target = in.default_target;
                    for (const auto& [c, t] : in.cases)
                        if (c == v) target = t;
                    jump(target);
                    break;
                }
                case Instr::Return:
                    if (in.expr) result = eval(*in.expr, &locals);
                    pc = f.code.size();
                    break;
            }
        }
        if (!caller.empty()) path_->events.push_back({f.name, f.end_line, EventKind::Return, f.name, "", false});
        --depth_;
        return result;
    }

    std::int64_t builtin_or_external(const Expr& e, Locals* locals, bool used) {
        const std::string& name = e.name;
        std::vector<std::int64_t> args;
        for (const auto& k : e.kids) args.push_back(eval(*k, locals));
        const std::string& fn = stack_.empty() ? std::string() : stack_.back()->name;
        if (name == "__VERIFIER_error" || name == "reach_error") {
            path_->events.push_back({fn, e.line, EventKind::Error, name, "", false});
            throw PathEnd{PathStatus::Error};
        }
        if (name == "__VERIFIER_assume") {
            if (args.empty() || args[0] == 0) throw PathEnd{PathStatus::Infeasible};
            return 0;
        }
        if (name == "abort" || name == "exit") throw PathEnd{PathStatus::Completed};
        if (name == "__builtin_expect") return args.empty() ? 0 : args[0];
        if (name == "external_allocated_data") return next_fresh_++;
        if (name.rfind("__VERIFIER_nondet_", 0) == 0) return choose();
        if (name == "ldv_malloc" || name == "malloc" || name == "kmalloc" || name == "kzalloc" || name == "calloc")
            return choose() ? next_fresh_++ : 0;
        if (!used || prog_.void_functions.count(name)) return 0;
        return choose();
    }

    std::int64_t eval(const Expr& e, Locals* locals, bool used = true) {
        switch (e.kind) {
            case Expr::Const:
                return e.value;
            case Expr::Var: {
                if (locals && locals->count(e.name)) return locals->at(e.name);
                if (globals_.count(e.name)) return globals_.at(e.name);
                if (prog_.functions.count(e.name) || prog_.void_functions.count(e.name)) return address_of(e.name);
                throw Error("undeclared identifier '" + e.name + "' at line " + std::to_string(e.line));
            }
            case Expr::AddrOf:
                return address_of(e.name);
            case Expr::Call: {
                auto it = prog_.functions.find(e.name);
                if (it == prog_.functions.end()) return builtin_or_external(e, locals, used);
                std::vector<std::int64_t> args;
                for (const auto& k : e.kids) args.push_back(eval(*k, locals));
                const std::string caller = stack_.empty() ? std::string() : stack_.back()->name;
                stack_.push_back(&it->second);
                auto r = call(it->second, args, e.line, caller.empty() ? "?" : caller);
                stack_.pop_back();
                return r;
            }
            case Expr::BoolCast:
                return eval(*e.kids[0], locals) != 0;
            case Expr::Unary: {
                auto v = static_cast<std::uint64_t>(eval(*e.kids[0], locals));
                if (e.op == "!") return v == 0;
                if (e.op == "-") return wrap(0 - v);
                if (e.op == "~") return wrap(~v);
                return wrap(v);
            }
            case Expr::Logical: {
                bool a = eval(*e.kids[0], locals) != 0;
                if (e.op == "&&") return a && eval(*e.kids[1], locals) != 0;
                return a || eval(*e.kids[1], locals) != 0;
            }
            case Expr::Ternary:
                return eval(*e.kids[0], locals) ? eval(*e.kids[1], locals) : eval(*e.kids[2], locals);
            case Expr::Comma:
                eval(*e.kids[0], locals, false);
                return eval(*e.kids[1], locals);
            case Expr::Binary: {
                auto lhs = eval(*e.kids[0], locals);
                auto rhs = eval(*e.kids[1], locals);
                return binary(e.op, lhs, rhs, e.line);
            }
            case Expr::Assign: {
                auto rhs = eval(*e.kids[0], locals);
                auto& slot = lvalue(e.name, locals);
                if (e.op == "=") slot = rhs;
                else slot = binary(e.op.substr(0, e.op.size() - 1), slot, rhs, e.line);
                return slot;
            }
            case Expr::IncDec: {
                auto& slot = lvalue(e.name, locals);
                auto old = slot;
                slot = wrap(static_cast<std::uint64_t>(slot) + (e.op == "++" ? 1 : static_cast<std::uint64_t>(-1)));
                return e.prefix ? slot : old;
            }
        }
        return 0;
    }

    static std::int64_t binary(const std::string& op, std::int64_t a, std::int64_t b, std::size_t line) {
        auto ua = static_cast<std::uint64_t>(a), ub = static_cast<std::uint64_t>(b);
        if (op == "+") return wrap(ua + ub);
        if (op == "-") return wrap(ua - ub);
        if (op == "*") return wrap(ua * ub);
        if (op == "/" || op == "%") {
            if (b == 0) throw Error("division by zero at line " + std::to_string(line));
            if (a == INT64_MIN && b == -1) return op == "/" ? a : 0;
            return op == "/" ? a / b : a % b;
        }
        if (op == "&") return wrap(ua & ub);
        if (op == "|") return wrap(ua | ub);
        if (op == "^") return wrap(ua ^ ub);
        if (op == "<<") return wrap(ua << (ub & 63));
        if (op == ">>") return a >> (ub & 63);
        if (op == "==") return a == b;
        if (op == "!=") return a != b;
        if (op == "<") return a < b;
        if (op == "<=") return a <= b;
        if (op == ">") return a > b;
        if (op == ">=") return a >= b;
        throw Error("unsupported operator '" + op + "'");
    }

public:
    void enter(const std::string& entry) {
        auto it = prog_.functions.find(entry);
        if (it != prog_.functions.end()) stack_.push_back(&it->second);
    }
};

Path run_once(const Program& program, const std::string& entry, const Bounds& bounds,
              const std::vector<std::size_t>& prefix, const LineObserver& observer, std::vector<std::size_t>& arity) {
    Runner runner(program.impl(), bounds, prefix, observer);
    runner.enter(entry);
    auto path = runner.run(entry);
    arity = runner.arity();
    return path;
}

}  // namespace

Exploration explore(const Program& program, const std::string& entry, const Bounds& bounds,
                    const LineObserver& observer, bool stop_at_error) {
    if (bounds.nondet_values.empty()) throw ConfigError("empty nondet value set");
    Exploration out;
    std::vector<std::size_t> prefix;
    while (true) {
        if (out.paths.size() >= bounds.max_paths) {
            out.path_limit_hit = true;
            break;
        }
        std::vector<std::size_t> arity;
        auto path = run_once(program, entry, bounds, prefix, observer, arity);
        auto choices = path.choices;
        bool error = path.status == PathStatus::Error;
        out.paths.push_back(std::move(path));
        if (error && stop_at_error) break;
        std::size_t i = choices.size();
        while (i > 0 && choices[i - 1] + 1 >= arity[i - 1]) --i;
        if (i == 0) break;
        prefix.assign(choices.begin(), choices.begin() + static_cast<std::ptrdiff_t>(i));
        ++prefix.back();
    }
    return out;
}

Path replay(const Program& program, const std::string& entry, const std::vector<std::size_t>& choices,
            const Bounds& bounds) {
    std::vector<std::size_t> arity;
    return run_once(program, entry, bounds, choices, {}, arity);
}

std::string reachability_entry(std::string_view property) {
    static const std::regex re(
        R"(CHECK\(\s*init\(\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(\s*\)\s*\)\s*,\s*LTL\(\s*G\s*!\s*call\(\s*__VERIFIER_error\s*\(\s*\)\s*\)\s*\)\s*\))");
    std::string text(property);
    std::smatch m;
    if (std::regex_search(text, m, re)) return m[1];
    return "";
}

namespace {

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

nlohmann::json coverage_of(const Program& program, const Exploration& ex, std::string_view text,
                           const std::string& name) {
    auto origins = results::line_origins(text, name);
    auto origin = [&](std::size_t line) {
        if (line >= 1 && line <= origins.size() && !origins[line - 1].first.empty()) return origins[line - 1];
        return std::pair<std::string, std::size_t>(name, line);
    };
    std::map<std::string, std::set<std::size_t>> lines;
    std::set<std::string> entered;
    for (const auto& p : ex.paths) {
        for (auto l : p.lines) {
            auto [file, orig] = origin(l);
            lines[file].insert(orig);
        }
        for (const auto& e : p.events)
            if (e.kind == EventKind::Call) entered.insert(e.callee);
    }
    if (!ex.paths.empty() && !ex.paths.front().events.empty()) entered.insert(ex.paths.front().events.front().function);
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [file, set] : lines) files[file]["lines"] = std::vector<std::size_t>(set.begin(), set.end());
    for (const auto& [fn, line] : program.function_lines()) {
        auto [file, orig] = origin(line);
        files[file]["functions"][fn] = entered.count(fn) > 0;
        if (!files[file].contains("lines")) files[file]["lines"] = nlohmann::json::array();
    }
    return {{"files", files}};
}

}  // namespace

std::string witness_graphml(const std::vector<Event>& trace, const std::string& program_name) {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
        << "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
        << "  <key attr.name=\"witness-type\" attr.type=\"string\" for=\"graph\" id=\"witness-type\"/>\n"
        << "  <key attr.name=\"programfile\" attr.type=\"string\" for=\"graph\" id=\"programfile\"/>\n"
        << "  <key attr.name=\"entry\" attr.type=\"boolean\" for=\"node\" id=\"entry\"><default>false</default></key>\n"
        << "  <key attr.name=\"violation\" attr.type=\"boolean\" for=\"node\" id=\"violation\"><default>false</default></key>\n"
        << "  <key attr.name=\"startline\" attr.type=\"int\" for=\"edge\" id=\"startline\"/>\n"
        << "  <key attr.name=\"enterFunction\" attr.type=\"string\" for=\"edge\" id=\"enterFunction\"/>\n"
        << "  <key attr.name=\"returnFrom\" attr.type=\"string\" for=\"edge\" id=\"returnFrom\"/>\n"
        << "  <key attr.name=\"control\" attr.type=\"string\" for=\"edge\" id=\"control\"/>\n"
        << "  <key attr.name=\"sourcecode\" attr.type=\"string\" for=\"edge\" id=\"sourcecode\"/>\n"
        << "  <graph edgedefault=\"directed\">\n"
        << "    <data key=\"witness-type\">violation_witness</data>\n"
        << "    <data key=\"programfile\">" << xml_escape(program_name) << "</data>\n"
        << "    <node id=\"N0\"><data key=\"entry\">true</data></node>\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& e = trace[i];
        bool last = i + 1 == trace.size();
        out << "    <node id=\"N" << i + 1 << "\">" << (last ? "<data key=\"violation\">true</data>" : "")
            << "</node>\n";
        out << "    <edge source=\"N" << i << "\" target=\"N" << i + 1 << "\">"
            << "<data key=\"startline\">" << e.line << "</data>";
        if (e.kind == EventKind::Call) out << "<data key=\"enterFunction\">" << xml_escape(e.callee) << "</data>";
        if (e.kind == EventKind::Return) out << "<data key=\"returnFrom\">" << xml_escape(e.callee) << "</data>";
        if (e.kind == EventKind::Branch) {
            out << "<data key=\"control\">" << (e.taken ? "condition-true" : "condition-false") << "</data>";
            out << "<data key=\"sourcecode\">" << xml_escape(e.condition) << "</data>";
        }
        if (e.kind == EventKind::Error) out << "<data key=\"sourcecode\">" << xml_escape(e.callee) << "()</data>";
        out << "</edge>\n";
    }
    out << "  </graph>\n</graphml>\n";
    return out.str();
}

Verdict check(std::string_view program_text, std::string_view property, const Bounds& bounds,
              const std::string& program_name) {
    Verdict v;
    std::string entry = reachability_entry(property);
    if (entry.empty()) {
        v.reason = "unsupported";
        v.diagnostic = "only the reachability property of __VERIFIER_error() is decided";
        return v;
    }
    try {
        Program program(program_text);
        if (!program.defines(entry)) throw Error("entry function '" + entry + "' is not defined");
        auto ex = explore(program, entry, bounds, {}, true);
        v.explored_paths = ex.paths.size();
        v.coverage = coverage_of(program, ex, program_text, program_name);
        const Path& last = ex.paths.back();
        if (last.status == PathStatus::Error) {
            v.kind = VerdictKind::Unsafe;
            v.trace = last.events;
            v.choices = last.choices;
            v.witness = witness_graphml(v.trace, program_name);
            return v;
        }
        bool bounded = ex.path_limit_hit || std::any_of(ex.paths.begin(), ex.paths.end(), [](const Path& p) {
                           return p.status == PathStatus::Bounded;
                       });
        if (bounded) {
            v.reason = "timeout";
            v.diagnostic = ex.path_limit_hit ? "path limit reached" : "loop, depth or step bound reached";
        } else {
            v.kind = VerdictKind::Safe;
        }
    } catch (const std::exception& e) {
        v.kind = VerdictKind::Unknown;
        v.reason = "tool-failure";
        v.diagnostic = e.what();
    }
    return v;
}

Verdict run_task_dir(const std::string& dir, const Bounds& bounds) {
    namespace fs = std::filesystem;
    auto read = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw TaskError("cannot read " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    fs::path root(dir);
    Verdict v;
    try {
        v = check(read(root / "cil.i"), read(root / "safe-prps.prp"), bounds, "cil.i");
    } catch (const TaskError& e) {
        v.reason = "tool-failure";
        v.diagnostic = e.what();
    }
    std::ofstream verdict(root / "verdict.txt");
    switch (v.kind) {
        case VerdictKind::Safe: verdict << "SAFE\n"; break;
        case VerdictKind::Unsafe: verdict << "UNSAFE\n"; break;
        case VerdictKind::Unknown: verdict << "UNKNOWN " << v.reason << "\n"; break;
    }
    if (!v.diagnostic.empty()) std::ofstream(root / "diagnostic.txt") << v.diagnostic << "\n";
    if (v.kind == VerdictKind::Unsafe) std::ofstream(root / "witness.graphml") << v.witness;
    if (!v.coverage.is_null()) std::ofstream(root / "coverage.json") << v.coverage.dump(1) << "\n";
    return v;
}

}  // namespace forge::miniver
