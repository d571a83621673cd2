#include <cctype>

#include "forge/emg.hpp"
#include "forge/error.hpp"

namespace forge::emg {

using Kind = ProcessExpr::Kind;

ProcessExpr ProcessExpr::leaf(Kind kind, std::string name, bool first) {
    ProcessExpr e;
    e.kind = kind;
    e.name = std::move(name);
    e.first = first;
    return e;
}

ProcessExpr ProcessExpr::seq(std::vector<ProcessExpr> children) {
    ProcessExpr e;
    e.kind = Kind::Seq;
    e.children = std::move(children);
    return e;
}

ProcessExpr ProcessExpr::choice(std::vector<ProcessExpr> children) {
    ProcessExpr e;
    e.kind = Kind::Choice;
    e.children = std::move(children);
    return e;
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    ProcessExpr parse() {
        skip();
        if (pos_ == s_.size()) fail("empty process");
        ProcessExpr e = expr();
        skip();
        if (pos_ != s_.size()) fail(std::string("unexpected '") + s_[pos_] + "'");
        return e;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw SyntaxError(what + " at column " + std::to_string(pos_), pos_);
    }

    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool peek(char c) {
        skip();
        return pos_ < s_.size() && s_[pos_] == c;
    }

    void expect(char c) {
        if (!peek(c)) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string identifier() {
        skip();
        if (pos_ >= s_.size() || !ident_start(s_[pos_])) fail("expected an action name");
        std::size_t b = pos_;
        while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
        return std::string(s_.substr(b, pos_ - b));
    }

    ProcessExpr expr() {
        std::vector<ProcessExpr> alts{term()};
        while (peek('|')) {
            ++pos_;
            alts.push_back(term());
        }
        return alts.size() == 1 ? std::move(alts[0]) : ProcessExpr::choice(std::move(alts));
    }

    ProcessExpr term() {
        std::vector<ProcessExpr> parts{factor()};
        while (peek('.')) {
            ++pos_;
            parts.push_back(factor());
        }
        return parts.size() == 1 ? std::move(parts[0]) : ProcessExpr::seq(std::move(parts));
    }

    // After '(' : a receive iff an optional '!' and one identifier come
    // before ')'.
    bool receive_ahead() const {
        std::size_t p = pos_;
        auto ws = [&] {
            while (p < s_.size() && std::isspace(static_cast<unsigned char>(s_[p]))) ++p;
        };
        ws();
        if (p < s_.size() && s_[p] == '!') {
            ++p;
            ws();
        }
        if (p >= s_.size() || !ident_start(s_[p])) return false;
        while (p < s_.size() && ident_char(s_[p])) ++p;
        ws();
        return p < s_.size() && s_[p] == ')';
    }

    ProcessExpr factor() {
        skip();
        if (pos_ >= s_.size()) fail("missing operand");
        char c = s_[pos_];
        auto bracketed = [&](Kind kind, char close) {
            ++pos_;
            std::string name = identifier();
            expect(close);
            return ProcessExpr::leaf(kind, std::move(name));
        };
        switch (c) {
        case '<': return bracketed(Kind::Block, '>');
        case '[': return bracketed(Kind::Send, ']');
        case '{': return bracketed(Kind::Jump, '}');
        case '(': {
            ++pos_;
            if (receive_ahead()) {
                bool first = false;
                if (peek('!')) {
                    ++pos_;
                    first = true;
                }
                std::string name = identifier();
                expect(')');
                return ProcessExpr::leaf(Kind::Receive, std::move(name), first);
            }
            if (peek(')')) fail("empty group");
            ProcessExpr inner = expr();
            expect(')');
            return inner;
        }
        default: fail(std::string("unexpected '") + c + "'");
        }
    }
};

void print_into(const ProcessExpr& e, std::string& out) {
    switch (e.kind) {
    case Kind::Block: out += "<" + e.name + ">"; return;
    case Kind::Receive: out += (e.first ? "(!" : "(") + e.name + ")"; return;
    case Kind::Send: out += "[" + e.name + "]"; return;
    case Kind::Jump: out += "{" + e.name + "}"; return;
    case Kind::Seq:
    case Kind::Choice: break;
    }
    const char* sep = e.kind == Kind::Seq ? "." : " | ";
    for (std::size_t i = 0; i < e.children.size(); ++i) {
        const auto& c = e.children[i];
        if (i) out += sep;
        bool group = e.kind == Kind::Seq ? !c.is_leaf() : c.kind == Kind::Choice;
        if (group) out += "(";
        print_into(c, out);
        if (group) out += ")";
    }
}

}  // namespace

ProcessExpr parse_process(std::string_view text) { return Parser(text).parse(); }

std::string print_process(const ProcessExpr& expr) {
    std::string out;
    print_into(expr, out);
    return out;
}

}  // namespace forge::emg
