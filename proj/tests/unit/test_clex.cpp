#include "doctest.h"

#include "forge/clex.hpp"
#include "forge/ctop.hpp"
#include "forge/error.hpp"

using namespace forge;

TEST_CASE("lexer skips comments and directives but keeps offsets") {
    std::string src = "#include <x.h>\n/* c */ int a = 'x'; // tail\nchar *s = \"a}b\";\n";
    auto lexed = clex::lex(src);
    REQUIRE(lexed.comments.size() == 2);
    CHECK(lexed.comments[0].text == "/* c */");
    std::string joined;
    for (const auto& t : lexed.tokens) joined += std::string(t.text) + "|";
    CHECK(joined == "int|a|=|'x'|;|char|*|s|=|\"a}b\"|;|");
    CHECK(lexed.tokens[0].line == 2);
    CHECK(src.substr(lexed.tokens[1].offset, 1) == "a");
    CHECK(lexed.tokens[5].line == 3);
}

TEST_CASE("lexer multi-char punctuators") {
    auto toks = clex::tokens("a->b <<= c && d++");
    std::vector<std::string> texts;
    for (const auto& t : toks) texts.emplace_back(t.text);
    CHECK(texts == std::vector<std::string>{"a", "->", "b", "<<=", "c", "&&", "d", "++"});
}

TEST_CASE("top-level scan finds definitions, prototypes and variables") {
    auto unit = ctop::scan(
        "struct ops { int (*open)(int); };\n"
        "typedef unsigned long gfp_t;\n"
        "static int counter = 0;\n"
        "void *kmalloc(size_t size, gfp_t flags);\n"
        "static inline long IS_ERR(const void *ptr) { return 0; }\n"
        "int main(int argc, char **argv) __attribute__((unused)) { return IS_ERR(argv); }\n");
    REQUIRE(unit.functions.size() == 2);
    CHECK(unit.functions[0].name == "IS_ERR");
    CHECK(unit.functions[0].is_static);
    CHECK(unit.functions[0].return_type == "long");
    REQUIRE(unit.functions[0].params.size() == 1);
    CHECK(unit.functions[0].params[0].type == "const void *");
    CHECK(unit.functions[0].params[0].name == "ptr");
    CHECK(unit.functions[1].name == "main");
    CHECK(unit.functions[1].params[1].type == "char * *");
    REQUIRE(unit.decls.size() == 4);
    CHECK(unit.decls[0].kind == ctop::DeclKind::Aggregate);
    CHECK(unit.decls[1].kind == ctop::DeclKind::Typedef);
    CHECK(unit.decls[1].name == "gfp_t");
    CHECK(unit.decls[2].kind == ctop::DeclKind::Variable);
    CHECK(unit.decls[2].name == "counter");
    CHECK(unit.decls[2].is_static);
    CHECK(unit.decls[3].kind == ctop::DeclKind::Prototype);
    CHECK(unit.decls[3].name == "kmalloc");
}

TEST_CASE("parameter lists") {
    auto unit = ctop::scan("int f(void) {} int g(int, char**) {} int h(int (*cb)(int), ...) {}");
    REQUIRE(unit.functions.size() == 3);
    CHECK(unit.functions[0].params.empty());
    REQUIRE(unit.functions[1].params.size() == 2);
    CHECK(unit.functions[1].params[0].name.empty());
    CHECK(unit.functions[1].params[1].type == "char * *");
    CHECK(unit.functions[2].params[0].name == "cb");
    CHECK(unit.functions[2].variadic);
}

TEST_CASE("unbalanced braces raise ParseError") {
    CHECK_THROWS_AS(ctop::scan("} int f(void) {"), ParseError);
    CHECK_THROWS_AS(ctop::scan("int f(void) { if (1) {"), ParseError);
}
