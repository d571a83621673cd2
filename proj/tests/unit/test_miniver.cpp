#include "doctest.h"

#include <cstdlib>
#include <random>
#include <sys/wait.h>

#include "forge/emg.hpp"
#include "forge/error.hpp"
#include "forge/miniver.hpp"
#include "support.hpp"

using namespace forge;
using namespace forge::miniver;
using forge::test::TempDir;
using forge::test::fixture;
using forge::test::slurp;
using nlohmann::json;

namespace {

const std::string kProperty = "CHECK( init(main()), LTL(G ! call(__VERIFIER_error())) )";

std::string property_for(const std::string& entry) {
    return "CHECK( init(" + entry + "()), LTL(G ! call(__VERIFIER_error())) )";
}

std::size_t action_hits(const emg::HarnessBundle& harness, const Path& path) {
    return static_cast<std::size_t>(std::count_if(path.lines.begin(), path.lines.end(),
                                                  [&](std::size_t l) { return harness.action_lines.count(l) > 0; }));
}

// Action sequences of the complete paths through a harness, with at most
// `max_len` actions per path.
std::set<emg::Trace> traces_of(const emg::HarnessBundle& harness, std::size_t max_len) {
    Program program(harness.main_source);
    Bounds bounds;
    bounds.loop_bound = 64;
    auto ex = explore(program, harness.entry_point, bounds,
                      [&](const Path& partial) { return action_hits(harness, partial) <= max_len; });
    std::set<emg::Trace> out;
    for (const auto& path : ex.paths) {
        if (path.status != PathStatus::Completed) continue;
        emg::Trace t;
        for (auto l : path.lines) {
            auto it = harness.action_lines.find(l);
            if (it != harness.action_lines.end()) t.push_back(it->second.action);
        }
        out.insert(t);
    }
    return out;
}

emg::IntermediateModel load_model(const std::string& name) {
    return emg::parse_model(json::parse(slurp(fixture("models/" + name))));
}

int native_exit_code(const std::string& program) {
    TempDir dir;
    auto src = dir.write("p.c", "#include <stdlib.h>\nvoid __VERIFIER_error(void) { exit(3); }\n" + program);
    auto bin = dir.path() / "p";
    std::string cmd = "cc -w -x c " + src.string() + " -o " + bin.string() + " 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return -1;
    int status = std::system(bin.string().c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("miniver: trivial programs") {
    auto safe = check("int main(){return 0;}", kProperty);
    CHECK(safe.kind == VerdictKind::Safe);
    CHECK(safe.explored_paths == 1);

    auto unsafe = check("void __VERIFIER_error(void);\nint main(void)\n{\n    __VERIFIER_error();\n    return 0;\n}\n",
                        kProperty);
    REQUIRE(unsafe.kind == VerdictKind::Unsafe);
    CHECK(unsafe.trace.back().kind == EventKind::Error);
    CHECK(unsafe.trace.back().line == 4);
    CHECK(unsafe.witness.find("violation_witness") != std::string::npos);
}

TEST_CASE("miniver: property forms") {
    CHECK(reachability_entry(kProperty) == "main");
    CHECK(reachability_entry("CHECK( init(entry_point()), LTL(G ! call(__VERIFIER_error())) )") == "entry_point");
    CHECK(reachability_entry("CHECK( init(main()), LTL(G valid-free) )").empty());
    auto v = check("int main(){return 0;}", "CHECK( init(main()), LTL(G valid-free) )");
    CHECK(v.kind == VerdictKind::Unknown);
    CHECK(v.reason == "unsupported");
    auto missing = check("int f(){return 0;}", kProperty);
    CHECK(missing.kind == VerdictKind::Unknown);
    CHECK(missing.reason == "tool-failure");
}

TEST_CASE("miniver: subset violations are tool failures") {
    auto v = check("int main(void) { int *p = 0; return *p; }", kProperty);
    CHECK(v.kind == VerdictKind::Unknown);
    CHECK(v.reason == "tool-failure");
    CHECK(v.diagnostic.find("dereference") != std::string::npos);
    CHECK_THROWS_AS(Program("int main(void) { goto nowhere; }"), ParseError);
}

TEST_CASE("miniver: nondeterminism and assumptions") {
    std::string src =
        "int __VERIFIER_nondet_int(void);\n"
        "void __VERIFIER_assume(int);\n"
        "void __VERIFIER_error(void);\n"
        "int main(void)\n"
        "{\n"
        "    int a = __VERIFIER_nondet_int();\n"
        "    int b = __VERIFIER_nondet_int();\n"
        "    __VERIFIER_assume(a != b);\n"
        "    if (a + b == 1 && a)\n"
        "        __VERIFIER_error();\n"
        "    return 0;\n"
        "}\n";
    auto v = check(src, kProperty);
    REQUIRE(v.kind == VerdictKind::Unsafe);
    CHECK(v.choices == std::vector<std::size_t>{1, 0});
    // Replaying the recorded choices reaches the error again.
    Program program(src);
    auto path = replay(program, "main", v.choices);
    CHECK(path.status == PathStatus::Error);

    auto all = explore(program, "main");
    std::map<PathStatus, int> count;
    for (const auto& p : all.paths) ++count[p.status];
    CHECK(all.paths.size() == 4);
    CHECK(count[PathStatus::Infeasible] == 2);
    CHECK(count[PathStatus::Error] == 1);
    CHECK(count[PathStatus::Completed] == 1);
}

TEST_CASE("miniver: bounds give Unknown(timeout)") {
    auto v = check("int main(void) { int i = 0; while (1) { i++; } return i; }", kProperty);
    CHECK(v.kind == VerdictKind::Unknown);
    CHECK(v.reason == "timeout");
    auto r = check("int f(int n) { return f(n + 1); }\nint main(void) { return f(0); }", kProperty);
    CHECK(r.kind == VerdictKind::Unknown);
    CHECK(r.reason == "timeout");
    Bounds tight;
    tight.loop_bound = 3;
    auto loop = check("void __VERIFIER_error(void);\nint main(void) { int i; for (i = 0; i < 10; i++) ; if (i == 10) "
                      "__VERIFIER_error(); return 0; }",
                      kProperty, tight);
    CHECK(loop.reason == "timeout");
    auto wide = check("void __VERIFIER_error(void);\nint main(void) { int i; for (i = 0; i < 10; i++) ; if (i == 10) "
                      "__VERIFIER_error(); return 0; }",
                      kProperty);
    CHECK(wide.kind == VerdictKind::Unsafe);
}

TEST_CASE("miniver: exploration grows with the value set") {
    std::string src =
        "int __VERIFIER_nondet_int(void);\n"
        "int main(void) { int s = 0; int i; for (i = 0; i < 3; i++) s += __VERIFIER_nondet_int(); return s; }\n";
    Program program(src);
    std::size_t previous = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
        Bounds b;
        b.nondet_values.clear();
        for (std::size_t k = 0; k < n; ++k) b.nondet_values.push_back(static_cast<std::int64_t>(k));
        auto ex = explore(program, "main", b);
        CHECK(ex.paths.size() == n * n * n);
        CHECK(ex.paths.size() >= previous);
        previous = ex.paths.size();
    }
}

TEST_CASE("miniver: control flow agrees with native execution") {
    // Each program exits through __VERIFIER_error() exactly when the native
    // build exits with status 3.
    std::vector<std::string> programs = {
        "int main(void) { int s = 0, i; for (i = 0; i < 10; i++) { if (i % 3 == 0) continue; s += i; } "
        "if (s == 27) __VERIFIER_error(); return 0; }",
        "int main(void) { int n = 7, steps = 0; do { n = n % 2 ? 3 * n + 1 : n / 2; steps++; } while (n != 1); "
        "if (steps == 16) __VERIFIER_error(); return 0; }",
        "int g = 5;\nint h(int x) { switch (x) { case 1: return 10; case 2: g++; default: return g; } }\n"
        "int main(void) { if (h(1) + h(2) + h(3) == 22) __VERIFIER_error(); return 0; }",
        "int main(void) { int i = 0; again: i += 2; if (i < 9) goto again; if (i != 10) __VERIFIER_error(); return 0; }",
        "int main(void) { int a = 6, b = 4; a <<= 2; b |= 3; a ^= b; if ((a > b ? a - b : b - a) == 21) "
        "__VERIFIER_error(); return 0; }",
        "typedef _Bool bool;\nint main(void) { long r = 12; bool t = (bool)r; if (t == 1 && !(r & 3)) "
        "__VERIFIER_error(); return 0; }",
        "static int fact(int n) { return n <= 1 ? 1 : n * fact(n - 1); }\nint main(void) { if (fact(5) != 120) "
        "__VERIFIER_error(); return 0; }",
    };
    for (const auto& p : programs) {
        CAPTURE(p);
        int code = native_exit_code("void __VERIFIER_error(void);\n" + p);
        REQUIRE(code >= 0);
        auto v = check("void __VERIFIER_error(void);\n" + p, kProperty);
        CHECK(v.kind == (code == 3 ? VerdictKind::Unsafe : VerdictKind::Safe));
    }
}

TEST_CASE("miniver: random arithmetic agrees with native execution") {
    std::mt19937 rng(5);
    const char* ops[] = {"+", "-", "*", "&", "|", "^", "<", ">", "==", "!=", "&&", "||"};
    auto rand_expr = [&](auto&& self, int depth) -> std::string {
        if (depth == 0 || rng() % 3 == 0) {
            switch (rng() % 3) {
                case 0: return "a";
                case 1: return "b";
                default: return std::to_string(rng() % 9);
            }
        }
        std::string op = ops[rng() % std::size(ops)];
        return "(" + self(self, depth - 1) + " " + op + " " + self(self, depth - 1) + ")";
    };
    std::string body;
    std::vector<std::string> exprs;
    for (int i = 0; i < 20; ++i) exprs.push_back(rand_expr(rand_expr, 3));
    // One native build computes every expression; miniver checks each.
    std::string native = "#include <stdio.h>\nint main(void) { long a = 3, b = -2;\n";
    for (const auto& e : exprs) native += "    printf(\"%ld\\n\", (long)(" + e + "));\n";
    native += "    return 0; }\n";
    TempDir dir;
    auto src = dir.write("n.c", native);
    auto bin = dir.path() / "n";
    auto out = dir.path() / "out.txt";
    REQUIRE(std::system(("cc -w " + src.string() + " -o " + bin.string()).c_str()) == 0);
    REQUIRE(std::system((bin.string() + " > " + out.string()).c_str()) == 0);
    std::istringstream values(slurp(out));
    for (const auto& e : exprs) {
        long expected = 0;
        values >> expected;
        std::string p = "void __VERIFIER_error(void);\nint main(void) { long a = 3, b = -2; if ((" + e +
                        ") == " + std::to_string(expected) + ") __VERIFIER_error(); return 0; }";
        CAPTURE(e);
        CHECK(check(p, kProperty).kind == VerdictKind::Unsafe);
    }
}

TEST_CASE("miniver: coverage and traces stay within program lines") {
    std::string src =
        "int __VERIFIER_nondet_int(void);\n"
        "void __VERIFIER_error(void);\n"
        "static int twice(int x)\n"
        "{\n"
        "    return x + x;\n"
        "}\n"
        "int main(void)\n"
        "{\n"
        "    int v = __VERIFIER_nondet_int();\n"
        "    if (twice(v) == 2)\n"
        "        __VERIFIER_error();\n"
        "    return 0;\n"
        "}\n";
    auto v = check(src, kProperty, {}, "p.c");
    REQUIRE(v.kind == VerdictKind::Unsafe);
    auto lines = v.coverage["files"]["p.c"]["lines"].get<std::set<std::size_t>>();
    auto statements = Program(src).statement_lines();
    for (auto l : lines) CHECK(statements.count(l));
    for (const auto& e : v.trace)
        if (e.kind == EventKind::Statement) CHECK(lines.count(e.line));
    CHECK(v.coverage["files"]["p.c"]["functions"]["twice"] == true);
}

TEST_CASE("miniver: line markers map coverage to original files") {
    std::string src =
        "/* merged */\n"
        "# 1 \"a.c\"\n"
        "int f(void)\n"
        "{\n"
        "    return 1;\n"
        "}\n"
        "# 1 \"b.c\"\n"
        "int main(void)\n"
        "{\n"
        "    return f();\n"
        "}\n";
    auto v = check(src, kProperty);
    CHECK(v.kind == VerdictKind::Safe);
    CHECK(v.coverage["files"]["a.c"]["lines"] == json::array({3}));
    CHECK(v.coverage["files"]["b.c"]["lines"] == json::array({3}));
}

TEST_CASE("miniver: harness paths match enumerated traces") {
    for (auto [file, max_len] : {std::pair<const char*, std::size_t>{"scenario.json", 5}, {"tty_callbacks.json", 4}}) {
        CAPTURE(file);
        auto model = load_model(file);
        pfg::ProgramFragment fragment{"fragment", {}, true};
        auto harness = emg::translate(model, fragment);
        const auto& scenario = model.thread_models.begin()->second;
        auto expected = emg::enumerate_traces(scenario, max_len);
        CHECK(traces_of(harness, max_len) == expected);
    }
    CHECK(traces_of(emg::translate(load_model("scenario.json"), {"f", {}, true}), 5).size() == 4);
}

TEST_CASE("miniver: task directory backend") {
    TempDir dir;
    dir.write("cil.i", "void __VERIFIER_error(void);\nint entry_point(void) { __VERIFIER_error(); return 0; }\n");
    dir.write("safe-prps.prp", property_for("entry_point") + "\n");
    auto v = run_task_dir(dir.path().string());
    CHECK(v.kind == VerdictKind::Unsafe);
    CHECK(slurp(dir.path() / "verdict.txt") == "UNSAFE\n");
    CHECK(slurp(dir.path() / "witness.graphml").find("<graphml") != std::string::npos);
    CHECK(json::parse(slurp(dir.path() / "coverage.json")).contains("files"));

    TempDir empty;
    auto u = run_task_dir(empty.path().string());
    CHECK(u.kind == VerdictKind::Unknown);
    CHECK(slurp(empty.path() / "verdict.txt") == "UNKNOWN tool-failure\n");
}
