#include "doctest.h"

#include <fstream>
#include <random>

#include "forge/error.hpp"
#include "forge/sched.hpp"
#include "forge/taskgen.hpp"
#include "sched_script.hpp"
#include "support.hpp"

using namespace forge;
using namespace forge::sched;
using forge::test::ScriptedBackend;
using forge::test::Script;
using forge::test::TempDir;

namespace {

ResourceLimits limits(double cpu, double wall, std::int64_t mem_mb) {
    ResourceLimits l;
    l.cpu_seconds = cpu;
    l.wall_seconds = wall;
    l.memory_bytes = mem_mb << 20;
    return l;
}

Task task(const std::string& id, int priority, std::int64_t memory = 1000) {
    Task t;
    t.id = id;
    t.priority = priority;
    t.limits.memory_bytes = memory;
    return t;
}

}  // namespace

TEST_CASE("run_with_limits: exits and spawn failures") {
    auto ok = run_with_limits({LIMIT_HELPER, "exit", "0"}, limits(5, 5, 256));
    CHECK(ok.terminated_by == Termination::None);
    CHECK(ok.exit_code == 0);
    auto three = run_with_limits({LIMIT_HELPER, "exit", "3"}, limits(5, 5, 256));
    CHECK(three.exit_code == 3);
    CHECK(three.terminated_by == Termination::None);
    CHECK_THROWS_AS(run_with_limits({"/nonexistent/forge-helper"}, limits(1, 1, 64)), SchedulerError);
    CHECK_THROWS_AS(run_with_limits({}, limits(1, 1, 64)), SchedulerError);
    CHECK_THROWS_AS(run_with_limits({LIMIT_HELPER, "exit", "0"}, limits(0, 1, 64)), SchedulerError);
}

TEST_CASE("run_with_limits: cpu limit") {
    auto m = run_with_limits({LIMIT_HELPER, "spin"}, limits(1, 10, 256));
    CHECK(m.terminated_by == Termination::Cpu);
    CHECK(m.cpu_seconds == doctest::Approx(1.0).epsilon(0.5));
    CHECK(m.wall_seconds < 3.0);
}

TEST_CASE("run_with_limits: wall limit and cancellation") {
    auto m = run_with_limits({LIMIT_HELPER, "sleep", "5000"}, limits(10, 0.3, 256));
    CHECK(m.terminated_by == Termination::Wall);
    CHECK(m.wall_seconds < 1.5);

    CancelToken token;
    RunOptions opts;
    opts.cancel = token;
    std::thread canceller([token] {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        token.cancel();
    });
    auto c = run_with_limits({LIMIT_HELPER, "sleep", "5000"}, limits(10, 10, 256), opts);
    canceller.join();
    CHECK(c.terminated_by == Termination::Cancelled);
    CHECK(c.wall_seconds < 2.0);
}

TEST_CASE("run_with_limits: memory limit") {
    // The helper touches 200 MiB; 64 MiB must stop it, 512 MiB must not.
    auto over = run_with_limits({LIMIT_HELPER, "alloc", "200"}, limits(10, 10, 64));
    CHECK(over.terminated_by == Termination::Memory);
    auto under = run_with_limits({LIMIT_HELPER, "alloc", "32"}, limits(10, 10, 512));
    CHECK(under.terminated_by == Termination::None);
    CHECK(under.exit_code == 0);
    CHECK(under.peak_memory_bytes >= (32 << 20));
}

TEST_CASE("verdict lines") {
    CHECK(parse_verdict_line("SAFE\n").kind == VerdictKind::Safe);
    CHECK(parse_verdict_line("UNSAFE").kind == VerdictKind::Unsafe);
    auto u = parse_verdict_line("UNKNOWN timeout\n");
    CHECK(u.kind == VerdictKind::Unknown);
    CHECK(u.reason == "timeout");
    CHECK(parse_verdict_line("UNKNOWN").reason == "tool-failure");
    CHECK(parse_verdict_line("garbage").reason == "tool-failure");
}

TEST_CASE("command backend reads the task directory") {
    TempDir dir;
    Task t = task("t", 0, 256 << 20);
    t.dir = dir.path();
    t.limits.cpu_seconds = 5;
    t.limits.wall_seconds = 5;
    CancelToken none;

    CommandBackend safe({"sh", "-c", "echo SAFE > \"$0/verdict.txt\""});
    CHECK(safe.run(t, t.limits, none).verdict.kind == VerdictKind::Safe);

    CommandBackend bare_unsafe({"sh", "-c", "echo UNSAFE > \"$0/verdict.txt\""});
    auto b = bare_unsafe.run(t, t.limits, none).verdict;
    CHECK(b.kind == VerdictKind::Unknown);
    CHECK(b.reason == "tool-failure");

    CommandBackend unsafe({"sh", "-c", "echo UNSAFE > \"$0/verdict.txt\"; echo '<graphml/>' > \"$0/witness.graphml\"; "
                                       "echo '{\"files\":{}}' > \"$0/coverage.json\""});
    auto v = unsafe.run(t, t.limits, none).verdict;
    CHECK(v.kind == VerdictKind::Unsafe);
    CHECK(v.witness == std::optional<std::string>("<graphml/>\n"));
    REQUIRE(v.coverage);
    CHECK(v.coverage->contains("files"));

    CommandBackend silent({"sh", "-c", "exit 0"});
    CHECK(silent.run(t, t.limits, none).verdict.reason == "tool-failure");

    CommandBackend slow({"sh", "-c", "sleep 5"});
    auto tl = t.limits;
    tl.wall_seconds = 0.2;
    CHECK(slow.run(t, tl, none).verdict.reason == "timeout");
}

TEST_CASE("speculative runs") {
    ScriptedBackend backend;
    backend.scripts["small"] = Script{0, VerdictKind::Unsafe, 400};
    backend.scripts["large"] = Script{0, VerdictKind::Safe, 900};
    backend.scripts["huge"] = Script{0, VerdictKind::Safe, 5000};
    backend.scripts["crash"] = Script{0, VerdictKind::Safe, 0, true};

    auto small = speculative_run(task("small", 0), backend);
    CHECK(small.attempts == 1);
    CHECK(small.verdict.kind == VerdictKind::Unsafe);
    CHECK(small.reserved_memory_bytes == 500);

    auto large = speculative_run(task("large", 0), backend);
    CHECK(large.attempts == 2);
    CHECK(large.verdict.kind == VerdictKind::Safe);
    CHECK(large.reserved_memory_bytes == 1500);

    auto huge = speculative_run(task("huge", 0), backend);
    CHECK(huge.attempts == 2);
    CHECK(huge.verdict.reason == "out-of-memory");

    auto crash = speculative_run(task("crash", 0), backend);
    CHECK(crash.verdict.kind == VerdictKind::Unknown);
    CHECK(crash.verdict.reason == "tool-failure");

    // Without speculation the same deterministic backend gives the same kinds.
    for (const char* id : {"small", "large", "huge"}) {
        auto plain = speculative_run(task(id, 0), backend, {}, 1.0);
        CHECK(plain.attempts == 1);
        CHECK(plain.verdict.kind == speculative_run(task(id, 0), backend).verdict.kind);
    }
}

TEST_CASE("progress estimates") {
    auto half = estimate_progress(10, {1, 2, 3, 2, 2}, 10);
    CHECK(half.solved == 5);
    REQUIRE(half.remaining_seconds);
    CHECK(*half.remaining_seconds == doctest::Approx(10.0));
    CHECK_FALSE(estimate_progress(10, {}, 3).remaining_seconds);
    CHECK(*estimate_progress(2, {1, 5}, 6).remaining_seconds == 0.0);

    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        std::size_t total = rng() % 20 + 1;
        std::size_t done = rng() % (total + 1);
        std::vector<double> walls;
        double sum = 0;
        for (std::size_t k = 0; k < done; ++k) {
            walls.push_back((rng() % 1000) / 100.0);
            sum += walls.back();
        }
        auto p = estimate_progress(total, walls, 1);
        if (done == 0) {
            CHECK_FALSE(p.remaining_seconds);
        } else {
            CHECK(*p.remaining_seconds == doctest::Approx(sum / done * (total - done)));
        }
    }
}

TEST_CASE("scheduler: priority then FIFO with one worker") {
    ScriptedBackend backend;
    for (const char* id : {"task1", "task2", "task3"}) backend.scripts[id] = Script{1, VerdictKind::Safe, 0};
    SchedulerOptions opts;
    opts.workers = 1;
    opts.start_paused = true;
    std::vector<std::string> emitted;
    Scheduler s(backend, opts, [&](const Result& r) { emitted.push_back(r.task.id); });
    Job job{"job", "job", 0, {task("task1", 2), task("task2", 1), task("task3", 2)}};
    s.submit(job);
    CHECK(s.job_state("job") == JobState::Pending);
    s.resume();
    s.wait();
    CHECK(backend.starts == std::vector<std::string>{"task1", "task3", "task2"});
    CHECK(emitted == backend.starts);
    CHECK(s.job_state("job") == JobState::Done);
    CHECK(s.progress("job").remaining_seconds == 0.0);
}

TEST_CASE("scheduler: one task on four workers runs immediately") {
    ScriptedBackend backend;
    backend.scripts["only"] = Script{0, VerdictKind::Unsafe, 0};
    SchedulerOptions opts;
    opts.workers = 4;
    Scheduler s(backend, opts);
    s.submit(Job{"j", "j", 0, {task("only", 0)}});
    s.wait();
    REQUIRE(s.results().size() == 1);
    CHECK(s.results()[0].verdict.kind == VerdictKind::Unsafe);
    CHECK_THROWS_AS(s.submit(Job{"j", "j", 0, {}}), SchedulerError);
    CHECK_THROWS_AS(s.cancel("nope"), SchedulerError);
    CHECK_THROWS_AS((void)Scheduler(backend, SchedulerOptions{0}), SchedulerError);
}

TEST_CASE("scheduler: equal priorities alternate between jobs") {
    ScriptedBackend backend;
    Job a{"a", "a", 0, {}}, b{"b", "b", 0, {}};
    for (int i = 0; i < 3; ++i) {
        a.tasks.push_back(task("a" + std::to_string(i), 0));
        b.tasks.push_back(task("b" + std::to_string(i), 0));
    }
    for (const auto& j : {a, b})
        for (const auto& t : j.tasks) backend.scripts[t.id] = Script{0, VerdictKind::Safe, 0};
    SchedulerOptions opts;
    opts.start_paused = true;
    Scheduler s(backend, opts);
    s.submit(a);
    s.submit(b);
    s.resume();
    s.wait();
    CHECK(backend.starts == std::vector<std::string>{"a0", "b0", "a1", "b1", "a2", "b2"});
}

TEST_CASE("scheduler: cancelling a running job") {
    ScriptedBackend backend;
    Job job{"job", "job", 0, {}};
    for (int i = 0; i < 4; ++i) {
        job.tasks.push_back(task("t" + std::to_string(i), 0));
        backend.scripts["t" + std::to_string(i)] = Script{2000, VerdictKind::Safe, 0};
    }
    SchedulerOptions opts;
    opts.workers = 1;
    std::vector<std::string> emitted;
    Scheduler s(backend, opts, [&](const Result& r) { emitted.push_back(r.task.id); });
    s.submit(job);
    while (backend.running == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    auto before = std::chrono::steady_clock::now();
    s.cancel("job");
    s.wait();
    CHECK(std::chrono::steady_clock::now() - before < std::chrono::seconds(1));
    CHECK(s.job_state("job") == JobState::Cancelled);
    for (int i = 0; i < 4; ++i) CHECK(s.task_state("t" + std::to_string(i)) == TaskState::Cancelled);
    CHECK(backend.starts == std::vector<std::string>{"t0"});
    CHECK(emitted.empty());
    s.cancel("job");  // idempotent

    // Cancelling a pending job cancels every task without running any.
    SchedulerOptions paused;
    paused.start_paused = true;
    ScriptedBackend idle;
    Scheduler p(idle, paused);
    p.submit(Job{"p", "p", 0, {task("x", 0), task("y", 0)}});
    p.cancel("p");
    p.resume();
    p.wait();
    CHECK(p.task_state("x") == TaskState::Cancelled);
    CHECK(p.task_state("y") == TaskState::Cancelled);
    CHECK(idle.starts.empty());
}

TEST_CASE("scheduler: randomized schedules") {
    std::mt19937 rng(20201);
    for (int i = 0; i < 60; ++i) {
        auto r = forge::test::random_schedule(rng);
        auto why = forge::test::check_random_schedule(r);
        INFO("schedule " << i);
        CHECK(why == "");
    }
}

TEST_CASE("job files") {
    TempDir dir;
    for (int i = 0; i < 2; ++i) {
        taskgen::VerificationTask t;
        t.id = "frag" + std::to_string(i) + "@req";
        t.priority = i;
        t.limits.cpu_seconds = 7;
        taskgen::write_task(dir.path() / "tasks" / taskgen::task_dir_name(t.id), t);
    }
    dir.write("job.json", R"({"id": "J", "priority": 1, "tasks_dir": "tasks"})");
    auto job = load_job(dir.path() / "job.json");
    CHECK(job.id == "J");
    REQUIRE(job.tasks.size() == 2);
    CHECK(job.tasks[0].id == "frag0@req");
    CHECK(job.tasks[1].priority == 1);
    CHECK(job.tasks[0].limits.cpu_seconds == 7);
    dir.write("bad.json", R"({"id": "J"})");
    CHECK_THROWS_AS(load_job(dir.path() / "bad.json"), ConfigError);
}
