#include "forge/sched.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/time.h>
#include <sys/wait.h>
#include <unistd.h>

#include "forge/error.hpp"
#include "forge/taskgen.hpp"

namespace forge::sched {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::None: return "none";
        case Termination::Cpu: return "cpu";
        case Termination::Wall: return "wall";
        case Termination::Memory: return "memory";
        case Termination::Cancelled: return "cancelled";
    }
    return "none";
}

std::string_view to_string(VerdictKind kind) {
    switch (kind) {
        case VerdictKind::Safe: return "Safe";
        case VerdictKind::Unsafe: return "Unsafe";
        case VerdictKind::Unknown: return "Unknown";
    }
    return "Unknown";
}

std::string_view to_string(JobState s) {
    switch (s) {
        case JobState::Pending: return "pending";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Cancelled: return "cancelled";
    }
    return "pending";
}

std::string_view to_string(TaskState s) {
    switch (s) {
        case TaskState::Pending: return "pending";
        case TaskState::Running: return "running";
        case TaskState::Done: return "done";
        case TaskState::Cancelled: return "cancelled";
    }
    return "pending";
}

namespace {

// utime + stime and resident set of one live process, read from /proc.
struct Sample {
    double cpu = 0;
    std::int64_t rss = 0;
};

std::optional<Sample> sample(pid_t pid) {
    std::ifstream stat("/proc/" + std::to_string(pid) + "/stat");
    std::string text;
    if (!std::getline(stat, text)) return std::nullopt;
    // The command name may hold spaces; fields resume after the last ')'.
    auto close = text.rfind(')');
    if (close == std::string::npos) return std::nullopt;
    std::istringstream rest(text.substr(close + 2));
    std::vector<std::string> fields;
    for (std::string f; rest >> f;) fields.push_back(f);
    // fields[0] is state (field 3); utime/stime are fields 14/15, rss is 24.
    if (fields.size() < 22) return std::nullopt;
    static const double ticks = static_cast<double>(::sysconf(_SC_CLK_TCK));
    static const std::int64_t page = ::sysconf(_SC_PAGESIZE);
    Sample s;
    s.cpu = (std::stod(fields[11]) + std::stod(fields[12])) / ticks;
    s.rss = std::stoll(fields[21]) * page;
    return s;
}

double seconds(const timeval& tv) { return static_cast<double>(tv.tv_sec) + tv.tv_usec / 1e6; }

}  // namespace

RunMeasurement run_with_limits(const std::vector<std::string>& argv, const ResourceLimits& limits,
                               const RunOptions& options) {
    if (argv.empty()) throw SchedulerError("empty command");
    if (!limits.valid()) throw SchedulerError("resource limits must be positive");

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    std::string out = options.output.empty() ? std::string("/dev/null") : options.output.string();
    std::string wd = options.workdir.string();

    // Exec failures come back through a close-on-exec pipe.
    int pipefd[2];
    if (::pipe2(pipefd, O_CLOEXEC) != 0) throw SchedulerError(std::string("pipe: ") + std::strerror(errno));

    auto started = Clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        ::close(pipefd[0]);
        ::close(pipefd[1]);
        throw SchedulerError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::close(pipefd[0]);
        auto cpu = static_cast<rlim_t>(std::ceil(limits.cpu_seconds));
        rlimit rl{cpu, cpu + 1};
        ::setrlimit(RLIMIT_CPU, &rl);
        int fd = ::open(out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            ::dup2(fd, 1);
            ::dup2(fd, 2);
            ::close(fd);
        }
        int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, 0);
        if (!wd.empty() && ::chdir(wd.c_str()) != 0) {
            int err = errno;
            [[maybe_unused]] auto n = ::write(pipefd[1], &err, sizeof err);
            ::_exit(127);
        }
        ::execvp(args[0], args.data());
        int err = errno;
        [[maybe_unused]] auto n = ::write(pipefd[1], &err, sizeof err);
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(pipefd[1]);
    int child_errno = 0;
    auto got = ::read(pipefd[0], &child_errno, sizeof child_errno);
    ::close(pipefd[0]);
    if (got == sizeof child_errno) {
        ::waitpid(pid, nullptr, 0);
        throw SchedulerError("cannot run " + argv[0] + ": " + std::strerror(child_errno));
    }

    RunMeasurement m;
    Termination verdict = Termination::None;
    int status = 0;
    rusage usage{};
    for (;;) {
        pid_t r = ::wait4(pid, &status, WNOHANG, &usage);
        if (r == pid) break;
        if (r < 0 && errno != EINTR) throw SchedulerError(std::string("wait: ") + std::strerror(errno));
        double wall = std::chrono::duration<double>(Clock::now() - started).count();
        if (verdict == Termination::None) {
            if (auto s = sample(pid)) {
                m.peak_memory_bytes = std::max(m.peak_memory_bytes, s->rss);
                if (s->rss > limits.memory_bytes) verdict = Termination::Memory;
                else if (s->cpu > limits.cpu_seconds) verdict = Termination::Cpu;
            }
            if (verdict == Termination::None && wall > limits.wall_seconds) verdict = Termination::Wall;
            if (verdict == Termination::None && options.cancel && options.cancel->cancelled())
                verdict = Termination::Cancelled;
            if (verdict != Termination::None) ::kill(-pid, SIGKILL);
        }
        std::this_thread::sleep_for(options.poll);
    }
    // Stragglers left in the group.
    ::kill(-pid, SIGKILL);

    m.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    m.cpu_seconds = seconds(usage.ru_utime) + seconds(usage.ru_stime);
    m.peak_memory_bytes = std::max<std::int64_t>(m.peak_memory_bytes, std::int64_t{usage.ru_maxrss} * 1024);
    if (WIFEXITED(status)) {
        m.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        m.signal = WTERMSIG(status);
        if (verdict == Termination::None && (m.signal == SIGXCPU || m.cpu_seconds >= limits.cpu_seconds))
            verdict = Termination::Cpu;
    }
    if (verdict == Termination::None && m.peak_memory_bytes > limits.memory_bytes && m.exit_code != 0)
        verdict = Termination::Memory;
    m.terminated_by = verdict;
    return m;
}

Verdict parse_verdict_line(std::string_view text) {
    std::string line(text.substr(0, text.find('\n')));
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    std::istringstream in(line);
    std::string word, reason;
    in >> word;
    std::getline(in >> std::ws, reason);
    if (word == "SAFE") return {VerdictKind::Safe, "", {}, {}};
    if (word == "UNSAFE") return {VerdictKind::Unsafe, "", {}, {}};
    if (word == "UNKNOWN") return Verdict::unknown(reason.empty() ? "tool-failure" : reason);
    return Verdict::unknown("tool-failure");
}

Outcome CommandBackend::run(const Task& task, const ResourceLimits& limits, const CancelToken& cancel) {
    for (const char* f : {"verdict.txt", "witness.graphml", "coverage.json"}) fs::remove(task.dir / f);
    auto argv = command_;
    argv.push_back(task.dir.string());
    RunOptions opts;
    opts.output = task.dir / "backend.log";
    opts.cancel = cancel;
    Outcome out;
    out.measurement = run_with_limits(argv, limits, opts);
    switch (out.measurement.terminated_by) {
        case Termination::Memory: out.verdict = Verdict::unknown("out-of-memory"); return out;
        case Termination::Cpu:
        case Termination::Wall: out.verdict = Verdict::unknown("timeout"); return out;
        case Termination::Cancelled: out.verdict = Verdict::unknown("cancelled"); return out;
        case Termination::None: break;
    }
    std::ifstream in(task.dir / "verdict.txt");
    if (!in) {
        out.verdict = Verdict::unknown("tool-failure");
        return out;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    out.verdict = parse_verdict_line(ss.str());
    if (std::ifstream w{task.dir / "witness.graphml"}) {
        std::stringstream ws;
        ws << w.rdbuf();
        out.verdict.witness = ws.str();
    }
    if (std::ifstream c{task.dir / "coverage.json"}) {
        try {
            out.verdict.coverage = json::parse(c);
        } catch (const json::exception&) {
        }
    }
    if (out.verdict.kind == VerdictKind::Unsafe && !out.verdict.witness) out.verdict = Verdict::unknown("tool-failure");
    return out;
}

SpeculativeOutcome speculative_run(const Task& task, Backend& backend, const CancelToken& cancel, double factor) {
    SpeculativeOutcome result;
    auto attempt = [&](const ResourceLimits& limits) {
        ++result.attempts;
        result.reserved_memory_bytes += limits.memory_bytes;
        try {
            auto o = backend.run(task, limits, cancel);
            result.verdict = std::move(o.verdict);
            result.measurement = o.measurement;
        } catch (const std::exception&) {
            result.verdict = Verdict::unknown("tool-failure");
            result.measurement = {};
        }
    };
    if (factor <= 0 || factor >= 1) {
        attempt(task.limits);
        return result;
    }
    auto low = task.limits;
    low.memory_bytes = std::max<std::int64_t>(1, static_cast<std::int64_t>(task.limits.memory_bytes * factor));
    attempt(low);
    if (result.verdict.kind == VerdictKind::Unknown && result.verdict.reason == "out-of-memory" && !cancel.cancelled())
        attempt(task.limits);
    return result;
}

Progress estimate_progress(std::size_t total, const std::vector<double>& completed, double elapsed) {
    Progress p;
    p.total = total;
    p.solved = completed.size();
    p.elapsed_seconds = elapsed;
    if (p.solved >= total) {
        p.remaining_seconds = 0.0;
    } else if (!completed.empty()) {
        double sum = 0;
        for (double w : completed) sum += w;
        p.remaining_seconds = sum / static_cast<double>(completed.size()) * static_cast<double>(total - p.solved);
    }
    return p;
}

struct Scheduler::Entry {
    Task task;
    int priority = 0;
    std::uint64_t order = 0;
    TaskState state = TaskState::Pending;
    CancelToken token;
};

struct Scheduler::JobInfo {
    std::string id;
    std::uint64_t order = 0;
    std::uint64_t last_dispatch = 0;  // 0: never
    JobState state = JobState::Pending;
    std::vector<Entry*> entries;
    Clock::time_point submitted;
    std::vector<double> walls;
    std::optional<std::uint64_t> cancel_seq;
};

Scheduler::Scheduler(Backend& backend, SchedulerOptions options, Sink sink)
    : backend_(backend), options_(options), sink_(std::move(sink)), paused_(options.start_paused) {
    if (options_.workers == 0) throw SchedulerError("at least one worker is required");
    for (std::size_t i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Scheduler::~Scheduler() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
        for (auto& e : entries_)
            if (e->state == TaskState::Running) e->token.cancel();
    }
    work_cv_.notify_all();
    for (auto& t : workers_) t.join();
}

void Scheduler::submit(Job job) {
    std::unique_lock lock(mu_);
    if (jobs_.count(job.id)) throw SchedulerError("duplicate job id " + job.id);
    std::set<std::string> seen;
    for (const auto& t : job.tasks)
        if (tasks_.count(t.id) || !seen.insert(t.id).second) throw SchedulerError("duplicate task id " + t.id);
    auto info = std::make_unique<JobInfo>();
    info->id = job.id;
    info->order = ++submit_counter_;
    info->submitted = Clock::now();
    for (auto& t : job.tasks) {
        auto e = std::make_unique<Entry>();
        e->priority = t.priority + job.priority;
        e->order = ++submit_counter_;
        e->task = std::move(t);
        e->task.job = job.id;
        info->entries.push_back(e.get());
        tasks_[e->task.id] = e.get();
        entries_.push_back(std::move(e));
        ++outstanding_;
    }
    if (info->entries.empty()) info->state = JobState::Done;
    jobs_[job.id] = std::move(info);
    lock.unlock();
    work_cv_.notify_all();
}

void Scheduler::resume() {
    {
        std::lock_guard lock(mu_);
        paused_ = false;
    }
    work_cv_.notify_all();
}

void Scheduler::cancel(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw SchedulerError("unknown job " + id);
    auto& job = *it->second;
    if (job.state == JobState::Done || job.state == JobState::Cancelled) return;
    job.state = JobState::Cancelled;
    job.cancel_seq = ++seq_;
    for (auto* e : job.entries) {
        if (e->state == TaskState::Pending) {
            e->state = TaskState::Cancelled;
            --outstanding_;
        } else if (e->state == TaskState::Running) {
            e->token.cancel();
        }
    }
    idle_cv_.notify_all();
}

void Scheduler::wait() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return outstanding_ == 0; });
}

JobState Scheduler::job_state(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw SchedulerError("unknown job " + id);
    return it->second->state;
}

TaskState Scheduler::task_state(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw SchedulerError("unknown task " + id);
    return it->second->state;
}

Progress Scheduler::progress(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw SchedulerError("unknown job " + id);
    const auto& job = *it->second;
    double elapsed = std::chrono::duration<double>(Clock::now() - job.submitted).count();
    return estimate_progress(job.entries.size(), job.walls, elapsed);
}

std::vector<Result> Scheduler::results() const {
    std::lock_guard lock(mu_);
    return results_;
}

std::vector<Dispatch> Scheduler::dispatch_log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::optional<std::uint64_t> Scheduler::cancel_seq(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second->cancel_seq;
}

// Highest priority first; at equal priority the job dispatched least
// recently goes next (round robin), and tasks of one job go in FIFO order.
Scheduler::Entry* Scheduler::pick_locked() {
    Entry* best = nullptr;
    const JobInfo* best_job = nullptr;
    for (auto& [_, job] : jobs_) {
        if (job->state == JobState::Cancelled || job->state == JobState::Done) continue;
        Entry* head = nullptr;
        for (auto* e : job->entries)
            if (e->state == TaskState::Pending && (!head || e->priority > head->priority)) head = e;
        if (!head) continue;
        if (!best || head->priority > best->priority) {
            best = head;
            best_job = job.get();
            continue;
        }
        if (head->priority < best->priority) continue;
        auto key = [](const JobInfo* j) { return std::pair(j->last_dispatch, j->order); };
        if (key(job.get()) < key(best_job)) {
            best = head;
            best_job = job.get();
        }
    }
    return best;
}

void Scheduler::finish_job_if_complete_locked(JobInfo& job) {
    if (job.state == JobState::Cancelled) return;
    for (auto* e : job.entries)
        if (e->state != TaskState::Done) return;
    job.state = JobState::Done;
}

void Scheduler::worker_loop() {
    std::unique_lock lock(mu_);
    for (;;) {
        Entry* e = nullptr;
        work_cv_.wait(lock, [&] {
            if (stopping_) return true;
            if (paused_) return false;
            e = pick_locked();
            return e != nullptr;
        });
        if (stopping_) return;

        auto& job = *jobs_.at(e->task.job);
        e->state = TaskState::Running;
        if (job.state == JobState::Pending) job.state = JobState::Running;
        job.last_dispatch = ++seq_;
        Dispatch d{e->task.id, e->task.job, e->priority, std::nullopt, seq_};
        for (auto& other : entries_) {
            if (other->state != TaskState::Pending) continue;
            if (jobs_.at(other->task.job)->state == JobState::Cancelled) continue;
            if (!d.best_waiting || other->priority > *d.best_waiting) d.best_waiting = other->priority;
        }
        log_.push_back(d);
        Task task = e->task;
        CancelToken token = e->token;
        lock.unlock();

        Result r;
        r.task = task;
        if (options_.speculative) {
            auto s = speculative_run(task, backend_, token, options_.speculation_factor);
            r.verdict = std::move(s.verdict);
            r.measurement = s.measurement;
            r.attempts = s.attempts;
        } else {
            try {
                auto o = backend_.run(task, task.limits, token);
                r.verdict = std::move(o.verdict);
                r.measurement = o.measurement;
            } catch (const std::exception&) {
                r.verdict = Verdict::unknown("tool-failure");
            }
        }

        lock.lock();
        bool emit = job.state != JobState::Cancelled && !token.cancelled();
        if (emit) {
            e->state = TaskState::Done;
            job.walls.push_back(r.measurement.wall_seconds);
            results_.push_back(r);
            finish_job_if_complete_locked(job);
        } else {
            e->state = TaskState::Cancelled;
        }
        if (emit && sink_) {
            // Tickets keep sink calls in completion order without holding
            // the scheduler lock, so the sink may query progress.
            auto ticket = tickets_issued_++;
            lock.unlock();
            {
                std::unique_lock sink_lock(sink_mu_);
                sink_cv_.wait(sink_lock, [&] { return tickets_done_ == ticket; });
                sink_(r);
                ++tickets_done_;
            }
            sink_cv_.notify_all();
            lock.lock();
        }
        --outstanding_;
        idle_cv_.notify_all();
        work_cv_.notify_all();
    }
}

Job load_job(const fs::path& job_file) {
    json doc;
    try {
        std::ifstream in(job_file);
        if (!in) throw ConfigError("cannot read " + job_file.string());
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(job_file.string() + ": " + e.what());
    }
    auto base = job_file.parent_path();
    Job job;
    job.id = doc.value("id", job_file.stem().string());
    job.name = doc.value("name", job.id);
    job.priority = doc.value("priority", 0);
    std::vector<fs::path> dirs;
    if (doc.contains("tasks")) {
        for (const auto& d : doc.at("tasks")) dirs.push_back(base / d.get<std::string>());
    } else if (doc.contains("tasks_dir")) {
        fs::path root = base / doc.at("tasks_dir").get<std::string>();
        for (const auto& entry : fs::directory_iterator(root))
            if (fs::exists(entry.path() / "task.json")) dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());
    } else {
        throw ConfigError(job_file.string() + ": no tasks or tasks_dir");
    }
    for (const auto& dir : dirs) {
        auto t = taskgen::read_task(dir);
        Task task;
        task.id = t.id;
        task.job = job.id;
        task.priority = t.priority;
        task.dir = fs::absolute(dir);
        task.limits.cpu_seconds = static_cast<double>(t.limits.cpu_seconds);
        task.limits.wall_seconds = static_cast<double>(t.limits.wall_seconds);
        task.limits.memory_bytes = t.limits.memory_bytes;
        job.tasks.push_back(std::move(task));
    }
    return job;
}

}  // namespace forge::sched
