#pragma once

// Resource-limited child processes, verifier backends, and a priority
// scheduler with cancellation and speculative low-memory first runs.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

namespace forge::sched {

struct ResourceLimits {
    double cpu_seconds = 270;
    double wall_seconds = 600;
    std::int64_t memory_bytes = std::int64_t{1} << 30;
    int cores = 1;

    bool valid() const { return cpu_seconds > 0 && wall_seconds > 0 && memory_bytes > 0 && cores > 0; }
};

enum class Termination { None, Cpu, Wall, Memory, Cancelled };

std::string_view to_string(Termination t);

struct RunMeasurement {
    double cpu_seconds = 0;
    double wall_seconds = 0;
    std::int64_t peak_memory_bytes = 0;
    int exit_code = -1;   // -1 when killed by a signal
    int signal = 0;
    Termination terminated_by = Termination::None;
};

/// Shared flag; copies observe the same state.
class CancelToken {
public:
    CancelToken() : flag_(std::make_shared<std::atomic<bool>>(false)) {}
    void cancel() const { flag_->store(true); }
    bool cancelled() const { return flag_->load(); }

private:
    std::shared_ptr<std::atomic<bool>> flag_;
};

struct RunOptions {
    std::filesystem::path workdir;       // empty: inherit
    std::filesystem::path output;        // stdout+stderr; empty: /dev/null
    std::optional<CancelToken> cancel;
    std::chrono::milliseconds poll{2};
};

/// Runs argv in its own process group and kills the group as soon as a
/// limit is exceeded. Throws SchedulerError when the command cannot start.
RunMeasurement run_with_limits(const std::vector<std::string>& argv, const ResourceLimits& limits,
                               const RunOptions& options = {});

enum class VerdictKind { Safe, Unsafe, Unknown };

std::string_view to_string(VerdictKind kind);

struct Verdict {
    VerdictKind kind = VerdictKind::Unknown;
    std::string reason;  // Unknown: timeout | out-of-memory | tool-failure | component-failure
    std::optional<std::string> witness;
    std::optional<nlohmann::json> coverage;

    static Verdict unknown(std::string reason) { return {VerdictKind::Unknown, std::move(reason), {}, {}}; }
};

/// Parses a verdict.txt line ("SAFE", "UNSAFE", "UNKNOWN <reason>").
Verdict parse_verdict_line(std::string_view text);

struct Task {
    std::string id;
    std::string job;
    int priority = 0;
    std::filesystem::path dir;
    ResourceLimits limits;
};

struct Outcome {
    Verdict verdict;
    RunMeasurement measurement;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// Must return promptly once `cancel` fires.
    virtual Outcome run(const Task& task, const ResourceLimits& limits, const CancelToken& cancel) = 0;
};

/// Runs `command... <task dir>` under limits and reads verdict.txt,
/// witness.graphml and coverage.json from the task directory.
class CommandBackend : public Backend {
public:
    explicit CommandBackend(std::vector<std::string> command) : command_(std::move(command)) {}
    Outcome run(const Task& task, const ResourceLimits& limits, const CancelToken& cancel) override;

private:
    std::vector<std::string> command_;
};

struct SpeculativeOutcome {
    Verdict verdict;
    RunMeasurement measurement;  // of the attempt whose verdict is returned
    int attempts = 0;
    std::int64_t reserved_memory_bytes = 0;  // summed over attempts
};

/// First attempt with memory scaled by `factor`; one full-limit rerun when it
/// ends Unknown(out-of-memory). Backend exceptions become Unknown(tool-failure).
SpeculativeOutcome speculative_run(const Task& task, Backend& backend, const CancelToken& cancel = {},
                                   double factor = 0.5);

struct Progress {
    std::size_t solved = 0;
    std::size_t total = 0;
    double elapsed_seconds = 0;
    std::optional<double> remaining_seconds;  // unknown before the first completion
};

/// remaining = mean wall time of completed tasks x unsolved count.
Progress estimate_progress(std::size_t total, const std::vector<double>& completed_wall_seconds,
                           double elapsed_seconds);

enum class JobState { Pending, Running, Done, Cancelled };
enum class TaskState { Pending, Running, Done, Cancelled };

std::string_view to_string(JobState s);
std::string_view to_string(TaskState s);

struct Job {
    std::string id;
    std::string name;
    int priority = 0;  // added to each task's own priority
    std::vector<Task> tasks;
};

struct Result {
    Task task;
    Verdict verdict;
    RunMeasurement measurement;
    int attempts = 1;
};

struct SchedulerOptions {
    std::size_t workers = 1;
    bool speculative = true;
    double speculation_factor = 0.5;
    bool start_paused = false;
};

/// Chosen under the scheduler lock: the started task and the highest
/// effective priority among the tasks still waiting at that instant.
struct Dispatch {
    std::string task;
    std::string job;
    int priority = 0;
    std::optional<int> best_waiting;
    std::uint64_t seq = 0;
};

class Scheduler {
public:
    using Sink = std::function<void(const Result&)>;

    /// `sink` receives verdicts in completion order, one call at a time.
    Scheduler(Backend& backend, SchedulerOptions options, Sink sink = {});
    ~Scheduler();
    Scheduler(const Scheduler&) = delete;
    Scheduler& operator=(const Scheduler&) = delete;

    /// Throws SchedulerError on a duplicate job or task id.
    void submit(Job job);
    void resume();
    /// Idempotent. Waiting tasks never start; running ones are signalled.
    void cancel(const std::string& job);
    /// Blocks until every submitted task is done or cancelled.
    void wait();

    JobState job_state(const std::string& job) const;
    TaskState task_state(const std::string& task) const;
    Progress progress(const std::string& job) const;
    std::vector<Result> results() const;
    std::vector<Dispatch> dispatch_log() const;
    /// Sequence number of the cancel() call that first cancelled `job`.
    std::optional<std::uint64_t> cancel_seq(const std::string& job) const;

private:
    struct Entry;
    struct JobInfo;

    void worker_loop();
    Entry* pick_locked();
    void finish_job_if_complete_locked(JobInfo& job);

    Backend& backend_;
    SchedulerOptions options_;
    Sink sink_;

    mutable std::mutex mu_;
    std::mutex sink_mu_;
    std::condition_variable work_cv_;
    std::condition_variable idle_cv_;
    std::condition_variable sink_cv_;
    std::uint64_t tickets_issued_ = 0;  // guarded by mu_
    std::uint64_t tickets_done_ = 0;    // guarded by sink_mu_
    bool paused_ = false;
    bool stopping_ = false;
    std::uint64_t seq_ = 0;
    std::uint64_t submit_counter_ = 0;
    std::map<std::string, std::unique_ptr<JobInfo>> jobs_;
    std::map<std::string, Entry*> tasks_;
    std::vector<std::unique_ptr<Entry>> entries_;
    std::vector<Result> results_;
    std::vector<Dispatch> log_;
    std::size_t outstanding_ = 0;
    std::vector<std::thread> workers_;
};

/// Reads a job file: {"id", "name", "priority", "tasks": [dir, ...] | "tasks_dir": dir}.
/// Relative paths resolve against the job file's directory; task.json supplies
/// ids, priorities and limits.
Job load_job(const std::filesystem::path& job_file);

}  // namespace forge::sched
