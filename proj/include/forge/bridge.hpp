#pragma once

// HTTP/JSON service over jobs, progress, results, traces, coverage and marks.
// Requests read the store under a shared lock; every mutation goes through a
// single writer thread, which also applies scheduler results.

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "forge/results.hpp"
#include "forge/sched.hpp"

namespace httplib {
class Server;
}

namespace forge::bridge {

/// An HTTP status plus message, rendered as {code, message}.
struct ApiError {
    int status = 400;
    std::string message;
};

struct Options {
    std::filesystem::path store_dir;
    std::size_t workers = 1;
    bool speculative = true;
};

struct TaskRecord {
    std::string key;   // t<N>, unique across the store
    std::string name;  // id from task.json
    std::string state = "pending";  // pending, running, done, cancelled
    int priority = 0;
    sched::ResourceLimits limits;
    std::vector<std::string> files;  // original files merged into cil.i
};

struct ResultRecord {
    std::string task;
    std::string name;
    std::string verdict;  // Safe, Unsafe, Unknown
    std::string reason;
    double cpu_seconds = 0;
    double wall_seconds = 0;
    std::int64_t peak_memory_bytes = 0;
    int attempts = 1;
    bool has_trace = false;
    bool has_coverage = false;
    std::string trace_error;
    results::Signature signature;
};

struct JobRecord {
    std::string id;
    std::string name;
    std::string author;
    std::string access = "private";  // private, shared
    std::string created_at;
    std::string origin;  // "", template:<name> or clone:<job>
    int priority = 0;
    std::string state = "pending";  // pending, running, done, cancelled
    std::vector<TaskRecord> tasks;
    std::vector<ResultRecord> results;  // append-only, in arrival order
    std::optional<double> started;      // steady seconds since service start
    std::optional<double> finished;
    std::size_t files_version = 1;
};

struct Store {
    std::size_t next_job = 1;
    std::size_t next_task = 1;
    std::size_t next_mark = 1;
    std::map<std::string, JobRecord> jobs;
    std::vector<std::string> job_order;
    std::map<std::string, results::Mark> marks;
    std::vector<results::Assessment> assessments;
};

nlohmann::json to_json(const Store& store);
Store store_from_json(const nlohmann::json& j);

class Service {
public:
    /// Loads store.json from the store directory when present. Jobs that were
    /// running when the store was last saved come back cancelled.
    Service(Options options, sched::Backend& backend);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void mount(httplib::Server& server);

    // The handlers behind the routes; each throws ApiError.
    nlohmann::json create_job(const nlohmann::json& body);
    nlohmann::json list_jobs(std::optional<std::size_t> since, std::optional<std::size_t> limit,
                             const std::string& access) const;
    nlohmann::json get_job(const std::string& id) const;
    nlohmann::json start_job(const std::string& id);
    nlohmann::json cancel_job(const std::string& id);
    nlohmann::json progress(const std::string& id) const;
    /// Blocks up to `wait_ms` for results past `since` unless the job is over.
    nlohmann::json job_results(const std::string& id, std::size_t since, std::optional<std::size_t> limit,
                               int wait_ms) const;
    nlohmann::json trace(const std::string& task) const;
    nlohmann::json task_source(const std::string& task, const std::string& file) const;
    nlohmann::json coverage(const std::string& id) const;
    nlohmann::json statistics(const std::string& id) const;
    nlohmann::json create_mark(const nlohmann::json& body);
    nlohmann::json list_marks() const;
    nlohmann::json get_mark(const std::string& id) const;
    nlohmann::json update_mark(const std::string& id, const nlohmann::json& body);
    nlohmann::json mark_associations(const std::string& id) const;
    nlohmann::json diff(const std::string& a, const std::string& b) const;

    /// Blocks until every started job has finished or been cancelled.
    void wait_idle();

private:
    using Op = std::function<nlohmann::json(Store&)>;

    nlohmann::json write(Op op);
    void post(Op op);
    void writer_loop();
    void save_locked() const;
    void on_result(const sched::Result& result);
    double now() const;

    const JobRecord& job_locked(const std::string& id) const;
    std::filesystem::path task_dir(const std::string& job, const std::string& key) const;
    std::pair<const JobRecord*, const TaskRecord*> find_task_locked(const std::string& key) const;

    Options options_;
    std::chrono::steady_clock::time_point epoch_;
    Store store_;
    mutable std::shared_mutex state_mu_;
    mutable std::condition_variable_any results_cv_;

    struct Pending {
        Op op;
        std::promise<nlohmann::json> done;
        bool wants_reply = false;
    };
    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::deque<std::unique_ptr<Pending>> queue_;
    bool stopping_ = false;
    std::thread writer_;

    std::unique_ptr<sched::Scheduler> scheduler_;
};

}  // namespace forge::bridge
