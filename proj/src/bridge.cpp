#include "forge/bridge.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"

#include "forge/error.hpp"
#include "forge/taskgen.hpp"

namespace forge::bridge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kOutputs[] = {"verdict.txt", "witness.graphml", "coverage.json", "backend.log"};

[[noreturn]] void fail(int status, std::string message) { throw ApiError{status, std::move(message)}; }

std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_atomic(const fs::path& p, const std::string& text) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        out.flush();
        if (!out) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
}

json limits_json(const sched::ResourceLimits& l) {
    return {{"cpu_seconds", l.cpu_seconds}, {"wall_seconds", l.wall_seconds}, {"memory_bytes", l.memory_bytes}};
}

sched::ResourceLimits limits_from(const json& j) {
    sched::ResourceLimits l;
    l.cpu_seconds = j.value("cpu_seconds", l.cpu_seconds);
    l.wall_seconds = j.value("wall_seconds", l.wall_seconds);
    l.memory_bytes = j.value("memory_bytes", l.memory_bytes);
    return l;
}

json task_json(const TaskRecord& t) {
    return {{"key", t.key}, {"name", t.name}, {"state", t.state}, {"priority", t.priority},
            {"limits", limits_json(t.limits)}, {"files", t.files}};
}

TaskRecord task_from(const json& j) {
    TaskRecord t;
    t.key = j.at("key").get<std::string>();
    t.name = j.at("name").get<std::string>();
    t.state = j.value("state", "pending");
    t.priority = j.value("priority", 0);
    t.limits = limits_from(j.value("limits", json::object()));
    t.files = j.value("files", std::vector<std::string>{});
    return t;
}

json result_json(const ResultRecord& r) {
    json j = {{"task", r.task},
              {"name", r.name},
              {"verdict", r.verdict},
              {"reason", r.reason},
              {"cpu_seconds", r.cpu_seconds},
              {"wall_seconds", r.wall_seconds},
              {"peak_memory_bytes", r.peak_memory_bytes},
              {"attempts", r.attempts},
              {"has_trace", r.has_trace},
              {"has_coverage", r.has_coverage},
              {"signature", results::to_json(r.signature)}};
    if (!r.trace_error.empty()) j["trace_error"] = r.trace_error;
    return j;
}

ResultRecord result_from(const json& j) {
    ResultRecord r;
    r.task = j.at("task").get<std::string>();
    r.name = j.value("name", "");
    r.verdict = j.at("verdict").get<std::string>();
    r.reason = j.value("reason", "");
    r.cpu_seconds = j.value("cpu_seconds", 0.0);
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.peak_memory_bytes = j.value("peak_memory_bytes", std::int64_t{0});
    r.attempts = j.value("attempts", 1);
    r.has_trace = j.value("has_trace", false);
    r.has_coverage = j.value("has_coverage", false);
    r.trace_error = j.value("trace_error", "");
    if (j.contains("signature")) r.signature = results::signature_from_json(j.at("signature"));
    return r;
}

json job_record_json(const JobRecord& job) {
    json tasks = json::array();
    for (const auto& t : job.tasks) tasks.push_back(task_json(t));
    json res = json::array();
    for (const auto& r : job.results) res.push_back(result_json(r));
    json j = {{"id", job.id},           {"name", job.name},       {"author", job.author},
              {"access", job.access},   {"created_at", job.created_at}, {"origin", job.origin},
              {"priority", job.priority}, {"state", job.state},   {"tasks", tasks},
              {"results", res},         {"files_version", job.files_version}};
    j["started"] = job.started ? json(*job.started) : json(nullptr);
    j["finished"] = job.finished ? json(*job.finished) : json(nullptr);
    return j;
}

JobRecord job_record_from(const json& j) {
    JobRecord job;
    job.id = j.at("id").get<std::string>();
    job.name = j.value("name", job.id);
    job.author = j.value("author", "");
    job.access = j.value("access", "private");
    job.created_at = j.value("created_at", "");
    job.origin = j.value("origin", "");
    job.priority = j.value("priority", 0);
    job.state = j.value("state", "pending");
    job.files_version = j.value("files_version", std::size_t{1});
    for (const auto& t : j.value("tasks", json::array())) job.tasks.push_back(task_from(t));
    for (const auto& r : j.value("results", json::array())) job.results.push_back(result_from(r));
    if (j.contains("started") && !j.at("started").is_null()) job.started = j.at("started").get<double>();
    if (j.contains("finished") && !j.at("finished").is_null()) job.finished = j.at("finished").get<double>();
    return job;
}

json assessment_json(const results::Assessment& a) {
    return {{"task", a.task}, {"mark", a.mark},
            {"mode", a.mode == results::AssessmentMode::Automatic ? "automatic" : "manual"}};
}

std::string false_alarm_reason(results::VerdictClass c) {
    auto s = std::string(results::to_string(c));
    auto colon = s.find(':');
    return colon == std::string::npos ? std::string{} : s.substr(colon + 1);
}

std::size_t job_number(const std::string& id) {
    try {
        return std::stoul(id.substr(1));
    } catch (const std::exception&) {
        return 0;
    }
}

const std::string* string_field(const json& body, const char* key) {
    if (!body.contains(key)) return nullptr;
    if (!body.at(key).is_string()) fail(400, std::string(key) + " must be a string");
    return body.at(key).get_ptr<const std::string*>();
}

}  // namespace

json to_json(const Store& s) {
    json jobs = json::array();
    for (const auto& id : s.job_order) jobs.push_back(job_record_json(s.jobs.at(id)));
    json marks = json::array();
    for (const auto& [_, m] : s.marks) marks.push_back(results::to_json(m));
    json assessments = json::array();
    for (const auto& a : s.assessments) assessments.push_back(assessment_json(a));
    return {{"next_job", s.next_job}, {"next_task", s.next_task}, {"next_mark", s.next_mark},
            {"jobs", jobs},           {"marks", marks},           {"assessments", assessments}};
}

Store store_from_json(const json& j) {
    Store s;
    s.next_job = j.value("next_job", std::size_t{1});
    s.next_task = j.value("next_task", std::size_t{1});
    s.next_mark = j.value("next_mark", std::size_t{1});
    for (const auto& jj : j.value("jobs", json::array())) {
        auto job = job_record_from(jj);
        s.job_order.push_back(job.id);
        s.jobs.emplace(job.id, std::move(job));
    }
    for (const auto& m : j.value("marks", json::array())) {
        auto mark = results::mark_from_json(m);
        s.marks.emplace(mark.id, std::move(mark));
    }
    for (const auto& a : j.value("assessments", json::array())) {
        s.assessments.push_back({a.at("task").get<std::string>(), a.at("mark").get<std::string>(),
                                 a.value("mode", "automatic") == "manual" ? results::AssessmentMode::Manual
                                                                          : results::AssessmentMode::Automatic});
    }
    return s;
}

Service::Service(Options options, sched::Backend& backend) : options_(std::move(options)) {
    fs::create_directories(options_.store_dir / "jobs");
    fs::create_directories(options_.store_dir / "traces");
    fs::create_directories(options_.store_dir / "coverage");
    fs::create_directories(options_.store_dir / "templates");
    auto path = options_.store_dir / "store.json";
    if (fs::exists(path)) {
        try {
            store_ = store_from_json(json::parse(read_file(path)));
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        for (auto& [_, job] : store_.jobs) {
            if (job.state != "running") continue;
            job.state = "cancelled";
            for (auto& t : job.tasks)
                if (t.state != "done") t.state = "cancelled";
        }
    }
    sched::SchedulerOptions so;
    so.workers = options_.workers;
    so.speculative = options_.speculative;
    scheduler_ = std::make_unique<sched::Scheduler>(backend, so, [this](const sched::Result& r) { on_result(r); });
    writer_ = std::thread([this] { writer_loop(); });
}

Service::~Service() {
    {
        std::shared_lock lock(state_mu_);
        for (const auto& [id, job] : store_.jobs)
            if (job.state == "running") scheduler_->cancel(id);
    }
    scheduler_.reset();
    {
        std::lock_guard lock(queue_mu_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    writer_.join();
}

double Service::now() const {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void Service::writer_loop() {
    for (;;) {
        std::unique_ptr<Pending> p;
        {
            std::unique_lock lock(queue_mu_);
            queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            p = std::move(queue_.front());
            queue_.pop_front();
        }
        json reply;
        std::exception_ptr error;
        {
            std::unique_lock lock(state_mu_);
            try {
                reply = p->op(store_);
                save_locked();
            } catch (...) {
                error = std::current_exception();
            }
        }
        results_cv_.notify_all();
        if (p->wants_reply) {
            if (error)
                p->done.set_exception(error);
            else
                p->done.set_value(std::move(reply));
        }
    }
}

json Service::write(Op op) {
    auto p = std::make_unique<Pending>();
    p->op = std::move(op);
    p->wants_reply = true;
    auto fut = p->done.get_future();
    {
        std::lock_guard lock(queue_mu_);
        queue_.push_back(std::move(p));
    }
    queue_cv_.notify_one();
    return fut.get();
}

void Service::post(Op op) {
    auto p = std::make_unique<Pending>();
    p->op = std::move(op);
    {
        std::lock_guard lock(queue_mu_);
        queue_.push_back(std::move(p));
    }
    queue_cv_.notify_one();
}

void Service::save_locked() const { write_atomic(options_.store_dir / "store.json", to_json(store_).dump(1)); }

const JobRecord& Service::job_locked(const std::string& id) const {
    auto it = store_.jobs.find(id);
    if (it == store_.jobs.end()) fail(404, "unknown job " + id);
    return it->second;
}

fs::path Service::task_dir(const std::string& job, const std::string& key) const {
    return options_.store_dir / "jobs" / job / "tasks" / key;
}

std::pair<const JobRecord*, const TaskRecord*> Service::find_task_locked(const std::string& key) const {
    for (const auto& [_, job] : store_.jobs)
        for (const auto& t : job.tasks)
            if (t.key == key) return {&job, &t};
    fail(404, "unknown task " + key);
}

// Jobs ----------------------------------------------------------------------

json Service::create_job(const json& request) {
    if (!request.is_object()) fail(400, "body must be an object");
    json body = request;
    if (const auto* tmpl = string_field(request, "template")) {
        auto path = options_.store_dir / "templates" / (*tmpl + ".json");
        if (tmpl->find('/') != std::string::npos || !fs::exists(path)) fail(404, "unknown template " + *tmpl);
        json t;
        try {
            t = json::parse(read_file(path));
        } catch (const json::exception& e) {
            fail(400, "template " + *tmpl + ": " + e.what());
        }
        if (!t.is_object()) fail(400, "template " + *tmpl + " is not an object");
        auto base = path.parent_path();
        if (t.contains("tasks_dir") && t["tasks_dir"].is_string())
            t["tasks_dir"] = (base / t["tasks_dir"].get<std::string>()).string();
        if (t.contains("tasks") && t["tasks"].is_array())
            for (auto& d : t["tasks"])
                if (d.is_string()) d = (base / d.get<std::string>()).string();
        for (auto& [k, v] : request.items())
            if (k != "template") t[k] = v;
        body = t;
        body["origin"] = "template:" + *tmpl;
    }
    int sources = body.contains("tasks_dir") + body.contains("tasks") + body.contains("clone_of");
    if (sources != 1) fail(400, "exactly one of tasks_dir, tasks, template or clone_of is required");
    const auto* name = string_field(body, "name");
    const auto* author = string_field(body, "author");
    const auto* access = string_field(body, "access");
    if (access && *access != "private" && *access != "shared") fail(400, "access must be private or shared");
    if (body.contains("priority") && !body.at("priority").is_number_integer()) fail(400, "priority must be an integer");

    std::vector<fs::path> dirs;
    if (const auto* td = string_field(body, "tasks_dir")) {
        if (!fs::is_directory(*td)) fail(400, "not a directory: " + *td);
        for (const auto& entry : fs::directory_iterator(*td))
            if (fs::exists(entry.path() / "task.json")) dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());
    } else if (body.contains("tasks")) {
        if (!body.at("tasks").is_array()) fail(400, "tasks must be an array of directories");
        for (const auto& d : body.at("tasks")) {
            if (!d.is_string()) fail(400, "tasks must be an array of directories");
            dirs.emplace_back(d.get<std::string>());
        }
    } else if (!body.at("clone_of").is_string()) {
        fail(400, "clone_of must be a string");
    }

    return write([this, body, dirs, name = name ? *name : std::string{}, author = author ? *author : std::string{},
                  access = access ? *access : std::string{}](Store& s) -> json {
        JobRecord job;
        job.id = "j" + std::to_string(s.next_job);
        job.created_at = iso_now();
        job.author = author;
        job.origin = body.value("origin", "");
        std::vector<std::pair<fs::path, std::string>> sources;  // dir, origin name
        if (body.contains("clone_of")) {
            auto src_id = body.at("clone_of").get<std::string>();
            const auto& src = job_locked(src_id);
            job.origin = "clone:" + src_id;
            job.name = src.name + " (copy)";
            job.priority = src.priority;
            job.access = src.access;
            if (job.author.empty()) job.author = src.author;
            for (const auto& t : src.tasks) sources.emplace_back(task_dir(src_id, t.key), t.name);
        } else {
            for (const auto& d : dirs) sources.emplace_back(d, "");
        }
        if (!name.empty()) job.name = name;
        if (job.name.empty()) job.name = job.id;
        if (!access.empty()) job.access = access;
        if (body.contains("priority")) job.priority = body.at("priority").get<int>();

        std::size_t next_task = s.next_task;
        auto root = options_.store_dir / "jobs" / job.id / "tasks";
        try {
            for (const auto& [dir, _] : sources) {
                TaskRecord t;
                t.key = "t" + std::to_string(next_task++);
                auto spec = taskgen::read_task(dir);
                t.name = spec.id;
                t.priority = spec.priority;
                t.limits.cpu_seconds = static_cast<double>(spec.limits.cpu_seconds);
                t.limits.wall_seconds = static_cast<double>(spec.limits.wall_seconds);
                t.limits.memory_bytes = spec.limits.memory_bytes;
                auto dst = root / t.key;
                fs::create_directories(dst);
                fs::copy(dir, dst, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
                for (const char* f : kOutputs) fs::remove(dst / f);
                for (const auto& [file, _] : results::split_merged(read_file(dst / "cil.i"), "cil.i"))
                    t.files.push_back(file);
                job.tasks.push_back(std::move(t));
            }
        } catch (const ApiError&) {
            fs::remove_all(options_.store_dir / "jobs" / job.id);
            throw;
        } catch (const std::exception& e) {
            fs::remove_all(options_.store_dir / "jobs" / job.id);
            fail(400, e.what());
        }
        s.next_task = next_task;
        ++s.next_job;
        s.job_order.push_back(job.id);
        auto out = job_record_json(job);
        s.jobs.emplace(job.id, std::move(job));
        return out;
    });
}

json Service::list_jobs(std::optional<std::size_t> since, std::optional<std::size_t> limit,
                        const std::string& access) const {
    std::shared_lock lock(state_mu_);
    json jobs = json::array();
    std::size_t cursor = since.value_or(0);
    for (const auto& id : store_.job_order) {
        if (limit && jobs.size() >= *limit) break;
        auto n = job_number(id);
        if (n <= since.value_or(0)) continue;
        const auto& job = store_.jobs.at(id);
        if (!access.empty() && job.access != access) continue;
        std::map<std::string, std::size_t> verdicts;
        for (const auto& r : job.results) ++verdicts[r.verdict];
        jobs.push_back({{"id", job.id},
                        {"name", job.name},
                        {"author", job.author},
                        {"access", job.access},
                        {"created_at", job.created_at},
                        {"state", job.state},
                        {"tasks", job.tasks.size()},
                        {"verdicts", verdicts}});
        cursor = n;
    }
    return {{"jobs", jobs}, {"next", cursor}};
}

json Service::get_job(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    const auto& job = job_locked(id);
    auto j = job_record_json(job);
    j.erase("results");
    std::map<std::string, std::size_t> verdicts;
    for (const auto& r : job.results) ++verdicts[r.verdict];
    j["verdicts"] = verdicts;
    if (job.state == "running") {
        for (auto& t : j["tasks"]) {
            if (t["state"] != "pending") continue;
            try {
                t["state"] = std::string(sched::to_string(scheduler_->task_state(t["key"].get<std::string>())));
            } catch (const SchedulerError&) {
            }
        }
    }
    return j;
}

json Service::start_job(const std::string& id) {
    return write([this, id](Store& s) -> json {
        auto it = s.jobs.find(id);
        if (it == s.jobs.end()) fail(404, "unknown job " + id);
        auto& job = it->second;
        if (job.state != "pending") fail(409, "job " + id + " is " + job.state);
        job.state = "running";
        job.started = now();
        if (job.tasks.empty()) {
            job.state = "done";
            job.finished = job.started;
            return {{"id", id}, {"state", job.state}};
        }
        sched::Job sj;
        sj.id = job.id;
        sj.name = job.name;
        sj.priority = job.priority;
        for (const auto& t : job.tasks) {
            sched::Task task;
            task.id = t.key;
            task.job = job.id;
            task.priority = t.priority;
            task.dir = fs::absolute(task_dir(job.id, t.key));
            task.limits = t.limits;
            sj.tasks.push_back(std::move(task));
        }
        scheduler_->submit(std::move(sj));
        return {{"id", id}, {"state", job.state}};
    });
}

json Service::cancel_job(const std::string& id) {
    return write([this, id](Store& s) -> json {
        auto it = s.jobs.find(id);
        if (it == s.jobs.end()) fail(404, "unknown job " + id);
        auto& job = it->second;
        if (job.state == "running") scheduler_->cancel(id);
        if (job.state == "pending" || job.state == "running") {
            job.state = "cancelled";
            job.finished = now();
            for (auto& t : job.tasks)
                if (t.state != "done") t.state = "cancelled";
        }
        return {{"id", id}, {"state", job.state}};
    });
}

json Service::progress(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    const auto& job = job_locked(id);
    std::vector<double> walls;
    for (const auto& r : job.results) walls.push_back(r.wall_seconds);
    double elapsed = 0;
    if (job.started) elapsed = std::max(0.0, job.finished.value_or(now()) - *job.started);
    auto p = sched::estimate_progress(job.tasks.size(), walls, elapsed);
    json j = {{"id", id}, {"state", job.state}, {"solved", p.solved}, {"total", p.total},
              {"elapsed_seconds", p.elapsed_seconds}};
    if (job.state == "done")
        j["remaining_seconds"] = 0.0;
    else
        j["remaining_seconds"] = p.remaining_seconds ? json(*p.remaining_seconds) : json(nullptr);
    return j;
}

json Service::job_results(const std::string& id, std::size_t since, std::optional<std::size_t> limit,
                          int wait_ms) const {
    std::shared_lock lock(state_mu_);
    job_locked(id);
    auto ready = [&] {
        const auto& job = store_.jobs.at(id);
        return job.results.size() > since || job.state == "done" || job.state == "cancelled" ||
               job.state == "pending";
    };
    if (wait_ms > 0) results_cv_.wait_for(lock, std::chrono::milliseconds(wait_ms), ready);
    const auto& job = store_.jobs.at(id);
    std::map<std::string, std::vector<std::string>> marks_of;
    for (const auto& a : store_.assessments) marks_of[a.task].push_back(a.mark);
    json out = json::array();
    std::size_t i = since;
    for (; i < job.results.size(); ++i) {
        if (limit && out.size() >= *limit) break;
        auto r = result_json(job.results[i]);
        r["seq"] = i;
        r["marks"] = marks_of[job.results[i].task];
        out.push_back(r);
    }
    bool complete = (job.state == "done" || job.state == "cancelled") && i >= job.results.size();
    return {{"id", id}, {"state", job.state}, {"results", out}, {"next", i}, {"complete", complete}};
}

void Service::wait_idle() {
    std::shared_lock lock(state_mu_);
    results_cv_.wait(lock, [&] {
        return std::none_of(store_.jobs.begin(), store_.jobs.end(),
                            [](const auto& kv) { return kv.second.state == "running"; });
    });
}

// Scheduler results ---------------------------------------------------------

void Service::on_result(const sched::Result& r) {
    ResultRecord rec;
    rec.task = r.task.id;
    rec.verdict = std::string(sched::to_string(r.verdict.kind));
    rec.reason = r.verdict.reason;
    rec.cpu_seconds = r.measurement.cpu_seconds;
    rec.wall_seconds = r.measurement.wall_seconds;
    rec.peak_memory_bytes = r.measurement.peak_memory_bytes;
    rec.attempts = r.attempts;

    // Trace reconstruction reads only the task directory, so it runs here
    // rather than on the writer thread.
    if (r.verdict.kind == sched::VerdictKind::Unsafe && r.verdict.witness) {
        try {
            auto merged = read_file(r.task.dir / "cil.i");
            auto spec = taskgen::read_task(r.task.dir);
            auto trace = results::parse_witness(*r.verdict.witness, merged, "cil.i");
            auto files = results::split_merged(merged, "cil.i");
            std::map<std::string, std::string> models;
            for (const auto& m : spec.models)
                if (auto it = files.find(m); it != files.end()) models.emplace(m, it->second);
            trace = results::annotate_relevance(std::move(trace), models);
            rec.signature = results::mark_signature(trace);
            write_atomic(options_.store_dir / "traces" / (rec.task + ".json"), results::to_json(trace).dump(1));
            rec.has_trace = true;
        } catch (const std::exception& e) {
            rec.trace_error = e.what();
        }
    } else if (r.verdict.kind == sched::VerdictKind::Unknown) {
        rec.signature = results::failure_signature(r.verdict.reason);
    }
    if (r.verdict.coverage) {
        try {
            write_atomic(options_.store_dir / "coverage" / (rec.task + ".json"), r.verdict.coverage->dump(1));
            rec.has_coverage = true;
        } catch (const std::exception&) {
        }
    }

    post([this, rec = std::move(rec), job_id = r.task.job](Store& s) -> json {
        auto it = s.jobs.find(job_id);
        if (it == s.jobs.end() || it->second.state != "running") return nullptr;
        auto& job = it->second;
        auto t = std::find_if(job.tasks.begin(), job.tasks.end(), [&](const auto& t) { return t.key == rec.task; });
        if (t == job.tasks.end() || t->state == "done") return nullptr;
        t->state = "done";
        ResultRecord stored = rec;
        stored.name = t->name;
        job.results.push_back(stored);
        if (!stored.signature.empty()) {
            std::vector<results::Mark> marks;
            for (const auto& [_, m] : s.marks) marks.push_back(m);
            for (auto& a : results::auto_assess(stored.task, stored.signature, marks)) s.assessments.push_back(a);
        }
        if (job.results.size() == job.tasks.size()) {
            job.state = "done";
            job.finished = now();
        }
        return nullptr;
    });
}

// Traces, sources, coverage, statistics ---------------------------------------

json Service::trace(const std::string& key) const {
    std::shared_lock lock(state_mu_);
    auto [job, task] = find_task_locked(key);
    auto path = options_.store_dir / "traces" / (key + ".json");
    if (!fs::exists(path)) fail(404, "task " + key + " has no error trace");
    auto j = json::parse(read_file(path));
    j["task"] = key;
    j["name"] = task->name;
    j["job"] = job->id;
    return j;
}

json Service::task_source(const std::string& key, const std::string& file) const {
    std::shared_lock lock(state_mu_);
    auto [job, task] = find_task_locked(key);
    auto files = results::split_merged(read_file(task_dir(job->id, key) / "cil.i"), "cil.i");
    if (file.empty()) {
        json names = json::array();
        for (const auto& [f, _] : files) names.push_back(f);
        return {{"task", key}, {"files", names}};
    }
    auto it = files.find(file);
    if (it == files.end()) fail(404, "task " + key + " has no file " + file);
    return {{"task", key}, {"file", file}, {"text", it->second}};
}

json Service::coverage(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    const auto& job = job_locked(id);
    std::vector<json> reports;
    std::map<std::string, results::FileTotals> totals;
    for (const auto& t : job.tasks) {
        auto texts = results::split_merged(read_file(task_dir(id, t.key) / "cil.i"), "cil.i");
        for (const auto& [f, ft] : results::file_totals(texts)) {
            auto& cur = totals[f];
            cur.lines = std::max(cur.lines, ft.lines);
            cur.functions = std::max(cur.functions, ft.functions);
        }
        auto path = options_.store_dir / "coverage" / (t.key + ".json");
        if (fs::exists(path)) reports.push_back(json::parse(read_file(path)));
    }
    auto report = results::merge_coverage(reports, totals);
    auto j = results::to_json(report);
    const auto& root = report.directories.count("") ? report.directories.at("") : results::Counts{};
    j["id"] = id;
    j["reports"] = reports.size();
    j["lines_percent"] = results::coverage_percent(root.lines_covered, root.lines_total);
    j["functions_percent"] = results::coverage_percent(root.functions_covered, root.functions_total);
    return j;
}

json Service::statistics(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    const auto& job = job_locked(id);
    std::map<std::string, std::string> reason_of;
    for (const auto& a : store_.assessments) {
        auto m = store_.marks.find(a.mark);
        if (m == store_.marks.end() || reason_of.count(a.task)) continue;
        auto reason = false_alarm_reason(m->second.current().verdict_class);
        if (!reason.empty()) reason_of[a.task] = reason;
    }
    std::vector<results::VerdictRecord> records;
    for (const auto& r : job.results) {
        results::VerdictRecord v{r.verdict, r.verdict == "Unknown" ? r.reason : "", ""};
        if (r.verdict == "Unsafe" && reason_of.count(r.task)) v.false_alarm_reason = reason_of[r.task];
        records.push_back(v);
    }
    auto j = results::to_json(results::verdict_statistics(records));
    j["id"] = id;
    return j;
}

// Marks -----------------------------------------------------------------------

namespace {

results::MarkRevision revision_from(const json& body, results::MarkRevision rev) {
    try {
        if (const auto* c = string_field(body, "verdict_class")) rev.verdict_class = results::verdict_class_from(*c);
    } catch (const ConfigError& e) {
        fail(400, e.what());
    }
    if (const auto* d = string_field(body, "description")) rev.description = *d;
    if (const auto* a = string_field(body, "author")) rev.author = *a;
    if (body.contains("tags")) {
        if (!body.at("tags").is_array()) fail(400, "tags must be an array of strings");
        rev.tags.clear();
        for (const auto& t : body.at("tags")) {
            if (!t.is_string()) fail(400, "tags must be an array of strings");
            rev.tags.push_back(t.get<std::string>());
        }
    }
    if (rev.description.empty()) fail(400, "description is required");
    return rev;
}

}  // namespace

json Service::create_mark(const json& body) {
    if (!body.is_object()) fail(400, "body must be an object");
    const auto* task = string_field(body, "task");
    if (!task) fail(400, "task is required");
    if (!body.contains("verdict_class")) fail(400, "verdict_class is required");
    auto rev = revision_from(body, {});
    return write([this, key = *task, rev](Store& s) -> json {
        auto [job, t] = find_task_locked(key);
        auto r = std::find_if(job->results.begin(), job->results.end(), [&](const auto& r) { return r.task == key; });
        if (r == job->results.end()) fail(409, "task " + key + " has no result");
        if (r->signature.empty()) fail(400, "task " + key + " has no signature to mark");
        results::Mark mark;
        mark.id = "m" + std::to_string(s.next_mark++);
        mark.signature = r->signature;
        mark.history.push_back(rev);
        mark.history.back().version = 1;
        json assoc = json::array();
        for (const auto& [_, j] : s.jobs) {
            for (const auto& res : j.results) {
                for (auto& a : results::auto_assess(res.task, res.signature, {mark})) {
                    assoc.push_back(assessment_json(a));
                    s.assessments.push_back(a);
                }
            }
        }
        auto out = results::to_json(mark);
        out["associations"] = assoc;
        s.marks.emplace(mark.id, std::move(mark));
        return out;
    });
}

json Service::list_marks() const {
    std::shared_lock lock(state_mu_);
    json out = json::array();
    for (const auto& [_, m] : store_.marks) out.push_back(results::to_json(m));
    return {{"marks", out}};
}

json Service::get_mark(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    auto it = store_.marks.find(id);
    if (it == store_.marks.end()) fail(404, "unknown mark " + id);
    return results::to_json(it->second);
}

json Service::update_mark(const std::string& id, const json& body) {
    if (!body.is_object()) fail(400, "body must be an object");
    return write([id, body](Store& s) -> json {
        auto it = s.marks.find(id);
        if (it == s.marks.end()) fail(404, "unknown mark " + id);
        auto rev = revision_from(body, it->second.current());
        rev.version = it->second.current().version + 1;
        it->second.history.push_back(rev);
        return results::to_json(it->second);
    });
}

json Service::mark_associations(const std::string& id) const {
    std::shared_lock lock(state_mu_);
    if (!store_.marks.count(id)) fail(404, "unknown mark " + id);
    json out = json::array();
    for (const auto& a : store_.assessments) {
        if (a.mark != id) continue;
        auto j = assessment_json(a);
        for (const auto& [jid, job] : store_.jobs)
            for (const auto& t : job.tasks)
                if (t.key == a.task) {
                    j["job"] = jid;
                    j["name"] = t.name;
                }
        out.push_back(j);
    }
    return {{"mark", id}, {"associations", out}};
}

// Diff ------------------------------------------------------------------------

json Service::diff(const std::string& a, const std::string& b) const {
    std::shared_lock lock(state_mu_);
    const auto& ja = job_locked(a);
    const auto& jb = job_locked(b);
    auto files_of = [](const JobRecord& j) {
        std::set<std::string> out;
        for (const auto& t : j.tasks) out.insert(t.files.begin(), t.files.end());
        return out;
    };
    auto verdicts_of = [](const JobRecord& j) {
        std::map<std::string, std::string> out;
        for (const auto& t : j.tasks) out[t.name] = t.state == "cancelled" ? "cancelled" : "pending";
        for (const auto& r : j.results) out[r.name] = r.reason.empty() ? r.verdict : r.verdict + " (" + r.reason + ")";
        return out;
    };
    auto only = [](const std::set<std::string>& x, const std::set<std::string>& y) {
        json out = json::array();
        for (const auto& e : x)
            if (!y.count(e)) out.push_back(e);
        return out;
    };
    auto names = [](const std::map<std::string, std::string>& m) {
        std::set<std::string> out;
        for (const auto& [k, _] : m) out.insert(k);
        return out;
    };
    auto fa = files_of(ja), fb = files_of(jb);
    auto va = verdicts_of(ja), vb = verdicts_of(jb);
    json changed = json::array();
    for (const auto& [name, v] : va)
        if (auto it = vb.find(name); it != vb.end() && it->second != v)
            changed.push_back({{"task", name}, {"a", v}, {"b", it->second}});
    return {{"a", a},
            {"b", b},
            {"files", {{"only_in_a", only(fa, fb)}, {"only_in_b", only(fb, fa)}}},
            {"tasks", {{"only_in_a", only(names(va), names(vb))}, {"only_in_b", only(names(vb), names(va))}}},
            {"verdicts", changed}};
}

// HTTP ------------------------------------------------------------------------

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

template <typename F>
void handle(httplib::Response& res, F&& f) {
    try {
        send(res, 200, f());
    } catch (const ApiError& e) {
        send(res, e.status, {{"code", e.status}, {"message", e.message}});
    } catch (const json::exception& e) {
        send(res, 400, {{"code", 400}, {"message", e.what()}});
    } catch (const std::exception& e) {
        send(res, 500, {{"code", 500}, {"message", e.what()}});
    }
}

json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        fail(400, std::string("malformed JSON: ") + e.what());
    }
}

std::optional<std::size_t> size_param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    auto v = req.get_param_value(name);
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); }))
        fail(400, std::string(name) + " must be a non-negative integer");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        fail(400, std::string(name) + " is out of range");
    }
}

}  // namespace

void Service::mount(httplib::Server& server) {
    server.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return create_job(body_of(req)); });
        if (res.status == 200) res.status = 201;
    });
    server.Get("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] {
            auto access = req.has_param("access") ? req.get_param_value("access") : std::string{};
            return list_jobs(size_param(req, "since"), size_param(req, "limit"), access);
        });
    });
    server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return get_job(req.matches[1]); });
    });
    server.Post(R"(/jobs/([^/]+)/start)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return start_job(req.matches[1]); });
    });
    server.Post(R"(/jobs/([^/]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return cancel_job(req.matches[1]); });
    });
    server.Get(R"(/jobs/([^/]+)/progress)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return progress(req.matches[1]); });
    });
    server.Get(R"(/jobs/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] {
            auto wait = size_param(req, "wait").value_or(0);
            return job_results(req.matches[1], size_param(req, "since").value_or(0), size_param(req, "limit"),
                               static_cast<int>(std::min<std::size_t>(wait, 60000)));
        });
    });
    server.Get(R"(/jobs/([^/]+)/coverage)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return coverage(req.matches[1]); });
    });
    server.Get(R"(/jobs/([^/]+)/statistics)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return statistics(req.matches[1]); });
    });
    server.Get(R"(/jobs/([^/]+)/diff/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return diff(req.matches[1], req.matches[2]); });
    });
    server.Get(R"(/tasks/([^/]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return trace(req.matches[1]); });
    });
    server.Get(R"(/tasks/([^/]+)/source)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] {
            return task_source(req.matches[1], req.has_param("file") ? req.get_param_value("file") : "");
        });
    });
    server.Post("/marks", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return create_mark(body_of(req)); });
        if (res.status == 200) res.status = 201;
    });
    server.Get("/marks", [this](const httplib::Request&, httplib::Response& res) {
        handle(res, [&] { return list_marks(); });
    });
    server.Get(R"(/marks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return get_mark(req.matches[1]); });
    });
    server.Put(R"(/marks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return update_mark(req.matches[1], body_of(req)); });
    });
    server.Get(R"(/marks/([^/]+)/associations)", [this](const httplib::Request& req, httplib::Response& res) {
        handle(res, [&] { return mark_associations(req.matches[1]); });
    });
}

}  // namespace forge::bridge
