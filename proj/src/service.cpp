#include "spatext/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <random>

#include <httplib.h>

#include "spatext/data.hpp"
#include "spatext/image.hpp"

namespace spatext {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

// --- registry -----------------------------------------------------------------

CheckpointRegistry::CheckpointRegistry(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("checkpoint directory not found: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".ckpt") continue;
        entries_[e.path().stem().string()] = Entry{e.path(), read_checkpoint_header(e.path()), nullptr};
    }
}

void CheckpointRegistry::add(const std::string& id, std::shared_ptr<const ModelBundle> bundle) {
    std::lock_guard lock(mu_);
    entries_[id] = Entry{{}, bundle->header(), std::move(bundle)};
}

bool CheckpointRegistry::contains(const std::string& id) const {
    std::lock_guard lock(mu_);
    return entries_.count(id) != 0;
}

std::shared_ptr<const ModelBundle> CheckpointRegistry::get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const Entry& e = entries_.at(id);
    if (!e.bundle) e.bundle = std::make_shared<const ModelBundle>(load_checkpoint(e.path));
    return e.bundle;
}

nlohmann::json CheckpointRegistry::list() const {
    std::lock_guard lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, e] : entries_) {
        out.push_back({{"id", id},
                       {"space", e.header.at("space")},
                       {"resolution", e.header.at("resolution")},
                       {"d_embed", e.header.at("d_embed")},
                       {"cond", e.header.at("cond")},
                       {"fingerprint", e.header.at("fingerprint")}});
    }
    return out;
}

// --- jobs ---------------------------------------------------------------------

std::string to_string(JobState s) {
    switch (s) {
        case JobState::Queued: return "QUEUED";
        case JobState::Running: return "RUNNING";
        case JobState::Done: return "DONE";
        case JobState::Failed: return "FAILED";
    }
    return "FAILED";
}

JobState parse_job_state(const std::string& s) {
    if (s == "QUEUED") return JobState::Queued;
    if (s == "RUNNING") return JobState::Running;
    if (s == "DONE") return JobState::Done;
    if (s == "FAILED") return JobState::Failed;
    throw ValidationError("unknown job state '" + s + "'");
}

nlohmann::json GenerationJob::to_json() const {
    nlohmann::json j = {{"id", id},
                        {"state", to_string(state)},
                        {"checkpoint", checkpoint},
                        {"seed", seed},
                        {"steps", steps},
                        {"guidance", guidance_to_json(guidance)},
                        {"scene", scene_to_json(scene)},
                        {"created_at", created_at},
                        {"started_at", started_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(started_at)},
                        {"finished_at", finished_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished_at)},
                        {"progress", {{"done", progress_done}, {"total", progress_total}}}};
    j["error"] = state == JobState::Failed ? nlohmann::json(error) : nlohmann::json(nullptr);
    j["result"] = state == JobState::Done ? nlohmann::json("/api/v1/jobs/" + id + "/image") : nlohmann::json(nullptr);
    return j;
}

GenerationJob GenerationJob::from_json(const nlohmann::json& j) {
    GenerationJob job;
    job.id = j.at("id").get<std::string>();
    job.state = parse_job_state(j.at("state").get<std::string>());
    job.checkpoint = j.at("checkpoint").get<std::string>();
    job.seed = j.at("seed").get<std::uint64_t>();
    job.steps = j.value("steps", 0);
    job.guidance = guidance_from_json(j.at("guidance"));
    job.scene = scene_from_json(j.at("scene"));
    job.created_at = j.value("created_at", std::string());
    if (j.contains("started_at") && j["started_at"].is_string()) job.started_at = j["started_at"];
    if (j.contains("finished_at") && j["finished_at"].is_string()) job.finished_at = j["finished_at"];
    if (j.contains("error") && j["error"].is_string()) job.error = j["error"];
    job.progress_done = j.at("progress").value("done", 0);
    job.progress_total = j.at("progress").value("total", 0);
    return job;
}

// --- service ------------------------------------------------------------------

namespace {

ServiceResponse error_response(int status, const std::string& message) { return {status, {{"error", message}}, {}}; }

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

GenerationService::GenerationService(ServiceConfig config, std::shared_ptr<CheckpointRegistry> registry)
    : config_(std::move(config)), registry_(std::move(registry)) {
    if (config_.workers < 1) throw ValidationError("workers must be positive");
    std::filesystem::create_directories(config_.store_dir / "jobs");
    id_salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();

    // Reload the store; queued jobs resume in creation order.
    std::vector<GenerationJob> pending;
    for (const auto& e : std::filesystem::directory_iterator(config_.store_dir / "jobs")) {
        if (e.path().extension() != ".json") continue;
        try {
            std::ifstream f(e.path());
            GenerationJob job = GenerationJob::from_json(nlohmann::json::parse(f));
            if (job.state == JobState::Running) {
                job.state = JobState::Failed;
                job.error = "interrupted by a service restart";
                job.finished_at = utc_timestamp();
                persist(job);
            }
            if (job.state == JobState::Queued) pending.push_back(job);
            jobs_[job.id] = std::move(job);
        } catch (const std::exception&) {
            // A torn or foreign file; not ours to delete.
        }
    }
    std::sort(pending.begin(), pending.end(), [](const GenerationJob& a, const GenerationJob& b) {
        return std::tie(a.created_at, a.id) < std::tie(b.created_at, b.id);
    });
    for (const auto& job : pending) queue_.push_back(job.id);

    for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

GenerationService::~GenerationService() { shutdown(); }

void GenerationService::shutdown() {
    {
        std::lock_guard lock(mu_);
        if (stopping_) return;
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
}

std::filesystem::path GenerationService::record_path(const std::string& id) const {
    return config_.store_dir / "jobs" / (id + ".json");
}

std::filesystem::path GenerationService::image_path(const std::string& id) const {
    return config_.store_dir / "jobs" / (id + ".png");
}

void GenerationService::persist(const GenerationJob& job) const { write_atomic(record_path(job.id), job.to_json().dump()); }

std::string GenerationService::new_id() {
    std::uint64_t z = id_salt_ + 0x9E3779B97F4A7C15ull * ++counter_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(z));
    return buf;
}

ServiceResponse GenerationService::submit(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        return error_response(400, std::string("malformed scene document: ") + e.what());
    }
    GenerationJob job;
    try {
        job.scene = scene_from_json(doc);
        job.guidance = doc.contains("guidance") ? guidance_from_json(doc["guidance"]) : GuidanceSpec::fast(3.0);
        if (!doc.contains("checkpoint") || !doc["checkpoint"].is_string()) {
            throw ValidationError("request needs a string 'checkpoint'");
        }
        job.checkpoint = doc["checkpoint"].get<std::string>();
        if (doc.contains("seed")) {
            if (!doc["seed"].is_number_unsigned()) throw ValidationError("seed must be a non-negative integer");
            job.seed = doc["seed"].get<std::uint64_t>();
        }
        if (doc.contains("steps")) {
            if (!doc["steps"].is_number_unsigned()) throw ValidationError("steps must be a positive integer");
            job.steps = doc["steps"].get<int>();
        }
    } catch (const ValidationError& e) {
        return error_response(400, e.what());
    } catch (const nlohmann::json::exception& e) {
        return error_response(400, std::string("malformed request: ") + e.what());
    }
    if (!registry_->contains(job.checkpoint)) return error_response(404, "unknown checkpoint '" + job.checkpoint + "'");
    try {
        const auto bundle = registry_->get(job.checkpoint);
        if (job.steps < 0 || job.steps > bundle->schedule.steps) {
            throw ValidationError("steps must be in [1, " + std::to_string(bundle->schedule.steps) + "]");
        }
        GenerationOptions opts;
        opts.guidance = job.guidance;
        prepare_conditions(*bundle, ToyEmbedder(bundle->embedder), job.scene, opts);
    } catch (const ValidationError& e) {
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }

    job.created_at = utc_timestamp();
    {
        std::lock_guard lock(mu_);
        job.id = new_id();
        persist(job);
        jobs_[job.id] = job;
        queue_.push_back(job.id);
    }
    cv_.notify_one();
    return {202, {{"job_id", job.id}}, {}};
}

ServiceResponse GenerationService::poll(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return error_response(404, "unknown job '" + id + "'");
    return {200, it->second.to_json(), {}};
}

ServiceResponse GenerationService::fetch_result(const std::string& id) const {
    {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return error_response(404, "unknown job '" + id + "'");
        const GenerationJob& job = it->second;
        if (job.state == JobState::Failed) return {409, {{"error", job.error}, {"state", "FAILED"}}, {}};
        if (job.state != JobState::Done) {
            return {409, {{"error", "job is " + to_string(job.state)}, {"state", to_string(job.state)}}, {}};
        }
    }
    std::ifstream f(image_path(id), std::ios::binary);
    if (!f) return error_response(500, "result image missing from the store");
    ServiceResponse r;
    r.png.assign(std::istreambuf_iterator<char>(f), {});
    return r;
}

ServiceResponse GenerationService::list_checkpoints() const { return {200, registry_->list(), {}}; }

std::optional<GenerationJob> GenerationService::job(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void GenerationService::wait_idle() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void GenerationService::worker_loop() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            ++running_;
            GenerationJob& job = jobs_.at(id);
            job.state = JobState::Running;
            job.started_at = utc_timestamp();
            persist(job);
        }
        run_job(id);
        {
            std::lock_guard lock(mu_);
            --running_;
        }
        idle_cv_.notify_all();
    }
}

void GenerationService::run_job(const std::string& id) {
    GenerationJob snapshot;
    {
        std::lock_guard lock(mu_);
        snapshot = jobs_.at(id);
    }
    std::string error;
    try {
        const auto bundle = registry_->get(snapshot.checkpoint);
        GenerationOptions opts;
        opts.guidance = snapshot.guidance;
        opts.steps = snapshot.steps;
        opts.step_progress = [this, &id](int done, int total) {
            std::lock_guard lock(mu_);
            GenerationJob& job = jobs_.at(id);
            job.progress_done = done;
            job.progress_total = total;
        };
        const std::vector<Image> images = generate_images(*bundle, {snapshot.scene}, {snapshot.seed}, opts, 1);
        const std::vector<std::uint8_t> png = encode_png(images.at(0));
        write_atomic(image_path(id), std::string(png.begin(), png.end()));
    } catch (const std::exception& e) {
        error = e.what();
        if (error.empty()) error = "generation failed";
    }
    std::lock_guard lock(mu_);
    GenerationJob& job = jobs_.at(id);
    job.finished_at = utc_timestamp();
    if (error.empty()) {
        job.state = JobState::Done;
    } else {
        job.state = JobState::Failed;
        job.error = error;
    }
    persist(job);
}

// --- HTTP -----------------------------------------------------------------------

struct HttpFrontend::Impl {
    GenerationService& service;
    std::string origin;
    httplib::Server server;
    std::thread thread;

    Impl(GenerationService& s, std::string o) : service(s), origin(std::move(o)) {}

    void reply(httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        if (!r.png.empty()) {
            res.set_content(r.png, "image/png");
        } else {
            res.set_content(r.body.dump(), "application/json");
        }
    }

    void routes() {
        server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", origin);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        });
        server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server.Get("/api/v1/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"ok":true})", "application/json");
        });
        server.Get("/api/v1/checkpoints", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, service.list_checkpoints());
        });
        server.Post("/api/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
            reply(res, service.submit(req.body));
        });
        server.Get(R"(/api/v1/jobs/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
            reply(res, service.poll(req.matches[1]));
        });
        server.Get(R"(/api/v1/jobs/([0-9A-Za-z]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
            reply(res, service.fetch_result(req.matches[1]));
        });
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) res.set_content(nlohmann::json{{"error", httplib::status_message(res.status)}}.dump(), "application/json");
        });
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string msg = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                msg = e.what();
            } catch (...) {
            }
            res.status = 500;
            res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
        });
    }
};

HttpFrontend::HttpFrontend(GenerationService& service, std::string cors_origin)
    : impl_(std::make_unique<Impl>(service, std::move(cors_origin))) {
    impl_->routes();
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void HttpFrontend::listen(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpFrontend::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace spatext
