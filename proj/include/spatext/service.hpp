#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "spatext/checkpoint.hpp"
#include "spatext/pipeline.hpp"
#include "spatext/scene.hpp"

namespace spatext {

// Checkpoints by id. Directory entries "<id>.ckpt" are listed from their
// headers and loaded on first use; bundles can also be added in memory.
class CheckpointRegistry {
public:
    CheckpointRegistry() = default;
    explicit CheckpointRegistry(const std::filesystem::path& dir);

    void add(const std::string& id, std::shared_ptr<const ModelBundle> bundle);
    bool contains(const std::string& id) const;
    // Throws std::out_of_range for unknown ids.
    std::shared_ptr<const ModelBundle> get(const std::string& id) const;
    // [{id, space, resolution, d_embed, fingerprint}], sorted by id.
    nlohmann::json list() const;

private:
    struct Entry {
        std::filesystem::path path;
        nlohmann::json header;
        mutable std::shared_ptr<const ModelBundle> bundle;
    };
    mutable std::mutex mu_;
    std::map<std::string, Entry> entries_;
};

enum class JobState { Queued, Running, Done, Failed };
std::string to_string(JobState s);
JobState parse_job_state(const std::string& s);

struct GenerationJob {
    std::string id;
    SceneSpec scene;
    GuidanceSpec guidance;
    std::string checkpoint;
    std::uint64_t seed = 0;
    int steps = 0;  // 0: checkpoint default
    JobState state = JobState::Queued;
    std::string error;
    std::string created_at, started_at, finished_at;
    int progress_done = 0, progress_total = 0;

    nlohmann::json to_json() const;
    static GenerationJob from_json(const nlohmann::json& j);
};

struct ServiceConfig {
    std::filesystem::path store_dir;  // job records and result images
    int workers = 1;
};

// Outcome of a request, mapped 1:1 onto an HTTP response.
struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
    std::string png;  // set instead of body for image responses
};

// Job queue plus worker pool. Submissions are validated up front; workers
// take jobs in FIFO order. Job records and results live in store_dir, so a
// restart keeps finished jobs and re-queues queued ones (running ones fail).
class GenerationService {
public:
    GenerationService(ServiceConfig config, std::shared_ptr<CheckpointRegistry> registry);
    ~GenerationService();
    GenerationService(const GenerationService&) = delete;
    GenerationService& operator=(const GenerationService&) = delete;

    // Body: scene document plus {"guidance", "checkpoint", "seed", "steps"?}.
    ServiceResponse submit(const std::string& body);
    ServiceResponse poll(const std::string& id) const;
    ServiceResponse fetch_result(const std::string& id) const;
    ServiceResponse list_checkpoints() const;

    std::optional<GenerationJob> job(const std::string& id) const;
    // Blocks until no job is queued or running.
    void wait_idle();
    void shutdown();

private:
    void worker_loop();
    void run_job(const std::string& id);
    void persist(const GenerationJob& job) const;
    std::filesystem::path record_path(const std::string& id) const;
    std::filesystem::path image_path(const std::string& id) const;
    std::string new_id();

    ServiceConfig config_;
    std::shared_ptr<CheckpointRegistry> registry_;
    mutable std::mutex mu_;
    std::condition_variable cv_, idle_cv_;
    std::map<std::string, GenerationJob> jobs_;
    std::deque<std::string> queue_;
    int running_ = 0;
    bool stopping_ = false;
    std::uint64_t counter_ = 0;
    std::uint64_t id_salt_ = 0;
    std::vector<std::thread> workers_;
};

// HTTP/1.1 JSON front end:
//   POST /api/v1/generate, GET /api/v1/jobs/{id}, GET /api/v1/jobs/{id}/image,
//   GET /api/v1/checkpoints, GET /api/v1/health.
class HttpFrontend {
public:
    HttpFrontend(GenerationService& service, std::string cors_origin = "*");
    ~HttpFrontend();
    // Binds and serves on a background thread; port 0 picks a free port.
    // Returns the bound port, or throws std::runtime_error.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string utc_timestamp();

}  // namespace spatext
