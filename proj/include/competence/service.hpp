#ifndef COMPETENCE_SERVICE_HPP
#define COMPETENCE_SERVICE_HPP

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "competence/harness.hpp"

/**
 * @file service.hpp
 *
 * @brief HTTP transport for the human in the loop.
 *
 * The replay loop runs on its own thread and owns the memory. When it needs
 * a label it parks in request() until POST /api/feedback supplies one; HTTP
 * handlers only read snapshots or hand over that single answer, all under
 * one mutex.
 *
 *     GET  /api/state                 current frame, P(known), verdict, pending_request
 *     POST /api/feedback              {"label": "competent"|"incompetent", "frame_index"?: n}
 *     POST /api/step                  advance one frame (manual pacing only)
 *     GET  /api/events                event log so far
 *     GET  /api/frame/{index}/image   bytes of the frame's image_ref
 */

namespace competence {

struct ServeOptions {
    double threshold = 0.5;
    int pace_ms = 500;
    bool manual_step = false;
    std::optional<std::filesystem::path> static_dir;
    /// Base for relative image_ref paths that do not resolve from the working directory.
    std::filesystem::path image_base;
};

class FeedbackService final : public FeedbackProvider, public RunObserver {
public:
    using FinishHandler = std::function<void(const RunReport&)>;

    FeedbackService(LoadedRun loaded, ServeOptions options, FinishHandler on_finish = {})
        : loaded_(std::move(loaded)), options_(std::move(options)), on_finish_(std::move(on_finish)) {
        memory_size_ = loaded_.memory.size();
        // httplib defaults to SO_REUSEPORT, which lets a second server silently share the port.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        install_routes();
    }

    ~FeedbackService() override { stop(); }

    FeedbackService(const FeedbackService&) = delete;
    FeedbackService& operator=(const FeedbackService&) = delete;

    /// Binds the listening socket; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port) {
        int bound = port;
        if (port == 0) {
            bound = server_.bind_to_any_port(host);
        } else if (!server_.bind_to_port(host, port)) {
            bound = -1;
        }
        if (bound <= 0) {
            throw Error(ErrorKind::BindFailure, "cannot bind " + host + ":" + std::to_string(port));
        }
        return bound;
    }

    /// Starts the replay and HTTP threads. bind() must have succeeded.
    void start() {
        replay_thread_ = std::thread([this] { replay(); });
        http_thread_ = std::thread([this] { server_.listen_after_bind(); });
        // httplib's stop() is a no-op until the accept loop runs.
        server_.wait_until_ready();
    }

    /// Blocks until the HTTP server stops (stop() or a signal handler calling it).
    void wait() {
        if (http_thread_.joinable()) {
            http_thread_.join();
        }
    }

    void stop() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        server_.stop();
        if (http_thread_.joinable()) {
            http_thread_.join();
        }
        if (replay_thread_.joinable()) {
            replay_thread_.join();
        }
    }

    bool finished() const {
        std::lock_guard lock(mutex_);
        return finished_;
    }

    std::optional<std::string> failure() const {
        std::lock_guard lock(mutex_);
        return failure_;
    }

    // FeedbackProvider
    Feedback request(const EpisodeFrame& frame, const Assessment&) override {
        std::unique_lock lock(mutex_);
        pending_ = true;
        pending_frame_ = frame.frame_index;
        answer_.reset();
        cv_.wait(lock, [this] { return answer_.has_value() || stopping_; });
        pending_ = false;
        if (!answer_) {
            throw Error(ErrorKind::FeedbackUnavailable, "service stopped while waiting for feedback");
        }
        const auto label = *answer_;
        answer_.reset();
        return {label, FeedbackSource::Human};
    }

    // RunObserver
    void on_frame_start(const EpisodeFrame& frame) override {
        std::unique_lock lock(mutex_);
        if (started_frames_++ == 0) {
            return;
        }
        if (options_.manual_step) {
            cv_.wait(lock, [this] { return step_credits_ > 0 || stopping_; });
            if (step_credits_ > 0) {
                --step_credits_;
            }
        } else {
            cv_.wait_for(lock, std::chrono::milliseconds(options_.pace_ms), [this] { return stopping_; });
        }
        if (stopping_) {
            throw Error(ErrorKind::FeedbackUnavailable, "service stopped before frame " +
                                                            std::to_string(frame.frame_index));
        }
    }

    void on_assessed(const EpisodeFrame& frame, const Assessment& a,
                     const std::optional<ExpertAssessment>& expert) override {
        std::lock_guard lock(mutex_);
        current_frame_ = frame.frame_index;
        current_frame_id_ = frame.descriptor.id;
        current_ = a;
        current_expert_ = expert;
        current_image_ = frame.descriptor.image_ref.has_value();
    }

    void on_event(const AssessmentEvent& event, const CompetenceMemory& memory) override {
        std::lock_guard lock(mutex_);
        events_.push_back(event_to_json(event));
        memory_size_ = memory.size();
    }

    nlohmann::json state_json() const {
        std::lock_guard lock(mutex_);
        nlohmann::json j;
        j["frame_index"] = current_frame_ ? nlohmann::json(*current_frame_) : nlohmann::json(nullptr);
        j["frame_id"] = current_frame_id_;
        j["pending_request"] = pending_;
        j["finished"] = finished_;
        j["frames_total"] = loaded_.frames.size();
        j["memory_size"] = memory_size_;
        j["manual_step"] = options_.manual_step;
        j["image_available"] = current_image_;
        if (current_) {
            j.update(assessment_fields(*current_));
        } else {
            j["p_known"] = 0.0;
            j["verdict"] = to_string(Verdict::Unknown);
        }
        if (current_expert_) {
            j["expert"] = expert_to_json(*current_expert_);
        }
        if (failure_) {
            j["error"] = *failure_;
        }
        return j;
    }

private:
    void replay() {
        try {
            ReplayOptions opts;
            opts.threshold = options_.threshold;
            opts.knowledge = loaded_.knowledge ? &*loaded_.knowledge : nullptr;
            auto report = run_episode(loaded_.frames, loaded_.memory, loaded_.calibration, opts, *this, this);
            if (on_finish_) {
                on_finish_(report);
            }
            std::lock_guard lock(mutex_);
            finished_ = true;
        } catch (const std::exception& e) {
            std::lock_guard lock(mutex_);
            failure_ = e.what();
        }
    }

    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void install_routes() {
        server_.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, state_json());
        });

        server_.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json events;
            {
                std::lock_guard lock(mutex_);
                events = events_;
            }
            reply(res, 200, events.is_null() ? nlohmann::json::array() : events);
        });

        server_.Post("/api/feedback", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::parse_error&) {
                return reply(res, 400, {{"error", "body must be JSON"}});
            }
            const auto label_it = body.is_object() ? body.find("label") : body.end();
            std::optional<CompetenceLabel> label;
            if (body.is_object() && label_it != body.end() && label_it->is_string()) {
                label = parse_competence_label(label_it->get<std::string>());
            }
            if (!label) {
                return reply(res, 400, {{"error", "label must be \"competent\" or \"incompetent\""}});
            }
            std::uint64_t frame = 0;
            {
                std::lock_guard lock(mutex_);
                if (!pending_ || answer_) {
                    return reply(res, 409, {{"error", "no feedback request is pending"}});
                }
                if (const auto fi = body.find("frame_index");
                    fi != body.end() && (!fi->is_number_unsigned() || fi->get<std::uint64_t>() != pending_frame_)) {
                    return reply(res, 409, {{"error", "feedback is for a frame that is not pending"},
                                            {"pending_frame_index", pending_frame_}});
                }
                answer_ = *label;
                frame = pending_frame_;
            }
            cv_.notify_all();
            reply(res, 200, {{"accepted", true}, {"frame_index", frame}, {"label", to_string(*label)}});
        });

        server_.Post("/api/step", [this](const httplib::Request&, httplib::Response& res) {
            {
                std::lock_guard lock(mutex_);
                if (!options_.manual_step) {
                    return reply(res, 409, {{"error", "replay is not in manual step mode"}});
                }
                ++step_credits_;
            }
            cv_.notify_all();
            reply(res, 200, {{"stepped", true}});
        });

        server_.Get(R"(/api/frame/(\d+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto index = std::stoull(req.matches[1].str());
            const auto path = image_path(index);
            std::ifstream in;
            if (path) {
                in.open(*path, std::ios::binary);
            }
            if (!in.is_open()) {
                return reply(res, 404, {{"error", "no image for frame " + std::to_string(index)}});
            }
            const auto type = content_type(*path);
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            res.set_content(std::move(bytes), type);
        });

        if (options_.static_dir) {
            server_.set_mount_point("/", options_.static_dir->string());
        }
    }

    std::optional<std::filesystem::path> image_path(std::uint64_t frame_index) const {
        for (const auto& f : loaded_.frames) {
            if (f.frame_index != frame_index || !f.descriptor.image_ref) {
                continue;
            }
            std::filesystem::path p(*f.descriptor.image_ref);
            if (p.is_relative() && !std::filesystem::exists(p)) {
                p = options_.image_base / p;
            }
            return p;
        }
        return std::nullopt;
    }

    static std::string content_type(const std::filesystem::path& p) {
        const auto ext = detail::lowercase(p.extension().string());
        if (ext == ".png") {
            return "image/png";
        }
        if (ext == ".jpg" || ext == ".jpeg") {
            return "image/jpeg";
        }
        if (ext == ".gif") {
            return "image/gif";
        }
        if (ext == ".webp") {
            return "image/webp";
        }
        return "application/octet-stream";
    }

    LoadedRun loaded_;
    ServeOptions options_;
    FinishHandler on_finish_;
    httplib::Server server_;
    std::thread replay_thread_;
    std::thread http_thread_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    bool stopping_ = false;
    bool finished_ = false;
    std::optional<std::string> failure_;
    bool pending_ = false;
    std::uint64_t pending_frame_ = 0;
    std::optional<CompetenceLabel> answer_;
    std::size_t started_frames_ = 0;
    std::size_t step_credits_ = 0;
    std::optional<std::uint64_t> current_frame_;
    std::string current_frame_id_;
    std::optional<Assessment> current_;
    std::optional<ExpertAssessment> current_expert_;
    bool current_image_ = false;
    std::size_t memory_size_ = 0;
    nlohmann::json events_ = nlohmann::json::array();
};

} // namespace competence

#endif
