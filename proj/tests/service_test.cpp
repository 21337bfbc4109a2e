#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>

#include <gtest/gtest.h>

#include "competence/service.hpp"
#include "competence/synthetic.hpp"
#include "test_support.hpp"

using namespace competence;
using nlohmann::json;

namespace {

LoadedRun two_cluster_run() {
    const auto data = generate_synthetic_episode(fixtures::two_cluster_spec(), 42);
    LoadedRun run;
    run.frames = data.episode;
    run.calibration = calibrate(data.reference);
    run.memory = CompetenceMemory(run.calibration.dimension);
    return run;
}

class Served {
public:
    explicit Served(LoadedRun run, ServeOptions options = {})
        : service_(std::move(run), std::move(options), [this](const RunReport& r) { report_ = r; }) {
        port_ = service_.bind("127.0.0.1", 0);
        service_.start();
        client_.emplace("127.0.0.1", port_);
        client_->set_connection_timeout(2);
        client_->set_read_timeout(5);
    }
    ~Served() { service_.stop(); }

    httplib::Client& http() { return *client_; }
    FeedbackService& service() { return service_; }
    const std::optional<RunReport>& report() const { return report_; }

    json get(const std::string& path) {
        auto res = client_->Get(path);
        EXPECT_TRUE(res);
        return res ? json::parse(res->body) : json();
    }

    int post(const std::string& path, const json& body, json* out = nullptr) {
        auto res = client_->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) {
            return -1;
        }
        if (out) {
            *out = json::parse(res->body);
        }
        return res->status;
    }

    /// Polls /api/state until `pred` holds; gives up after a few seconds.
    json wait_for(const std::function<bool(const json&)>& pred) {
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
        json state;
        while (std::chrono::steady_clock::now() < deadline) {
            state = get("/api/state");
            if (pred(state)) {
                return state;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        ADD_FAILURE() << "timed out; last state " << state.dump();
        return state;
    }

private:
    std::optional<RunReport> report_;
    FeedbackService service_;
    int port_ = 0;
    std::optional<httplib::Client> client_;
};

bool pending_at(const json& s, int frame) {
    return s.value("pending_request", false) && s["frame_index"] == frame;
}

} // namespace

TEST(Service, FullLoopWithHumanFeedback) {
    ServeOptions opts;
    opts.pace_ms = 0;
    Served served(two_cluster_run(), opts);

    auto state = served.wait_for([](const json& s) { return pending_at(s, 0); });
    EXPECT_EQ(state["verdict"], "unknown");
    EXPECT_EQ(state["p_known"], 0.0);
    EXPECT_FALSE(state.contains("competence_score"));

    json ack;
    EXPECT_EQ(served.post("/api/feedback", {{"label", "competent"}, {"frame_index", 0}}, &ack), 200);
    EXPECT_EQ(ack["frame_index"], 0);
    EXPECT_EQ(ack["label"], "competent");
    // The replay may already be parked on frame 12, so the duplicate must name its frame.
    EXPECT_EQ(served.post("/api/feedback", {{"label", "competent"}, {"frame_index", 0}}), 409);

    served.wait_for([](const json& s) { return pending_at(s, 12); });
    EXPECT_EQ(served.post("/api/feedback", {{"label", "incompetent"}, {"frame_index", 3}}), 409);
    EXPECT_EQ(served.post("/api/feedback", {{"label", "incompetent"}, {"frame_index", 12}}), 200);

    state = served.wait_for([](const json& s) { return s.value("finished", false); });
    EXPECT_EQ(state["memory_size"], 2);
    EXPECT_EQ(served.post("/api/feedback", {{"label", "competent"}}), 409);

    const auto events = served.get("/api/events");
    ASSERT_EQ(events.size(), 21u);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        EXPECT_EQ(e["frame_index"], i);
        if (i == 0 || i == 12) {
            EXPECT_EQ(e["action"], "ASK_HUMAN");
            EXPECT_EQ(e["feedback"]["source"], "human");
        } else {
            EXPECT_EQ(e["action"], i < 12 ? "PROCEED" : "FLAG_INCOMPETENT") << i;
        }
        EXPECT_TRUE(e.contains("wall_time"));
    }
    ASSERT_TRUE(served.report());
    EXPECT_EQ(served.report()->ask_count, 2u);
}

TEST(Service, RejectsBadFeedbackBodies) {
    ServeOptions opts;
    opts.pace_ms = 0;
    Served served(two_cluster_run(), opts);
    served.wait_for([](const json& s) { return pending_at(s, 0); });

    auto res = served.http().Post("/api/feedback", "not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(served.post("/api/feedback", {{"label", "maybe"}}), 400);
    EXPECT_EQ(served.post("/api/feedback", json::array()), 400);
    EXPECT_TRUE(served.get("/api/state")["pending_request"]);
}

TEST(Service, ManualStepping) {
    ServeOptions opts;
    opts.manual_step = true;
    Served served(two_cluster_run(), opts);

    served.wait_for([](const json& s) { return pending_at(s, 0); });
    EXPECT_EQ(served.post("/api/feedback", {{"label", "competent"}}), 200);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    auto state = served.get("/api/state");
    EXPECT_EQ(state["frame_index"], 0);
    EXPECT_FALSE(state["pending_request"]);

    EXPECT_EQ(served.post("/api/step", json::object()), 200);
    state = served.wait_for([](const json& s) { return s["frame_index"] == 1; });
    EXPECT_EQ(state["verdict"], "known");
    EXPECT_GT(state["competence_score"].get<double>(), 0.0);
    EXPECT_EQ(served.get("/api/events").size(), 2u);
}

TEST(Service, StepOutsideManualModeConflicts) {
    ServeOptions opts;
    opts.pace_ms = 0;
    Served served(two_cluster_run(), opts);
    EXPECT_EQ(served.post("/api/step", json::object()), 409);
}

TEST(Service, FrameImages) {
    const auto dir = std::filesystem::temp_directory_path() / "competence-service-images";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "f0.png", std::ios::binary) << "PNGDATA";
    }
    auto run = two_cluster_run();
    run.frames[0].descriptor.image_ref = "f0.png";
    run.frames[1].descriptor.image_ref = "missing.png";
    ServeOptions opts;
    opts.pace_ms = 0;
    opts.image_base = dir;
    Served served(std::move(run), opts);

    auto res = served.http().Get("/api/frame/0/image");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->body, "PNGDATA");
    EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(served.http().Get("/api/frame/1/image")->status, 404);
    EXPECT_EQ(served.http().Get("/api/frame/2/image")->status, 404);
    EXPECT_EQ(served.http().Get("/api/frame/999/image")->status, 404);
    std::filesystem::remove_all(dir);
}

TEST(Service, StopWhileWaitingReportsFailure) {
    ServeOptions opts;
    opts.pace_ms = 0;
    auto served = std::make_unique<Served>(two_cluster_run(), opts);
    served->wait_for([](const json& s) { return pending_at(s, 0); });
    served->service().stop();
    EXPECT_FALSE(served->service().finished());
    ASSERT_TRUE(served->service().failure());
    EXPECT_NE(served->service().failure()->find("FeedbackUnavailable"), std::string::npos);
}

TEST(Service, BindFailure) {
    Served first(two_cluster_run());
    const int port = first.http().port();
    FeedbackService second(two_cluster_run(), {});
    try {
        second.bind("127.0.0.1", port);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BindFailure);
    }
}
