// competence: command-line front end for calibration, replay, serving and synthetic data.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "competence/competence.hpp"
#ifdef COMPETENCE_WITH_SERVICE
#include "competence/service.hpp"
#endif

namespace fs = std::filesystem;
using namespace competence;

namespace {

struct RunFlags {
    std::string episode;
    std::string calibration;
    std::string state;
    double threshold = 0.5;
    std::string mode;
    std::vector<std::string> knowledge;
    std::string atlas;
    std::string wordvecs;
    std::string report;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--episode", f.episode, "Episode file (JSON Lines)")->required();
    cmd->add_option("--calibration", f.calibration, "Calibration written by `calibrate`")->required();
    cmd->add_option("--state", f.state, "Memory state; read if present, written after the run");
    cmd->add_option("--threshold", f.threshold, "P(known) threshold in (0, 1)")->capture_default_str();
    cmd->add_option("--knowledge", f.knowledge, "Knowledge statements such as incompetent:nature");
    cmd->add_option("--atlas", f.atlas, "Labeled reference atlas (JSON Lines)");
    cmd->add_option("--wordvecs", f.wordvecs, "Word vectors in word2vec text format");
    cmd->add_option("--report", f.report, "Write the event log here (JSON Lines)");
}

RunConfig to_config(const RunFlags& f) {
    RunConfig c;
    c.threshold = f.threshold;
    c.episode_path = f.episode;
    c.calibration_path = f.calibration;
    if (!f.state.empty()) {
        c.state_path = f.state;
    }
    for (const auto& s : f.knowledge) {
        c.knowledge.push_back(parse_statement(s));
    }
    if (!f.atlas.empty()) {
        c.atlas_path = f.atlas;
    }
    if (!f.wordvecs.empty()) {
        c.lexicon_path = f.wordvecs;
    }
    if (!f.report.empty()) {
        c.report_path = f.report;
    }
    return c;
}

int cmd_calibrate(const std::string& reference, const std::string& out, double mean_target, double tolerance) {
    const auto ref = load_embeddings(reference);
    auto model = calibrate(ref, mean_target, tolerance);
    model.provenance["reference"] = reference;
    save_run(StoredRun{model, CompetenceMemory(model.dimension), kRunFormatVersion}, out);
    std::printf("kernel_width %.17g (dimension %zu, %zu reference entries)\n", model.kernel_width, model.dimension,
                model.reference_count);
    return 0;
}

int cmd_run(const RunFlags& flags) {
    auto config = to_config(flags);
    config.mode = flags.mode == "interactive" ? RunMode::Interactive : RunMode::Oracle;
    OracleFeedback oracle;
    InteractiveFeedback human(std::cin, std::cout);
    FeedbackProvider& provider = config.mode == RunMode::Interactive ? static_cast<FeedbackProvider&>(human)
                                                                     : static_cast<FeedbackProvider&>(oracle);
    const auto report = run_from_config(config, provider);
    print_report_table(report, std::cout);
    return 0;
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& episode_out,
              const std::string& reference_out) {
    const auto data = generate_synthetic_episode(load_synthetic_spec(spec_path), seed);
    save_episode(data.episode, episode_out);
    save_embeddings(data.reference, reference_out);
    std::printf("%zu frames, %zu reference entries\n", data.episode.size(), data.reference.size());
    return 0;
}

#ifdef COMPETENCE_WITH_SERVICE
std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct ServeFlags {
    std::string host = "127.0.0.1";
    int port = 8080;
    int pace_ms = 500;
    bool manual_step = false;
    bool exit_when_done = false;
    std::string static_dir;
};

int cmd_serve(const RunFlags& flags, const ServeFlags& s) {
    auto config = to_config(flags);
    config.mode = RunMode::Serve;
    config.port = s.port;
    config.pace_ms = s.pace_ms;
    config.manual_step = s.manual_step;
    if (!s.static_dir.empty()) {
        config.static_dir = s.static_dir;
    }
    auto loaded = load_run_inputs(config);
    const auto calib = loaded.calibration;

    ServeOptions options;
    options.threshold = config.threshold;
    options.pace_ms = config.pace_ms;
    options.manual_step = config.manual_step;
    options.static_dir = config.static_dir;
    options.image_base = fs::path(flags.episode).parent_path();

    FeedbackService service(std::move(loaded), options, [&](const RunReport& report) {
        persist_run_outputs(config, calib, report);
        print_report_table(report, std::cout);
        std::cout << std::flush;
    });
    const int port = service.bind(s.host, s.port);
    std::printf("serving on http://%s:%d\n", s.host.c_str(), port);
    std::fflush(stdout);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    service.start();
    while (!g_interrupted) {
        if (service.failure() || (s.exit_when_done && service.finished())) {
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    service.stop();
    if (const auto failure = service.failure(); failure && !g_interrupted) {
        throw std::runtime_error(*failure);
    }
    return 0;
}
#endif

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Competence assessment: calibrate, replay, serve, synthesize"};
    app.require_subcommand(1);

    std::string reference;
    std::string calib_out;
    double mean_target = 0.5;
    double tolerance = 1e-9;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit the kernel width to a reference set");
    calibrate_cmd->add_option("--reference", reference, "Reference embeddings (JSON Lines)")->required();
    calibrate_cmd->add_option("--out", calib_out, "Output calibration document")->required();
    calibrate_cmd->add_option("--mean-target", mean_target, "Target mean nearest-neighbor kernel")
        ->capture_default_str();
    calibrate_cmd->add_option("--tolerance", tolerance, "Accepted deviation from the target")->capture_default_str();

    RunFlags run_flags;
    auto* run_cmd = app.add_subcommand("run", "Replay an episode");
    add_run_flags(run_cmd, run_flags);
    run_cmd->add_option("--mode", run_flags.mode, "Feedback source")
        ->required()
        ->check(CLI::IsMember({"interactive", "oracle"}));

#ifdef COMPETENCE_WITH_SERVICE
    RunFlags serve_flags;
    ServeFlags serve;
    auto* serve_cmd = app.add_subcommand("serve", "Replay an episode with feedback over HTTP");
    add_run_flags(serve_cmd, serve_flags);
    serve_cmd->add_option("--host", serve.host, "Listen address")->capture_default_str();
    serve_cmd->add_option("--port", serve.port, "Listen port (0 picks a free one)")->capture_default_str();
    serve_cmd->add_option("--pace-ms", serve.pace_ms, "Delay between frames")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    serve_cmd->add_flag("--manual-step", serve.manual_step, "Advance only on POST /api/step");
    serve_cmd->add_flag("--exit-when-done", serve.exit_when_done, "Stop serving once the episode ends");
    serve_cmd->add_option("--static-dir", serve.static_dir, "Serve these files at /")->check(CLI::ExistingDirectory);
#endif

    std::string spec_path;
    std::uint64_t seed = 0;
    std::string episode_out;
    std::string reference_out;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a clustered synthetic episode");
    synth_cmd->add_option("--spec", spec_path, "Scenario spec (JSON)")->required();
    synth_cmd->add_option("--seed", seed, "Generator seed")->required();
    synth_cmd->add_option("--out-episode", episode_out, "Episode output")->required();
    synth_cmd->add_option("--out-reference", reference_out, "Reference output")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*calibrate_cmd) {
            return cmd_calibrate(reference, calib_out, mean_target, tolerance);
        }
        if (*run_cmd) {
            return cmd_run(run_flags);
        }
#ifdef COMPETENCE_WITH_SERVICE
        if (*serve_cmd) {
            return cmd_serve(serve_flags, serve);
        }
#endif
        if (*synth_cmd) {
            return cmd_synth(spec_path, seed, episode_out, reference_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "competence: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
