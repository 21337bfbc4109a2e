#ifndef COMPETENCE_HARNESS_HPP
#define COMPETENCE_HARNESS_HPP

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "competence/ca_expert.hpp"
#include "competence/ca_zero.hpp"
#include "competence/embedding_space.hpp"
#include "competence/errors.hpp"
#include "competence/ingest_store.hpp"

/**
 * @file harness.hpp
 *
 * @brief Frame-by-frame replay of an episode with human-in-the-loop feedback.
 *
 * Each frame is assessed against the current memory. Unknown frames are sent
 * to a FeedbackProvider and the answer is appended to memory; known frames
 * either proceed or are flagged, depending on the sign of the competence
 * score. Expert scores, when configured, ride along on every event but never
 * change the action.
 */

namespace competence {

enum class Action { AskHuman, Proceed, FlagIncompetent };

constexpr std::string_view to_string(Action action) {
    switch (action) {
    case Action::AskHuman: return "ASK_HUMAN";
    case Action::Proceed: return "PROCEED";
    case Action::FlagIncompetent: return "FLAG_INCOMPETENT";
    }
    return "?";
}

struct Feedback {
    CompetenceLabel label;
    FeedbackSource source;

    friend bool operator==(const Feedback&, const Feedback&) = default;
};

struct AssessmentEvent {
    std::uint64_t frame_index = 0;
    std::string frame_id;
    Assessment assessment;
    Action action = Action::AskHuman;
    std::optional<Feedback> feedback;
    std::optional<ExpertAssessment> expert;
    std::string wall_time;
};

struct RunReport {
    std::vector<AssessmentEvent> events;
    std::size_t ask_count = 0;
    std::size_t proceed_count = 0;
    std::size_t flag_count = 0;
    std::size_t frames_total = 0;
    CompetenceMemory final_memory;
};

class FeedbackProvider {
public:
    virtual ~FeedbackProvider() = default;
    virtual Feedback request(const EpisodeFrame& frame, const Assessment& assessment) = 0;
};

/// Answers from the frame's ground truth; only consulted when the engine asks.
class OracleFeedback final : public FeedbackProvider {
public:
    Feedback request(const EpisodeFrame& frame, const Assessment&) override {
        if (!frame.ground_truth_competence) {
            throw Error(ErrorKind::FeedbackUnavailable,
                        "frame " + std::to_string(frame.frame_index) + " has no ground_truth_competence");
        }
        return {*frame.ground_truth_competence, FeedbackSource::Oracle};
    }
};

/// Prompts on `out` and reads answers from `in` until one parses.
class InteractiveFeedback final : public FeedbackProvider {
public:
    InteractiveFeedback(std::istream& in, std::ostream& out) : in_(in), out_(out) {}

    Feedback request(const EpisodeFrame& frame, const Assessment& assessment) override {
        out_ << "\nUnknown environment at frame " << frame.frame_index << " (" << frame.descriptor.id << ")\n";
        if (frame.descriptor.image_ref) {
            out_ << "  image:   " << *frame.descriptor.image_ref << '\n';
        }
        out_ << "  P(known) = " << std::fixed << std::setprecision(4) << assessment.p_known << '\n';
        out_.unsetf(std::ios::floatfield);

        std::string line;
        for (;;) {
            out_ << "Is the robot competent here? [c]ompetent / [i]ncompetent: " << std::flush;
            if (!std::getline(in_, line)) {
                throw Error(ErrorKind::FeedbackUnavailable, "input closed while waiting for feedback");
            }
            if (const auto label = parse_answer(line)) {
                return {*label, FeedbackSource::Human};
            }
            out_ << "Please answer 'c' or 'i'.\n";
        }
    }

    static std::optional<CompetenceLabel> parse_answer(std::string_view text) {
        std::string t;
        for (char c : text) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (t == "c" || t == "competent") {
            return CompetenceLabel::Competent;
        }
        if (t == "i" || t == "incompetent") {
            return CompetenceLabel::Incompetent;
        }
        return std::nullopt;
    }

private:
    std::istream& in_;
    std::ostream& out_;
};

/// Hooks into the replay loop. All callbacks run on the replay thread.
class RunObserver {
public:
    virtual ~RunObserver() = default;
    virtual void on_frame_start(const EpisodeFrame&) {}
    virtual void on_assessed(const EpisodeFrame&, const Assessment&, const std::optional<ExpertAssessment>&) {}
    virtual void on_event(const AssessmentEvent&, const CompetenceMemory&) {}
};

struct ExpertKnowledge {
    std::vector<KnowledgeStatement> statements;
    ReferenceAtlas atlas;
    SemanticLexicon lexicon;
};

struct ReplayOptions {
    double threshold = 0.5;
    const ExpertKnowledge* knowledge = nullptr;
    std::function<std::string()> clock;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto millis =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(millis));
    return out;
}

inline Action action_for(const Assessment& a) {
    if (a.verdict == Verdict::Unknown) {
        return Action::AskHuman;
    }
    return *a.competence_score < 0.0 ? Action::FlagIncompetent : Action::Proceed;
}

inline RunReport run_episode(std::span<const EpisodeFrame> frames, CompetenceMemory memory,
                             const CalibrationModel& calib, const ReplayOptions& options, FeedbackProvider& human,
                             RunObserver* observer = nullptr) {
    RunObserver no_op;
    RunObserver& obs = observer ? *observer : no_op;
    const std::function<std::string()> clock = options.clock ? options.clock : utc_timestamp;

    RunReport report;
    report.events.reserve(frames.size());
    for (const auto& frame : frames) {
        obs.on_frame_start(frame);

        AssessmentEvent event;
        event.frame_index = frame.frame_index;
        event.frame_id = frame.descriptor.id;
        event.assessment = assess(frame.descriptor, memory, calib, options.threshold);
        if (options.knowledge) {
            event.expert = assess_expert(frame.descriptor, options.knowledge->atlas, options.knowledge->statements,
                                         options.knowledge->lexicon, calib);
        }
        obs.on_assessed(frame, event.assessment, event.expert);

        event.action = action_for(event.assessment);
        switch (event.action) {
        case Action::AskHuman: {
            const auto answer = human.request(frame, event.assessment);
            memory = incorporate_feedback(memory, frame.descriptor, answer.label, answer.source);
            event.feedback = answer;
            ++report.ask_count;
            break;
        }
        case Action::Proceed: ++report.proceed_count; break;
        case Action::FlagIncompetent: ++report.flag_count; break;
        }
        event.wall_time = clock();
        obs.on_event(event, memory);
        report.events.push_back(std::move(event));
    }
    report.frames_total = frames.size();
    report.final_memory = std::move(memory);
    return report;
}

// ------------------------------------------------------------ serialization

inline nlohmann::json expert_to_json(const ExpertAssessment& expert) {
    nlohmann::json statements = nlohmann::json::array();
    for (const auto& s : expert.per_statement) {
        statements.push_back({{"statement", s.statement.to_string()}, {"score", s.score}, {"witness", s.witness}});
    }
    return {{"p_incompetent", expert.p_incompetent},
            {"p_competent", expert.p_competent},
            {"statements", std::move(statements)}};
}

inline nlohmann::json assessment_fields(const Assessment& a) {
    nlohmann::json j = {{"p_known", a.p_known}, {"threshold", a.threshold}, {"verdict", to_string(a.verdict)}};
    if (a.competence_score) {
        j["competence_score"] = *a.competence_score;
    }
    if (a.nearest_entry) {
        j["nearest_entry"] = {{"sequence", a.nearest_entry->sequence}, {"distance", a.nearest_entry->distance}};
    }
    return j;
}

/// One report line. `with_wall_time = false` gives the form used for determinism comparisons.
inline nlohmann::json event_to_json(const AssessmentEvent& e, bool with_wall_time = true) {
    nlohmann::json j = {{"frame_index", e.frame_index}, {"frame_id", e.frame_id}};
    j.update(assessment_fields(e.assessment));
    j["action"] = to_string(e.action);
    if (e.feedback) {
        j["feedback"] = {{"label", to_string(e.feedback->label)}, {"source", to_string(e.feedback->source)}};
    }
    if (e.expert) {
        j["expert"] = expert_to_json(*e.expert);
    }
    if (with_wall_time) {
        j["wall_time"] = e.wall_time;
    }
    return j;
}

inline nlohmann::json summary_to_json(const RunReport& r) {
    return {{"summary",
             {{"frames_total", r.frames_total},
              {"ask_count", r.ask_count},
              {"proceed_count", r.proceed_count},
              {"flag_count", r.flag_count},
              {"final_memory_size", r.final_memory.size()}}}};
}

/// JSON Lines: one object per event, then a trailing {"summary": ...} object.
inline void write_report(const RunReport& report, std::ostream& out, bool with_wall_time = true) {
    for (const auto& e : report.events) {
        out << event_to_json(e, with_wall_time).dump() << '\n';
    }
    out << summary_to_json(report).dump() << '\n';
}

inline void write_report(const RunReport& report, const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    write_report(report, out);
}

inline void print_report_table(const RunReport& report, std::ostream& out) {
    char line[160];
    std::snprintf(line, sizeof line, "%7s  %-20s  %8s  %-8s  %8s  %-16s  %s\n", "frame", "id", "P(known)", "verdict",
                  "score", "action", "feedback");
    out << line;
    for (const auto& e : report.events) {
        char score[16] = "-";
        if (e.assessment.competence_score) {
            std::snprintf(score, sizeof score, "%+.4f", *e.assessment.competence_score);
        }
        std::string feedback = "-";
        if (e.feedback) {
            feedback = std::string(to_string(e.feedback->label)) + " (" + std::string(to_string(e.feedback->source)) + ")";
        }
        std::snprintf(line, sizeof line, "%7llu  %-20.20s  %8.4f  %-8s  %8s  %-16s  %s\n",
                      static_cast<unsigned long long>(e.frame_index), e.frame_id.c_str(), e.assessment.p_known,
                      std::string(to_string(e.assessment.verdict)).c_str(), score,
                      std::string(to_string(e.action)).c_str(), feedback.c_str());
        out << line;
    }
    out << "frames " << report.frames_total << ", asked " << report.ask_count << ", proceeded "
        << report.proceed_count << ", flagged " << report.flag_count << ", memory size "
        << report.final_memory.size() << '\n';
}

// ------------------------------------------------------------- file-driven run

enum class RunMode { Interactive, Oracle, Serve };

struct RunConfig {
    RunMode mode = RunMode::Oracle;
    double threshold = 0.5;
    std::filesystem::path episode_path;
    std::filesystem::path calibration_path;
    std::optional<std::filesystem::path> state_path;
    std::vector<KnowledgeStatement> knowledge;
    std::optional<std::filesystem::path> atlas_path;
    std::optional<std::filesystem::path> lexicon_path;
    std::optional<std::filesystem::path> report_path;
    int port = 8080;
    int pace_ms = 500;
    bool manual_step = false;
    std::optional<std::filesystem::path> static_dir;

    void validate() const {
        if (!(threshold > 0.0 && threshold < 1.0)) {
            throw Error(ErrorKind::InvalidThreshold, "threshold must lie in (0, 1)");
        }
        if (!knowledge.empty() && (!atlas_path || !lexicon_path)) {
            throw Error(ErrorKind::InvalidStatement, "knowledge statements require --atlas and --wordvecs");
        }
    }
};

/// Everything a run needs, loaded and cross-checked.
struct LoadedRun {
    std::vector<EpisodeFrame> frames;
    CalibrationModel calibration;
    CompetenceMemory memory;
    std::optional<ExpertKnowledge> knowledge;
};

/**
 * Loads episode, calibration, optional prior state and optional knowledge.
 *
 * The calibration always comes from `calibration_path`; only the memory is
 * taken from an existing state file, which must agree on dimension.
 */
inline LoadedRun load_run_inputs(const RunConfig& config) {
    config.validate();
    LoadedRun loaded;
    loaded.calibration = load_run(config.calibration_path).calibration;
    loaded.frames = load_episode(config.episode_path);
    if (!loaded.frames.empty()) {
        detail::require_same_dimension(loaded.calibration.dimension, loaded.frames.front().descriptor.dimension());
    }

    loaded.memory = CompetenceMemory(loaded.calibration.dimension);
    if (config.state_path && std::filesystem::exists(*config.state_path)) {
        auto state = load_run(*config.state_path);
        if (state.memory.dimension()) {
            detail::require_same_dimension(loaded.calibration.dimension, *state.memory.dimension());
        }
        loaded.memory = CompetenceMemory::from_entries(loaded.calibration.dimension,
                                                       std::vector<MemoryEntry>(state.memory.entries()));
    }

    if (!config.knowledge.empty()) {
        ExpertKnowledge k;
        k.statements = config.knowledge;
        k.atlas = ReferenceAtlas(load_embeddings(*config.atlas_path));
        k.lexicon = load_word_vectors(*config.lexicon_path);
        if (!k.atlas.empty()) {
            detail::require_same_dimension(loaded.calibration.dimension, k.atlas.environments().front().dimension());
        }
        for (const auto& s : k.statements) {
            phrase_vector(s.concept_phrase, k.lexicon);
        }
        loaded.knowledge = std::move(k);
    }
    return loaded;
}

/// Persists the final memory (with the calibration used) and the report, where configured.
inline void persist_run_outputs(const RunConfig& config, const CalibrationModel& calib, const RunReport& report) {
    if (config.state_path) {
        save_run(StoredRun{calib, report.final_memory, kRunFormatVersion}, *config.state_path);
    }
    if (config.report_path) {
        write_report(report, *config.report_path);
    }
}

inline RunReport run_from_config(const RunConfig& config, FeedbackProvider& human, RunObserver* observer = nullptr) {
    auto loaded = load_run_inputs(config);
    ReplayOptions options;
    options.threshold = config.threshold;
    options.knowledge = loaded.knowledge ? &*loaded.knowledge : nullptr;
    auto report = run_episode(loaded.frames, std::move(loaded.memory), loaded.calibration, options, human, observer);
    persist_run_outputs(config, loaded.calibration, report);
    return report;
}

} // namespace competence

#endif
