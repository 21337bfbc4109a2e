#ifndef COMPETENCE_INGEST_STORE_HPP
#define COMPETENCE_INGEST_STORE_HPP

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "competence/ca_expert.hpp"
#include "competence/ca_zero.hpp"
#include "competence/embedding_space.hpp"
#include "competence/errors.hpp"

/**
 * @file ingest_store.hpp
 *
 * @brief Loaders and savers for every on-disk artifact.
 *
 * Embedding collections and episodes are JSON Lines, word vectors follow the
 * word2vec text convention, and a run (calibration plus memory) is a single
 * JSON document. Loaders reject malformed input with the 1-based line number
 * of the first bad record; nothing is repaired.
 */

namespace competence {

inline constexpr int kRunFormatVersion = 1;

struct EpisodeFrame {
    std::uint64_t frame_index = 0;
    EnvironmentDescriptor descriptor;
    std::optional<CompetenceLabel> ground_truth_competence;

    friend bool operator==(const EpisodeFrame&, const EpisodeFrame&) = default;
};

struct StoredRun {
    CalibrationModel calibration;
    CompetenceMemory memory;
    int format_version = kRunFormatVersion;

    friend bool operator==(const StoredRun&, const StoredRun&) = default;
};

namespace detail {

using json = nlohmann::json;

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
    }
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    return out;
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    std::ranges::transform(out, out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool is_non_finite_token(std::string_view token) {
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) {
        token.remove_prefix(1);
    }
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) {
        token.remove_suffix(1);
    }
    if (!token.empty() && (token.front() == '-' || token.front() == '+')) {
        token.remove_prefix(1);
    }
    const auto t = lowercase(token);
    return t == "nan" || t == "inf" || t == "infinity";
}

// JSON has no NaN/Infinity literals, so a record using them fails to parse.
// Looking at the raw "vector" array lets us report the more useful error.
inline bool vector_has_non_finite_literal(std::string_view line) {
    const auto key = line.find("\"vector\"");
    if (key == std::string_view::npos) {
        return false;
    }
    const auto open = line.find('[', key);
    const auto close = line.find(']', open);
    if (open == std::string_view::npos || close == std::string_view::npos) {
        return false;
    }
    auto body = line.substr(open + 1, close - open - 1);
    while (!body.empty()) {
        const auto comma = body.find(',');
        if (is_non_finite_token(body.substr(0, comma))) {
            return true;
        }
        if (comma == std::string_view::npos) {
            break;
        }
        body.remove_prefix(comma + 1);
    }
    return false;
}

inline json parse_record(const std::string& line, std::string_view source, std::size_t line_no) {
    json record;
    try {
        record = json::parse(line);
    } catch (const json::parse_error& e) {
        if (vector_has_non_finite_literal(line)) {
            throw Error(ErrorKind::NonFiniteValue, source, line_no, "vector contains a non-finite value");
        }
        throw Error(ErrorKind::MalformedRecord, source, line_no, e.what());
    } catch (const json::out_of_range& e) {
        // 406: a numeric literal overflows double.
        throw Error(e.id == 406 ? ErrorKind::NonFiniteValue : ErrorKind::MalformedRecord, source, line_no, e.what());
    }
    if (!record.is_object()) {
        throw Error(ErrorKind::MalformedRecord, source, line_no, "record is not a JSON object");
    }
    return record;
}

inline std::optional<std::string> optional_string(const json& record, const char* key, std::string_view source,
                                                  std::size_t line_no) {
    const auto it = record.find(key);
    if (it == record.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        throw Error(ErrorKind::MalformedRecord, source, line_no, std::string("\"") + key + "\" must be a string");
    }
    return it->get<std::string>();
}

inline std::vector<double> parse_vector(const json& value, std::string_view source, std::size_t line_no) {
    if (!value.is_array() || value.empty()) {
        throw Error(ErrorKind::MalformedRecord, source, line_no, "\"vector\" must be a non-empty array of numbers");
    }
    std::vector<double> out;
    out.reserve(value.size());
    for (const auto& x : value) {
        if (!x.is_number()) {
            throw Error(ErrorKind::MalformedRecord, source, line_no, "\"vector\" must contain only numbers");
        }
        const double v = x.get<double>();
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::NonFiniteValue, source, line_no, "vector contains a non-finite value");
        }
        out.push_back(v);
    }
    return out;
}

inline EnvironmentDescriptor parse_descriptor(const json& record, std::string_view source, std::size_t line_no) {
    const auto id = record.find("id");
    if (id == record.end() || !id->is_string() || id->get_ref<const std::string&>().empty()) {
        throw Error(ErrorKind::MalformedRecord, source, line_no, "\"id\" must be a non-empty string");
    }
    const auto vec = record.find("vector");
    if (vec == record.end()) {
        throw Error(ErrorKind::MalformedRecord, source, line_no, "missing \"vector\"");
    }
    EnvironmentDescriptor d;
    d.id = id->get<std::string>();
    d.vector = parse_vector(*vec, source, line_no);
    d.label = optional_string(record, "label", source, line_no);
    d.image_ref = optional_string(record, "image_ref", source, line_no);
    return d;
}

inline json descriptor_json(const EnvironmentDescriptor& d) {
    json record = {{"id", d.id}, {"vector", d.vector}};
    if (d.label) {
        record["label"] = *d.label;
    }
    if (d.image_ref) {
        record["image_ref"] = *d.image_ref;
    }
    return record;
}

/// Calls `fn(line, line_no)` for every line; blank lines are malformed.
template <class Fn>
void for_each_record(std::istream& in, std::string_view source, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (std::ranges::all_of(line, [](unsigned char c) { return std::isspace(c); })) {
            throw Error(ErrorKind::MalformedRecord, source, line_no, "blank line");
        }
        fn(line, line_no);
    }
}

inline void check_dimension_at(std::size_t expected, std::size_t got, std::string_view source, std::size_t line_no) {
    if (expected != got) {
        throw Error(ErrorKind::DimensionMismatch, source, line_no,
                    "expected " + std::to_string(expected) + " coordinates, found " + std::to_string(got));
    }
}

/// "%.17g": enough digits for any double to survive a decimal round trip.
inline std::string format_real(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------- embeddings

inline std::vector<EnvironmentDescriptor> load_embeddings(std::istream& in, std::string_view source = "<input>") {
    std::vector<EnvironmentDescriptor> out;
    std::set<std::string> ids;
    detail::for_each_record(in, source, [&](const std::string& line, std::size_t line_no) {
        auto d = detail::parse_descriptor(detail::parse_record(line, source, line_no), source, line_no);
        if (!out.empty()) {
            detail::check_dimension_at(out.front().dimension(), d.dimension(), source, line_no);
        }
        if (!ids.insert(d.id).second) {
            throw Error(ErrorKind::DuplicateId, source, line_no, "id '" + d.id + "' already used");
        }
        out.push_back(std::move(d));
    });
    return out;
}

inline std::vector<EnvironmentDescriptor> load_embeddings(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return load_embeddings(in, path.string());
}

inline void save_embeddings(std::span<const EnvironmentDescriptor> descriptors, std::ostream& out) {
    for (const auto& d : descriptors) {
        out << detail::descriptor_json(d).dump() << '\n';
    }
}

inline void save_embeddings(std::span<const EnvironmentDescriptor> descriptors, const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    save_embeddings(descriptors, out);
}

// -------------------------------------------------------------- word vectors

/**
 * Reads word2vec text vectors. A first line made of exactly two integer
 * tokens is taken as the "count dim" header and skipped; its dim, when
 * present, is enforced on every row. Later duplicates overwrite earlier ones.
 */
inline SemanticLexicon load_word_vectors(std::istream& in, std::string_view source = "<input>") {
    SemanticLexicon lexicon;
    std::optional<std::size_t> dimension;
    std::string line;
    std::size_t line_no = 0;

    const auto is_integer = [](std::string_view t) {
        return !t.empty() && std::ranges::all_of(t, [](unsigned char c) { return std::isdigit(c); });
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::vector<std::string> tokens;
        {
            std::istringstream fields(line);
            std::string t;
            while (fields >> t) {
                tokens.push_back(std::move(t));
            }
        }
        if (tokens.empty()) {
            throw Error(ErrorKind::MalformedRecord, source, line_no, "blank line");
        }
        if (line_no == 1 && tokens.size() == 2 && is_integer(tokens[0]) && is_integer(tokens[1])) {
            dimension = std::stoul(tokens[1]);
            if (*dimension == 0) {
                throw Error(ErrorKind::MalformedRecord, source, line_no, "header declares dimension 0");
            }
            continue;
        }
        if (tokens.size() < 2) {
            throw Error(ErrorKind::MalformedRecord, source, line_no, "expected a token followed by its vector");
        }

        std::vector<double> vec;
        vec.reserve(tokens.size() - 1);
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const auto& t = tokens[i];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc{} || ptr != t.data() + t.size()) {
                throw Error(ErrorKind::MalformedRecord, source, line_no, "'" + t + "' is not a number");
            }
            if (!std::isfinite(v)) {
                throw Error(ErrorKind::NonFiniteValue, source, line_no, "vector contains a non-finite value");
            }
            vec.push_back(v);
        }
        if (!dimension) {
            dimension = vec.size();
        }
        detail::check_dimension_at(*dimension, vec.size(), source, line_no);
        try {
            lexicon.insert(detail::lowercase(tokens[0]), std::move(vec));
        } catch (const Error& e) {
            throw Error(e.kind(), source, line_no, e.what());
        }
    }
    if (lexicon.empty()) {
        throw Error(ErrorKind::EmptyLexicon, std::string(source) + ": no word vectors found");
    }
    return lexicon;
}

inline SemanticLexicon load_word_vectors(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return load_word_vectors(in, path.string());
}

inline void save_word_vectors(const SemanticLexicon& lexicon, std::ostream& out) {
    out << lexicon.size() << ' ' << lexicon.dimension() << '\n';
    for (const auto& [token, vec] : lexicon.entries()) {
        out << token;
        for (double x : vec) {
            out << ' ' << detail::format_real(x);
        }
        out << '\n';
    }
}

inline void save_word_vectors(const SemanticLexicon& lexicon, const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    save_word_vectors(lexicon, out);
}

// ------------------------------------------------------------------ episodes

inline std::vector<EpisodeFrame> load_episode(std::istream& in, std::string_view source = "<input>") {
    std::vector<EpisodeFrame> out;
    detail::for_each_record(in, source, [&](const std::string& line, std::size_t line_no) {
        const auto record = detail::parse_record(line, source, line_no);
        const auto index = record.find("frame_index");
        if (index == record.end() || !index->is_number_integer() || index->get<std::int64_t>() < 0) {
            throw Error(ErrorKind::MalformedRecord, source, line_no, "\"frame_index\" must be a non-negative integer");
        }
        EpisodeFrame frame;
        frame.frame_index = index->get<std::uint64_t>();
        frame.descriptor = detail::parse_descriptor(record, source, line_no);
        if (const auto gt = detail::optional_string(record, "ground_truth_competence", source, line_no)) {
            frame.ground_truth_competence = parse_competence_label(*gt);
            if (!frame.ground_truth_competence) {
                throw Error(ErrorKind::MalformedRecord, source, line_no,
                            "ground_truth_competence must be \"competent\" or \"incompetent\"");
            }
        }
        if (!out.empty()) {
            if (frame.frame_index <= out.back().frame_index) {
                throw Error(ErrorKind::NonMonotoneFrameIndex, source, line_no,
                            "frame_index " + std::to_string(frame.frame_index) + " does not follow " +
                                std::to_string(out.back().frame_index));
            }
            detail::check_dimension_at(out.front().descriptor.dimension(), frame.descriptor.dimension(), source,
                                       line_no);
        }
        out.push_back(std::move(frame));
    });
    return out;
}

inline std::vector<EpisodeFrame> load_episode(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return load_episode(in, path.string());
}

inline void save_episode(std::span<const EpisodeFrame> frames, std::ostream& out) {
    for (const auto& frame : frames) {
        auto record = detail::descriptor_json(frame.descriptor);
        record["frame_index"] = frame.frame_index;
        if (frame.ground_truth_competence) {
            record["ground_truth_competence"] = std::string(to_string(*frame.ground_truth_competence));
        }
        out << record.dump() << '\n';
    }
}

inline void save_episode(std::span<const EpisodeFrame> frames, const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    save_episode(frames, out);
}

// ---------------------------------------------------------------------- runs

inline nlohmann::json run_to_json(const StoredRun& run) {
    using detail::json;
    const auto& c = run.calibration;
    json memory_entries = json::array();
    for (const auto& e : run.memory.entries()) {
        json entry = {{"id", e.descriptor.id},
                      {"vector", e.descriptor.vector},
                      {"label", std::string(to_string(e.label))},
                      {"source", std::string(to_string(e.source))},
                      {"sequence", e.sequence}};
        if (e.descriptor.label) {
            entry["scene_label"] = *e.descriptor.label;
        }
        if (e.descriptor.image_ref) {
            entry["image_ref"] = *e.descriptor.image_ref;
        }
        memory_entries.push_back(std::move(entry));
    }
    json memory_dim = run.memory.dimension() ? json(*run.memory.dimension()) : json(nullptr);
    return json{
        {"format_version", run.format_version},
        {"calibration",
         {{"kernel_width", c.kernel_width},
          {"dimension", c.dimension},
          {"reference_count", c.reference_count},
          {"mean_target", c.mean_target},
          {"solver_tolerance", c.solver_tolerance},
          {"provenance", c.provenance}}},
        {"memory", {{"dimension", memory_dim}, {"entries", std::move(memory_entries)}}},
    };
}

inline StoredRun run_from_json(const nlohmann::json& doc) {
    using detail::json;
    const auto fail = [](const std::string& why) { return Error(ErrorKind::MalformedDocument, why); };
    if (!doc.is_object()) {
        throw fail("run document must be a JSON object");
    }
    const auto version = doc.find("format_version");
    if (version == doc.end() || !version->is_number_integer()) {
        throw fail("missing integer \"format_version\"");
    }
    if (version->get<int>() != kRunFormatVersion) {
        throw Error(ErrorKind::UnsupportedVersion, "format_version " + version->dump() + " is not supported (expected " +
                                                       std::to_string(kRunFormatVersion) + ")");
    }

    StoredRun run;
    try {
        const auto& c = doc.at("calibration");
        run.calibration.kernel_width = c.at("kernel_width").get<double>();
        run.calibration.dimension = c.at("dimension").get<std::size_t>();
        run.calibration.reference_count = c.at("reference_count").get<std::size_t>();
        run.calibration.mean_target = c.at("mean_target").get<double>();
        run.calibration.solver_tolerance = c.at("solver_tolerance").get<double>();
        if (const auto p = c.find("provenance"); p != c.end()) {
            run.calibration.provenance = p->get<std::map<std::string, std::string>>();
        }

        const auto& m = doc.at("memory");
        std::optional<std::size_t> dimension;
        if (!m.at("dimension").is_null()) {
            dimension = m.at("dimension").get<std::size_t>();
        }
        std::vector<MemoryEntry> entries;
        for (const auto& e : m.at("entries")) {
            MemoryEntry entry;
            entry.descriptor.id = e.at("id").get<std::string>();
            entry.descriptor.vector = e.at("vector").get<std::vector<double>>();
            if (const auto s = e.find("scene_label"); s != e.end()) {
                entry.descriptor.label = s->get<std::string>();
            }
            if (const auto s = e.find("image_ref"); s != e.end()) {
                entry.descriptor.image_ref = s->get<std::string>();
            }
            const auto label = parse_competence_label(e.at("label").get<std::string>());
            const auto source = parse_feedback_source(e.at("source").get<std::string>());
            if (!label || !source) {
                throw fail("memory entry '" + entry.descriptor.id + "' has an invalid label or source");
            }
            entry.label = *label;
            entry.source = *source;
            entry.sequence = e.at("sequence").get<std::uint64_t>();
            entries.push_back(std::move(entry));
        }
        run.memory = CompetenceMemory::from_entries(dimension, std::move(entries));
    } catch (const json::exception& e) {
        throw fail(e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::MalformedDocument) {
            throw;
        }
        throw fail(e.what());
    }

    if (!(run.calibration.kernel_width > 0.0) || !std::isfinite(run.calibration.kernel_width)) {
        throw fail("calibration kernel_width must be positive and finite");
    }
    if (run.memory.dimension() && *run.memory.dimension() != run.calibration.dimension) {
        throw fail("memory dimension does not match calibration dimension");
    }
    return run;
}

/// nlohmann writes the shortest decimal that parses back to the same double, so reals round-trip exactly.
inline void save_run(const StoredRun& run, std::ostream& out) { out << run_to_json(run).dump(2) << '\n'; }

inline void save_run(const StoredRun& run, const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    save_run(run, out);
}

inline StoredRun load_run(std::istream& in, std::string_view source = "<input>") {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedDocument, std::string(source) + ": " + e.what());
    }
    return run_from_json(doc);
}

inline StoredRun load_run(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return load_run(in, path.string());
}

} // namespace competence

#endif
