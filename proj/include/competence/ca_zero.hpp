#ifndef COMPETENCE_CA_ZERO_HPP
#define COMPETENCE_CA_ZERO_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "competence/embedding_space.hpp"
#include "competence/errors.hpp"

/**
 * @file ca_zero.hpp
 *
 * @brief Competence assessment without prior knowledge.
 *
 * The memory holds only environments that a human (or the oracle standing
 * in for one) has labeled. A query is "known" when the kernel of its
 * distance to the nearest memory entry reaches the threshold; the signed
 * competence score then carries that entry's label.
 */

namespace competence {

enum class CompetenceLabel { Competent, Incompetent };

enum class FeedbackSource { Human, Oracle };

enum class Verdict { Unknown, Known };

constexpr std::string_view to_string(CompetenceLabel label) {
    return label == CompetenceLabel::Competent ? "competent" : "incompetent";
}

constexpr std::string_view to_string(FeedbackSource source) {
    return source == FeedbackSource::Human ? "human" : "oracle";
}

constexpr std::string_view to_string(Verdict verdict) {
    return verdict == Verdict::Known ? "known" : "unknown";
}

inline std::optional<CompetenceLabel> parse_competence_label(std::string_view text) {
    if (text == "competent") {
        return CompetenceLabel::Competent;
    }
    if (text == "incompetent") {
        return CompetenceLabel::Incompetent;
    }
    return std::nullopt;
}

inline std::optional<FeedbackSource> parse_feedback_source(std::string_view text) {
    if (text == "human") {
        return FeedbackSource::Human;
    }
    if (text == "oracle") {
        return FeedbackSource::Oracle;
    }
    return std::nullopt;
}

struct MemoryEntry {
    EnvironmentDescriptor descriptor;
    CompetenceLabel label = CompetenceLabel::Competent;
    FeedbackSource source = FeedbackSource::Human;
    std::uint64_t sequence = 0;

    friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

class CompetenceMemory;

inline CompetenceMemory incorporate_feedback(const CompetenceMemory& memory, const EnvironmentDescriptor& query,
                                             CompetenceLabel label, FeedbackSource source);

/**
 * Ordered, append-only store of labeled environments.
 *
 * The dimension is fixed by the first insertion, or up front by the
 * constructor. Updates go through incorporate_feedback(), which returns a
 * new memory and leaves this one untouched.
 */
class CompetenceMemory {
public:
    CompetenceMemory() = default;
    explicit CompetenceMemory(std::size_t dimension) : dimension_(dimension) {}

    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::optional<std::size_t> dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    std::uint64_t next_sequence() const noexcept { return entries_.empty() ? 0 : entries_.back().sequence + 1; }

    /// Rebuilds a memory from persisted entries, checking the ordering and dimension invariants.
    static CompetenceMemory from_entries(std::optional<std::size_t> dimension, std::vector<MemoryEntry> entries) {
        CompetenceMemory memory;
        memory.dimension_ = dimension;
        for (auto& entry : entries) {
            memory.check_dimension(entry.descriptor.dimension());
            if (!memory.entries_.empty() && entry.sequence <= memory.entries_.back().sequence) {
                throw Error(ErrorKind::MalformedDocument, "memory sequence numbers must be strictly increasing");
            }
            memory.entries_.push_back(std::move(entry));
        }
        return memory;
    }

    friend bool operator==(const CompetenceMemory&, const CompetenceMemory&) = default;

private:
    friend CompetenceMemory incorporate_feedback(const CompetenceMemory&, const EnvironmentDescriptor&,
                                                 CompetenceLabel, FeedbackSource);

    void check_dimension(std::size_t d) {
        if (dimension_) {
            detail::require_same_dimension(*dimension_, d);
        } else {
            dimension_ = d;
        }
    }

    std::vector<MemoryEntry> entries_;
    std::optional<std::size_t> dimension_;
};

struct NearestEntry {
    std::uint64_t sequence;
    double distance;

    friend bool operator==(const NearestEntry&, const NearestEntry&) = default;
};

struct Assessment {
    double p_known = 0.0;
    double threshold = 0.5;
    Verdict verdict = Verdict::Unknown;
    std::optional<double> competence_score;
    std::optional<NearestEntry> nearest_entry;

    friend bool operator==(const Assessment&, const Assessment&) = default;
};

namespace detail {

inline void check_query(const EnvironmentDescriptor& query, const CompetenceMemory& memory,
                        const CalibrationModel& calib) {
    require_same_dimension(calib.dimension, query.dimension());
    if (memory.dimension()) {
        require_same_dimension(*memory.dimension(), query.dimension());
    }
}

inline std::optional<Neighbor> nearest_memory_entry(const EnvironmentDescriptor& query,
                                                    const CompetenceMemory& memory) {
    return nearest_neighbor_if(std::span<const double>(query.vector), memory.entries(), &MemoryEntry::descriptor);
}

} // namespace detail

/// Kernel of the distance to the nearest memory entry; 0 for an empty memory.
inline double p_known(const EnvironmentDescriptor& query, const CompetenceMemory& memory,
                      const CalibrationModel& calib) {
    detail::check_query(query, memory, calib);
    const auto nn = detail::nearest_memory_entry(query, memory);
    return nn ? kernel(nn->distance, calib.kernel_width) : 0.0;
}

inline Assessment assess(const EnvironmentDescriptor& query, const CompetenceMemory& memory,
                         const CalibrationModel& calib, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw Error(ErrorKind::InvalidThreshold, "threshold must lie in (0, 1)");
    }
    detail::check_query(query, memory, calib);

    Assessment out;
    out.threshold = threshold;
    const auto nn = detail::nearest_memory_entry(query, memory);
    if (!nn) {
        return out;
    }

    const auto& entry = memory.entries()[nn->index];
    out.p_known = kernel(nn->distance, calib.kernel_width);
    out.nearest_entry = NearestEntry{entry.sequence, nn->distance};
    if (out.p_known >= threshold) {
        out.verdict = Verdict::Known;
        out.competence_score = entry.label == CompetenceLabel::Competent ? out.p_known : -out.p_known;
    }
    return out;
}

/// Returns a copy of `memory` with one more labeled entry at the next sequence number.
inline CompetenceMemory incorporate_feedback(const CompetenceMemory& memory, const EnvironmentDescriptor& query,
                                             CompetenceLabel label, FeedbackSource source) {
    CompetenceMemory next = memory;
    next.check_dimension(query.dimension());
    next.entries_.push_back(MemoryEntry{query, label, source, memory.next_sequence()});
    return next;
}

} // namespace competence

#endif
