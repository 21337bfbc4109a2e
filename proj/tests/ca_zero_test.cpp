#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "competence/ca_zero.hpp"
#include "test_support.hpp"

using namespace competence;
using competence::fixtures::Gen;
using competence::fixtures::make;

namespace {

constexpr double kWidth = 1.543;

CalibrationModel calib(std::size_t dim, double width = kWidth) {
    CalibrationModel c;
    c.kernel_width = width;
    c.dimension = dim;
    return c;
}

CompetenceMemory with(std::initializer_list<std::pair<EnvironmentDescriptor, CompetenceLabel>> items) {
    CompetenceMemory m;
    for (const auto& [d, l] : items) {
        m = incorporate_feedback(m, d, l, FeedbackSource::Human);
    }
    return m;
}

} // namespace

TEST(PKnown, EmptyMemoryIsZero) {
    Gen gen(11);
    for (int i = 0; i < 20; ++i) {
        const auto q = gen.descriptor("q", 5, -100, 100);
        EXPECT_EQ(p_known(q, CompetenceMemory{}, calib(5)), 0.0);
    }
}

TEST(PKnown, QueryInMemoryIsOne) {
    const auto q = make("q", {0.3, -2.0});
    const auto m = with({{make("x", {5, 5}), CompetenceLabel::Incompetent}, {q, CompetenceLabel::Competent}});
    EXPECT_EQ(p_known(q, m, calib(2)), 1.0);
}

TEST(PKnown, DistanceEqualToWidth) {
    const auto m = with({{make("x", {kWidth}), CompetenceLabel::Competent}});
    EXPECT_NEAR(p_known(make("q", {0.0}), m, calib(1)), 0.36787944117144233, 1e-15);
}

TEST(PKnown, DimensionMismatch) {
    const auto m = with({{make("x", {1, 2}), CompetenceLabel::Competent}});
    EXPECT_THROW(p_known(make("q", {1, 2, 3}), m, calib(3)), Error);
    // Empty memory still checks against the calibration's dimension.
    EXPECT_THROW(p_known(make("q", {1, 2, 3}), CompetenceMemory{}, calib(2)), Error);
}

TEST(Assess, EmptyMemoryAsks) {
    for (double tau : {0.01, 0.5, 0.99}) {
        const auto a = assess(make("q", {1, 1}), CompetenceMemory{}, calib(2), tau);
        EXPECT_EQ(a.verdict, Verdict::Unknown);
        EXPECT_EQ(a.p_known, 0.0);
        EXPECT_FALSE(a.competence_score);
        EXPECT_FALSE(a.nearest_entry);
    }
}

TEST(Assess, ExactCompetentMatchScoresPlusOne) {
    const auto q = make("q", {2, 3});
    const auto a = assess(q, with({{q, CompetenceLabel::Competent}}), calib(2), 0.5);
    EXPECT_EQ(a.verdict, Verdict::Known);
    ASSERT_TRUE(a.competence_score);
    EXPECT_EQ(*a.competence_score, 1.0);
    EXPECT_EQ(a.nearest_entry, (NearestEntry{0, 0.0}));
}

TEST(Assess, IncompetentAtHalfWidth) {
    const auto m = with({{make("x", {0.5 * kWidth, 0.0}), CompetenceLabel::Incompetent}});
    const auto a = assess(make("q", {0, 0}), m, calib(2), 0.5);
    EXPECT_NEAR(a.p_known, 0.7788007830714049, 1e-12);
    EXPECT_EQ(a.verdict, Verdict::Known);
    ASSERT_TRUE(a.competence_score);
    EXPECT_NEAR(*a.competence_score, -0.7788007830714049, 1e-12);
}

TEST(Assess, InvalidThreshold) {
    for (double tau : {0.0, 1.0, -0.2, 1.5, std::nan("")}) {
        try {
            assess(make("q", {0}), CompetenceMemory{}, calib(1), tau);
            FAIL() << tau;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::InvalidThreshold);
        }
    }
}

TEST(Assess, ThresholdBoundaryIsInclusive) {
    Gen gen(12);
    for (int i = 0; i < 500; ++i) {
        const double d = gen.uniform(0.01, 3.0);
        const auto m = with({{make("x", {d}), CompetenceLabel::Competent}});
        const auto q = make("q", {0.0});
        const double p = p_known(q, m, calib(1));
        EXPECT_EQ(assess(q, m, calib(1), p).verdict, Verdict::Known);
        const double above = std::nextafter(p, 1.0);
        if (above < 1.0) {
            EXPECT_EQ(assess(q, m, calib(1), above).verdict, Verdict::Unknown);
        }
        const double below = std::nextafter(p, 0.0);
        if (below > 0.0) {
            EXPECT_EQ(assess(q, m, calib(1), below).verdict, Verdict::Known);
        }
    }
}

TEST(Assess, SignFollowsNearestLabel) {
    Gen gen(13);
    for (int trial = 0; trial < 300; ++trial) {
        const auto dim = gen.index(1, 8);
        CompetenceMemory m;
        std::vector<EnvironmentDescriptor> stored;
        std::vector<CompetenceLabel> labels;
        for (std::size_t k = 0, n = gen.index(1, 30); k < n; ++k) {
            const auto d = gen.descriptor("m" + std::to_string(k), dim);
            const auto l = gen.coin() ? CompetenceLabel::Competent : CompetenceLabel::Incompetent;
            m = incorporate_feedback(m, d, l, FeedbackSource::Oracle);
            stored.push_back(d);
            labels.push_back(l);
        }
        const auto q = gen.descriptor("q", dim);
        const auto a = assess(q, m, calib(dim, 2.0), 0.05);
        const auto [idx, d2] = fixtures::oracle_nearest(q.vector, stored);
        ASSERT_EQ(a.nearest_entry->sequence, static_cast<std::uint64_t>(idx));
        if (a.verdict == Verdict::Known) {
            const double sign = labels[idx] == CompetenceLabel::Competent ? 1.0 : -1.0;
            EXPECT_EQ(*a.competence_score, sign * a.p_known);
        } else {
            EXPECT_FALSE(a.competence_score);
        }
    }
}

TEST(Assess, EquidistantConflictPicksLowestSequence) {
    for (auto first : {CompetenceLabel::Competent, CompetenceLabel::Incompetent}) {
        const auto second = first == CompetenceLabel::Competent ? CompetenceLabel::Incompetent : CompetenceLabel::Competent;
        const auto m = with({{make("a", {1, 0}), first}, {make("b", {-1, 0}), second}, {make("c", {0, 1}), second}});
        for (int rep = 0; rep < 5; ++rep) {
            const auto a = assess(make("q", {0, 0}), m, calib(2), 0.1);
            EXPECT_EQ(a.nearest_entry->sequence, 0u);
            EXPECT_EQ(*a.competence_score > 0, first == CompetenceLabel::Competent);
        }
    }
}

TEST(IncorporateFeedback, FirstInsertion) {
    const auto v = make("v", {1, 2, 3});
    const CompetenceMemory empty;
    const auto m = incorporate_feedback(empty, v, CompetenceLabel::Competent, FeedbackSource::Human);
    EXPECT_TRUE(empty.empty());
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m.entries()[0].sequence, 0u);
    EXPECT_EQ(m.entries()[0].descriptor, v);
    EXPECT_EQ(m.entries()[0].source, FeedbackSource::Human);
    EXPECT_EQ(m.dimension(), 3u);
}

TEST(IncorporateFeedback, DuplicatesAreHarmless) {
    const auto v = make("v", {1, 2});
    auto m = incorporate_feedback(CompetenceMemory{}, v, CompetenceLabel::Competent, FeedbackSource::Human);
    m = incorporate_feedback(m, v, CompetenceLabel::Competent, FeedbackSource::Human);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m.entries()[1].sequence, 1u);
    EXPECT_EQ(*assess(v, m, calib(2)).competence_score, 1.0);
}

TEST(IncorporateFeedback, LabeledQueryBecomesKnown) {
    Gen gen(14);
    CompetenceMemory m;
    for (int i = 0; i < 50; ++i) {
        const auto q = gen.descriptor("q" + std::to_string(i), 6, -10, 10);
        m = incorporate_feedback(m, q, CompetenceLabel::Incompetent, FeedbackSource::Oracle);
        EXPECT_EQ(p_known(q, m, calib(6)), 1.0);
    }
}

TEST(IncorporateFeedback, PriorEntriesUnchanged) {
    auto m = with({{make("a", {1}), CompetenceLabel::Competent}, {make("b", {2}), CompetenceLabel::Incompetent}});
    const auto before = m.entries();
    m = incorporate_feedback(m, make("c", {3}), CompetenceLabel::Competent, FeedbackSource::Human);
    ASSERT_EQ(m.size(), 3u);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), m.entries().begin()));
    EXPECT_EQ(m.entries()[2].sequence, 2u);
}

TEST(IncorporateFeedback, DimensionMismatch) {
    const auto m = with({{make("a", {1, 1}), CompetenceLabel::Competent}});
    EXPECT_THROW(incorporate_feedback(m, make("b", {1}), CompetenceLabel::Competent, FeedbackSource::Human), Error);
    const CompetenceMemory fixed(4);
    EXPECT_THROW(incorporate_feedback(fixed, make("b", {1}), CompetenceLabel::Competent, FeedbackSource::Human), Error);
}

TEST(Memory, FromEntriesRejectsNonIncreasingSequence) {
    std::vector<MemoryEntry> entries{{make("a", {1}), CompetenceLabel::Competent, FeedbackSource::Human, 3},
                                     {make("b", {2}), CompetenceLabel::Competent, FeedbackSource::Human, 3}};
    EXPECT_THROW(CompetenceMemory::from_entries(1, entries), Error);
    entries[1].sequence = 7;
    const auto m = CompetenceMemory::from_entries(1, entries);
    EXPECT_EQ(m.next_sequence(), 8u);
}

TEST(Properties, MonotoneKnowledge) {
    Gen gen(15);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto dim = gen.index(1, 10);
        CompetenceMemory m;
        for (std::size_t k = 0, n = gen.index(0, 20); k < n; ++k) {
            m = incorporate_feedback(m, gen.descriptor("m", dim), CompetenceLabel::Competent, FeedbackSource::Human);
        }
        const auto q = gen.descriptor("q", dim);
        const auto c = calib(dim, gen.uniform(0.1, 3));
        const double before = p_known(q, m, c);
        const auto m2 = incorporate_feedback(m, gen.descriptor("n", dim), CompetenceLabel::Incompetent,
                                             FeedbackSource::Human);
        EXPECT_GE(p_known(q, m2, c), before);
    }
}

TEST(Properties, GeneralizesWithinKernelRadius) {
    // Every query whose distance d to the labeled point satisfies kernel(d, S) >= tau is Known.
    Gen gen(16);
    const double tau = 0.5;
    const double radius = kWidth * std::sqrt(-std::log(tau));
    const auto center = make("c", {1, 2, 3});
    const auto m = with({{center, CompetenceLabel::Competent}});
    for (int i = 0; i < 500; ++i) {
        auto dir = gen.vec(3);
        double n = 0;
        for (double x : dir) {
            n += x * x;
        }
        n = std::sqrt(n);
        const double r = gen.uniform(0, radius);
        auto q = center;
        for (std::size_t k = 0; k < 3; ++k) {
            q.vector[k] += dir[k] / n * r;
        }
        if (kernel(distance(q, center), kWidth) >= tau) {
            EXPECT_EQ(assess(q, m, calib(3), tau).verdict, Verdict::Known);
        }
    }
}
