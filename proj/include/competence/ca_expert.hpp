#ifndef COMPETENCE_CA_EXPERT_HPP
#define COMPETENCE_CA_EXPERT_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "competence/ca_zero.hpp"
#include "competence/embedding_space.hpp"
#include "competence/errors.hpp"

/**
 * @file ca_expert.hpp
 *
 * @brief Competence assessment from semantic knowledge statements.
 *
 * A statement such as "incompetent:nature" is scored against the current
 * view by looking over a labeled atlas of environments: each atlas entry
 * contributes (visual similarity of the view to the entry) x (semantic
 * similarity of the entry's label to the statement's concept), and the
 * statement score is the best such product.
 */

namespace competence {

/// Word vectors keyed by lowercase token.
class SemanticLexicon {
public:
    SemanticLexicon() = default;

    /// Inserts or overwrites `token`. The first insertion fixes the dimension.
    void insert(std::string token, std::vector<double> vector) {
        if (dimension_ == 0) {
            dimension_ = vector.size();
        }
        detail::require_same_dimension(dimension_, vector.size());
        double norm2 = 0.0;
        for (double x : vector) {
            if (!std::isfinite(x)) {
                throw Error(ErrorKind::NonFiniteValue, "word vector for '" + token + "' is not finite");
            }
            norm2 += x * x;
        }
        if (norm2 == 0.0) {
            throw Error(ErrorKind::ZeroVector, "word vector for '" + token + "' has zero norm");
        }
        entries_.insert_or_assign(std::move(token), std::move(vector));
    }

    const std::vector<double>* find(std::string_view token) const {
        const auto it = entries_.find(std::string(token));
        return it == entries_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, std::vector<double>>& entries() const noexcept { return entries_; }
    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    friend bool operator==(const SemanticLexicon&, const SemanticLexicon&) = default;

private:
    std::map<std::string, std::vector<double>> entries_;
    std::size_t dimension_ = 0;
};

/// Splits on whitespace and underscores and lowercases, so "Living_Room" gives {"living", "room"}.
inline std::vector<std::string> tokenize(std::string_view phrase) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : phrase) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == '_') {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

/// Mean of the in-vocabulary token vectors, renormalized to unit length.
inline std::vector<double> phrase_vector(std::string_view phrase, const SemanticLexicon& lexicon) {
    std::vector<double> sum(lexicon.dimension(), 0.0);
    std::size_t found = 0;
    for (const auto& token : tokenize(phrase)) {
        if (const auto* v = lexicon.find(token)) {
            for (std::size_t i = 0; i < sum.size(); ++i) {
                sum[i] += (*v)[i];
            }
            ++found;
        }
    }
    if (found == 0) {
        throw Error(ErrorKind::AllTokensOutOfVocabulary, "no token of '" + std::string(phrase) + "' is in the lexicon");
    }

    double norm2 = 0.0;
    for (double& x : sum) {
        x /= static_cast<double>(found);
        norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) {
        throw Error(ErrorKind::ZeroVector, "phrase '" + std::string(phrase) + "' averages to the zero vector");
    }
    for (double& x : sum) {
        x /= norm;
    }
    return sum;
}

/// Cosine of two unit vectors with negative values clipped to 0.
inline double clipped_cosine(std::span<const double> a, std::span<const double> b) {
    detail::require_same_dimension(a.size(), b.size());
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
    }
    return std::clamp(dot, 0.0, 1.0);
}

inline double semantic_similarity(std::string_view a, std::string_view b, const SemanticLexicon& lexicon) {
    return clipped_cosine(phrase_vector(a, lexicon), phrase_vector(b, lexicon));
}

inline double visual_similarity(const EnvironmentDescriptor& query, const EnvironmentDescriptor& env,
                                const CalibrationModel& calib) {
    detail::require_same_dimension(calib.dimension, query.dimension());
    return kernel(distance(query, env), calib.kernel_width);
}

struct KnowledgeStatement {
    CompetenceLabel polarity = CompetenceLabel::Incompetent;
    std::string concept_phrase;

    /// "incompetent:nature" form.
    std::string to_string() const {
        return std::string(competence::to_string(polarity)) + ":" + concept_phrase;
    }

    friend bool operator==(const KnowledgeStatement&, const KnowledgeStatement&) = default;
};

/// Parses "competent:<phrase>" or "incompetent:<phrase>"; the polarity is case-insensitive.
inline KnowledgeStatement parse_statement(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw Error(ErrorKind::InvalidStatement, "expected '<competent|incompetent>:<phrase>', got '" +
                                                     std::string(text) + "'");
    }
    std::string polarity;
    for (char c : text.substr(0, colon)) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            polarity.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    const auto label = parse_competence_label(polarity);
    if (!label) {
        throw Error(ErrorKind::InvalidStatement, "unknown polarity '" + polarity + "'");
    }
    const auto tokens = tokenize(text.substr(colon + 1));
    if (tokens.empty()) {
        throw Error(ErrorKind::InvalidStatement, "statement '" + std::string(text) + "' has an empty concept");
    }
    std::string phrase;
    for (const auto& t : tokens) {
        if (!phrase.empty()) {
            phrase.push_back(' ');
        }
        phrase += t;
    }
    return KnowledgeStatement{*label, std::move(phrase)};
}

/// Labeled environments; every entry must carry a non-empty scene label.
class ReferenceAtlas {
public:
    ReferenceAtlas() = default;

    explicit ReferenceAtlas(std::vector<EnvironmentDescriptor> environments) : environments_(std::move(environments)) {
        for (const auto& env : environments_) {
            if (!env.label || tokenize(*env.label).empty()) {
                throw Error(ErrorKind::MalformedRecord, "atlas entry '" + env.id + "' has no scene label");
            }
            detail::require_same_dimension(environments_.front().dimension(), env.dimension());
        }
    }

    std::span<const EnvironmentDescriptor> environments() const noexcept { return environments_; }
    std::size_t size() const noexcept { return environments_.size(); }
    bool empty() const noexcept { return environments_.empty(); }

private:
    std::vector<EnvironmentDescriptor> environments_;
};

struct StatementScore {
    KnowledgeStatement statement;
    double score = 0.0;
    std::string witness;

    friend bool operator==(const StatementScore&, const StatementScore&) = default;
};

struct ExpertAssessment {
    std::vector<StatementScore> per_statement;
    double p_incompetent = 0.0;
    double p_competent = 0.0;

    friend bool operator==(const ExpertAssessment&, const ExpertAssessment&) = default;
};

/**
 * Scores every statement against `query`.
 *
 * Atlas labels with no in-vocabulary token count as unrelated (similarity
 * 0). An unresolvable statement concept is an error. Witness ties go to the
 * lowest atlas index.
 */
inline ExpertAssessment assess_expert(const EnvironmentDescriptor& query, const ReferenceAtlas& atlas,
                                      std::span<const KnowledgeStatement> statements, const SemanticLexicon& lexicon,
                                      const CalibrationModel& calib) {
    if (atlas.empty()) {
        throw Error(ErrorKind::EmptyAtlas, "reference atlas has no entries");
    }
    const auto envs = atlas.environments();

    std::vector<double> visual;
    visual.reserve(envs.size());
    for (const auto& env : envs) {
        visual.push_back(visual_similarity(query, env, calib));
    }

    // Phrase vectors per distinct atlas label; nullopt marks fully out-of-vocabulary labels.
    std::map<std::string, std::optional<std::vector<double>>> label_vectors;
    for (const auto& env : envs) {
        auto [it, inserted] = label_vectors.try_emplace(*env.label);
        if (inserted) {
            try {
                it->second = phrase_vector(*env.label, lexicon);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::AllTokensOutOfVocabulary && e.kind() != ErrorKind::ZeroVector) {
                    throw;
                }
            }
        }
    }

    ExpertAssessment out;
    for (const auto& statement : statements) {
        const auto concept_vec = phrase_vector(statement.concept_phrase, lexicon);
        StatementScore best{statement, -1.0, {}};
        for (std::size_t i = 0; i < envs.size(); ++i) {
            const auto& label_vec = label_vectors.at(*envs[i].label);
            const double semantic = label_vec ? clipped_cosine(*label_vec, concept_vec) : 0.0;
            const double score = visual[i] * semantic;
            if (score > best.score) {
                best.score = score;
                best.witness = envs[i].id;
            }
        }
        double& aggregate = statement.polarity == CompetenceLabel::Incompetent ? out.p_incompetent : out.p_competent;
        aggregate = std::max(aggregate, best.score);
        out.per_statement.push_back(std::move(best));
    }
    return out;
}

} // namespace competence

#endif
