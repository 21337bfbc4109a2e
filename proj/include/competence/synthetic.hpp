#ifndef COMPETENCE_SYNTHETIC_HPP
#define COMPETENCE_SYNTHETIC_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "competence/ca_zero.hpp"
#include "competence/embedding_space.hpp"
#include "competence/errors.hpp"
#include "competence/ingest_store.hpp"

/**
 * @file synthetic.hpp
 *
 * @brief Seeded generator for clustered episodes and calibration references.
 *
 * Spec document (JSON):
 *
 *     {
 *       "noise_radius": 0.1,
 *       "clusters": [
 *         {"name": "corridor", "center": [0, 0], "frames": 10, "label": "competent"},
 *         {"name": "lab", "center": [10, 0], "frames": 8, "label": "incompetent"}
 *       ],
 *       "reference": {"count": 200, "radius": 1.0}
 *     }
 *
 * Episode frames visit the clusters in order, each frame being the cluster
 * center plus a point drawn uniformly from the ball of radius noise_radius.
 * Reference entries are assigned to clusters round-robin and drawn from the
 * ball of radius reference.radius around the center.
 *
 * Only std::mt19937_64's raw output is used, never the std distributions,
 * so files are identical across standard library implementations up to libm
 * rounding.
 */

namespace competence {

struct SyntheticCluster {
    std::string name;
    std::vector<double> center;
    std::size_t frames = 0;
    CompetenceLabel label = CompetenceLabel::Competent;
};

struct SyntheticSpec {
    std::vector<SyntheticCluster> clusters;
    double noise_radius = 0.0;
    std::size_t reference_count = 0;
    double reference_radius = 1.0;

    void validate() const {
        if (clusters.empty()) {
            throw Error(ErrorKind::InvalidSpec, "at least one cluster is required");
        }
        if (!(noise_radius >= 0.0) || !std::isfinite(noise_radius)) {
            throw Error(ErrorKind::InvalidSpec, "noise_radius must be finite and non-negative");
        }
        if (!(reference_radius >= 0.0) || !std::isfinite(reference_radius)) {
            throw Error(ErrorKind::InvalidSpec, "reference radius must be finite and non-negative");
        }
        const auto dim = clusters.front().center.size();
        for (const auto& c : clusters) {
            if (c.center.empty() || c.center.size() != dim) {
                throw Error(ErrorKind::InvalidSpec, "cluster '" + c.name + "' center must have dimension " +
                                                        std::to_string(dim) + " (and at least 1)");
            }
            for (double x : c.center) {
                if (!std::isfinite(x)) {
                    throw Error(ErrorKind::InvalidSpec, "cluster '" + c.name + "' center is not finite");
                }
            }
            if (c.name.empty()) {
                throw Error(ErrorKind::InvalidSpec, "every cluster needs a name");
            }
        }
    }
};

inline SyntheticSpec parse_synthetic_spec(const nlohmann::json& doc) {
    SyntheticSpec spec;
    try {
        spec.noise_radius = doc.at("noise_radius").get<double>();
        for (const auto& c : doc.at("clusters")) {
            SyntheticCluster cluster;
            cluster.name = c.at("name").get<std::string>();
            cluster.center = c.at("center").get<std::vector<double>>();
            cluster.frames = c.at("frames").get<std::size_t>();
            const auto label = parse_competence_label(c.at("label").get<std::string>());
            if (!label) {
                throw Error(ErrorKind::InvalidSpec, "cluster '" + cluster.name + "' has an invalid label");
            }
            cluster.label = *label;
            spec.clusters.push_back(std::move(cluster));
        }
        spec.reference_count = 20 * spec.clusters.size();
        if (const auto r = doc.find("reference"); r != doc.end()) {
            spec.reference_count = r->value("count", spec.reference_count);
            spec.reference_radius = r->value("radius", spec.reference_radius);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidSpec, e.what());
    }
    spec.validate();
    return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::InvalidSpec, path.string() + ": " + e.what());
    }
    return parse_synthetic_spec(doc);
}

struct SyntheticData {
    std::vector<EpisodeFrame> episode;
    std::vector<EnvironmentDescriptor> reference;
};

namespace detail {

class BallSampler {
public:
    explicit BallSampler(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Box-Muller.
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// center + a point uniform in the ball of the given radius.
    std::vector<double> around(const std::vector<double>& center, double radius) {
        const auto dim = center.size();
        std::vector<double> dir(dim);
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (auto& x : dir) {
                x = normal();
                norm2 += x * x;
            }
        } while (norm2 == 0.0);
        const double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(dim));
        const double scale = r / std::sqrt(norm2);
        std::vector<double> out(center);
        for (std::size_t i = 0; i < dim; ++i) {
            out[i] += scale * dir[i];
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
};

inline std::string numbered(const std::string& prefix, std::size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", n);
    return prefix + "-" + buf;
}

} // namespace detail

inline SyntheticData generate_synthetic_episode(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    detail::BallSampler sampler(seed);
    SyntheticData data;

    std::uint64_t frame_index = 0;
    for (const auto& cluster : spec.clusters) {
        for (std::size_t k = 0; k < cluster.frames; ++k) {
            EpisodeFrame frame;
            frame.frame_index = frame_index++;
            frame.descriptor.id = detail::numbered(cluster.name, k);
            frame.descriptor.label = cluster.name;
            frame.descriptor.vector = sampler.around(cluster.center, spec.noise_radius);
            frame.ground_truth_competence = cluster.label;
            data.episode.push_back(std::move(frame));
        }
    }

    for (std::size_t i = 0; i < spec.reference_count; ++i) {
        const auto& cluster = spec.clusters[i % spec.clusters.size()];
        EnvironmentDescriptor d;
        d.id = detail::numbered("ref", i);
        d.label = cluster.name;
        d.vector = sampler.around(cluster.center, spec.reference_radius);
        data.reference.push_back(std::move(d));
    }
    return data;
}

} // namespace competence

#endif
