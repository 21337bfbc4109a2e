#ifndef COMPETENCE_EMBEDDING_SPACE_HPP
#define COMPETENCE_EMBEDDING_SPACE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "competence/errors.hpp"

/**
 * @file embedding_space.hpp
 *
 * @brief Distances, the Gaussian kernel and kernel-width calibration over
 * embedding vectors.
 *
 * Everything here is a pure function. Scans are sequential so that results
 * are bit-identical from run to run.
 */

namespace competence {

/// One environment as seen by the feature extractor.
struct EnvironmentDescriptor {
    std::string id;
    std::vector<double> vector;
    std::optional<std::string> label;
    std::optional<std::string> image_ref;

    std::size_t dimension() const noexcept { return vector.size(); }

    friend bool operator==(const EnvironmentDescriptor&, const EnvironmentDescriptor&) = default;
};

struct CalibrationModel {
    double kernel_width = 1.0;
    std::size_t dimension = 0;
    std::size_t reference_count = 0;
    double mean_target = 0.5;
    double solver_tolerance = 1e-9;
    std::map<std::string, std::string> provenance;

    friend bool operator==(const CalibrationModel&, const CalibrationModel&) = default;
};

struct Neighbor {
    std::size_t index;
    double distance;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

namespace detail {

inline void require_same_dimension(std::size_t a, std::size_t b) {
    if (a != b) {
        throw Error(ErrorKind::DimensionMismatch,
                    "vector dimensions differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

inline std::span<const double> coords(const EnvironmentDescriptor& d) noexcept { return d.vector; }
inline std::span<const double> coords(std::span<const double> v) noexcept { return v; }
inline std::span<const double> coords(const std::vector<double>& v) noexcept { return v; }

} // namespace detail

/// Euclidean distance. Throws DimensionMismatch on unequal lengths.
inline double distance(std::span<const double> a, std::span<const double> b) {
    detail::require_same_dimension(a.size(), b.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

inline double distance(const EnvironmentDescriptor& a, const EnvironmentDescriptor& b) {
    return distance(std::span<const double>(a.vector), std::span<const double>(b.vector));
}

/**
 * Brute-force nearest neighbor of `query` among `collection`.
 *
 * `proj` maps an element of the collection to something `detail::coords`
 * accepts (a descriptor or a vector), which lets memory entries and plain
 * descriptors share the same scan. `skip(i)` removes candidate `i`.
 * Ties go to the lowest index.
 */
template <std::ranges::random_access_range Collection, class Proj = std::identity,
          class Skip = bool (*)(std::size_t)>
std::optional<Neighbor> nearest_neighbor_if(std::span<const double> query, const Collection& collection,
                                            Proj proj = {},
                                            Skip skip = [](std::size_t) { return false; }) {
    std::optional<Neighbor> best;
    const auto n = static_cast<std::size_t>(std::ranges::size(collection));
    for (std::size_t i = 0; i < n; ++i) {
        if (skip(i)) {
            continue;
        }
        const auto candidate = detail::coords(std::invoke(proj, collection[i]));
        const double d = distance(query, candidate);
        if (!best || d < best->distance) {
            best = Neighbor{i, d};
        }
    }
    return best;
}

/// Nearest neighbor with optional exclusion of every entry bearing `exclude_id`.
inline std::optional<Neighbor> nearest_neighbor(const EnvironmentDescriptor& query,
                                                std::span<const EnvironmentDescriptor> collection,
                                                const std::optional<std::string>& exclude_id = std::nullopt) {
    return nearest_neighbor_if(std::span<const double>(query.vector), collection, std::identity{},
                               [&](std::size_t i) { return exclude_id && collection[i].id == *exclude_id; });
}

/// exp(-d^2 / S^2), the unnormalized Gaussian kernel with range (0, 1].
inline double kernel(double d, double width) {
    if (!(width > 0.0) || !std::isfinite(width)) {
        throw Error(ErrorKind::InvalidKernelWidth, "kernel width must be positive and finite");
    }
    const double r = d / width;
    return std::exp(-(r * r));
}

/// Distance from each entry to its nearest other entry (self excluded by position).
inline std::vector<double> nn_distances(std::span<const EnvironmentDescriptor> reference) {
    if (reference.size() < 2) {
        throw Error(ErrorKind::InsufficientReference, "need at least 2 reference entries");
    }
    std::vector<double> out;
    out.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const auto nn = nearest_neighbor_if(std::span<const double>(reference[i].vector), reference,
                                            std::identity{}, [i](std::size_t j) { return j == i; });
        out.push_back(nn->distance);
    }
    return out;
}

/// Mean of kernel(d, width) over `distances`, summed in order.
inline double mean_kernel(std::span<const double> distances, double width) {
    double sum = 0.0;
    for (double d : distances) {
        sum += kernel(d, width);
    }
    return sum / static_cast<double>(distances.size());
}

/**
 * Solves mean_i kernel(d_i, S) = mean_target for S by bisection.
 *
 * The mean is strictly increasing in S once some d_i > 0, so the root is
 * unique. The bracket starts at [1e-9 max_d, 10 max_d] and the upper end
 * doubles until the mean exceeds the target. Bisection continues until the
 * bracket cannot shrink any further in double precision; `tolerance` is then
 * checked against the achieved mean.
 */
inline double solve_kernel_width(std::span<const double> distances, double mean_target, double tolerance) {
    if (distances.empty()) {
        throw Error(ErrorKind::InsufficientReference, "no distances to calibrate against");
    }
    if (!(mean_target > 0.0 && mean_target < 1.0)) {
        throw Error(ErrorKind::InvalidThreshold, "mean target must lie in (0, 1)");
    }
    if (!(tolerance > 0.0) || !std::isfinite(tolerance)) {
        throw Error(ErrorKind::ToleranceUnreachable, "tolerance must be positive and finite");
    }

    const double max_d = *std::ranges::max_element(distances);
    const auto zeros = static_cast<double>(std::ranges::count(distances, 0.0));
    const double zero_fraction = zeros / static_cast<double>(distances.size());
    if (max_d == 0.0 || zero_fraction >= mean_target) {
        throw Error(ErrorKind::DegenerateReference,
                    "fraction of zero nearest-neighbor distances (" + std::to_string(zero_fraction) +
                        ") is not below the mean target");
    }

    const auto excess = [&](double s) { return mean_kernel(distances, s) - mean_target; };

    double lo = 1e-9 * max_d;
    double hi = 10.0 * max_d;
    for (int i = 0; excess(hi) < 0.0; ++i) {
        if (i == 1024 || !std::isfinite(hi)) {
            throw Error(ErrorKind::DegenerateReference, "could not bracket the kernel width");
        }
        hi *= 2.0;
    }
    if (excess(lo) > 0.0) {
        throw Error(ErrorKind::DegenerateReference, "lower bracket already exceeds the mean target");
    }

    for (;;) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) {
            break;
        }
        const double e = excess(mid);
        if (e == 0.0) {
            lo = hi = mid;
            break;
        }
        (e < 0.0 ? lo : hi) = mid;
    }

    const double e_lo = std::abs(excess(lo));
    const double e_hi = std::abs(excess(hi));
    const double width = e_lo <= e_hi ? lo : hi;
    const double achieved = std::min(e_lo, e_hi);
    if (achieved > tolerance) {
        throw Error(ErrorKind::ToleranceUnreachable,
                    "mean kernel misses its target by " + std::to_string(achieved));
    }
    return width;
}

/// Calibrates the kernel width so the mean nearest-neighbor kernel over `reference` equals `mean_target`.
inline CalibrationModel calibrate(std::span<const EnvironmentDescriptor> reference, double mean_target = 0.5,
                                  double tolerance = 1e-9) {
    if (reference.size() < 2) {
        throw Error(ErrorKind::InsufficientReference, "need at least 2 reference entries");
    }
    const auto distances = nn_distances(reference);

    CalibrationModel model;
    model.kernel_width = solve_kernel_width(distances, mean_target, tolerance);
    model.dimension = reference.front().dimension();
    model.reference_count = reference.size();
    model.mean_target = mean_target;
    model.solver_tolerance = tolerance;
    return model;
}

} // namespace competence

#endif
