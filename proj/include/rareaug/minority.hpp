#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/error.hpp"
#include "rareaug/mahalanobis.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Two-component 1-D Gaussian mixture over squared distances, relabelled so
/// that component 1 has the lower mean (majority) and component 2 the
/// higher mean (minority), plus the derived cut-off.
struct MixtureSplit {
    double weight_minority = 0.5; ///< mixing weight of component 2
    double mu1 = 0.0;
    double var1 = 1.0;
    double mu2 = 0.0;
    double var2 = 1.0;
    double threshold = 0.0;
    double log_likelihood = 0.0;
    int n_iterations = 0;
    bool converged = false;
    bool degenerate = false; ///< EM collapsed a variance or a weight
    bool fallback_used = false;
    std::vector<double> log_likelihood_trace; ///< initial value, then one per iteration
    std::vector<bool> minority_mask;          ///< d2[i] >= threshold

    Index minority_count() const {
        return static_cast<Index>(std::count(minority_mask.begin(), minority_mask.end(), true));
    }

    std::vector<Index> minority_indices() const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < minority_mask.size(); ++i) {
            if (minority_mask[i]) {
                out.push_back(static_cast<Index>(i));
            }
        }
        return out;
    }
};

struct EmOptions {
    int max_iter = 500;
    double tol = 1e-8;                  ///< relative log-likelihood change
    double variance_floor = 1e-12;      ///< times var(distances)
    double min_weight = 1e-3;
    double fallback_quantile = 0.95;
};

inline double normal_log_density(double x, double mu, double var) {
    const double d = x - mu;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

namespace detail {

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

inline double variance_of(std::span<const double> v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return s / static_cast<double>(v.size());
}

inline double log_add(double a, double b) {
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

} // namespace detail

/// Linear-interpolated empirical quantile (type 7).
inline double empirical_quantile(std::span<const double> values, double q) {
    detail::require(!values.empty(), "empirical_quantile: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Maximum-likelihood fit of a two-component Gaussian mixture by EM.
///
/// EM runs on the distances divided by their standard deviation, so the
/// iteration (and the relative stopping rule) is invariant to the scale of
/// the input. Initialization: split at the median, moments of each half,
/// equal weights. The returned fit has no threshold or mask yet.
inline MixtureSplit fit_em(std::span<const double> distances, const EmOptions& options = {}) {
    const std::size_t n = distances.size();
    detail::require(n >= 4, "fit_em: need at least 4 distances");
    const double spread = std::sqrt(detail::variance_of(distances));
    if (!(spread > 0.0)) {
        throw PreconditionError("fit_em: all distances are equal");
    }

    std::vector<double> x(n);
    std::transform(distances.begin(), distances.end(), x.begin(), [&](double d) { return d / spread; });
    const double floor = options.variance_floor; // var(x) == 1

    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t half = n / 2;
    const std::span<const double> lower(sorted.data(), half);
    const std::span<const double> upper(sorted.data() + half, n - half);

    double w2 = 0.5;
    double mu1 = detail::mean_of(lower), var1 = std::max(detail::variance_of(lower), floor);
    double mu2 = detail::mean_of(upper), var2 = std::max(detail::variance_of(upper), floor);

    MixtureSplit fit;
    std::vector<double> resp(n);
    auto e_step = [&]() {
        double ll = 0.0;
        const double lw1 = std::log(1.0 - w2), lw2 = std::log(w2);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = lw1 + normal_log_density(x[i], mu1, var1);
            const double b = lw2 + normal_log_density(x[i], mu2, var2);
            const double total = detail::log_add(a, b);
            resp[i] = std::exp(b - total);
            ll += total;
        }
        return ll;
    };

    double ll = e_step();
    fit.log_likelihood_trace.push_back(ll);
    for (int it = 0; it < options.max_iter; ++it) {
        double n2 = 0.0, s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            n2 += resp[i];
            s1 += (1.0 - resp[i]) * x[i];
            s2 += resp[i] * x[i];
        }
        const double n1 = static_cast<double>(n) - n2;
        w2 = n2 / static_cast<double>(n);
        if (!(w2 >= options.min_weight && w2 <= 1.0 - options.min_weight) || n1 <= 0.0 || n2 <= 0.0) {
            fit.degenerate = true;
            w2 = std::clamp(w2, options.min_weight, 1.0 - options.min_weight);
            fit.n_iterations = it + 1;
            break;
        }
        mu1 = s1 / n1;
        mu2 = s2 / n2;
        double q1 = 0.0, q2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            q1 += (1.0 - resp[i]) * (x[i] - mu1) * (x[i] - mu1);
            q2 += resp[i] * (x[i] - mu2) * (x[i] - mu2);
        }
        var1 = q1 / n1;
        var2 = q2 / n2;
        if (var1 < floor || var2 < floor) {
            fit.degenerate = true;
            var1 = std::max(var1, floor);
            var2 = std::max(var2, floor);
        }

        const double next = e_step();
        fit.log_likelihood_trace.push_back(next);
        fit.n_iterations = it + 1;
        const double change = std::abs(next - ll);
        ll = next;
        if (fit.degenerate) {
            break;
        }
        if (change < options.tol * std::abs(ll)) {
            fit.converged = true;
            break;
        }
    }

    if (mu1 > mu2) {
        std::swap(mu1, mu2);
        std::swap(var1, var2);
        w2 = 1.0 - w2;
    }
    const double log_spread = std::log(spread);
    fit.weight_minority = w2;
    fit.mu1 = mu1 * spread;
    fit.mu2 = mu2 * spread;
    fit.var1 = var1 * spread * spread;
    fit.var2 = var2 * spread * spread;
    fit.log_likelihood = ll - static_cast<double>(n) * log_spread;
    for (double& v : fit.log_likelihood_trace) {
        v -= static_cast<double>(n) * log_spread;
    }
    return fit;
}

/// Point T in (mu1, mu2) where weight1 * N(T | mu1, var1) equals
/// (1 - weight1) * N(T | mu2, var2), or nullopt when no crossing lies in
/// that interval.
///
/// Solves the quadratic obtained from the log of the equality. When both
/// roots fall in the interval the one where the majority density hands over
/// to the minority density (log ratio decreasing) is returned. The root is
/// polished with Newton steps on the log ratio.
inline std::optional<double> density_intersection(double weight1, double mu1, double var1, double mu2, double var2) {
    detail::require(weight1 > 0.0 && weight1 < 1.0, "density_intersection: weight must lie in (0, 1)");
    detail::require(var1 > 0.0 && var2 > 0.0, "density_intersection: variances must be positive");
    if (!(mu1 < mu2)) {
        return std::nullopt;
    }
    const double w2 = 1.0 - weight1;
    const double log_term = std::log((w2 * std::sqrt(var1)) / (weight1 * std::sqrt(var2)));
    const double a = var1 - var2;
    const double b = -2.0 * var1 * mu2 + 2.0 * var2 * mu1;
    const double c = var1 * mu2 * mu2 - var2 * mu1 * mu1 - 2.0 * var1 * var2 * log_term;

    // log(w1 N1) - log(w2 N2) and its derivative; same sign as the quadratic.
    const double log_w_ratio = std::log(weight1 / w2) + 0.5 * std::log(var2 / var1);
    auto log_ratio = [&](double t) {
        return log_w_ratio - 0.5 * (t - mu1) * (t - mu1) / var1 + 0.5 * (t - mu2) * (t - mu2) / var2;
    };
    auto slope = [&](double t) { return -(t - mu1) / var1 + (t - mu2) / var2; };

    std::vector<double> roots;
    if (std::abs(a) <= 1e-14 * std::max(var1, var2)) {
        // Equal variances: the log ratio is linear in T.
        roots.push_back(0.5 * (mu1 + mu2) + var1 * std::log(w2 / weight1) / (mu1 - mu2));
    } else {
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) {
            return std::nullopt;
        }
        const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
        if (q != 0.0) {
            roots.push_back(q / a);
            roots.push_back(c / q);
        } else {
            roots.push_back(-b / (2.0 * a));
        }
    }

    std::optional<double> chosen;
    for (double r : roots) {
        if (!(r > mu1 && r < mu2)) {
            continue;
        }
        if (!chosen || (slope(r) < 0.0 && slope(*chosen) >= 0.0)) {
            chosen = r;
        }
    }
    if (!chosen) {
        return std::nullopt;
    }

    double t = *chosen;
    for (int i = 0; i < 3; ++i) {
        const double d = slope(t);
        if (d == 0.0) {
            break;
        }
        const double next = t - log_ratio(t) / d;
        if (!(next > mu1 && next < mu2) || std::abs(log_ratio(next)) >= std::abs(log_ratio(t))) {
            break;
        }
        t = next;
    }
    return t;
}

/// Density-intersection threshold of a fitted mixture; nullopt when the fit
/// is degenerate or the components do not cross between their means.
inline std::optional<double> solve_threshold(const MixtureSplit& fit) {
    if (fit.degenerate) {
        return std::nullopt;
    }
    return density_intersection(1.0 - fit.weight_minority, fit.mu1, fit.var1, fit.mu2, fit.var2);
}

/// EM fit, threshold (or the quantile fallback) and minority mask for a set
/// of squared distances.
inline MixtureSplit split_distances(std::span<const double> distances, const EmOptions& options = {}) {
    MixtureSplit fit = fit_em(distances, options);
    if (const auto t = solve_threshold(fit)) {
        fit.threshold = *t;
        fit.fallback_used = false;
    } else {
        fit.threshold = empirical_quantile(distances, options.fallback_quantile);
        fit.fallback_used = true;
    }
    fit.minority_mask.resize(distances.size());
    for (std::size_t i = 0; i < distances.size(); ++i) {
        fit.minority_mask[i] = distances[i] >= fit.threshold;
    }
    return fit;
}

struct Detection {
    MixtureSplit split;
    GaussianStats stats;
    VectorXd distances; ///< squared Mahalanobis distance of every row
};

/// Joint Gaussian fit, squared distances from the mean, mixture split.
/// Requires at least two flagged rows, the least the generator can train on.
inline Detection detect_minority(const MatrixXd& rows, const EmOptions& options = {}) {
    Detection det;
    det.stats = fit_gaussian(rows);
    det.distances = squared_distances_from_mean(det.stats, rows);
    det.split = split_distances(std::span<const double>(det.distances.data(), det.distances.size()), options);
    if (det.split.minority_count() < 2) {
        throw DataError("minority detection flagged " + std::to_string(det.split.minority_count()) +
                        " rows; at least 2 are needed (consider a lower fallback quantile)");
    }
    return det;
}

inline Detection detect_minority(const JointDataset& data, const EmOptions& options = {}) {
    return detect_minority(data.rows, options);
}

inline nlohmann::json to_json(const MixtureSplit& s) {
    return {{"weight_minority", s.weight_minority},
            {"mu1", s.mu1},
            {"var1", s.var1},
            {"mu2", s.mu2},
            {"var2", s.var2},
            {"threshold", s.threshold},
            {"log_likelihood", s.log_likelihood},
            {"n_iterations", s.n_iterations},
            {"converged", s.converged},
            {"fallback_used", s.fallback_used},
            {"minority_count", s.minority_count()},
            {"n", s.minority_mask.size()}};
}

} // namespace rareaug
