#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/dataset.hpp"
#include "rareaug/error.hpp"
#include "rareaug/minority.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::VectorXd;

enum class RelevanceMode { both_extremes, high_only, low_only };

struct ControlPoint {
    double y;
    double phi;
    double slope;
};

/// Piecewise cubic Hermite relevance phi(y) through ordered control points,
/// constant outside them, clamped to [0, 1].
struct RelevanceFunction {
    std::vector<ControlPoint> control_points;
    RelevanceMode mode = RelevanceMode::both_extremes;
    double iqr = 0.0; ///< interquartile range of the targets it was built from

    double operator()(double y) const {
        const auto& cp = control_points;
        if (cp.empty()) {
            return 0.0;
        }
        if (y <= cp.front().y) {
            return clamp01(cp.front().phi);
        }
        if (y >= cp.back().y) {
            return clamp01(cp.back().phi);
        }
        const auto upper = std::upper_bound(cp.begin(), cp.end(), y,
                                            [](double v, const ControlPoint& c) { return v < c.y; });
        const auto& a = *(upper - 1);
        const auto& b = *upper;
        if (y == a.y) {
            return clamp01(a.phi);
        }
        const double h = b.y - a.y;
        const double t = (y - a.y) / h;
        const double t2 = t * t, t3 = t2 * t;
        // a + (b - a) s(t) rather than the two-basis sum, so equal ends with
        // zero slopes give back exactly that value
        const double value = a.phi + (b.phi - a.phi) * (3 * t2 - 2 * t3) + (t3 - 2 * t2 + t) * h * a.slope +
                             (t3 - t2) * h * b.slope;
        return clamp01(value);
    }

    static double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }
};

/// Boxplot-based relevance: phi = 0 at the median, phi = 1 at the adjacent
/// values (the most extreme targets inside the 1.5 * IQR fences), zero
/// slopes everywhere so every segment is monotone.
inline RelevanceFunction build_relevance(std::span<const double> targets,
                                         RelevanceMode mode = RelevanceMode::both_extremes) {
    const std::set<double> distinct(targets.begin(), targets.end());
    if (distinct.size() < 5) {
        throw DataError("build_relevance: need at least 5 distinct target values, got " +
                        std::to_string(distinct.size()));
    }
    const double q1 = empirical_quantile(targets, 0.25);
    const double median = empirical_quantile(targets, 0.5);
    const double q3 = empirical_quantile(targets, 0.75);
    const double iqr = q3 - q1;
    if (!(iqr > 0.0)) {
        throw DataError("build_relevance: interquartile range is zero; supply control points manually");
    }
    const double hi_fence = q3 + 1.5 * iqr;
    const double lo_fence = q1 - 1.5 * iqr;
    double adj_hi = median, adj_lo = median;
    for (double y : targets) {
        if (y <= hi_fence) {
            adj_hi = std::max(adj_hi, y);
        }
        if (y >= lo_fence) {
            adj_lo = std::min(adj_lo, y);
        }
    }

    RelevanceFunction rel;
    rel.mode = mode;
    rel.iqr = iqr;
    if (mode != RelevanceMode::high_only) {
        if (!(adj_lo < median)) {
            throw DataError("build_relevance: no spread below the median");
        }
        rel.control_points.push_back({adj_lo, 1.0, 0.0});
    }
    rel.control_points.push_back({median, 0.0, 0.0});
    if (mode != RelevanceMode::low_only) {
        if (!(adj_hi > median)) {
            throw DataError("build_relevance: no spread above the median");
        }
        rel.control_points.push_back({adj_hi, 1.0, 0.0});
    }
    return rel;
}

inline RelevanceFunction build_relevance(const VectorXd& targets, RelevanceMode mode = RelevanceMode::both_extremes) {
    return build_relevance(std::span<const double>(targets.data(), targets.size()), mode);
}

/// Samples (y, phi(y)) on a uniform grid spanning the control points.
inline void write_relevance_csv(const RelevanceFunction& rel, std::ostream& out, int samples = 201) {
    out << "y,phi\n";
    if (rel.control_points.empty()) {
        return;
    }
    const double lo = rel.control_points.front().y;
    const double hi = rel.control_points.back().y;
    const double pad = 0.1 * (hi - lo);
    for (int i = 0; i < samples; ++i) {
        const double y = lo - pad + (hi - lo + 2 * pad) * i / (samples - 1);
        out << format_double(y) << ',' << format_double(rel(y)) << '\n';
    }
}

struct UtilityConfig {
    RelevanceFunction relevance;
    double t_r = 0.8;
    double error_scale = 1.0;
};

/// Error scale s: distance from the target value where phi reaches t_R to the
/// phi = 1 control point (smallest over the active tails), or IQR / 2 when
/// that is degenerate.
inline double default_error_scale(const RelevanceFunction& rel, double t_r) {
    double best = 0.0;
    const auto& cp = rel.control_points;
    for (std::size_t i = 0; i + 1 < cp.size(); ++i) {
        const ControlPoint& a = cp[i];
        const ControlPoint& b = cp[i + 1];
        const bool rising = a.phi < t_r && b.phi >= 1.0;
        const bool falling = a.phi >= 1.0 && b.phi < t_r;
        if (!rising && !falling) {
            continue;
        }
        double lo = a.y, hi = b.y;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * (std::abs(lo) + std::abs(hi) + 1.0); ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((rel(mid) < t_r) == rising) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        const double y_t = 0.5 * (lo + hi);
        const double s = rising ? b.y - y_t : y_t - a.y;
        if (s > 0.0 && (best == 0.0 || s < best)) {
            best = s;
        }
    }
    return best > 0.0 ? best : rel.iqr / 2.0;
}

inline UtilityConfig make_utility_config(RelevanceFunction rel, double t_r = 0.8) {
    detail::require(t_r > 0.0 && t_r < 1.0, "utility threshold t_R must lie in (0, 1)");
    const double s = default_error_scale(rel, t_r);
    if (!(s > 0.0)) {
        throw DataError("utility: cannot derive a positive error scale");
    }
    return {std::move(rel), t_r, s};
}

/// U = (1 - G) phi(y) - G max(phi(y), phi(y_hat)), G = min(1, |y_hat - y| / s).
inline double utility(double y_pred, double y_true, const UtilityConfig& config) {
    const double gamma = std::min(1.0, std::abs(y_pred - y_true) / config.error_scale);
    const double phi_true = config.relevance(y_true);
    const double phi_pred = config.relevance(y_pred);
    return (1.0 - gamma) * phi_true - gamma * std::max(phi_true, phi_pred);
}

namespace detail {

inline void require_same_length(Index a, Index b, const char* what) {
    if (a != b) {
        throw PreconditionError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
    }
}

} // namespace detail

inline double rmse(const VectorXd& y_true, const VectorXd& y_pred) {
    detail::require_same_length(y_true.size(), y_pred.size(), "rmse");
    detail::require(y_true.size() >= 1, "rmse: empty input");
    return std::sqrt((y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size()));
}

/// Squared error relevance area. Point i belongs to D^t exactly for
/// t in [0, phi(y_i)], so the integral over t is sum_i phi(y_i) e_i^2.
inline double sera(const VectorXd& y_true, const VectorXd& y_pred, const RelevanceFunction& rel) {
    detail::require_same_length(y_true.size(), y_pred.size(), "sera");
    double total = 0.0;
    for (Index i = 0; i < y_true.size(); ++i) {
        const double e = y_pred[i] - y_true[i];
        total += rel(y_true[i]) * (e * e); // phi = 1 adds the same rounded square as SSE
    }
    return total;
}

/// SERA by the trapezoid rule over `grid_points` relevance cut-offs in
/// [0, 1]. Cross-check for the closed form.
inline double sera_trapezoid(const VectorXd& y_true, const VectorXd& y_pred, const RelevanceFunction& rel,
                             int grid_points = 1001) {
    detail::require_same_length(y_true.size(), y_pred.size(), "sera_trapezoid");
    detail::require(grid_points >= 2, "sera_trapezoid: need at least 2 grid points");
    std::vector<double> phi(static_cast<std::size_t>(y_true.size()));
    for (Index i = 0; i < y_true.size(); ++i) {
        phi[static_cast<std::size_t>(i)] = rel(y_true[i]);
    }
    auto ser = [&](double t) {
        double s = 0.0;
        for (Index i = 0; i < y_true.size(); ++i) {
            if (phi[static_cast<std::size_t>(i)] >= t) {
                const double e = y_pred[i] - y_true[i];
                s += e * e;
            }
        }
        return s;
    };
    const double h = 1.0 / (grid_points - 1);
    double area = 0.0;
    double prev = ser(0.0);
    for (int k = 1; k < grid_points; ++k) {
        const double cur = ser(k * h);
        area += 0.5 * h * (prev + cur);
        prev = cur;
    }
    return area;
}

struct MetricReport {
    double rmse = 0.0;
    double sera = 0.0;
    double precision_phi = 0.0;
    double recall_phi = 0.0;
    double f_phi1 = 0.0;
    bool precision_defined = false;
    bool recall_defined = false;
    Index n_pred_relevant = 0; ///< predictions with phi(y_hat) > t_R
    Index n_true_relevant = 0; ///< targets with phi(y) > t_R
};

/// Utility-based precision, recall and their harmonic mean F_phi1. Each
/// numerator term 1 + U is capped at its denominator term, which keeps both
/// ratios in [0, 1]. An empty denominator leaves the ratio undefined
/// (reported as 0 with the flag cleared).
inline MetricReport f_phi(const VectorXd& y_true, const VectorXd& y_pred, const UtilityConfig& config) {
    detail::require_same_length(y_true.size(), y_pred.size(), "f_phi");
    double prec_num = 0.0, prec_den = 0.0, rec_num = 0.0, rec_den = 0.0;
    MetricReport r;
    for (Index i = 0; i < y_true.size(); ++i) {
        const double u = utility(y_pred[i], y_true[i], config);
        const double phi_pred = config.relevance(y_pred[i]);
        const double phi_true = config.relevance(y_true[i]);
        if (phi_pred > config.t_r) {
            ++r.n_pred_relevant;
            prec_num += std::min(1.0 + u, 1.0 + phi_pred);
            prec_den += 1.0 + phi_pred;
        }
        if (phi_true > config.t_r) {
            ++r.n_true_relevant;
            rec_num += std::min(1.0 + u, 1.0 + phi_true);
            rec_den += 1.0 + phi_true;
        }
    }
    r.precision_defined = prec_den > 0.0;
    r.recall_defined = rec_den > 0.0;
    r.precision_phi = r.precision_defined ? prec_num / prec_den : 0.0;
    r.recall_phi = r.recall_defined ? rec_num / rec_den : 0.0;
    const double sum = r.precision_phi + r.recall_phi;
    r.f_phi1 = sum > 0.0 ? 2.0 * r.precision_phi * r.recall_phi / sum : 0.0;
    return r;
}

inline MetricReport evaluate_predictions(const VectorXd& y_true, const VectorXd& y_pred,
                                         const UtilityConfig& config) {
    MetricReport r = f_phi(y_true, y_pred, config);
    r.rmse = rmse(y_true, y_pred);
    r.sera = sera(y_true, y_pred, config.relevance);
    return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
    return {{"rmse", r.rmse},
            {"sera", r.sera},
            {"precision_phi", r.precision_defined ? nlohmann::json(r.precision_phi) : nlohmann::json(nullptr)},
            {"recall_phi", r.recall_defined ? nlohmann::json(r.recall_phi) : nlohmann::json(nullptr)},
            {"f_phi1", r.f_phi1},
            {"f_phi1_defined", r.precision_defined && r.recall_defined},
            {"n_pred_relevant", r.n_pred_relevant},
            {"n_true_relevant", r.n_true_relevant}};
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test

enum class Direction { lower_is_better, higher_is_better };

enum class Winner { first, second, none };

struct WilcoxonResult {
    double statistic = 0.0; ///< min(W+, W-)
    double w_plus = 0.0;    ///< rank sum of positive differences a - b
    double p_value = 1.0;   ///< two-sided
    Index n_used = 0;       ///< pairs left after dropping zero differences
    bool exact = false;
    bool no_contest = false;
    Index wins_first = 0;
    Index wins_second = 0;
    Winner winner = Winner::none;
};

/// Average ranks (1-based) of |d|, ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

/// Exact two-sided p-value of W+ under the null, by dynamic programming over
/// doubled (integer) ranks; handles tied ranks.
inline double wilcoxon_exact_p(const std::vector<double>& ranks, double w_plus) {
    std::vector<long> doubled;
    long total = 0;
    for (double r : ranks) {
        doubled.push_back(std::lround(2.0 * r));
        total += doubled.back();
    }
    std::vector<double> count(static_cast<std::size_t>(total + 1), 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (long r : doubled) {
        for (long s = reach; s >= 0; --s) {
            if (count[static_cast<std::size_t>(s)] != 0.0) {
                count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
            }
        }
        reach += r;
    }
    const double outcomes = std::ldexp(1.0, static_cast<int>(ranks.size()));
    const long observed = std::lround(2.0 * w_plus);
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total; ++s) {
        if (s <= observed) {
            lower += count[static_cast<std::size_t>(s)];
        }
        if (s >= observed) {
            upper += count[static_cast<std::size_t>(s)];
        }
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / outcomes);
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
inline double wilcoxon_normal_p(const std::vector<double>& abs_diffs, const std::vector<double>& ranks,
                                double w_plus) {
    const auto n = static_cast<double>(ranks.size());
    const double mean = n * (n + 1.0) / 4.0;
    double variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    std::vector<double> sorted = abs_diffs;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) {
            ++j;
        }
        const auto t = static_cast<double>(j - i + 1);
        variance -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    if (!(variance > 0.0)) {
        return 1.0;
    }
    const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(variance);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

inline constexpr Index kWilcoxonExactLimit = 15;

/// Paired two-sided signed-rank test on a - b. Zero differences are dropped;
/// exact null distribution up to 15 remaining pairs, normal approximation
/// beyond. The winner is the method better on the majority of pairs.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           Direction direction = Direction::lower_is_better,
                                           std::optional<bool> force_exact = std::nullopt) {
    detail::require_same_length(static_cast<Index>(a.size()), static_cast<Index>(b.size()), "wilcoxon_signed_rank");
    detail::require(a.size() >= 5, "wilcoxon_signed_rank: need at least 5 pairs");

    WilcoxonResult res;
    std::vector<double> abs_diffs, signs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) {
            continue;
        }
        const bool first_better = direction == Direction::lower_is_better ? d < 0.0 : d > 0.0;
        ++(first_better ? res.wins_first : res.wins_second);
        abs_diffs.push_back(std::abs(d));
        signs.push_back(d > 0.0 ? 1.0 : -1.0);
    }
    res.n_used = static_cast<Index>(abs_diffs.size());
    if (res.n_used == 0) {
        res.no_contest = true;
        return res;
    }
    const std::vector<double> ranks = average_ranks(abs_diffs);
    double total = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        total += ranks[i];
        if (signs[i] > 0.0) {
            res.w_plus += ranks[i];
        }
    }
    res.statistic = std::min(res.w_plus, total - res.w_plus);
    res.exact = force_exact.value_or(res.n_used <= kWilcoxonExactLimit);
    res.p_value = res.exact ? wilcoxon_exact_p(ranks, res.w_plus) : wilcoxon_normal_p(abs_diffs, ranks, res.w_plus);
    if (res.wins_first > res.wins_second) {
        res.winner = Winner::first;
    } else if (res.wins_second > res.wins_first) {
        res.winner = Winner::second;
    }
    return res;
}

} // namespace rareaug
