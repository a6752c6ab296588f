#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/dataset.hpp"
#include "rareaug/error.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Sample mean and covariance of a point cloud, with the (possibly
/// ridge-regularized) precision matrix and the factors used to evaluate
/// Mahalanobis distances.
struct GaussianStats {
    VectorXd mean;
    MatrixXd covariance;            ///< 1/(n-1) sample covariance, unregularized
    MatrixXd precision;             ///< (covariance + ridge_used * I)^-1
    MatrixXd cholesky_of_precision; ///< lower L with L L^T = precision
    MatrixXd covariance_factor;     ///< lower C with C C^T = covariance + ridge_used * I
    double ridge_used = 0.0;

    Index dim() const { return mean.size(); }
};

/// Relative ridge ladder, in units of trace(covariance) / p.
inline constexpr std::array<double, 5> kRidgeLadder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};

/// A factorization is accepted only if its reciprocal condition estimate is
/// at least this; below it the inverse loses too many digits to honour
/// precision * covariance = I to 1e-8.
inline constexpr double kMinReciprocalCondition = 1e-7;

inline GaussianStats fit_gaussian(const MatrixXd& rows) {
    const Index n = rows.rows();
    const Index p = rows.cols();
    detail::require(p >= 1, "fit_gaussian: no columns");
    if (n < p + 2) {
        throw DataError("fit_gaussian: " + std::to_string(n) + " rows is too few for a " + std::to_string(p) +
                        "-dimensional covariance (need at least " + std::to_string(p + 2) + ")");
    }
    if (!rows.allFinite()) {
        throw DataError("fit_gaussian: non-finite input");
    }

    GaussianStats stats;
    stats.mean = rows.colwise().mean().transpose();
    const MatrixXd centered = rows.rowwise() - stats.mean.transpose();
    stats.covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
    stats.covariance = 0.5 * (stats.covariance + stats.covariance.transpose());

    const double scale = stats.covariance.trace() / static_cast<double>(p);
    if (!(scale > 0.0)) {
        throw NumericalError("fit_gaussian: covariance is zero (all rows identical)");
    }

    const MatrixXd identity = MatrixXd::Identity(p, p);
    for (double rung : kRidgeLadder) {
        const double ridge = rung * scale;
        Eigen::LLT<MatrixXd> llt(stats.covariance + ridge * identity);
        if (llt.info() != Eigen::Success || !(llt.rcond() >= kMinReciprocalCondition)) {
            continue;
        }
        MatrixXd precision = llt.solve(identity);
        precision = 0.5 * (precision + precision.transpose());
        Eigen::LLT<MatrixXd> precision_llt(precision);
        if (precision_llt.info() != Eigen::Success) {
            continue;
        }
        stats.ridge_used = ridge;
        stats.covariance_factor = llt.matrixL();
        stats.precision = std::move(precision);
        stats.cholesky_of_precision = precision_llt.matrixL();
        return stats;
    }
    throw NumericalError("fit_gaussian: covariance not factorizable even at the largest ridge");
}

inline GaussianStats fit_gaussian(const JointDataset& data) { return fit_gaussian(data.rows); }

namespace detail {

inline void check_dim(const GaussianStats& stats, Index size, const char* what) {
    if (size != stats.dim()) {
        throw PreconditionError(std::string(what) + ": dimension " + std::to_string(size) + " does not match " +
                                std::to_string(stats.dim()));
    }
}

} // namespace detail

/// Whitened coordinates C^-1 v for each row v; Euclidean geometry in this
/// space is Mahalanobis geometry in the original one.
inline MatrixXd whiten(const GaussianStats& stats, const MatrixXd& rows) {
    detail::check_dim(stats, rows.cols(), "whiten");
    return stats.covariance_factor.triangularView<Eigen::Lower>().solve(rows.transpose()).transpose();
}

/// (z - mean)^T V (z - mean), by triangular solve against the covariance
/// factor.
inline double squared_distance_from_mean(const GaussianStats& stats, const VectorXd& z) {
    detail::check_dim(stats, z.size(), "squared_distance_from_mean");
    const VectorXd w = stats.covariance_factor.triangularView<Eigen::Lower>().solve(z - stats.mean);
    return w.squaredNorm();
}

/// Row-wise squared distances from the mean.
inline VectorXd squared_distances_from_mean(const GaussianStats& stats, const MatrixXd& rows) {
    detail::check_dim(stats, rows.cols(), "squared_distances_from_mean");
    return whiten(stats, rows.rowwise() - stats.mean.transpose()).rowwise().squaredNorm();
}

/// sqrt((a - b)^T V (a - b)).
inline double pairwise_distance(const GaussianStats& stats, const VectorXd& a, const VectorXd& b) {
    detail::check_dim(stats, a.size(), "pairwise_distance");
    detail::check_dim(stats, b.size(), "pairwise_distance");
    const VectorXd w = stats.covariance_factor.triangularView<Eigen::Lower>().solve(a - b);
    return w.norm();
}

inline nlohmann::json to_json(const GaussianStats& stats) {
    nlohmann::json cov = nlohmann::json::array();
    for (Index i = 0; i < stats.dim(); ++i) {
        cov.push_back(std::vector<double>(stats.covariance.row(i).begin(), stats.covariance.row(i).end()));
    }
    return {{"mean", std::vector<double>(stats.mean.begin(), stats.mean.end())},
            {"covariance", cov},
            {"ridge_used", stats.ridge_used}};
}

} // namespace rareaug
