#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "rareaug/dataset.hpp"
#include "rareaug/error.hpp"
#include "rareaug/mahalanobis.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct MatchConfig {
    Index k = 3;
    Index n_pick = 1;
    bool without_replacement = true;
    /// Picks come only from the k-nearest shortlist. When false, a real point
    /// whose shortlist is used up falls through to the next nearest unused
    /// candidate beyond k.
    bool strict_shortlist = true;

    void validate() const {
        detail::require(k >= 1, "MatchConfig: k must be >= 1");
        detail::require(n_pick >= 1 && n_pick <= k, "MatchConfig: need 1 <= n_pick <= k");
    }
};

struct Assignment {
    Index real_index;
    Index pool_index;
    double delta;
};

struct MatchResult {
    /// Selected pool rows, in assignment order, in the space the pool was
    /// given in (standardized in the pipeline).
    MatrixXd refined_set;
    std::vector<Assignment> assignments;
    std::vector<Index> unmatched_real;
    std::vector<Index> processing_order; ///< real indices, rarest first
};

/// Real points sorted by descending squared distance from the mean, ties by
/// index.
inline std::vector<Index> rarest_first_order(const VectorXd& squared_distances) {
    std::vector<Index> order(static_cast<std::size_t>(squared_distances.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return squared_distances[a] > squared_distances[b]; });
    return order;
}

/// Greedy Mahalanobis nearest-neighbour filtering of a synthetic pool.
///
/// Each real minority point, rarest first, ranks the pool by
/// delta(z_r, .) = sqrt((z~ - z_r)^T V (z~ - z_r)) with ties on pool index,
/// keeps its k nearest and takes the n_pick closest of those not already
/// taken by an earlier real point.
inline MatchResult match(const MatrixXd& real_minority, const MatrixXd& pool, const GaussianStats& stats,
                         const MatchConfig& config = {}) {
    config.validate();
    if (pool.rows() == 0) {
        throw PreconditionError("match: synthetic pool is empty");
    }
    detail::require(real_minority.rows() >= 1, "match: no real minority rows");
    detail::require(real_minority.cols() == stats.dim() && pool.cols() == stats.dim(), "match: dimension mismatch");

    const Index n_pool = pool.rows();
    const MatrixXd real_w = whiten(stats, real_minority);
    const MatrixXd pool_w = whiten(stats, pool);

    MatchResult result;
    result.processing_order = rarest_first_order(squared_distances_from_mean(stats, real_minority));

    std::vector<bool> used(static_cast<std::size_t>(n_pool), false);
    std::vector<double> delta(static_cast<std::size_t>(n_pool));
    std::vector<Index> candidates(static_cast<std::size_t>(n_pool));
    std::vector<Index> selected;

    for (Index r : result.processing_order) {
        for (Index j = 0; j < n_pool; ++j) {
            delta[static_cast<std::size_t>(j)] = (pool_w.row(j) - real_w.row(r)).norm();
        }
        const auto closer = [&](Index a, Index b) {
            const double da = delta[static_cast<std::size_t>(a)], db = delta[static_cast<std::size_t>(b)];
            return da < db || (da == db && a < b);
        };

        candidates.resize(static_cast<std::size_t>(n_pool));
        std::iota(candidates.begin(), candidates.end(), Index{0});
        if (config.strict_shortlist || !config.without_replacement) {
            const auto k = std::min(config.k, n_pool);
            std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), closer);
            candidates.resize(static_cast<std::size_t>(k));
        } else {
            std::erase_if(candidates, [&](Index j) { return used[static_cast<std::size_t>(j)]; });
            const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.n_pick), candidates.size());
            std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                              candidates.end(), closer);
            candidates.resize(k);
        }

        selected.clear();
        for (Index j : candidates) {
            if (static_cast<Index>(selected.size()) == config.n_pick) {
                break;
            }
            if (config.without_replacement && used[static_cast<std::size_t>(j)]) {
                continue;
            }
            selected.push_back(j);
        }
        if (selected.empty()) {
            result.unmatched_real.push_back(r);
            continue;
        }
        for (Index j : selected) {
            used[static_cast<std::size_t>(j)] = true;
            result.assignments.push_back({r, j, delta[static_cast<std::size_t>(j)]});
        }
    }

    result.refined_set.resize(static_cast<Index>(result.assignments.size()), pool.cols());
    for (std::size_t i = 0; i < result.assignments.size(); ++i) {
        result.refined_set.row(static_cast<Index>(i)) = pool.row(result.assignments[i].pool_index);
    }
    return result;
}

/// Original training rows, unchanged and in order, followed by the
/// de-standardized refined synthetic rows.
inline JointDataset assemble_augmented(const JointDataset& train, const MatchResult& refined,
                                       const Standardizer& standardizer) {
    if (refined.refined_set.rows() > 0 && refined.refined_set.cols() != train.p()) {
        throw PreconditionError("assemble_augmented: synthetic rows have " +
                                std::to_string(refined.refined_set.cols()) + " columns, train has " +
                                std::to_string(train.p()));
    }
    detail::require(standardizer.mean.size() == train.p(), "assemble_augmented: standardizer width mismatch");
    JointDataset out{MatrixXd(train.n() + refined.refined_set.rows(), train.p()), train.column_names};
    out.rows.topRows(train.n()) = train.rows;
    if (refined.refined_set.rows() > 0) {
        out.rows.bottomRows(refined.refined_set.rows()) = standardizer.inverse_transform(refined.refined_set);
    }
    return out;
}

inline void write_assignments_csv(const MatchResult& result, std::ostream& out) {
    out << "real_index,pool_index,delta\n";
    for (const auto& a : result.assignments) {
        out << a.real_index << ',' << a.pool_index << ',' << format_double(a.delta) << '\n';
    }
}

} // namespace rareaug
