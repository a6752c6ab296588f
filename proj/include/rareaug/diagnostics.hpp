#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/dataset.hpp"
#include "rareaug/error.hpp"
#include "rareaug/matcher.hpp"
#include "rareaug/pipeline.hpp"

namespace rareaug {

/// Pearson correlation of the columns of `rows`. A zero-variance column gets
/// correlation 0 with every other column and 1 with itself.
inline MatrixXd pearson_correlation(const MatrixXd& rows) {
    detail::require(rows.rows() >= 2, "pearson_correlation: need at least 2 rows");
    const MatrixXd centered = rows.rowwise() - rows.colwise().mean();
    const MatrixXd cov = centered.transpose() * centered;
    const Index p = rows.cols();
    MatrixXd corr = MatrixXd::Identity(p, p);
    for (Index i = 0; i < p; ++i) {
        for (Index j = i + 1; j < p; ++j) {
            const double denom = std::sqrt(cov(i, i) * cov(j, j));
            const double r = denom > 0.0 ? std::clamp(cov(i, j) / denom, -1.0, 1.0) : 0.0;
            corr(i, j) = corr(j, i) = r;
        }
    }
    return corr;
}

/// Sorted squared distances against chi^2_p quantiles at (i + 0.5) / n.
struct QqRow {
    double empirical;
    double theoretical;
    bool minority;
    Index index; ///< training row the distance belongs to
};

inline std::vector<QqRow> chi_square_qq(const VectorXd& squared_distances, const std::vector<bool>& minority_mask,
                                        Index degrees_of_freedom) {
    detail::require(squared_distances.size() == static_cast<Index>(minority_mask.size()),
                    "chi_square_qq: mask length mismatch");
    detail::require(degrees_of_freedom >= 1, "chi_square_qq: need at least one degree of freedom");
    const Index n = squared_distances.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return squared_distances[a] < squared_distances[b]; });
    const boost::math::chi_squared chi2(static_cast<double>(degrees_of_freedom));
    std::vector<QqRow> out;
    out.reserve(order.size());
    for (Index i = 0; i < n; ++i) {
        const Index r = order[static_cast<std::size_t>(i)];
        const double prob = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        out.push_back({squared_distances[r], boost::math::quantile(chi2, prob), minority_mask[static_cast<std::size_t>(r)], r});
    }
    return out;
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    return out;
}

inline void write_matrix_csv(const MatrixXd& m, const std::vector<std::string>& header,
                             const std::filesystem::path& path) {
    auto out = open_for_write(path);
    for (std::size_t j = 0; j < header.size(); ++j) {
        out << (j ? "," : "") << header[j];
    }
    out << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            out << (j ? "," : "") << format_double(m(i, j));
        }
        out << '\n';
    }
}

/// Correlation matrix with a leading column of row names.
inline void write_labelled_matrix_csv(const MatrixXd& m, const std::vector<std::string>& names,
                                      const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "column";
    for (const auto& n : names) {
        out << ',' << n;
    }
    out << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        out << names[static_cast<std::size_t>(i)];
        for (Index j = 0; j < m.cols(); ++j) {
            out << ',' << format_double(m(i, j));
        }
        out << '\n';
    }
}

} // namespace detail

/// Files written by export_diagnostics, relative to its directory.
struct DiagnosticsFiles {
    static constexpr const char* distances = "distances.csv";
    static constexpr const char* mixture = "mixture.json";
    static constexpr const char* qq = "qq_chi2.csv";
    static constexpr const char* corr_real = "correlation_real.csv";
    static constexpr const char* corr_synthetic = "correlation_synthetic.csv";
    static constexpr const char* corr_difference = "correlation_difference.csv";
    static constexpr const char* embed_real = "embedding_real_minority.csv";
    static constexpr const char* embed_synthetic = "embedding_synthetic.csv";
    static constexpr const char* embed_pool = "embedding_pool.csv";
    static constexpr const char* assignments = "assignments.csv";
    static constexpr const char* losses = "gan_losses.csv";
};

/// Writes the Stage 1 histogram data and mixture fit, chi^2 Q-Q data,
/// correlation matrices of real minority vs matched synthetic rows (and
/// their difference, synthetic minus real), raw matrices for external
/// embedding tools, the match audit and the GAN loss curve. Correlations and
/// embeddings are in the original data units.
inline void export_diagnostics(const AugmentArtifacts& a, const std::filesystem::path& dir) {
    const Index p = a.train.p();
    if (a.detection.distances.size() != a.train.n() || a.minority_rows.rows() < 2 || a.pool.rows() == 0) {
        throw PreconditionError("export_diagnostics: artifacts are incomplete");
    }
    if (a.match.refined_set.rows() < 2) {
        throw PreconditionError("export_diagnostics: fewer than 2 matched synthetic rows; correlations undefined");
    }
    std::filesystem::create_directories(dir);
    const auto& split = a.detection.split;

    {
        auto out = detail::open_for_write(dir / DiagnosticsFiles::distances);
        out << "index,d2,minority\n";
        for (Index i = 0; i < a.detection.distances.size(); ++i) {
            out << i << ',' << format_double(a.detection.distances[i]) << ','
                << (split.minority_mask[static_cast<std::size_t>(i)] ? 1 : 0) << '\n';
        }
    }
    {
        nlohmann::json j = to_json(split);
        j["gaussian"] = to_json(a.detection.stats);
        j["degenerate"] = split.degenerate;
        auto out = detail::open_for_write(dir / DiagnosticsFiles::mixture);
        out << j.dump(2) << '\n';
    }
    {
        auto out = detail::open_for_write(dir / DiagnosticsFiles::qq);
        out << "empirical,theoretical,minority,index\n";
        for (const auto& r : chi_square_qq(a.detection.distances, split.minority_mask, p)) {
            out << format_double(r.empirical) << ',' << format_double(r.theoretical) << ',' << (r.minority ? 1 : 0)
                << ',' << r.index << '\n';
        }
    }

    const MatrixXd real = a.standardizer.inverse_transform(a.minority_rows);
    const MatrixXd synthetic = a.standardizer.inverse_transform(a.match.refined_set);
    const MatrixXd corr_real = pearson_correlation(real);
    const MatrixXd corr_syn = pearson_correlation(synthetic);
    const auto& names = a.train.column_names;
    detail::write_labelled_matrix_csv(corr_real, names, dir / DiagnosticsFiles::corr_real);
    detail::write_labelled_matrix_csv(corr_syn, names, dir / DiagnosticsFiles::corr_synthetic);
    detail::write_labelled_matrix_csv(corr_syn - corr_real, names, dir / DiagnosticsFiles::corr_difference);

    detail::write_matrix_csv(real, names, dir / DiagnosticsFiles::embed_real);
    detail::write_matrix_csv(synthetic, names, dir / DiagnosticsFiles::embed_synthetic);
    detail::write_matrix_csv(a.standardizer.inverse_transform(a.pool), names, dir / DiagnosticsFiles::embed_pool);
    {
        auto out = detail::open_for_write(dir / DiagnosticsFiles::assignments);
        write_assignments_csv(a.match, out);
    }
    {
        auto out = detail::open_for_write(dir / DiagnosticsFiles::losses);
        write_loss_history_csv(a.gan, out);
    }
}

} // namespace rareaug
