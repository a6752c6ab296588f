#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/error.hpp"
#include "rareaug/random.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Tabular regression data as joint vectors z = (x, y): one row per
/// observation, target in the last column.
struct JointDataset {
    MatrixXd rows;
    std::vector<std::string> column_names;

    Index n() const { return rows.rows(); }
    Index p() const { return rows.cols(); }
    Index target_index() const { return rows.cols() - 1; }

    VectorXd target() const { return rows.col(target_index()); }
    MatrixXd features() const { return rows.leftCols(target_index()); }

    /// Rows selected by index, in the given order.
    JointDataset subset(const std::vector<Index>& indices) const {
        JointDataset out{MatrixXd(static_cast<Index>(indices.size()), p()), column_names};
        for (std::size_t i = 0; i < indices.size(); ++i) {
            out.rows.row(static_cast<Index>(i)) = rows.row(indices[i]);
        }
        return out;
    }

    void validate() const {
        detail::require(static_cast<Index>(column_names.size()) == p(), "JointDataset: column name count mismatch");
        if (!rows.allFinite()) {
            throw DataError("dataset contains non-finite values");
        }
    }
};

/// Target column given by header name or zero-based position.
using ColumnRef = std::variant<std::string, std::size_t>;

struct CsvOptions {
    /// Minimum number of data rows. 0 means no check; the pipeline uses
    /// p + 2, the least that gives a usable covariance estimate.
    Index min_rows = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) {
            return cells;
        }
        start = comma + 1;
    }
}

inline bool parse_double(std::string_view text, double& value) {
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    if (text.empty()) {
        return false;
    }
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    return ec == std::errc() && ptr == text.data() + text.size();
}

} // namespace detail

/// Parses comma-separated text with a mandatory header. The target column
/// is moved to the last position; other columns keep their order.
inline JointDataset parse_csv(std::istream& in, const ColumnRef& target, CsvOptions options = {}) {
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("CSV is empty: header row required");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    std::vector<std::string> header;
    for (auto cell : detail::split_commas(line)) {
        header.emplace_back(cell);
    }
    const std::size_t width = header.size();

    std::size_t target_pos = 0;
    if (const auto* name = std::get_if<std::string>(&target)) {
        const auto it = std::find(header.begin(), header.end(), *name);
        if (it == header.end()) {
            throw DataError("target column '" + *name + "' not found in header");
        }
        target_pos = static_cast<std::size_t>(it - header.begin());
    } else {
        target_pos = std::get<std::size_t>(target);
        if (target_pos >= width) {
            throw DataError("target column index " + std::to_string(target_pos) + " out of range (" +
                            std::to_string(width) + " columns)");
        }
    }

    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < width; ++c) {
        if (c != target_pos) {
            order.push_back(c);
        }
    }
    order.push_back(target_pos);

    std::vector<double> values;
    std::size_t data_rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) {
            continue;
        }
        ++data_rows;
        const auto cells = detail::split_commas(line);
        if (cells.size() != width) {
            throw DataError("row " + std::to_string(data_rows) + " (line " + std::to_string(line_no) + ") has " +
                            std::to_string(cells.size()) + " cells, expected " + std::to_string(width));
        }
        for (std::size_t c : order) {
            double v = 0.0;
            if (!detail::parse_double(cells[c], v) || !std::isfinite(v)) {
                throw DataError("non-numeric cell '" + std::string(cells[c]) + "' at row " +
                                std::to_string(data_rows) + " (line " + std::to_string(line_no) + "), column '" +
                                header[c] + "'");
            }
            values.push_back(v);
        }
    }

    JointDataset data;
    for (std::size_t c : order) {
        data.column_names.push_back(header[c]);
    }
    const auto n = static_cast<Index>(data_rows);
    const auto p = static_cast<Index>(width);
    data.rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), n, p);
    if (n < std::max<Index>(options.min_rows, 1)) {
        throw DataError("CSV has " + std::to_string(n) + " data rows; at least " +
                        std::to_string(std::max<Index>(options.min_rows, 1)) + " required");
    }
    return data;
}

inline JointDataset load_csv(const std::string& path, const ColumnRef& target, CsvOptions options = {}) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    try {
        return parse_csv(in, target, options);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double value) {
    char buffer[32];
    const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
    return std::string(buffer, ptr);
}

inline void write_csv(const JointDataset& data, std::ostream& out) {
    for (std::size_t c = 0; c < data.column_names.size(); ++c) {
        out << (c ? "," : "") << data.column_names[c];
    }
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        for (Index j = 0; j < data.p(); ++j) {
            out << (j ? "," : "") << format_double(data.rows(i, j));
        }
        out << '\n';
    }
}

inline void write_csv(const JointDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    write_csv(data, out);
}

/// Per-column z-score transform. Uses the population standard deviation;
/// constant columns are centred and keep scale 1.
struct Standardizer {
    VectorXd mean;
    VectorXd scale;
    std::vector<bool> constant;

    static Standardizer fit(const MatrixXd& rows) {
        detail::require(rows.rows() >= 1, "Standardizer::fit: no rows");
        Standardizer s;
        s.mean = rows.colwise().mean().transpose();
        s.scale.resize(rows.cols());
        s.constant.assign(static_cast<std::size_t>(rows.cols()), false);
        for (Index j = 0; j < rows.cols(); ++j) {
            const double sd =
                std::sqrt((rows.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(rows.rows()));
            const bool is_constant = (rows.col(j).array() == rows(0, j)).all() || !(sd > 0.0);
            s.constant[static_cast<std::size_t>(j)] = is_constant;
            s.scale[j] = is_constant ? 1.0 : sd;
            if (is_constant) {
                s.mean[j] = rows(0, j);
            }
        }
        return s;
    }

    MatrixXd transform(const MatrixXd& rows) const {
        detail::require(rows.cols() == mean.size(), "Standardizer::transform: width mismatch");
        return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    }

    MatrixXd inverse_transform(const MatrixXd& rows) const {
        detail::require(rows.cols() == mean.size(), "Standardizer::inverse_transform: width mismatch");
        return (rows.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
    }
};

inline std::pair<JointDataset, Standardizer> standardize(const JointDataset& data) {
    detail::require(data.n() >= 2, "standardize: need at least 2 rows");
    Standardizer s = Standardizer::fit(data.rows);
    return {JointDataset{s.transform(data.rows), data.column_names}, std::move(s)};
}

struct SplitPlan {
    std::vector<Index> train_indices;
    std::vector<Index> test_indices;
    std::uint64_t seed = 0;
    double train_fraction = 0.0;
};

/// Random train/test partitions. Split i shuffles with derive_seed(seed, i);
/// both index lists are returned sorted.
inline std::vector<SplitPlan> make_splits(Index n, Index n_splits, double train_fraction, std::uint64_t seed) {
    detail::require(n_splits >= 1, "make_splits: n_splits must be >= 1");
    detail::require(train_fraction > 0.0 && train_fraction < 1.0, "make_splits: train_fraction must lie in (0, 1)");
    const auto n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_train < 1 || n_train >= n) {
        throw PreconditionError("make_splits: " + std::to_string(n) + " rows at fraction " +
                                std::to_string(train_fraction) + " leaves an empty train or test side");
    }
    std::vector<SplitPlan> plans;
    plans.reserve(static_cast<std::size_t>(n_splits));
    for (Index s = 0; s < n_splits; ++s) {
        SplitPlan plan;
        plan.seed = derive_seed(seed, static_cast<std::uint64_t>(s));
        plan.train_fraction = train_fraction;
        std::vector<Index> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), Index{0});
        Rng rng(plan.seed);
        rng.shuffle(std::span<Index>(perm));
        plan.train_indices.assign(perm.begin(), perm.begin() + n_train);
        plan.test_indices.assign(perm.begin() + n_train, perm.end());
        std::sort(plan.train_indices.begin(), plan.train_indices.end());
        std::sort(plan.test_indices.begin(), plan.test_indices.end());
        plans.push_back(std::move(plan));
    }
    return plans;
}

inline nlohmann::json to_json(const SplitPlan& plan) {
    return {{"seed", plan.seed},
            {"train_fraction", plan.train_fraction},
            {"train_indices", plan.train_indices},
            {"test_indices", plan.test_indices}};
}

} // namespace rareaug
