#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/dataset.hpp"
#include "rareaug/error.hpp"
#include "rareaug/metrics.hpp"
#include "rareaug/pipeline.hpp"
#include "rareaug/random.hpp"

namespace rareaug {

// ---------------------------------------------------------------------------
// Baselines and downstream model

/// Appends round(ratio * m) rows drawn uniformly with replacement from the
/// m minority rows that Stage 1 flags on this training set.
inline JointDataset random_oversample(const JointDataset& train, double ratio, std::uint64_t seed,
                                      const EmOptions& em = {}) {
    detail::require(ratio >= 0.0, "random_oversample: ratio must be >= 0");
    train.validate();
    Standardizer unused;
    const auto [z, det] = standardized_detection(train, unused, em);
    const std::vector<Index> minority = det.split.minority_indices();
    if (minority.empty()) {
        throw DataError("random_oversample: no minority rows detected");
    }
    const auto extra = static_cast<Index>(std::llround(ratio * static_cast<double>(minority.size())));
    JointDataset out{MatrixXd(train.n() + extra, train.p()), train.column_names};
    out.rows.topRows(train.n()) = train.rows;
    Rng rng(seed);
    for (Index i = 0; i < extra; ++i) {
        out.rows.row(train.n() + i) = train.rows.row(minority[rng.below(minority.size())]);
    }
    return out;
}

/// k-nearest-neighbour regression. Features are z-scored with the training
/// rows' statistics; distance is Euclidean, ties go to the lower row index,
/// and the prediction is the mean target of the k neighbours.
inline VectorXd knn_regressor_fit_predict(const JointDataset& train, const MatrixXd& test_features, Index k) {
    if (train.n() == 0) {
        throw PreconditionError("knn_regressor: empty training set");
    }
    detail::require(k >= 1 && k <= train.n(), "knn_regressor: need 1 <= k <= training rows");
    detail::require(test_features.cols() == train.p() - 1, "knn_regressor: feature width mismatch");

    const MatrixXd raw = train.features();
    const Standardizer s = Standardizer::fit(raw);
    const MatrixXd xs = s.transform(raw);
    const MatrixXd ts = s.transform(test_features);
    const VectorXd y = train.target();

    VectorXd pred(ts.rows());
    std::vector<Index> idx(static_cast<std::size_t>(train.n()));
    VectorXd d2(train.n());
    for (Index t = 0; t < ts.rows(); ++t) {
        for (Index i = 0; i < train.n(); ++i) {
            d2[i] = (xs.row(i) - ts.row(t)).squaredNorm();
        }
        std::iota(idx.begin(), idx.end(), Index{0});
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                          [&](Index a, Index b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
        double sum = 0.0;
        for (Index j = 0; j < k; ++j) {
            sum += y[idx[static_cast<std::size_t>(j)]];
        }
        pred[t] = sum / static_cast<double>(k);
    }
    return pred;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark data

/// n rows with d standard-normal features and a right-skewed, heavy-tailed
/// target y = exp(s) + 0.1 e, where s averages the first three features
/// (scaled to unit variance) and e is standard normal. Extreme targets come
/// from sparse corners of feature space.
inline JointDataset make_synthetic_imbalanced(Index n, Index d, std::uint64_t seed) {
    detail::require(n >= 1 && d >= 1, "make_synthetic_imbalanced: need n, d >= 1");
    Rng rng(seed);
    const Index informative = std::min<Index>(3, d);
    JointDataset data{MatrixXd(n, d + 1), {}};
    for (Index j = 0; j < d; ++j) {
        data.column_names.push_back("x" + std::to_string(j + 1));
    }
    data.column_names.push_back("y");
    for (Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Index j = 0; j < d; ++j) {
            data.rows(i, j) = rng.normal();
            if (j < informative) {
                s += data.rows(i, j);
            }
        }
        s /= std::sqrt(static_cast<double>(informative));
        data.rows(i, d) = std::exp(s) + 0.1 * rng.normal();
    }
    return data;
}

// ---------------------------------------------------------------------------
// Experiment protocol

inline const std::vector<std::string>& builtin_methods() {
    static const std::vector<std::string> names{"none", "random_oversample", "mahalanobis_gan"};
    return names;
}

struct ExperimentConfig {
    std::string dataset_label; ///< echoed into the report
    Index n_splits = 25;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    std::vector<std::string> methods{"none", "random_oversample", "mahalanobis_gan"};
    Index knn_k = 5;
    double ro_ratio = 1.0;
    PipelineConfig pipeline;
    std::vector<double> thresholds{0.8}; ///< t_R values; one F_phi1 series each
    RelevanceMode relevance_mode = RelevanceMode::both_extremes;
    /// method name -> CSV with columns split_id,row_id,prediction; row_id is
    /// the row's position in the full dataset.
    std::map<std::string, std::string> external_predictions;
    double alpha = 0.05;
    int threads = 1;
    bool record_timings = false;

    std::vector<std::string> all_methods() const {
        std::vector<std::string> out = methods;
        for (const auto& [name, path] : external_predictions) {
            out.push_back(name);
        }
        return out;
    }

    void validate() const {
        detail::require(n_splits >= 1, "ExperimentConfig: n_splits must be >= 1");
        detail::require(train_fraction > 0.0 && train_fraction < 1.0,
                        "ExperimentConfig: train_fraction must lie in (0, 1)");
        detail::require(knn_k >= 1, "ExperimentConfig: knn_k must be >= 1");
        detail::require(ro_ratio >= 0.0, "ExperimentConfig: ro_ratio must be >= 0");
        detail::require(alpha > 0.0 && alpha < 1.0, "ExperimentConfig: alpha must lie in (0, 1)");
        detail::require(threads >= 1, "ExperimentConfig: threads must be >= 1");
        detail::require(!thresholds.empty(), "ExperimentConfig: need at least one t_R");
        for (double t : thresholds) {
            detail::require(t > 0.0 && t < 1.0, "ExperimentConfig: t_R must lie in (0, 1)");
        }
        const auto names = all_methods();
        detail::require(!names.empty(), "ExperimentConfig: at least one method is required");
        for (const auto& m : methods) {
            detail::require(std::find(builtin_methods().begin(), builtin_methods().end(), m) != builtin_methods().end(),
                            "ExperimentConfig: unknown method '" + m + "'");
        }
        for (const auto& [name, path] : external_predictions) {
            detail::require(std::find(builtin_methods().begin(), builtin_methods().end(), name) ==
                                builtin_methods().end(),
                            "ExperimentConfig: external method '" + name + "' shadows a built-in method");
        }
        auto sorted = names;
        std::sort(sorted.begin(), sorted.end());
        detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                        "ExperimentConfig: duplicate method name");
    }
};

struct MethodSplitResult {
    bool ok = false;
    std::string error;
    Index train_rows = 0; ///< rows the regressor was fitted on
    std::vector<MetricReport> by_threshold;
    double seconds = 0.0;
    std::optional<StageTimings> stages;
};

struct SplitInfo {
    Index index = 0;
    std::uint64_t seed = 0;
    Index n_train = 0;
    Index n_test = 0;
    std::uint64_t test_checksum = 0;
    bool test_untouched = true;
};

struct PairwiseResult {
    std::string first;
    std::string second;
    std::string metric;
    Index wins_first = 0;
    Index wins_second = 0;
    Index no_contests = 0; ///< ties plus splits where either method failed
    Index n_used = 0;
    double p_value = 1.0;
    bool exact = false;
    bool significant = false;
    Winner winner = Winner::none;
};

struct EvalReport {
    ExperimentConfig config;
    Index n_rows = 0;
    Index p = 0;
    std::vector<std::string> methods;
    std::vector<std::string> metrics;
    std::vector<SplitInfo> splits;
    std::map<std::string, std::vector<MethodSplitResult>> results;
    std::vector<PairwiseResult> pairwise;

    Index failures() const {
        Index f = 0;
        for (const auto& [m, rs] : results) {
            f += static_cast<Index>(std::count_if(rs.begin(), rs.end(), [](const auto& r) { return !r.ok; }));
        }
        return f;
    }
};

namespace detail {

/// FNV-1a over the bytes of a matrix.
inline std::uint64_t checksum(const MatrixXd& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
        h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
    return h ^ static_cast<std::uint64_t>(m.rows()) ^ (static_cast<std::uint64_t>(m.cols()) << 32);
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string threshold_label(double t) {
    std::ostringstream os;
    os << "f_phi1@" << t;
    return os.str();
}

inline std::vector<std::string> metric_names(const std::vector<double>& thresholds) {
    std::vector<std::string> names{"rmse", "sera"};
    for (double t : thresholds) {
        names.push_back(threshold_label(t));
    }
    return names;
}

inline double metric_value(const MethodSplitResult& r, std::size_t metric) {
    if (metric == 0) {
        return r.by_threshold.front().rmse;
    }
    if (metric == 1) {
        return r.by_threshold.front().sera;
    }
    return r.by_threshold[metric - 2].f_phi1;
}

inline Direction metric_direction(std::size_t metric) {
    return metric < 2 ? Direction::lower_is_better : Direction::higher_is_better;
}

inline std::uint64_t method_stream(const std::string& name) {
    const auto& b = builtin_methods();
    const auto it = std::find(b.begin(), b.end(), name);
    return static_cast<std::uint64_t>(it - b.begin()) + 1;
}

/// split_id -> (row_id -> prediction)
using ExternalTable = std::map<Index, std::map<Index, double>>;

inline ExternalTable load_external(const std::string& path) {
    const JointDataset t = load_csv(path, std::string("prediction"));
    const auto find = [&](const std::string& col) {
        const auto it = std::find(t.column_names.begin(), t.column_names.end(), col);
        if (it == t.column_names.end()) {
            throw DataError(path + ": missing column '" + col + "'");
        }
        return static_cast<Index>(it - t.column_names.begin());
    };
    const Index split_col = find("split_id");
    const Index row_col = find("row_id");
    ExternalTable table;
    for (Index i = 0; i < t.n(); ++i) {
        table[static_cast<Index>(std::llround(t.rows(i, split_col)))][static_cast<Index>(std::llround(t.rows(i, row_col)))] =
            t.rows(i, t.target_index());
    }
    return table;
}

} // namespace detail

/// Repeated random train/test evaluation.
///
/// For every split each method sees only the training rows, the k-NN
/// regressor is fitted on whatever the method returns, and predictions on
/// the untouched test rows are scored with RMSE, SERA and F_phi1 (one per
/// t_R). The relevance function of a split comes from its training targets.
/// A failure in one (method, split) cell is recorded and the run goes on.
/// Pairwise tables count per-split wins and run a two-sided signed-rank
/// test over the splits where both methods succeeded.
inline EvalReport run_experiment(const JointDataset& data, const ExperimentConfig& config) {
    config.validate();
    data.validate();

    EvalReport report;
    report.config = config;
    report.n_rows = data.n();
    report.p = data.p();
    report.methods = config.all_methods();
    report.metrics = detail::metric_names(config.thresholds);

    std::map<std::string, detail::ExternalTable> external;
    for (const auto& [name, path] : config.external_predictions) {
        external[name] = detail::load_external(path);
    }

    const auto plans = make_splits(data.n(), config.n_splits, config.train_fraction, config.seed);
    report.splits.resize(plans.size());
    for (const auto& m : report.methods) {
        report.results[m].resize(plans.size());
    }

    const auto run_split = [&](std::size_t s) {
        const SplitPlan& plan = plans[s];
        SplitInfo& info = report.splits[s];
        info.index = static_cast<Index>(s);
        info.seed = plan.seed;
        info.n_train = static_cast<Index>(plan.train_indices.size());
        info.n_test = static_cast<Index>(plan.test_indices.size());

        const JointDataset train = data.subset(plan.train_indices);
        const JointDataset test = data.subset(plan.test_indices);
        info.test_checksum = detail::checksum(test.rows);
        const MatrixXd test_x = test.features();
        const VectorXd test_y = test.target();

        std::optional<std::vector<UtilityConfig>> utilities;
        std::string relevance_error;
        try {
            const RelevanceFunction rel = build_relevance(train.target(), config.relevance_mode);
            utilities.emplace();
            for (double t : config.thresholds) {
                utilities->push_back(make_utility_config(rel, t));
            }
        } catch (const Error& e) {
            relevance_error = std::string("relevance: ") + e.what();
        }

        for (const auto& method : report.methods) {
            MethodSplitResult& r = report.results[method][s];
            if (!utilities) {
                r.error = relevance_error;
                continue;
            }
            detail::Stopwatch clock;
            try {
                VectorXd pred;
                if (external.count(method)) {
                    const auto split_it = external.at(method).find(static_cast<Index>(s));
                    if (split_it == external.at(method).end()) {
                        throw DataError("no external predictions for split " + std::to_string(s));
                    }
                    pred.resize(test.n());
                    for (std::size_t i = 0; i < plan.test_indices.size(); ++i) {
                        const auto row_it = split_it->second.find(plan.test_indices[i]);
                        if (row_it == split_it->second.end()) {
                            throw DataError("no external prediction for split " + std::to_string(s) + ", row " +
                                            std::to_string(plan.test_indices[i]));
                        }
                        pred[static_cast<Index>(i)] = row_it->second;
                    }
                    r.train_rows = train.n();
                } else {
                    const std::uint64_t seed = derive_seed(plan.seed, detail::method_stream(method));
                    JointDataset fitted;
                    if (method == "none") {
                        fitted = train;
                    } else if (method == "random_oversample") {
                        fitted = random_oversample(train, config.ro_ratio, seed, config.pipeline.em);
                    } else {
                        AugmentArtifacts a = augment(train, config.pipeline, seed);
                        r.stages = a.timings;
                        fitted = std::move(a.augmented);
                    }
                    r.train_rows = fitted.n();
                    pred = knn_regressor_fit_predict(fitted, test_x, std::min(config.knn_k, fitted.n()));
                }
                for (const auto& u : *utilities) {
                    r.by_threshold.push_back(evaluate_predictions(test_y, pred, u));
                }
                r.ok = true;
            } catch (const Error& e) {
                r.error = e.what();
            } catch (const std::exception& e) {
                r.error = std::string("unexpected: ") + e.what();
            }
            r.seconds = clock.lap();
        }
        info.test_untouched = detail::checksum(test.rows) == info.test_checksum &&
                              detail::checksum(data.subset(plan.test_indices).rows) == info.test_checksum;
    };

    const auto n_threads = static_cast<std::size_t>(std::min<Index>(config.threads, config.n_splits));
    if (n_threads <= 1) {
        for (std::size_t s = 0; s < plans.size(); ++s) {
            run_split(s);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (std::size_t w = 0; w < n_threads; ++w) {
            workers.emplace_back([&] {
                for (std::size_t s = next++; s < plans.size(); s = next++) {
                    run_split(s);
                }
            });
        }
    }

    for (std::size_t a = 0; a < report.methods.size(); ++a) {
        for (std::size_t b = a + 1; b < report.methods.size(); ++b) {
            const auto& ra = report.results.at(report.methods[a]);
            const auto& rb = report.results.at(report.methods[b]);
            for (std::size_t m = 0; m < report.metrics.size(); ++m) {
                PairwiseResult pr;
                pr.first = report.methods[a];
                pr.second = report.methods[b];
                pr.metric = report.metrics[m];
                std::vector<double> va, vb;
                for (std::size_t s = 0; s < plans.size(); ++s) {
                    if (ra[s].ok && rb[s].ok) {
                        va.push_back(detail::metric_value(ra[s], m));
                        vb.push_back(detail::metric_value(rb[s], m));
                    }
                }
                const Direction dir = detail::metric_direction(m);
                for (std::size_t i = 0; i < va.size(); ++i) {
                    const double d = va[i] - vb[i];
                    if (d == 0.0) {
                        continue;
                    }
                    const bool first_better = dir == Direction::lower_is_better ? d < 0.0 : d > 0.0;
                    ++(first_better ? pr.wins_first : pr.wins_second);
                }
                pr.no_contests = static_cast<Index>(plans.size()) - pr.wins_first - pr.wins_second;
                if (pr.wins_first > pr.wins_second) {
                    pr.winner = Winner::first;
                } else if (pr.wins_second > pr.wins_first) {
                    pr.winner = Winner::second;
                }
                if (va.size() >= 5 && pr.wins_first + pr.wins_second > 0) {
                    const WilcoxonResult w = wilcoxon_signed_rank(va, vb, dir);
                    pr.n_used = w.n_used;
                    pr.p_value = w.p_value;
                    pr.exact = w.exact;
                }
                pr.significant = pr.winner != Winner::none && pr.p_value < config.alpha;
                report.pairwise.push_back(std::move(pr));
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report output

inline const char* to_string(Winner w) {
    switch (w) {
    case Winner::first:
        return "first";
    case Winner::second:
        return "second";
    default:
        return "none";
    }
}

inline const char* to_string(RelevanceMode m) {
    switch (m) {
    case RelevanceMode::high_only:
        return "high_only";
    case RelevanceMode::low_only:
        return "low_only";
    default:
        return "both_extremes";
    }
}

inline RelevanceMode relevance_mode_from_string(const std::string& s) {
    if (s == "both_extremes" || s == "both") {
        return RelevanceMode::both_extremes;
    }
    if (s == "high_only" || s == "high") {
        return RelevanceMode::high_only;
    }
    if (s == "low_only" || s == "low") {
        return RelevanceMode::low_only;
    }
    throw PreconditionError("unknown relevance mode '" + s + "'");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"dataset", c.dataset_label},
            {"n_splits", c.n_splits},
            {"train_fraction", c.train_fraction},
            {"seed", c.seed},
            {"methods", c.methods},
            {"external_predictions", c.external_predictions},
            {"knn_k", c.knn_k},
            {"ro_ratio", c.ro_ratio},
            {"thresholds", c.thresholds},
            {"relevance_mode", to_string(c.relevance_mode)},
            {"alpha", c.alpha},
            {"em", to_json(c.pipeline.em)},
            {"gan", to_json(c.pipeline.gan)},
            {"match", to_json(c.pipeline.match)}};
}

/// The report as JSON. Wall-clock fields appear only when the run recorded
/// timings, so that reruns under one seed serialize identically.
inline nlohmann::json to_json(const EvalReport& r) {
    using nlohmann::json;
    json j;
    j["format"] = "rareaug-eval-report-v1";
    j["config"] = to_json(r.config);
    j["n_rows"] = r.n_rows;
    j["p"] = r.p;
    j["methods"] = r.methods;
    j["metrics"] = r.metrics;

    json splits = json::array();
    for (const auto& s : r.splits) {
        splits.push_back({{"split", s.index},
                          {"seed", s.seed},
                          {"n_train", s.n_train},
                          {"n_test", s.n_test},
                          {"test_checksum", detail::hex64(s.test_checksum)},
                          {"test_untouched", s.test_untouched}});
    }
    j["splits"] = std::move(splits);

    json results = json::object();
    json summary = json::object();
    for (const auto& method : r.methods) {
        json rows = json::array();
        const auto& rs = r.results.at(method);
        std::vector<double> sums(r.metrics.size(), 0.0);
        Index ok = 0;
        for (std::size_t s = 0; s < rs.size(); ++s) {
            const auto& cell = rs[s];
            json row{{"split", s}, {"ok", cell.ok}};
            if (!cell.ok) {
                row["error"] = cell.error;
            } else {
                ++ok;
                row["train_rows"] = cell.train_rows;
                json per_t = json::array();
                for (std::size_t t = 0; t < cell.by_threshold.size(); ++t) {
                    json m = to_json(cell.by_threshold[t]);
                    m["t_r"] = r.config.thresholds[t];
                    per_t.push_back(std::move(m));
                }
                row["metrics"] = std::move(per_t);
                for (std::size_t m = 0; m < r.metrics.size(); ++m) {
                    sums[m] += detail::metric_value(cell, m);
                }
            }
            if (r.config.record_timings) {
                row["seconds"] = cell.seconds;
                if (cell.stages) {
                    row["stages"] = to_json(*cell.stages);
                }
            }
            rows.push_back(std::move(row));
        }
        results[method] = std::move(rows);
        json means = json::object();
        for (std::size_t m = 0; m < r.metrics.size(); ++m) {
            means[r.metrics[m]] = ok > 0 ? json(sums[m] / static_cast<double>(ok)) : json(nullptr);
        }
        summary[method] = {{"successful_splits", ok}, {"mean", std::move(means)}};
    }
    j["results"] = std::move(results);
    j["summary"] = std::move(summary);

    json pairs = json::array();
    for (const auto& p : r.pairwise) {
        pairs.push_back({{"first", p.first},
                         {"second", p.second},
                         {"metric", p.metric},
                         {"wins_first", p.wins_first},
                         {"wins_second", p.wins_second},
                         {"no_contests", p.no_contests},
                         {"n_used", p.n_used},
                         {"p_value", p.p_value},
                         {"exact", p.exact},
                         {"significant", p.significant},
                         {"winner", p.winner == Winner::first    ? json(p.first)
                                    : p.winner == Winner::second ? json(p.second)
                                                                 : json(nullptr)}});
    }
    j["pairwise"] = std::move(pairs);
    j["failures"] = r.failures();
    return j;
}

/// Plain-text tables: mean metric per method, then pairwise wins with
/// significant wins in parentheses.
inline void write_summary(const EvalReport& r, std::ostream& out) {
    const auto old_flags = out.flags();
    const auto old_precision = out.precision();
    out << std::left << std::setw(22) << "method" << std::right;
    for (const auto& m : r.metrics) {
        out << std::setw(14) << m;
    }
    out << std::setw(10) << "failed" << '\n';
    out << std::setprecision(6);
    for (const auto& method : r.methods) {
        const auto& rs = r.results.at(method);
        out << std::left << std::setw(22) << method << std::right;
        Index ok = 0;
        std::vector<double> sums(r.metrics.size(), 0.0);
        for (const auto& cell : rs) {
            if (!cell.ok) {
                continue;
            }
            ++ok;
            for (std::size_t m = 0; m < r.metrics.size(); ++m) {
                sums[m] += detail::metric_value(cell, m);
            }
        }
        for (double s : sums) {
            if (ok > 0) {
                out << std::setw(14) << s / static_cast<double>(ok);
            } else {
                out << std::setw(14) << "-";
            }
        }
        out << std::setw(10) << static_cast<Index>(rs.size()) - ok << '\n';
    }
    if (!r.pairwise.empty()) {
        out << "\npairwise wins over " << r.splits.size() << " splits (significant wins at alpha " << r.config.alpha
            << " in parentheses)\n";
        for (const auto& p : r.pairwise) {
            const Index sig_first = p.significant && p.winner == Winner::first ? p.wins_first : 0;
            const Index sig_second = p.significant && p.winner == Winner::second ? p.wins_second : 0;
            out << "  " << std::left << std::setw(14) << p.metric << std::setw(20) << p.first << p.wins_first << " ("
                << sig_first << ")  vs  " << std::setw(20) << p.second << p.wins_second << " (" << sig_second
                << ")  ties/failed " << p.no_contests << "  p=" << p.p_value << std::right << '\n';
        }
    }
    out.flags(old_flags);
    out.precision(old_precision);
}

} // namespace rareaug
