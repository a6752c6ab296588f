#pragma once

#include <chrono>
#include <cstdint>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/dataset.hpp"
#include "rareaug/matcher.hpp"
#include "rareaug/minority.hpp"
#include "rareaug/random.hpp"
#include "rareaug/wgan.hpp"

namespace rareaug {

struct PipelineConfig {
    EmOptions em;
    GanConfig gan;
    MatchConfig match;
};

struct StageTimings {
    double detect_seconds = 0.0;
    double train_seconds = 0.0;
    double sample_seconds = 0.0;
    double match_seconds = 0.0;

    double total() const { return detect_seconds + train_seconds + sample_seconds + match_seconds; }
};

/// Everything one augmentation run produced. Matrices other than the inputs
/// and `augmented` live in standardized space.
struct AugmentArtifacts {
    JointDataset train;
    Standardizer standardizer;
    JointDataset standardized_train;
    Detection detection;
    MatrixXd minority_rows;
    TrainedGan gan;
    MatrixXd pool;
    MatchResult match;
    JointDataset augmented;
    StageTimings timings;
};

namespace detail {

class Stopwatch {
  public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

  private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline MatrixXd select_rows(const MatrixXd& rows, const std::vector<Index>& indices) {
    MatrixXd out(static_cast<Index>(indices.size()), rows.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.row(static_cast<Index>(i)) = rows.row(indices[i]);
    }
    return out;
}

} // namespace detail

/// Stage 1 on standardized data: returns the standardized copy and the
/// detection on it.
inline std::pair<JointDataset, Detection> standardized_detection(const JointDataset& train, Standardizer& standardizer,
                                                                 const EmOptions& em = {}) {
    auto [z, s] = standardize(train);
    standardizer = std::move(s);
    Detection det = detect_minority(z, em);
    return {std::move(z), std::move(det)};
}

/// Full augmentation: standardize, detect, train the generator on the
/// minority rows, sample a pool, match it against the real minority and
/// append the de-standardized picks to the training rows.
/// The generator seed is derive_seed(seed, 1) and the pool seed
/// derive_seed(seed, 2); `config.gan.seed` is ignored.
inline AugmentArtifacts augment(const JointDataset& train, const PipelineConfig& config, std::uint64_t seed,
                                const TrainObserver& observer = {}) {
    train.validate();
    AugmentArtifacts a;
    a.train = train;
    detail::Stopwatch clock;

    std::tie(a.standardized_train, a.detection) = standardized_detection(train, a.standardizer, config.em);
    a.minority_rows = detail::select_rows(a.standardized_train.rows, a.detection.split.minority_indices());
    a.timings.detect_seconds = clock.lap();

    GanConfig gan_config = config.gan;
    gan_config.seed = derive_seed(seed, 1);
    a.gan = train_gan(a.minority_rows, gan_config, observer);
    a.timings.train_seconds = clock.lap();

    a.pool = sample_pool(a.gan, gan_config.pool_size, derive_seed(seed, 2));
    a.timings.sample_seconds = clock.lap();

    a.match = match(a.minority_rows, a.pool, a.detection.stats, config.match);
    a.augmented = assemble_augmented(train, a.match, a.standardizer);
    a.timings.match_seconds = clock.lap();
    return a;
}

inline nlohmann::json to_json(const StageTimings& t) {
    return {{"detect_seconds", t.detect_seconds},
            {"train_seconds", t.train_seconds},
            {"sample_seconds", t.sample_seconds},
            {"match_seconds", t.match_seconds}};
}

inline nlohmann::json to_json(const MatchConfig& c) {
    return {{"k", c.k},
            {"n_pick", c.n_pick},
            {"without_replacement", c.without_replacement},
            {"strict_shortlist", c.strict_shortlist}};
}

inline nlohmann::json to_json(const EmOptions& o) {
    return {{"max_iter", o.max_iter},
            {"tol", o.tol},
            {"variance_floor", o.variance_floor},
            {"min_weight", o.min_weight},
            {"fallback_quantile", o.fallback_quantile}};
}

} // namespace rareaug
