#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/error.hpp"
#include "rareaug/neuralnet.hpp"
#include "rareaug/random.hpp"

namespace rareaug {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// WGAN-GP hyperparameters. Layer lists hold hidden widths only; the data
/// dimension p is taken from the training rows.
struct GanConfig {
    Index latent_dim = 64;
    double lambda_gp = 10.0;
    Index pool_size = 10000;
    Index critic_steps_per_gen = 5;
    Index batch_size = 0; ///< 0 means min(64, minority count)
    Index total_gen_iterations = 2000;
    std::uint64_t seed = 0;
    std::vector<Index> generator_hidden{128, 256, 128};
    std::vector<Index> critic_hidden{256, 256, 128};
    // The critic runs 10x the generator's learning rate so it keeps up; with
    // equal rates the generator mean orbits the data mean by several sd.
    nn::AdamConfig critic_adam{.learning_rate = 1e-3};
    nn::AdamConfig generator_adam{.learning_rate = 1e-4};
    bool linear_lr_decay = false; ///< anneal both learning rates linearly to 0
    /// Sampling uses an exponential moving average of the generator iterates
    /// with this decay; 0 samples from the last iterate.
    double generator_ema_decay = 0.99;

    Index effective_batch_size(Index minority_count) const {
        return batch_size > 0 ? std::min(batch_size, minority_count) : std::min<Index>(64, minority_count);
    }

    std::vector<Index> generator_sizes(Index data_dim) const {
        std::vector<Index> sizes{latent_dim};
        sizes.insert(sizes.end(), generator_hidden.begin(), generator_hidden.end());
        sizes.push_back(data_dim);
        return sizes;
    }

    std::vector<Index> critic_sizes(Index data_dim) const {
        std::vector<Index> sizes{data_dim};
        sizes.insert(sizes.end(), critic_hidden.begin(), critic_hidden.end());
        sizes.push_back(1);
        return sizes;
    }

    void validate(Index minority_count) const {
        detail::require(latent_dim >= 1, "GanConfig: latent_dim must be >= 1");
        detail::require(lambda_gp >= 0.0, "GanConfig: lambda_gp must be >= 0");
        detail::require(critic_steps_per_gen >= 1, "GanConfig: critic_steps_per_gen must be >= 1");
        detail::require(total_gen_iterations >= 0, "GanConfig: total_gen_iterations must be >= 0");
        detail::require(batch_size >= 0, "GanConfig: batch_size must be >= 0");
        detail::require(pool_size >= minority_count, "GanConfig: pool_size must be at least the minority count");
        detail::require(generator_ema_decay >= 0.0 && generator_ema_decay < 1.0,
                        "GanConfig: generator_ema_decay must lie in [0, 1)");
    }
};

struct LossRecord {
    double critic_loss;
    double generator_loss;
    double penalty;
};

struct TrainedGan {
    nn::Mlp generator;           ///< sampling weights (EMA of the iterates when enabled)
    nn::Mlp generator_iterate;   ///< weights the optimizer actually updated
    nn::Mlp critic;
    std::vector<LossRecord> loss_history;
    GanConfig config;
    Index data_dim = 0;
};

struct CriticLossTerms {
    double fake_score = 0.0; ///< mean D(G(eps))
    double real_score = 0.0; ///< mean D(z)
    double penalty = 0.0;    ///< lambda * mean (||grad D(u)|| - 1)^2
    double total = 0.0;
    MatrixXd interpolates;
};

/// u = alpha * real + (1 - alpha) * fake, one alpha per row.
inline MatrixXd interpolate_rows(const MatrixXd& real, const MatrixXd& fake, const VectorXd& alpha) {
    detail::require(real.rows() == fake.rows() && real.cols() == fake.cols() && alpha.size() == real.rows(),
                    "interpolate_rows: shape mismatch");
    return alpha.asDiagonal() * real + (VectorXd::Ones(alpha.size()) - alpha).asDiagonal() * fake;
}

namespace detail {

inline void require_finite(const MatrixXd& m, const char* what) {
    if (!m.allFinite()) {
        throw NumericalError(std::string(what) + ": non-finite forward pass");
    }
}

} // namespace detail

/// Critic objective E[D(G(eps))] - E[D(z)] + lambda * E[(||grad_u D(u)|| - 1)^2].
inline CriticLossTerms critic_loss(const nn::Mlp& critic, const nn::Mlp& generator, const MatrixXd& real_batch,
                                   const MatrixXd& noise_batch, const VectorXd& alpha, double lambda_gp) {
    detail::require(real_batch.rows() == noise_batch.rows(), "critic_loss: batch sizes differ");
    detail::require((alpha.array() >= 0.0).all() && (alpha.array() <= 1.0).all(),
                    "critic_loss: alpha entries must lie in [0, 1]");
    const MatrixXd fake = nn::forward(generator, noise_batch);
    detail::require_finite(fake, "critic_loss");
    CriticLossTerms terms;
    const MatrixXd fake_scores = nn::forward(critic, fake);
    const MatrixXd real_scores = nn::forward(critic, real_batch);
    detail::require_finite(fake_scores, "critic_loss");
    detail::require_finite(real_scores, "critic_loss");
    terms.fake_score = fake_scores.mean();
    terms.real_score = real_scores.mean();
    terms.interpolates = interpolate_rows(real_batch, fake, alpha);
    terms.penalty = nn::penalty_value_and_grad(critic, terms.interpolates, lambda_gp).value;
    terms.total = terms.fake_score - terms.real_score + terms.penalty;
    return terms;
}

/// Generator objective -E[D(G(eps))].
inline double generator_loss(const nn::Mlp& critic, const nn::Mlp& generator, const MatrixXd& noise_batch) {
    const MatrixXd scores = nn::forward(critic, nn::forward(generator, noise_batch));
    detail::require_finite(scores, "generator_loss");
    return -scores.mean();
}

struct CriticStep {
    CriticLossTerms terms;
    nn::Mlp grads;
};

/// Critic loss and its gradient with respect to critic parameters; the
/// generator output is treated as a constant.
inline CriticStep critic_loss_and_grad(const nn::Mlp& critic, const MatrixXd& real_batch, const MatrixXd& fake_batch,
                                       const VectorXd& alpha, double lambda_gp) {
    const Index b = real_batch.rows();
    MatrixXd stacked(2 * b, real_batch.cols());
    stacked << real_batch, fake_batch;
    const nn::ForwardCache cache = nn::forward_cached(critic, stacked);
    detail::require_finite(cache.output(), "critic step");

    MatrixXd grad_out(2 * b, 1);
    grad_out.topRows(b).setConstant(-1.0 / static_cast<double>(b));
    grad_out.bottomRows(b).setConstant(1.0 / static_cast<double>(b));

    CriticStep step;
    step.terms.real_score = cache.output().topRows(b).mean();
    step.terms.fake_score = cache.output().bottomRows(b).mean();
    step.grads = nn::backward(critic, cache, grad_out).param_grads;

    step.terms.interpolates = interpolate_rows(real_batch, fake_batch, alpha);
    auto penalty = nn::penalty_value_and_grad(critic, step.terms.interpolates, lambda_gp);
    step.terms.penalty = penalty.value;
    step.grads += penalty.grads;
    step.terms.total = step.terms.fake_score - step.terms.real_score + step.terms.penalty;
    return step;
}

struct GeneratorStep {
    double loss;
    nn::Mlp grads;
};

/// Generator loss and its gradient with respect to generator parameters,
/// backpropagated through the (fixed) critic.
inline GeneratorStep generator_loss_and_grad(const nn::Mlp& critic, const nn::Mlp& generator,
                                             const MatrixXd& noise_batch) {
    const Index b = noise_batch.rows();
    const nn::ForwardCache gen_cache = nn::forward_cached(generator, noise_batch);
    detail::require_finite(gen_cache.output(), "generator step");
    const nn::ForwardCache critic_cache = nn::forward_cached(critic, gen_cache.output());
    detail::require_finite(critic_cache.output(), "generator step");
    const MatrixXd grad_out = MatrixXd::Constant(b, 1, -1.0 / static_cast<double>(b));
    const MatrixXd grad_fake = nn::backward(critic, critic_cache, grad_out, true).input_grads;
    return {-critic_cache.output().mean(), nn::backward(generator, gen_cache, grad_fake).param_grads};
}

inline MatrixXd normal_matrix(Rng& rng, Index rows, Index cols) {
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = rng.normal();
        }
    }
    return m;
}

/// Raised when training produces a non-finite value. Carries the networks
/// as they were after the last fully finite iteration.
class TrainingDiverged : public NumericalError {
  public:
    TrainingDiverged(Index iteration, TrainedGan last_healthy)
      : NumericalError("WGAN-GP training diverged at generator iteration " + std::to_string(iteration)),
        iteration_(iteration), last_healthy_(std::move(last_healthy)) {}

    Index iteration() const { return iteration_; }
    const TrainedGan& last_healthy() const { return last_healthy_; }

  private:
    Index iteration_;
    TrainedGan last_healthy_;
};

/// Called after every generator iteration with the 1-based iteration count.
using TrainObserver = std::function<void(Index iteration, const TrainedGan& state)>;

/// Trains a WGAN-GP on `minority_rows` (m x p, standardized space).
///
/// Each generator iteration runs `critic_steps_per_gen` critic updates, each
/// on a fresh minibatch drawn without replacement and fresh noise, followed
/// by one generator update on its own noise. Fully deterministic for a given
/// seed.
inline TrainedGan train_gan(const MatrixXd& minority_rows, const GanConfig& config,
                            const TrainObserver& observer = {}) {
    const Index m = minority_rows.rows();
    const Index p = minority_rows.cols();
    if (m < 2) {
        throw PreconditionError("train_gan: need at least 2 minority rows, got " + std::to_string(m));
    }
    detail::require(minority_rows.allFinite(), "train_gan: training rows must be finite");
    config.validate(m);

    Rng rng(config.seed);
    TrainedGan gan;
    gan.config = config;
    gan.data_dim = p;
    gan.generator_iterate = nn::make_mlp(config.generator_sizes(p), rng);
    gan.critic = nn::make_mlp(config.critic_sizes(p), rng);
    gan.generator = gan.generator_iterate;
    gan.loss_history.reserve(static_cast<std::size_t>(config.total_gen_iterations));

    auto critic_opt = nn::make_adam(gan.critic, config.critic_adam);
    auto generator_opt = nn::make_adam(gan.generator_iterate, config.generator_adam);
    const double ema = config.generator_ema_decay;

    const Index batch = config.effective_batch_size(m);
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    MatrixXd real_batch(batch, p);
    VectorXd alpha(batch);

    TrainedGan healthy;
    for (Index it = 0; it < config.total_gen_iterations; ++it) {
        if (config.linear_lr_decay) {
            const double scale = 1.0 - static_cast<double>(it) / static_cast<double>(config.total_gen_iterations);
            critic_opt.config.learning_rate = config.critic_adam.learning_rate * scale;
            generator_opt.config.learning_rate = config.generator_adam.learning_rate * scale;
        }
        healthy.generator = gan.generator;
        healthy.generator_iterate = gan.generator_iterate;
        healthy.critic = gan.critic;
        try {
            CriticLossTerms last_terms;
            for (Index c = 0; c < config.critic_steps_per_gen; ++c) {
                // partial Fisher-Yates: the first `batch` slots become the sample
                for (Index i = 0; i < batch; ++i) {
                    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(m - i)));
                    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
                    real_batch.row(i) = minority_rows.row(order[static_cast<std::size_t>(i)]);
                }
                const MatrixXd noise = normal_matrix(rng, batch, config.latent_dim);
                for (Index i = 0; i < batch; ++i) {
                    alpha[i] = rng.uniform();
                }
                const MatrixXd fake = nn::forward(gan.generator_iterate, noise);
                detail::require_finite(fake, "critic step");
                CriticStep step = critic_loss_and_grad(gan.critic, real_batch, fake, alpha, config.lambda_gp);
                nn::adam_step(gan.critic, step.grads, critic_opt);
                last_terms = std::move(step.terms);
            }
            const MatrixXd noise = normal_matrix(rng, batch, config.latent_dim);
            GeneratorStep gstep = generator_loss_and_grad(gan.critic, gan.generator_iterate, noise);
            nn::adam_step(gan.generator_iterate, gstep.grads, generator_opt);
            if (ema > 0.0) {
                gan.generator *= ema;
                nn::Mlp step_share = gan.generator_iterate;
                step_share *= 1.0 - ema;
                gan.generator += step_share;
            } else {
                gan.generator = gan.generator_iterate;
            }

            const LossRecord record{last_terms.total, gstep.loss, last_terms.penalty};
            if (!std::isfinite(record.critic_loss) || !std::isfinite(record.generator_loss) ||
                !std::isfinite(record.penalty) || !gan.critic.all_finite() || !gan.generator_iterate.all_finite()) {
                throw NumericalError("non-finite state");
            }
            gan.loss_history.push_back(record);
        } catch (const NumericalError&) {
            healthy.config = config;
            healthy.data_dim = p;
            healthy.loss_history = gan.loss_history;
            throw TrainingDiverged(it, std::move(healthy));
        }
        if (observer) {
            observer(it + 1, gan);
        }
    }
    return gan;
}

/// Draws n rows G(eps_j), eps_j ~ N(0, I_q). Noise is drawn row by row from
/// a single seeded stream, so row j sees the same eps_j for every n (the
/// outputs agree up to matrix-product rounding).
inline MatrixXd sample_pool(const TrainedGan& gan, Index n, std::uint64_t seed) {
    detail::require(n >= 1, "sample_pool: n must be >= 1");
    Rng rng(seed);
    const Index q = gan.generator.input_dim();
    MatrixXd pool(n, gan.generator.output_dim());
    constexpr Index chunk = 1024;
    for (Index start = 0; start < n; start += chunk) {
        const Index rows = std::min(chunk, n - start);
        pool.middleRows(start, rows) = nn::forward(gan.generator, normal_matrix(rng, rows, q));
    }
    if (!pool.allFinite()) {
        throw NumericalError("sample_pool: generator produced non-finite values");
    }
    return pool;
}

inline nlohmann::json adam_to_json(const nn::AdamConfig& a) {
    return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

inline nn::AdamConfig adam_from_json(const nlohmann::json& j) {
    return {j.at("learning_rate").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
            j.at("epsilon").get<double>()};
}

inline nlohmann::json to_json(const GanConfig& c) {
    return {{"latent_dim", c.latent_dim},
            {"lambda_gp", c.lambda_gp},
            {"pool_size", c.pool_size},
            {"critic_steps_per_gen", c.critic_steps_per_gen},
            {"batch_size", c.batch_size},
            {"total_gen_iterations", c.total_gen_iterations},
            {"seed", c.seed},
            {"generator_hidden", c.generator_hidden},
            {"critic_hidden", c.critic_hidden},
            {"critic_adam", adam_to_json(c.critic_adam)},
            {"generator_adam", adam_to_json(c.generator_adam)},
            {"linear_lr_decay", c.linear_lr_decay},
            {"generator_ema_decay", c.generator_ema_decay}};
}

inline GanConfig gan_config_from_json(const nlohmann::json& j) {
    GanConfig c;
    c.latent_dim = j.at("latent_dim").get<Index>();
    c.lambda_gp = j.at("lambda_gp").get<double>();
    c.pool_size = j.at("pool_size").get<Index>();
    c.critic_steps_per_gen = j.at("critic_steps_per_gen").get<Index>();
    c.batch_size = j.at("batch_size").get<Index>();
    c.total_gen_iterations = j.at("total_gen_iterations").get<Index>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.generator_hidden = j.at("generator_hidden").get<std::vector<Index>>();
    c.critic_hidden = j.at("critic_hidden").get<std::vector<Index>>();
    c.critic_adam = adam_from_json(j.at("critic_adam"));
    c.generator_adam = adam_from_json(j.at("generator_adam"));
    c.linear_lr_decay = j.at("linear_lr_decay").get<bool>();
    c.generator_ema_decay = j.at("generator_ema_decay").get<double>();
    return c;
}

inline nlohmann::json to_json(const TrainedGan& gan) {
    return {{"format", "rareaug-gan-checkpoint-v1"},
            {"data_dim", gan.data_dim},
            {"config", to_json(gan.config)},
            {"generator", nn::to_json(gan.generator)},
            {"generator_iterate", nn::to_json(gan.generator_iterate)},
            {"critic", nn::to_json(gan.critic)}};
}

/// Loss history is not part of the checkpoint; export it with
/// `write_loss_history_csv`.
inline TrainedGan trained_gan_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "rareaug-gan-checkpoint-v1") {
        throw DataError("not a GAN checkpoint");
    }
    TrainedGan gan;
    gan.data_dim = j.at("data_dim").get<Index>();
    gan.config = gan_config_from_json(j.at("config"));
    gan.generator = nn::mlp_from_json(j.at("generator"));
    gan.generator_iterate = nn::mlp_from_json(j.at("generator_iterate"));
    gan.critic = nn::mlp_from_json(j.at("critic"));
    if (gan.generator.output_dim() != gan.data_dim || gan.generator_iterate.layer_sizes != gan.generator.layer_sizes ||
        gan.critic.input_dim() != gan.data_dim) {
        throw DataError("checkpoint: network shapes disagree with data_dim");
    }
    return gan;
}

inline void save_checkpoint(const TrainedGan& gan, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    out << to_json(gan).dump() << '\n';
}

inline TrainedGan load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open checkpoint " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path + ": " + e.what());
    }
    return trained_gan_from_json(j);
}

inline void write_loss_history_csv(const TrainedGan& gan, std::ostream& out) {
    out << "iteration,critic_loss,gen_loss,penalty\n";
    out.precision(17);
    for (std::size_t i = 0; i < gan.loss_history.size(); ++i) {
        const auto& r = gan.loss_history[i];
        out << (i + 1) << ',' << r.critic_loss << ',' << r.generator_loss << ',' << r.penalty << '\n';
    }
}

} // namespace rareaug
