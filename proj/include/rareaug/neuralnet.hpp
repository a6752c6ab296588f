#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rareaug/error.hpp"
#include "rareaug/random.hpp"

namespace rareaug::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Fully connected network: ReLU on every hidden layer, identity output.
///
/// Batches are row-major in the logical sense: one sample per row. Layer l
/// maps a (batch x in_l) activation to (batch x out_l) through
/// `weights[l]` (out_l x in_l) and `biases[l]` (out_l).
///
/// The same type doubles as a gradient accumulator; `zeros_like` gives an
/// empty accumulator with matching shapes.
struct Mlp {
    std::vector<Index> layer_sizes;
    std::vector<MatrixXd> weights;
    std::vector<VectorXd> biases;

    std::size_t num_layers() const { return weights.size(); }
    Index input_dim() const { return layer_sizes.front(); }
    Index output_dim() const { return layer_sizes.back(); }

    Index parameter_count() const {
        Index count = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            count += weights[l].size() + biases[l].size();
        }
        return count;
    }

    bool all_finite() const {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (!weights[l].allFinite() || !biases[l].allFinite()) {
                return false;
            }
        }
        return true;
    }

    Mlp& operator+=(const Mlp& other) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] += other.weights[l];
            biases[l] += other.biases[l];
        }
        return *this;
    }

    Mlp& operator*=(double factor) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] *= factor;
            biases[l] *= factor;
        }
        return *this;
    }

    /// Parameters in layer order, each weight matrix column-major followed by
    /// its bias.
    VectorXd flatten() const {
        VectorXd flat(parameter_count());
        Index offset = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            flat.segment(offset, weights[l].size()) = weights[l].reshaped();
            offset += weights[l].size();
            flat.segment(offset, biases[l].size()) = biases[l];
            offset += biases[l].size();
        }
        return flat;
    }

    void assign_flat(const VectorXd& flat) {
        rareaug::detail::require(flat.size() == parameter_count(), "assign_flat: parameter count mismatch");
        Index offset = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l].reshaped() = flat.segment(offset, weights[l].size());
            offset += weights[l].size();
            biases[l] = flat.segment(offset, biases[l].size());
            offset += biases[l].size();
        }
    }
};

inline void check_layer_sizes(const std::vector<Index>& sizes) {
    rareaug::detail::require(sizes.size() >= 2, "an MLP needs at least an input and an output layer");
    for (Index s : sizes) {
        rareaug::detail::require(s >= 1, "layer sizes must be positive");
    }
}

inline Mlp zeros_mlp(const std::vector<Index>& sizes) {
    check_layer_sizes(sizes);
    Mlp net;
    net.layer_sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        net.weights.push_back(MatrixXd::Zero(sizes[l + 1], sizes[l]));
        net.biases.push_back(VectorXd::Zero(sizes[l + 1]));
    }
    return net;
}

inline Mlp zeros_like(const Mlp& net) { return zeros_mlp(net.layer_sizes); }

/// Glorot-uniform weights, zero biases.
inline Mlp make_mlp(const std::vector<Index>& sizes, Rng& rng) {
    Mlp net = zeros_mlp(sizes);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        auto& w = net.weights[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (Index j = 0; j < w.cols(); ++j) {
            for (Index i = 0; i < w.rows(); ++i) {
                w(i, j) = rng.uniform(-limit, limit);
            }
        }
    }
    return net;
}

/// Intermediate values of one forward pass, kept for backpropagation.
/// `activations[0]` is the input; `preacts[l]` is the pre-activation of
/// layer l and `activations[l + 1]` its output.
struct ForwardCache {
    std::vector<MatrixXd> activations;
    std::vector<MatrixXd> preacts;

    const MatrixXd& output() const { return activations.back(); }
};

namespace detail {

inline void check_input(const Mlp& net, const MatrixXd& input) {
    if (input.cols() != net.input_dim()) {
        throw PreconditionError("MLP input width " + std::to_string(input.cols()) +
                                " does not match first layer size " + std::to_string(net.input_dim()));
    }
}

inline MatrixXd affine(const MatrixXd& input, const MatrixXd& w, const VectorXd& b) {
    MatrixXd out = input * w.transpose();
    out.rowwise() += b.transpose();
    return out;
}

inline MatrixXd relu_mask(const MatrixXd& preact) { return (preact.array() > 0.0).cast<double>().matrix(); }

} // namespace detail

inline ForwardCache forward_cached(const Mlp& net, const MatrixXd& input) {
    detail::check_input(net, input);
    ForwardCache cache;
    cache.activations.reserve(net.num_layers() + 1);
    cache.preacts.reserve(net.num_layers());
    cache.activations.push_back(input);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        cache.preacts.push_back(detail::affine(cache.activations.back(), net.weights[l], net.biases[l]));
        if (l + 1 < net.num_layers()) {
            cache.activations.push_back(cache.preacts.back().cwiseMax(0.0));
        } else {
            cache.activations.push_back(cache.preacts.back());
        }
    }
    return cache;
}

inline MatrixXd forward(const Mlp& net, const MatrixXd& input) {
    detail::check_input(net, input);
    MatrixXd a = input;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        MatrixXd z = detail::affine(a, net.weights[l], net.biases[l]);
        a = (l + 1 < net.num_layers()) ? MatrixXd(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
}

struct Backward {
    Mlp param_grads;
    MatrixXd input_grads; ///< empty unless requested
};

/// Reverse pass given dLoss/dOutput (batch x output_dim).
inline Backward backward(const Mlp& net, const ForwardCache& cache, const MatrixXd& grad_output,
                         bool want_input_grads = false) {
    rareaug::detail::require(grad_output.rows() == cache.output().rows() && grad_output.cols() == net.output_dim(),
                    "backward: output gradient shape mismatch");
    Backward result{zeros_like(net), MatrixXd()};
    MatrixXd delta = grad_output;
    for (std::size_t l = net.num_layers(); l-- > 0;) {
        result.param_grads.weights[l].noalias() = delta.transpose() * cache.activations[l];
        result.param_grads.biases[l] = delta.colwise().sum().transpose();
        if (l == 0 && !want_input_grads) {
            break;
        }
        MatrixXd upstream = delta * net.weights[l];
        if (l > 0) {
            delta = upstream.cwiseProduct(detail::relu_mask(cache.preacts[l - 1]));
        } else {
            result.input_grads = std::move(upstream);
        }
    }
    return result;
}

struct LossValue {
    double value;
    MatrixXd grad; ///< dLoss/dOutput
};

using LossFn = std::function<LossValue(const MatrixXd& outputs)>;

struct ValueAndGrad {
    double value;
    Mlp grads;
};

/// Loss value and exact parameter gradient for a loss defined on the outputs.
inline ValueAndGrad value_and_grad(const Mlp& net, const MatrixXd& batch, const LossFn& loss) {
    const ForwardCache cache = forward_cached(net, batch);
    LossValue lv = loss(cache.output());
    if (!std::isfinite(lv.value)) {
        throw NumericalError("value_and_grad: non-finite loss");
    }
    return {lv.value, backward(net, cache, lv.grad).param_grads};
}

inline void require_scalar_output(const Mlp& net, const char* what) {
    if (net.output_dim() != 1) {
        throw PreconditionError(std::string(what) + ": network output must be scalar");
    }
}

/// Per-row gradient of a scalar-output network with respect to its input.
inline MatrixXd grad_input(const Mlp& net, const MatrixXd& batch) {
    require_scalar_output(net, "grad_input");
    const ForwardCache cache = forward_cached(net, batch);
    return backward(net, cache, MatrixXd::Ones(batch.rows(), 1), true).input_grads;
}

struct PenaltyValueAndGrad {
    double value;
    Mlp grads;
    MatrixXd input_grads; ///< per-row gradient of D at the evaluated points
};

/// Gradient penalty lambda * mean_b (||grad_u D(u_b)||_2 - 1)^2 and its exact
/// parameter gradient.
///
/// The input gradient of a ReLU network is a product of weight matrices and
/// activation masks; the masks are locally constant, so differentiating
/// that product (a second reverse pass over the linear backward chain) is
/// exact wherever no pre-activation is exactly zero. Bias gradients are
/// therefore identically zero.
inline PenaltyValueAndGrad penalty_value_and_grad(const Mlp& net, const MatrixXd& points, double lambda) {
    require_scalar_output(net, "penalty_value_and_grad");
    const std::size_t layers = net.num_layers();
    const Index batch = points.rows();
    const ForwardCache cache = forward_cached(net, points);

    std::vector<MatrixXd> masks(layers);
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        masks[l] = detail::relu_mask(cache.preacts[l]);
    }

    // deltas[l]: d D / d preact_l, batch x out_l.
    std::vector<MatrixXd> deltas(layers);
    deltas[layers - 1] = MatrixXd::Ones(batch, 1);
    MatrixXd input_grads;
    for (std::size_t l = layers; l-- > 0;) {
        MatrixXd upstream = deltas[l] * net.weights[l];
        if (l > 0) {
            deltas[l - 1] = upstream.cwiseProduct(masks[l - 1]);
        } else {
            input_grads = std::move(upstream);
        }
    }

    const VectorXd norms = input_grads.rowwise().norm();
    double value = 0.0;
    MatrixXd adjoint(batch, input_grads.cols());
    for (Index b = 0; b < batch; ++b) {
        const double gap = norms[b] - 1.0;
        value += gap * gap;
        if (norms[b] > 0.0) {
            adjoint.row(b) = (2.0 * lambda * gap / (static_cast<double>(batch) * norms[b])) * input_grads.row(b);
        } else {
            adjoint.row(b).setZero();
        }
    }
    value *= lambda / static_cast<double>(batch);

    PenaltyValueAndGrad result{value, zeros_like(net), std::move(input_grads)};
    for (std::size_t l = 0; l < layers; ++l) {
        result.grads.weights[l].noalias() = deltas[l].transpose() * adjoint;
        if (l + 1 < layers) {
            adjoint = (adjoint * net.weights[l].transpose()).cwiseProduct(masks[l]);
        }
    }
    return result;
}

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    Mlp first_moment;
    Mlp second_moment;
    long step_count = 0;
};

inline AdamState make_adam(const Mlp& net, AdamConfig config = {}) {
    return {config, zeros_like(net), zeros_like(net), 0};
}

namespace detail {

template <typename Param>
void adam_update(Param& param, const Param& grad, Param& m, Param& v, const AdamConfig& c, double correction1,
                 double correction2) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseAbs2();
    param.array() -= c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
}

} // namespace detail

/// One bias-corrected Adam update in place.
inline void adam_step(Mlp& net, const Mlp& grads, AdamState& state) {
    rareaug::detail::require(grads.layer_sizes == net.layer_sizes && state.first_moment.layer_sizes == net.layer_sizes,
                    "adam_step: shape mismatch");
    if (!grads.all_finite()) {
        throw NumericalError("adam_step: non-finite gradient at step " + std::to_string(state.step_count + 1));
    }
    ++state.step_count;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        detail::adam_update(net.weights[l], grads.weights[l], state.first_moment.weights[l],
                            state.second_moment.weights[l], c, correction1, correction2);
        detail::adam_update(net.biases[l], grads.biases[l], state.first_moment.biases[l],
                            state.second_moment.biases[l], c, correction1, correction2);
    }
}

// Checkpoints. nlohmann/json writes doubles in shortest round-trip form, so a
// dump/parse cycle reproduces every parameter bit for bit.

inline nlohmann::json to_json(const Mlp& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const auto& w = net.weights[l];
        layers.push_back({{"weights", std::vector<double>(w.data(), w.data() + w.size())},
                          {"biases", std::vector<double>(net.biases[l].data(),
                                                         net.biases[l].data() + net.biases[l].size())}});
    }
    return {{"layer_sizes", net.layer_sizes}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    Mlp net = zeros_mlp(j.at("layer_sizes").get<std::vector<Index>>());
    const auto& layers = j.at("layers");
    if (layers.size() != net.num_layers()) {
        throw DataError("checkpoint: layer count does not match layer_sizes");
    }
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const auto w = layers[l].at("weights").get<std::vector<double>>();
        const auto b = layers[l].at("biases").get<std::vector<double>>();
        if (static_cast<Index>(w.size()) != net.weights[l].size() ||
            static_cast<Index>(b.size()) != net.biases[l].size()) {
            throw DataError("checkpoint: parameter count mismatch in layer " + std::to_string(l));
        }
        net.weights[l] = Eigen::Map<const MatrixXd>(w.data(), net.weights[l].rows(), net.weights[l].cols());
        net.biases[l] = Eigen::Map<const VectorXd>(b.data(), net.biases[l].size());
    }
    return net;
}

} // namespace rareaug::nn
