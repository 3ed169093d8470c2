#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmco/errors.hpp"
#include "dmco/rng.hpp"

namespace dmco {

using Vec = std::vector<double>;

/// Number of trainable parameters of a fully connected net with the given
/// layer widths: sum over layers of out * in + out.
inline std::size_t mlp_param_count(std::span<const std::size_t> widths) {
    std::size_t count = 0;
    for (std::size_t l = 1; l < widths.size(); ++l) {
        count += widths[l] * widths[l - 1] + widths[l];
    }
    return count;
}

/**
 * Multilayer perceptron parameters stored as one flat vector.
 *
 * Layer l maps widths[l] -> widths[l + 1] and occupies a contiguous block
 * [W (out x in, row-major), b (out)]. Hidden layers use ReLU, the output
 * layer is affine. An empty widths list denotes "no network" and is used
 * for decision times whose control is frozen by the problem.
 */
class MlpParams {
public:
    MlpParams() = default;

    explicit MlpParams(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
        if (widths_.size() == 1) {
            throw ConfigError("MLP needs at least an input and an output width");
        }
        for (std::size_t w : widths_) {
            if (w == 0) throw ConfigError("MLP widths must be positive");
        }
        offsets_.reserve(num_layers() + 1);
        std::size_t off = 0;
        for (std::size_t l = 0; l < num_layers(); ++l) {
            offsets_.push_back(off);
            off += widths_[l + 1] * widths_[l] + widths_[l + 1];
        }
        offsets_.push_back(off);
        flat_.assign(off, 0.0);
    }

    bool empty() const noexcept { return widths_.empty(); }
    std::size_t num_layers() const noexcept { return widths_.empty() ? 0 : widths_.size() - 1; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    std::size_t size() const noexcept { return flat_.size(); }

    std::span<double> flat() noexcept { return flat_; }
    std::span<const double> flat() const noexcept { return flat_; }

    std::span<double> weights(std::size_t l) {
        return {flat_.data() + offsets_[l], widths_[l + 1] * widths_[l]};
    }
    std::span<const double> weights(std::size_t l) const {
        return {flat_.data() + offsets_[l], widths_[l + 1] * widths_[l]};
    }
    std::span<double> biases(std::size_t l) {
        return {flat_.data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]};
    }
    std::span<const double> biases(std::size_t l) const {
        return {flat_.data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]};
    }
    std::size_t offset(std::size_t l) const { return offsets_[l]; }

    bool operator==(const MlpParams& other) const {
        return widths_ == other.widths_ && flat_ == other.flat_;
    }

private:
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> offsets_;
    Vec flat_;
};

/// Weights ~ Uniform[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline MlpParams init_mlp(std::vector<std::size_t> widths, std::uint64_t seed) {
    MlpParams params(std::move(widths));
    CounterRng rng(seed);
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        const double half_width = 1.0 / std::sqrt(static_cast<double>(params.widths()[l]));
        for (double& w : params.weights(l)) {
            w = rng.uniform(-half_width, half_width);
        }
    }
    return params;
}

/// Pre- and post-activation values of one forward pass.
struct ForwardCache {
    const MlpParams* owner = nullptr;
    std::vector<Vec> activations;  // activations[0] = input, activations[L] = output
    std::vector<Vec> pre;          // pre[l] = affine output of layer l

    void reserve_for(const MlpParams& params) {
        const auto& w = params.widths();
        activations.resize(w.size());
        pre.resize(params.num_layers());
        for (std::size_t l = 0; l < w.size(); ++l) activations[l].resize(w[l]);
        for (std::size_t l = 0; l < params.num_layers(); ++l) pre[l].resize(w[l + 1]);
    }
};

/// Forward pass into a caller-owned cache; returns a view of the output.
inline std::span<const double> forward(const MlpParams& params, std::span<const double> input,
                                       ForwardCache& cache) {
    if (params.empty()) throw ConfigError("forward on an empty network");
    if (input.size() != params.input_dim()) {
        throw ConfigError("MLP input has length " + std::to_string(input.size()) + ", expected " +
                          std::to_string(params.input_dim()));
    }
    if (cache.owner != &params || cache.activations.size() != params.widths().size()) {
        cache.reserve_for(params);
    }
    cache.owner = &params;
    std::copy(input.begin(), input.end(), cache.activations[0].begin());
    const std::size_t layers = params.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = params.widths()[l];
        const std::size_t out = params.widths()[l + 1];
        const double* w = params.weights(l).data();
        const double* b = params.biases(l).data();
        const double* x = cache.activations[l].data();
        double* z = cache.pre[l].data();
        double* a = cache.activations[l + 1].data();
        const bool hidden = l + 1 < layers;
        for (std::size_t j = 0; j < out; ++j) {
            const double* row = w + j * in;
            double acc = b[j];
            for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
            z[j] = acc;
            a[j] = hidden ? (acc > 0.0 ? acc : 0.0) : acc;
        }
    }
    return cache.activations[layers];
}

inline std::pair<Vec, ForwardCache> forward(const MlpParams& params, std::span<const double> input) {
    ForwardCache cache;
    auto out = forward(params, input, cache);
    Vec result(out.begin(), out.end());
    return {std::move(result), std::move(cache)};
}

/// Scratch buffers for backward, reused across calls.
struct BackwardWorkspace {
    Vec delta;
    Vec delta_prev;
};

/**
 * Reverse-mode pass for <upstream, output>.
 *
 * Adds the parameter gradient into `grads` (same layout as params.flat())
 * and writes the input gradient into `input_grad` when it is non-empty.
 * ReLU derivative at exactly zero is taken as zero.
 */
inline void backward(const MlpParams& params, const ForwardCache& cache,
                     std::span<const double> upstream, std::span<double> grads,
                     std::span<double> input_grad, BackwardWorkspace& ws) {
    if (cache.owner != &params || cache.activations.size() != params.widths().size()) {
        throw ConfigError("backward called with a cache from a different network");
    }
    if (upstream.size() != params.output_dim()) throw ConfigError("upstream gradient has wrong length");
    if (grads.size() != params.size()) throw ConfigError("gradient buffer has wrong length");
    if (!input_grad.empty() && input_grad.size() != params.input_dim()) {
        throw ConfigError("input gradient buffer has wrong length");
    }
    const std::size_t layers = params.num_layers();
    ws.delta.assign(upstream.begin(), upstream.end());
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = params.widths()[l];
        const std::size_t out = params.widths()[l + 1];
        const double* w = params.weights(l).data();
        const double* x = cache.activations[l].data();
        double* gw = grads.data() + params.offset(l);
        double* gb = gw + out * in;
        const bool need_prev = l > 0 || !input_grad.empty();
        if (need_prev) ws.delta_prev.assign(in, 0.0);
        for (std::size_t j = 0; j < out; ++j) {
            const double d = ws.delta[j];
            if (d == 0.0) continue;
            gb[j] += d;
            double* grow = gw + j * in;
            const double* wrow = w + j * in;
            for (std::size_t i = 0; i < in; ++i) grow[i] += d * x[i];
            if (need_prev) {
                for (std::size_t i = 0; i < in; ++i) ws.delta_prev[i] += d * wrow[i];
            }
        }
        if (!need_prev) break;
        if (l > 0) {
            const double* z = cache.pre[l - 1].data();
            for (std::size_t i = 0; i < in; ++i) {
                if (!(z[i] > 0.0)) ws.delta_prev[i] = 0.0;
            }
            std::swap(ws.delta, ws.delta_prev);
        } else {
            std::copy(ws.delta_prev.begin(), ws.delta_prev.end(), input_grad.begin());
        }
    }
}

struct ParamGrads {
    Vec params;
    Vec input;
};

inline ParamGrads backward(const MlpParams& params, const ForwardCache& cache,
                           std::span<const double> upstream) {
    ParamGrads g{Vec(params.size(), 0.0), Vec(params.input_dim(), 0.0)};
    BackwardWorkspace ws;
    backward(params, cache, upstream, g.params, g.input, ws);
    return g;
}

struct AdamHyper {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Vec first_moment;
    Vec second_moment;
    std::uint64_t step_count = 0;
    AdamHyper hyper;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamHyper h = {})
        : first_moment(n, 0.0), second_moment(n, 0.0), hyper(h) {}
};

/// Bias-corrected Adam update of `params` in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw ConfigError("adam_step: parameter, gradient and moment shapes differ");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
    }
    const AdamHyper& h = state.hyper;
    ++state.step_count;
    const double k = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(h.beta1, k);
    const double correction2 = 1.0 - std::pow(h.beta2, k);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = h.beta1 * m + (1.0 - h.beta1) * grads[i];
        v = h.beta2 * v + (1.0 - h.beta2) * grads[i] * grads[i];
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        params[i] -= h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
}

}  // namespace dmco
