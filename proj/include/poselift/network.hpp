#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "poselift/common.hpp"
#include "poselift/rng.hpp"

namespace poselift {

using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Residual MLP layout: one input block lifting to `hidden_width`, then
/// `num_residual_blocks` identity-skip blocks of two dense units each, then
/// a plain linear readout. Every dense unit is linear -> batch norm -> ReLU
/// -> dropout.
struct MlpConfig {
    int input_width = 0;
    int output_width = 0;
    int hidden_width = 1024;
    int num_residual_blocks = 2;
    double dropout_keep = 0.5;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;  // fraction of batch statistics blended into running statistics

    int dense_unit_count() const { return 1 + 2 * num_residual_blocks; }

    void validate() const {
        require(input_width > 0 && output_width > 0 && hidden_width > 0, "MlpConfig: widths must be positive");
        require(num_residual_blocks >= 0, "MlpConfig: negative block count");
        require(dropout_keep > 0.0 && dropout_keep <= 1.0, "MlpConfig: dropout keep-probability must be in (0,1]");
        require(bn_eps > 0.0, "MlpConfig: bn_eps must be positive");
        require(bn_momentum >= 0.0 && bn_momentum <= 1.0, "MlpConfig: bn_momentum must be in [0,1]");
    }
};

/// One dense unit: linear + batch norm + ReLU + dropout.
struct DenseBlockParams {
    Matrix weight;  // out x in
    Vector bias;
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double dropout_keep = 1.0;
};

struct NetworkParams {
    MlpConfig config;
    std::vector<DenseBlockParams> dense;  // dense[0] is the input block
    Matrix out_weight;
    Vector out_bias;
};

/// Kaiming-style fan-in uniform init, bound sqrt(6/fan_in); biases zero,
/// batch-norm scale one. Tensors are filled in a fixed order so the result
/// is a pure function of the seed.
inline NetworkParams init_network(const MlpConfig& config, Rng& rng) {
    config.validate();
    NetworkParams net;
    net.config = config;
    auto fill_uniform = [&rng](Matrix& w, int fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    };
    auto make_block = [&](int in, int out) {
        DenseBlockParams b;
        b.weight.resize(out, in);
        fill_uniform(b.weight, in);
        b.bias = Vector::Zero(out);
        b.gamma = Vector::Ones(out);
        b.beta = Vector::Zero(out);
        b.running_mean = Vector::Zero(out);
        b.running_var = Vector::Ones(out);
        b.dropout_keep = config.dropout_keep;
        return b;
    };
    net.dense.push_back(make_block(config.input_width, config.hidden_width));
    for (int i = 0; i < 2 * config.num_residual_blocks; ++i) net.dense.push_back(make_block(config.hidden_width, config.hidden_width));
    net.out_weight.resize(config.output_width, config.hidden_width);
    fill_uniform(net.out_weight, config.hidden_width);
    net.out_bias = Vector::Zero(config.output_width);
    return net;
}

enum class NetMode { kTrain, kEval };

/// Internal forward switches. Train mode = batch statistics + dropout +
/// running-statistics update; eval = running statistics, no dropout. The
/// gradient checker runs with batch statistics but no dropout and no
/// running-statistics side effects, so the loss stays smooth in the
/// parameters.
struct ForwardOptions {
    bool batch_stats = false;
    bool dropout = false;
    bool update_running = false;

    static ForwardOptions train() { return {true, true, true}; }
    static ForwardOptions eval() { return {false, false, false}; }
    static ForwardOptions gradcheck() { return {true, false, false}; }
};

struct DenseBlockCache {
    Matrix input;
    Vector inv_std;
    Matrix xhat;
    Matrix bn_out;
    Matrix mask;  // dropout mask including the 1/keep scaling; empty when dropout off
    Matrix output;
};

struct ForwardCache {
    bool valid = false;
    bool batch_stats = false;
    std::vector<DenseBlockCache> blocks;
    Matrix final_hidden;
};

struct DenseBlockGrads {
    Matrix weight;
    Vector bias;
    Vector gamma;
    Vector beta;
};

struct NetworkGrads {
    std::vector<DenseBlockGrads> dense;
    Matrix out_weight;
    Vector out_bias;
    Matrix input;
};

namespace detail {

inline Matrix dense_block_forward(DenseBlockParams& p, const Matrix& x, const ForwardOptions& opts, Rng& rng,
                                  double bn_eps, double bn_momentum, DenseBlockCache& cache) {
    cache.input = x;
    const Eigen::Index batch = x.rows();
    Matrix z(batch, p.weight.rows());
    z.noalias() = x * p.weight.transpose();
    z.rowwise() += p.bias.transpose();

    if (opts.batch_stats) {
        const Vector mean = z.colwise().mean().transpose();
        Matrix centered = z.rowwise() - mean.transpose();
        const Vector var = centered.cwiseProduct(centered).colwise().mean().transpose();
        cache.inv_std = (var.array() + bn_eps).rsqrt().matrix();
        cache.xhat = (centered.array().rowwise() * cache.inv_std.transpose().array()).matrix();
        if (opts.update_running && batch >= 2) {
            const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
            p.running_mean = (1.0 - bn_momentum) * p.running_mean + bn_momentum * mean;
            p.running_var = (1.0 - bn_momentum) * p.running_var + bn_momentum * (unbias * var);
        }
    } else {
        cache.inv_std = (p.running_var.array() + bn_eps).rsqrt().matrix();
        cache.xhat = ((z.rowwise() - p.running_mean.transpose()).array().rowwise() * cache.inv_std.transpose().array()).matrix();
    }
    cache.bn_out = (cache.xhat.array().rowwise() * p.gamma.transpose().array()).matrix();
    cache.bn_out.rowwise() += p.beta.transpose();

    Matrix a = cache.bn_out.cwiseMax(0.0);
    if (opts.dropout && p.dropout_keep < 1.0) {
        cache.mask.resize(a.rows(), a.cols());
        const double inv_keep = 1.0 / p.dropout_keep;
        for (Eigen::Index i = 0; i < cache.mask.size(); ++i)
            cache.mask.data()[i] = rng.uniform() < p.dropout_keep ? inv_keep : 0.0;
        a = a.cwiseProduct(cache.mask);
    } else {
        cache.mask.resize(0, 0);
    }
    cache.output = std::move(a);
    check_finite(cache.output, "dense block activation");
    return cache.output;
}

/// Backward through one dense unit (dropout, ReLU, batch norm, linear).
/// Returns the gradient w.r.t. the block input and fills the parameter
/// gradients.
inline Matrix dense_block_backward(const DenseBlockParams& p, const DenseBlockCache& cache, const Matrix& gout,
                                   bool batch_stats, DenseBlockGrads& g) {
    Matrix d = gout;
    if (cache.mask.size() > 0) d = d.cwiseProduct(cache.mask);
    d = d.cwiseProduct((cache.bn_out.array() > 0.0).cast<double>().matrix());

    g.gamma = d.cwiseProduct(cache.xhat).colwise().sum().transpose();
    g.beta = d.colwise().sum().transpose();

    const Matrix dxhat = (d.array().rowwise() * p.gamma.transpose().array()).matrix();
    Matrix dz;
    if (batch_stats) {
        const double n = static_cast<double>(d.rows());
        const RowVector sum_dxhat = dxhat.colwise().sum();
        const RowVector sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
        dz = dxhat * n;
        dz.rowwise() -= sum_dxhat;
        dz -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        dz = (dz.array().rowwise() * (cache.inv_std.transpose().array() / n)).matrix();
    } else {
        dz = (dxhat.array().rowwise() * cache.inv_std.transpose().array()).matrix();
    }

    g.weight.resize(p.weight.rows(), p.weight.cols());
    g.weight.noalias() = dz.transpose() * cache.input;
    g.bias = dz.colwise().sum().transpose();
    Matrix dx(cache.input.rows(), cache.input.cols());
    dx.noalias() = dz * p.weight;
    return dx;
}

}  // namespace detail

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

inline ForwardResult net_forward(NetworkParams& net, const Matrix& input, const ForwardOptions& opts, Rng& rng) {
    if (input.cols() != net.config.input_width)
        throw InvalidInputError("net_forward: input width " + std::to_string(input.cols()) + " does not match configured " +
                                std::to_string(net.config.input_width));
    if (opts.batch_stats && input.rows() < 2)
        throw InvalidInputError("net_forward: train mode needs batch >= 2 for batch statistics");

    ForwardResult r;
    r.cache.valid = true;
    r.cache.batch_stats = opts.batch_stats;
    r.cache.blocks.resize(static_cast<std::size_t>(net.config.dense_unit_count()));

    Matrix h = detail::dense_block_forward(net.dense[0], input, opts, rng, net.config.bn_eps, net.config.bn_momentum,
                                           r.cache.blocks[0]);
    std::size_t unit = 1;
    for (int b = 0; b < net.config.num_residual_blocks; ++b) {
        Matrix y = detail::dense_block_forward(net.dense[unit], h, opts, rng, net.config.bn_eps, net.config.bn_momentum,
                                               r.cache.blocks[unit]);
        ++unit;
        y = detail::dense_block_forward(net.dense[unit], y, opts, rng, net.config.bn_eps, net.config.bn_momentum,
                                        r.cache.blocks[unit]);
        ++unit;
        h += y;
    }
    r.cache.final_hidden = h;
    r.output.resize(input.rows(), net.config.output_width);
    r.output.noalias() = h * net.out_weight.transpose();
    r.output.rowwise() += net.out_bias.transpose();
    check_finite(r.output, "network output");
    return r;
}

/// Full forward pass. Train mode mutates the running batch-norm statistics
/// and draws dropout masks from `rng`; eval mode is deterministic and
/// row-independent. Train mode requires batch >= 2 for batch statistics.
inline ForwardResult net_forward(NetworkParams& net, const Matrix& input, NetMode mode, Rng& rng) {
    const ForwardOptions opts = mode == NetMode::kTrain ? ForwardOptions::train() : ForwardOptions::eval();
    return net_forward(net, input, opts, rng);
}

/// Backward pass for a forward call made with batch statistics. The cache is
/// single-use; reusing it (or feeding an eval-mode cache) is an error.
inline NetworkGrads net_backward(const NetworkParams& net, ForwardCache& cache, const Matrix& upstream) {
    if (!cache.valid) throw InvalidStateError("net_backward: cache already consumed or never filled");
    if (!cache.batch_stats) throw InvalidStateError("net_backward: cache does not come from a train-mode forward");
    if (upstream.rows() != cache.final_hidden.rows() || upstream.cols() != net.config.output_width)
        throw InvalidStateError("net_backward: upstream gradient shape mismatch");
    cache.valid = false;

    NetworkGrads g;
    g.dense.resize(cache.blocks.size());

    g.out_weight.resize(net.out_weight.rows(), net.out_weight.cols());
    g.out_weight.noalias() = upstream.transpose() * cache.final_hidden;
    g.out_bias = upstream.colwise().sum().transpose();
    Matrix dh(upstream.rows(), net.config.hidden_width);
    dh.noalias() = upstream * net.out_weight;

    std::size_t unit = cache.blocks.size() - 1;
    for (int b = net.config.num_residual_blocks - 1; b >= 0; --b) {
        // dh reaches the block output directly and its input through the skip.
        Matrix dy = detail::dense_block_backward(net.dense[unit], cache.blocks[unit], dh, cache.batch_stats, g.dense[unit]);
        --unit;
        dy = detail::dense_block_backward(net.dense[unit], cache.blocks[unit], dy, cache.batch_stats, g.dense[unit]);
        --unit;
        dh += dy;
    }
    g.input = detail::dense_block_backward(net.dense[0], cache.blocks[0], dh, cache.batch_stats, g.dense[0]);
    return g;
}

/// Named view over the trainable tensors, in a fixed order shared by the
/// optimizer, the gradient checker and the checkpoint writer.
struct TensorRef {
    std::string name;
    double* data = nullptr;
    Eigen::Index size = 0;
};

inline std::vector<TensorRef> trainable_tensors(NetworkParams& net) {
    std::vector<TensorRef> out;
    for (std::size_t i = 0; i < net.dense.size(); ++i) {
        const std::string prefix = "dense" + std::to_string(i) + ".";
        DenseBlockParams& b = net.dense[i];
        out.push_back({prefix + "weight", b.weight.data(), b.weight.size()});
        out.push_back({prefix + "bias", b.bias.data(), b.bias.size()});
        out.push_back({prefix + "bn_gamma", b.gamma.data(), b.gamma.size()});
        out.push_back({prefix + "bn_beta", b.beta.data(), b.beta.size()});
    }
    out.push_back({"out.weight", net.out_weight.data(), net.out_weight.size()});
    out.push_back({"out.bias", net.out_bias.data(), net.out_bias.size()});
    return out;
}

/// Trainable tensors plus batch-norm running statistics; what a checkpoint holds.
inline std::vector<TensorRef> state_tensors(NetworkParams& net) {
    std::vector<TensorRef> out = trainable_tensors(net);
    for (std::size_t i = 0; i < net.dense.size(); ++i) {
        const std::string prefix = "dense" + std::to_string(i) + ".";
        DenseBlockParams& b = net.dense[i];
        out.push_back({prefix + "bn_running_mean", b.running_mean.data(), b.running_mean.size()});
        out.push_back({prefix + "bn_running_var", b.running_var.data(), b.running_var.size()});
    }
    return out;
}

inline std::vector<TensorRef> grad_tensors(NetworkGrads& grads) {
    std::vector<TensorRef> out;
    for (std::size_t i = 0; i < grads.dense.size(); ++i) {
        const std::string prefix = "dense" + std::to_string(i) + ".";
        DenseBlockGrads& b = grads.dense[i];
        out.push_back({prefix + "weight", b.weight.data(), b.weight.size()});
        out.push_back({prefix + "bias", b.bias.data(), b.bias.size()});
        out.push_back({prefix + "bn_gamma", b.gamma.data(), b.gamma.size()});
        out.push_back({prefix + "bn_beta", b.beta.data(), b.beta.size()});
    }
    out.push_back({"out.weight", grads.out_weight.data(), grads.out_weight.size()});
    out.push_back({"out.bias", grads.out_bias.data(), grads.out_bias.size()});
    return out;
}

/// Adam with bias correction. Moment buffers are laid out tensor by tensor
/// in the `trainable_tensors` order.
struct AdamState {
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;
    long step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState create(NetworkParams& net, double lr) {
        AdamState s;
        s.learning_rate = lr;
        for (const TensorRef& t : trainable_tensors(net)) {
            s.first_moment.push_back(Vector::Zero(t.size));
            s.second_moment.push_back(Vector::Zero(t.size));
        }
        return s;
    }
};

inline void adam_step(NetworkParams& net, NetworkGrads& grads, AdamState& state) {
    require(state.learning_rate > 0.0, "adam_step: learning rate must be positive");
    const auto params = trainable_tensors(net);
    const auto gs = grad_tensors(grads);
    require(params.size() == state.first_moment.size(), "adam_step: state does not match network");
    require(params.size() == gs.size(), "adam_step: gradients do not match network");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i].size == gs[i].size, "adam_step: gradient shape mismatch at " + params[i].name);
        double* p = params[i].data;
        const double* g = gs[i].data;
        double* m = state.first_moment[i].data();
        double* v = state.second_moment[i].data();
        for (Eigen::Index k = 0; k < params[i].size; ++k) {
            if (!std::isfinite(g[k])) throw NumericError("adam_step: non-finite gradient in " + params[i].name);
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace poselift
