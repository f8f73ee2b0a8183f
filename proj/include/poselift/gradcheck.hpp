#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "poselift/common.hpp"
#include "poselift/network.hpp"
#include "poselift/rng.hpp"

namespace poselift {

/// Loss used by the checker: value plus gradient w.r.t. the network output.
using BatchLossFn = std::function<std::pair<double, Matrix>(const Matrix& output)>;

struct GradCheckConfig {
    double epsilon = 1e-4;
    double tolerance = 1e-4;
    /// Coordinates sampled per tensor. Checking all ~4M parameters of the
    /// default architecture would need millions of forward passes, so the
    /// checker probes a seeded random subset of each tensor.
    int coords_per_tensor = 16;
    std::uint64_t seed = 0;
    bool check_input = true;
};

struct GradCheckEntry {
    std::string tensor;
    Eigen::Index index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    bool pass = false;
    double worst_rel_error = 0.0;
    GradCheckEntry worst;
    std::size_t coords_checked = 0;
    std::vector<GradCheckEntry> failures;
};

/// Central finite differences against the analytic backward pass, with batch
/// statistics and dropout disabled so the loss is a smooth deterministic
/// function of the parameters. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckReport fd_gradcheck(NetworkParams& net, const Matrix& input, const BatchLossFn& loss,
                                    const GradCheckConfig& cfg) {
    require(cfg.epsilon > 0.0, "fd_gradcheck: epsilon must be positive");
    require(cfg.tolerance > 0.0, "fd_gradcheck: tolerance must be positive");
    require(cfg.coords_per_tensor > 0, "fd_gradcheck: coords_per_tensor must be positive");

    Rng unused(0);
    const ForwardOptions opts = ForwardOptions::gradcheck();

    auto eval_loss = [&]() {
        ForwardResult r = net_forward(net, input, opts, unused);
        return loss(r.output).first;
    };

    // Analytic gradients once.
    NetworkGrads grads;
    {
        ForwardResult r = net_forward(net, input, opts, unused);
        auto [value, dout] = loss(r.output);
        (void)value;
        grads = net_backward(net, r.cache, dout);
    }

    Rng pick(cfg.seed);
    GradCheckReport report;
    report.pass = true;

    auto check_coord = [&](const std::string& name, double* data, Eigen::Index idx, double analytic) {
        const double saved = data[idx];
        data[idx] = saved + cfg.epsilon;
        const double up = eval_loss();
        data[idx] = saved - cfg.epsilon;
        const double down = eval_loss();
        data[idx] = saved;
        const double numeric = (up - down) / (2.0 * cfg.epsilon);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        GradCheckEntry e{name, idx, analytic, numeric, rel};
        ++report.coords_checked;
        if (rel > report.worst_rel_error) {
            report.worst_rel_error = rel;
            report.worst = e;
        }
        if (rel > cfg.tolerance) {
            report.pass = false;
            report.failures.push_back(e);
        }
    };

    const auto params = trainable_tensors(net);
    const auto gvals = grad_tensors(grads);
    for (std::size_t t = 0; t < params.size(); ++t) {
        const Eigen::Index n = params[t].size;
        const int count = static_cast<int>(std::min<Eigen::Index>(cfg.coords_per_tensor, n));
        for (int c = 0; c < count; ++c) {
            const Eigen::Index idx = static_cast<Eigen::Index>(pick.bounded(static_cast<std::uint64_t>(n)));
            check_coord(params[t].name, params[t].data, idx, gvals[t].data[idx]);
        }
    }

    if (cfg.check_input) {
        // The loss is also differentiated w.r.t. the input batch.
        Matrix in = input;
        NetworkGrads g2;
        {
            ForwardResult r = net_forward(net, in, opts, unused);
            auto [value, dout] = loss(r.output);
            (void)value;
            g2 = net_backward(net, r.cache, dout);
        }
        const Eigen::Index n = in.size();
        const int count = static_cast<int>(std::min<Eigen::Index>(cfg.coords_per_tensor, n));
        for (int c = 0; c < count; ++c) {
            const Eigen::Index idx = static_cast<Eigen::Index>(pick.bounded(static_cast<std::uint64_t>(n)));
            const double saved = in.data()[idx];
            in.data()[idx] = saved + cfg.epsilon;
            double up;
            {
                ForwardResult r = net_forward(net, in, opts, unused);
                up = loss(r.output).first;
            }
            in.data()[idx] = saved - cfg.epsilon;
            double down;
            {
                ForwardResult r = net_forward(net, in, opts, unused);
                down = loss(r.output).first;
            }
            in.data()[idx] = saved;
            const double numeric = (up - down) / (2.0 * cfg.epsilon);
            const double analytic = g2.input.data()[idx];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            GradCheckEntry e{"input", idx, analytic, numeric, rel};
            ++report.coords_checked;
            if (rel > report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst = e;
            }
            if (rel > cfg.tolerance) {
                report.pass = false;
                report.failures.push_back(e);
            }
        }
    }
    return report;
}

}  // namespace poselift
