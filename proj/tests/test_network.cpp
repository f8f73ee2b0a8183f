#include "poselift/network.hpp"

#include <gtest/gtest.h>

#include "poselift/gradcheck.hpp"
#include "poselift/losses.hpp"

using namespace poselift;

namespace {

MlpConfig small_config(int in = 9, int out = 5, int hidden = 24) {
    MlpConfig c;
    c.input_width = in;
    c.output_width = out;
    c.hidden_width = hidden;
    c.num_residual_blocks = 2;
    c.dropout_keep = 0.5;
    return c;
}

Matrix random_batch(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

BatchLossFn sum_of_outputs() {
    return [](const Matrix& out) { return std::make_pair(out.sum(), Matrix(Matrix::Ones(out.rows(), out.cols()))); };
}

BatchLossFn mse_to(const Matrix& target) {
    return [target](const Matrix& out) {
        const Matrix diff = out - target;
        const double n = static_cast<double>(diff.size());
        return std::make_pair(diff.squaredNorm() / n, Matrix(diff * (2.0 / n)));
    };
}

TEST(NetForward, ZeroedNetworkOutputsFinalBias) {
    Rng rng(1);
    auto net = init_network(small_config(), rng);
    for (auto& b : net.dense) {
        b.weight.setZero();
        b.gamma.setZero();
    }
    net.out_weight.setZero();
    for (int i = 0; i < net.out_bias.size(); ++i) net.out_bias(i) = 0.5 + i;
    Rng fwd(2);
    const Matrix x = random_batch(4, net.config.input_width, fwd);
    const auto r = net_forward(net, x, NetMode::kTrain, fwd);
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < net.config.output_width; ++col) EXPECT_DOUBLE_EQ(r.output(row, col), 0.5 + col);
}

TEST(NetForward, EvalIsDeterministicAndRowIndependent) {
    Rng rng(3);
    auto net = init_network(small_config(), rng);
    Rng fwd(4);
    const Matrix x = random_batch(6, net.config.input_width, fwd);
    Rng r1(9), r2(99);  // eval must not consume randomness
    const Matrix a = net_forward(net, x, NetMode::kEval, r1).output;
    const Matrix b = net_forward(net, x, NetMode::kEval, r2).output;
    ASSERT_EQ(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);

    // Duplicated rows produce duplicated outputs in eval mode.
    Matrix dup(2, net.config.input_width);
    dup.row(0) = x.row(2);
    dup.row(1) = x.row(2);
    const Matrix o = net_forward(net, dup, NetMode::kEval, r1).output;
    for (int col = 0; col < net.config.output_width; ++col) EXPECT_EQ(o(0, col), o(1, col));
}

TEST(NetForward, ShapeAndBatchPreconditions) {
    Rng rng(5);
    auto net = init_network(small_config(), rng);
    Matrix wrong(3, net.config.input_width + 1);
    wrong.setZero();
    EXPECT_THROW(net_forward(net, wrong, NetMode::kTrain, rng), InvalidInputError);
    Matrix single = Matrix::Zero(1, net.config.input_width);
    EXPECT_THROW(net_forward(net, single, NetMode::kTrain, rng), InvalidInputError);
    EXPECT_NO_THROW(net_forward(net, single, NetMode::kEval, rng));
}

TEST(NetForward, BatchNormNormalizesInTrainMode) {
    // Per-feature mean ~0 and variance ~1 right after normalization: probe with
    // gamma=1, beta=0 and identity-free stats by reading the first block xhat.
    Rng rng(7);
    MlpConfig cfg = small_config(12, 3, 16);
    cfg.dropout_keep = 1.0;
    auto net = init_network(cfg, rng);
    Rng fwd(8);
    const Matrix x = random_batch(64, cfg.input_width, fwd);
    const auto r = net_forward(net, x, ForwardOptions::gradcheck(), fwd);
    const Matrix& xhat = r.cache.blocks[0].xhat;
    for (int col = 0; col < xhat.cols(); ++col) {
        const double mean = xhat.col(col).mean();
        const double var = (xhat.col(col).array() - mean).square().mean();
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-4);  // (var)/(var+eps) with eps=1e-5
    }
}

TEST(NetForward, DropoutPreservesExpectedActivation) {
    // Inverted dropout: averaging many masked activations approaches the
    // unmasked one. Aggregate over units; fixed seed keeps it deterministic.
    Rng rng(11);
    MlpConfig cfg = small_config(8, 4, 32);
    cfg.num_residual_blocks = 0;
    auto net = init_network(cfg, rng);
    Rng fwd(12);
    const Matrix x = random_batch(2, cfg.input_width, fwd);

    Rng nodrop_rng(13);
    const Matrix base = net_forward(net, x, ForwardOptions::gradcheck(), nodrop_rng).cache.blocks[0].output;

    const int trials = 10000;
    Matrix acc = Matrix::Zero(base.rows(), base.cols());
    Rng drop_rng(14);
    for (int t = 0; t < trials; ++t) {
        ForwardOptions opts;
        opts.batch_stats = true;
        opts.dropout = true;
        opts.update_running = false;
        acc += net_forward(net, x, opts, drop_rng).cache.blocks[0].output;
    }
    acc /= static_cast<double>(trials);
    // Aggregate relative deviation: per-mask variance is (1/keep - 1) per unit,
    // so the mean over trials*units stays within a few sigma of zero.
    const double base_mean = base.cwiseAbs().mean();
    const double dev = (acc - base).cwiseAbs().mean();
    EXPECT_LT(dev, 3.0 * base_mean / std::sqrt(static_cast<double>(trials)));
}

TEST(NetBackward, LinearLayerHandGradient) {
    // Single linear unit (gamma-free path impossible, so neutralize BN by
    // using running stats: batch_stats off is not allowed in backward, so
    // instead make BN a no-op with batch statistics on a two-row batch whose
    // columns already have mean 0 and variance 1... simpler: check against
    // finite differences on the tiniest config.
    Rng rng(15);
    MlpConfig cfg = small_config(3, 2, 4);
    cfg.num_residual_blocks = 0;
    cfg.dropout_keep = 1.0;
    auto net = init_network(cfg, rng);
    Rng fwd(16);
    const Matrix x = random_batch(5, cfg.input_width, fwd);
    GradCheckConfig gc;
    gc.coords_per_tensor = 64;
    gc.epsilon = 1e-5;
    gc.tolerance = 1e-6;
    const auto report = fd_gradcheck(net, x, sum_of_outputs(), gc);
    EXPECT_TRUE(report.pass) << "worst " << report.worst.tensor << "[" << report.worst.index
                             << "] rel=" << report.worst_rel_error;
}

TEST(NetBackward, ZeroUpstreamGivesZeroGrads) {
    Rng rng(17);
    auto net = init_network(small_config(), rng);
    Rng fwd(18);
    const Matrix x = random_batch(4, net.config.input_width, fwd);
    auto r = net_forward(net, x, ForwardOptions::gradcheck(), fwd);
    const Matrix zero = Matrix::Zero(4, net.config.output_width);
    auto g = net_backward(net, r.cache, zero);
    for (const auto& t : grad_tensors(g)) {
        for (Eigen::Index i = 0; i < t.size; ++i) EXPECT_EQ(t.data[i], 0.0);
    }
    EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(NetBackward, CacheIsSingleUseAndModeChecked) {
    Rng rng(19);
    auto net = init_network(small_config(), rng);
    Rng fwd(20);
    const Matrix x = random_batch(4, net.config.input_width, fwd);
    auto r = net_forward(net, x, NetMode::kTrain, fwd);
    const Matrix up = Matrix::Ones(4, net.config.output_width);
    EXPECT_NO_THROW(net_backward(net, r.cache, up));
    EXPECT_THROW(net_backward(net, r.cache, up), InvalidStateError);

    auto ev = net_forward(net, x, NetMode::kEval, fwd);
    EXPECT_THROW(net_backward(net, ev.cache, up), InvalidStateError);

    auto r2 = net_forward(net, x, NetMode::kTrain, fwd);
    const Matrix bad = Matrix::Ones(4, net.config.output_width + 1);
    EXPECT_THROW(net_backward(net, r2.cache, bad), InvalidStateError);
}

TEST(GradCheck, FullArchitectureAgainstCombinedLoss) {
    // Batch-statistics mode, dropout off, full residual stack; MSE+direction
    // loss against a random target, as in training.
    const auto topo = SkeletonTopology::default_16();
    Rng rng(21);
    MlpConfig cfg = small_config(51, 48, 64);
    auto net = init_network(cfg, rng);
    Rng fwd(22);
    const Matrix x = random_batch(8, cfg.input_width, fwd);
    Matrix target = random_batch(8, cfg.output_width, fwd);
    Vector mean = Vector::Zero(48), stddev = Vector::Ones(48) * 50.0;

    BatchLossFn loss = [&](const Matrix& out) {
        double total = 0.0;
        Matrix grad(out.rows(), out.cols());
        for (int r = 0; r < out.rows(); ++r) {
            const ScalarLoss l =
                combined_loss(out.row(r).transpose(), target.row(r).transpose(), mean, stddev, topo, LossWeights{0.5, 0.5});
            total += l.value;
            grad.row(r) = l.grad.transpose();
        }
        return std::make_pair(total / out.rows(), Matrix(grad / out.rows()));
    };

    GradCheckConfig gc;
    gc.coords_per_tensor = 12;
    const auto report = fd_gradcheck(net, x, loss, gc);
    EXPECT_TRUE(report.pass) << "worst " << report.worst.tensor << "[" << report.worst.index
                             << "] analytic=" << report.worst.analytic << " numeric=" << report.worst.numeric
                             << " rel=" << report.worst_rel_error;
    EXPECT_LT(report.worst_rel_error, 1e-4);
}

TEST(GradCheck, RejectsZeroEpsilon) {
    Rng rng(23);
    auto net = init_network(small_config(), rng);
    const Matrix x = Matrix::Zero(4, net.config.input_width);
    GradCheckConfig gc;
    gc.epsilon = 0.0;
    EXPECT_THROW(fd_gradcheck(net, x, sum_of_outputs(), gc), InvalidInputError);
}

TEST(Adam, FreshStateZeroGradientLeavesParamsUnchanged) {
    Rng rng(25);
    auto net = init_network(small_config(), rng);
    auto state = AdamState::create(net, 1e-3);
    Rng fwd(26);
    const Matrix x = random_batch(4, net.config.input_width, fwd);
    auto r = net_forward(net, x, ForwardOptions::gradcheck(), fwd);
    auto g = net_backward(net, r.cache, Matrix::Zero(4, net.config.output_width));
    const Matrix w_before = net.dense[0].weight;
    adam_step(net, g, state);
    EXPECT_EQ(state.step, 1);
    for (Eigen::Index i = 0; i < w_before.size(); ++i) EXPECT_EQ(net.dense[0].weight.data()[i], w_before.data()[i]);
}

TEST(Adam, BiasCorrectedFirstStepMagnitude) {
    // Single effective coordinate with gradient 1: first update is lr within eps.
    Rng rng(27);
    MlpConfig cfg = small_config(2, 1, 2);
    cfg.num_residual_blocks = 0;
    auto net = init_network(cfg, rng);
    auto state = AdamState::create(net, 1e-3);
    NetworkGrads g;
    g.dense.resize(1);
    g.dense[0].weight = Matrix::Zero(2, 2);
    g.dense[0].bias = Vector::Zero(2);
    g.dense[0].gamma = Vector::Zero(2);
    g.dense[0].beta = Vector::Zero(2);
    g.out_weight = Matrix::Zero(1, 2);
    g.out_bias = Vector::Zero(1);
    g.out_bias(0) = 1.0;
    const double before = net.out_bias(0);
    adam_step(net, g, state);
    const double update = before - net.out_bias(0);
    EXPECT_NEAR(update, 1e-3, 1e-9);
}

TEST(Adam, NonFiniteGradientRejected) {
    Rng rng(29);
    MlpConfig cfg = small_config(2, 1, 2);
    cfg.num_residual_blocks = 0;
    auto net = init_network(cfg, rng);
    auto state = AdamState::create(net, 1e-3);
    NetworkGrads g;
    g.dense.resize(1);
    g.dense[0].weight = Matrix::Zero(2, 2);
    g.dense[0].bias = Vector::Zero(2);
    g.dense[0].gamma = Vector::Zero(2);
    g.dense[0].beta = Vector::Zero(2);
    g.out_weight = Matrix::Zero(1, 2);
    g.out_bias = Vector::Zero(1);
    g.dense[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(adam_step(net, g, state), NumericError);
}

TEST(Determinism, SameSeedSameTrainingTrajectory) {
    auto run = [](std::uint64_t seed) {
        Rng init(seed);
        auto net = init_network(small_config(6, 4, 16), init);
        auto state = AdamState::create(net, 1e-3);
        Rng stream(seed + 1);
        Matrix x = random_batch(8, 6, stream);
        Matrix target = random_batch(8, 4, stream);
        for (int step = 0; step < 25; ++step) {
            auto r = net_forward(net, x, NetMode::kTrain, stream);
            const Matrix diff = r.output - target;
            auto g = net_backward(net, r.cache, Matrix(2.0 * diff / diff.size()));
            adam_step(net, g, state);
        }
        return net;
    };
    auto a = run(77);
    auto b = run(77);
    const auto ta = state_tensors(a);
    const auto tb = state_tensors(b);
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        ASSERT_EQ(ta[i].size, tb[i].size);
        for (Eigen::Index k = 0; k < ta[i].size; ++k) EXPECT_EQ(ta[i].data[k], tb[i].data[k]) << ta[i].name;
    }
}

}  // namespace
