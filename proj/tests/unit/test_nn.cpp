#include "support.hpp"

#include "handsplat/nn.hpp"

#include <gtest/gtest.h>

using namespace handsplat;
using namespace handsplat::testing;

TEST(Mlp, ShapesAndParameterCount) {
    Mlp<double> net({5, 7, 7, 3}, 1, 0.5);
    EXPECT_EQ(net.layer_count(), 3u);
    EXPECT_EQ(net.parameter_count(), std::size_t(5 * 7 + 7 + 7 * 7 + 7 + 7 * 3 + 3 + 1));
    EXPECT_EQ(Mlp<double>::parameter_count({5, 7, 7, 3}), net.parameter_count());
    std::size_t total = 0;
    for (const auto& [name, values] : net.parameters()) total += values.size();
    EXPECT_EQ(total, net.parameter_count());
    EXPECT_EQ(net.parameters().back().first, "gate");
}

TEST(Mlp, ZeroGateGivesZeroOutput) {
    Mlp<double> net({4, 8, 2}, 3);
    MatX<double> x = MatX<double>::Random(6, 4);
    EXPECT_EQ(net.forward(x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ForwardMatchesManualComputation) {
    Mlp<double> net({3, 4, 2}, 2, 0.7);
    VecX<double> x(3);
    x << 0.3, -0.2, 0.9;
    const RowVecX<double> h = (x.transpose() * net.weight(0) + net.bias(0)).cwiseMax(0.0);
    const RowVecX<double> y = 0.7 * (h * net.weight(1) + net.bias(1));
    EXPECT_LT((net.forward(x).transpose() - y).norm(), 1e-15);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    Mlp<double> net({4, 6, 5, 3}, 7, 0.8);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    MatX<double> x(5, 4), cot(5, 3);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (int i = 0; i < cot.size(); ++i) cot.data()[i] = n(rng);
    MlpTape<double> tape;
    net.forward(x, &tape);
    MlpGrads<double> g(net);
    const MatX<double> dx = net.backward(tape, cot, g);
    auto f = [&] { return (net.forward(x).array() * cot.array()).sum(); };
    auto params = net.parameters();
    auto grads = g.spans();
    for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t i = 0; i < params[l].second.size(); ++i) {
            EXPECT_NEAR(grads[l][i], central_difference(f, params[l].second[i], 1e-6), 1e-7) << params[l].first;
        }
    }
    for (int i = 0; i < x.size(); ++i) EXPECT_NEAR(dx.data()[i], central_difference(f, x.data()[i], 1e-6), 1e-7);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> p = {1.0, -2.0, 0.5};
    const std::vector<double> g = {0.3, -4.0, 0.0};
    AdamState<double> s;
    AdamConfig cfg;
    cfg.lr = 0.01;
    ASSERT_TRUE(adam_step<double>(p, g, s, cfg));
    EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-12);
    EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-12);
    EXPECT_EQ(p[2], 0.5);
    EXPECT_EQ(s.step, 1);
}

TEST(Adam, NonFiniteGradientSkipsUpdate) {
    std::vector<double> p = {1.0, 2.0};
    const std::vector<double> g = {0.1, std::nan("")};
    AdamState<double> s;
    EXPECT_FALSE(adam_step<double>(p, g, s, AdamConfig{}));
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(s.skipped, 1);
}

TEST(Adam, RemapRowsKeepsSurvivorMoments) {
    AdamState<double> s;
    s.m = {1, 2, 3, 4, 5, 6};
    s.v = {1, 1, 2, 2, 3, 3};
    s.remap_rows({2, 0, -1}, 2);
    EXPECT_EQ(s.m, (std::vector<double>{5, 6, 1, 2, 0, 0}));
    EXPECT_EQ(s.v, (std::vector<double>{3, 3, 1, 1, 0, 0}));
}
