#include "support.hpp"

#include "handsplat/knn.hpp"

#include <gtest/gtest.h>

using namespace handsplat;
using namespace handsplat::testing;

namespace {

// Direct 2D windowed statistics, zero outside the image, one channel at a time.
double reference_ssim(const Image<double>& a, const Image<double>& b) {
    const int half = 5;
    double taps[11], norm = 0;
    for (int i = 0; i < 11; ++i) norm += taps[i] = std::exp(-double((i - half) * (i - half)) / (2 * 1.5 * 1.5));
    for (double& t : taps) t /= norm;
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        for (int y = 0; y < a.height; ++y) {
            for (int x = 0; x < a.width; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int dy = -half; dy <= half; ++dy) {
                    for (int dx = -half; dx <= half; ++dx) {
                        const int u = x + dx, v = y + dy;
                        if (u < 0 || v < 0 || u >= a.width || v >= a.height) continue;
                        const double w = taps[dx + half] * taps[dy + half];
                        const double p = a.at(u, v, c), q = b.at(u, v, c);
                        mx += w * p;
                        my += w * q;
                        sxx += w * p * p;
                        syy += w * q * q;
                        sxy += w * p * q;
                    }
                }
                total += (2 * mx * my + c1) * (2 * (sxy - mx * my) + c2) /
                         ((mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2));
            }
        }
    }
    return total / double(a.data.size());
}

}  // namespace

TEST(Losses, L1Basics) {
    Image<double> a(4, 3, 3, 0.2), b(4, 3, 3, 0.3);
    EXPECT_EQ(l1_loss(a, a), 0.0);
    EXPECT_NEAR(l1_loss(a, b), 0.1, 1e-15);
    Image<double> g(4, 3, 3);
    l1_loss(a, b, &g, 2.0);
    EXPECT_NEAR(g.data[0], -2.0 / 36.0, 1e-15);
    Image<double> wrong(3, 3, 3);
    EXPECT_THROW(l1_loss(a, wrong), ContractViolation);
}

TEST(Losses, SsimMatchesDirectReference) {
    std::mt19937_64 rng(1);
    const auto a = random_image<double>(rng, 19, 14, 3);
    auto b = a;
    std::normal_distribution<double> n(0, 0.05);
    for (auto& v : b.data) v += n(rng);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-12);
    EXPECT_NEAR(ssim_loss(a, a), 0.0, 1e-12);
}

TEST(Losses, SsimGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    auto a = random_image<double>(rng, 9, 8, 2);
    const auto b = random_image<double>(rng, 9, 8, 2);
    Image<double> g(9, 8, 2);
    ssim_loss(a, b, &g, 1.0);
    for (std::size_t i = 0; i < a.data.size(); i += 5) {
        EXPECT_NEAR(g.data[i], central_difference([&] { return ssim_loss(a, b); }, a.data[i], 1e-6), 1e-8);
    }
}

TEST(Losses, PoseSimilarity) {
    VecX<double> a(3), b(3);
    a << 0.1, 0.2, 0.3;
    EXPECT_EQ(pose_similarity(a, a, 1.5), 1.0);
    b = a;
    b[0] += 1.5 * std::sqrt(2.0);
    EXPECT_NEAR(pose_similarity(a, b, 1.5), std::exp(-1.0), 1e-15);
    b[0] += 100.0;
    EXPECT_LT(pose_similarity(a, b, 1.5), 1e-300 + 1e-200);
    EXPECT_THROW(pose_similarity(a, b, 0.0), ContractViolation);
}

TEST(Losses, ConsistencySingleGaussian) {
    ConsistencyMemory<double> mem;
    MatX<double> prev(1, 5), cur(1, 5);
    prev << 0, 0, 0, 1, 2;
    cur << 0.1, 0, 0, 1.5, 1;
    mem.seed(prev, VecX<double>::Zero(45));
    const double v2 = (cur - prev).squaredNorm();
    EXPECT_NEAR(consistency_loss(cur, mem, 1.0).loss, v2, 1e-15);
    EXPECT_NEAR(consistency_loss(cur, mem, std::exp(-1.0)).loss, std::exp(-1.0) * v2, 1e-15);
    EXPECT_EQ(consistency_loss(prev, mem, 0.3).loss, 0.0);
    ConsistencyMemory<double> empty;
    EXPECT_TRUE(consistency_loss(cur, empty, 1.0).skipped);
}

TEST(Losses, ConsistencyUsesNearestMemoryRow) {
    ConsistencyMemory<double> mem;
    MatX<double> prev(2, 4), cur(1, 4);
    prev << 0, 0, 0, 7, 1, 0, 0, 3;
    cur << 0.9, 0, 0, 4;
    mem.seed(prev, VecX<double>::Zero(45));
    const auto r = consistency_loss(cur, mem, 1.0);
    ASSERT_EQ(r.correspondence.size(), 1u);
    EXPECT_EQ(r.correspondence[0], 1);
    EXPECT_NEAR(r.loss, 0.01 + 1.0, 1e-12);
}

TEST(Losses, EmaMemoryConvergesGeometrically) {
    ConsistencyMemory<double> mem;
    MatX<double> m0 = MatX<double>::Random(10, 6), target = MatX<double>::Random(10, 6);
    m0.leftCols(3) = target.leftCols(3);  // keep the correspondence fixed
    mem.seed(m0, VecX<double>::Zero(45));
    std::vector<std::int64_t> identity(10);
    for (int i = 0; i < 10; ++i) identity[i] = i;
    const double d0 = (m0 - target).norm();
    for (int n = 1; n <= 30; ++n) {
        update_memory<double>(mem, target, identity, VecX<double>::Zero(45));
        EXPECT_LE((mem.bundles - target).norm(), std::pow(0.9, n) * d0 * (1 + 1e-12));
    }
}

TEST(Losses, SmoothnessMatchesBruteForce) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    MatX<double> pts(60, 3), e(60, 4);
    for (int i = 0; i < pts.size(); ++i) pts.data()[i] = n(rng);
    for (int i = 0; i < e.size(); ++i) e.data()[i] = n(rng);
    const int k = 5;
    std::vector<std::vector<std::int64_t>> nb(60);
    double expected = 0;
    for (int i = 0; i < 60; ++i) {
        std::vector<std::pair<double, int>> d;
        for (int j = 0; j < 60; ++j) {
            if (j != i) d.push_back({(pts.row(i) - pts.row(j)).squaredNorm(), j});
        }
        std::sort(d.begin(), d.end());
        for (int a = 0; a < k; ++a) {
            nb[i].push_back(d[a].second);
            expected += (e.row(i) - e.row(d[a].second)).squaredNorm();
        }
    }
    expected /= 60.0 * k;
    EXPECT_NEAR(smoothness_loss(e, self_knn(pts, k)), expected, 1e-12);
    MatX<double> g = MatX<double>::Zero(60, 4);
    smoothness_loss(e, nb, &g);
    for (int i = 0; i < e.size(); i += 7) {
        EXPECT_NEAR(g.data()[i], central_difference([&] { return smoothness_loss(e, nb); }, e.data()[i], 1e-6), 1e-8);
    }
    MatX<double> same = MatX<double>::Ones(60, 4);
    EXPECT_EQ(smoothness_loss(same, nb), 0.0);
}

TEST(Losses, WeightedTotal) {
    LossTerms t;
    EXPECT_EQ(total_loss(t, LossWeights{}), 0.0);
    t.rgb = t.mask = t.ssim = t.consistency = t.smoothness = 1.0;
    EXPECT_DOUBLE_EQ(base_loss(t, LossWeights{}), 1.11);
    EXPECT_DOUBLE_EQ(total_loss(t, LossWeights{}), 2.12);
    t.smoothness = std::nan("");
    EXPECT_THROW(total_loss(t, LossWeights{}), NumericError);
}
