#include "support.hpp"

#include "handsplat/gaussians.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>

using namespace handsplat;
using namespace handsplat::testing;

TEST(Cloud, TemplateInitialization) {
    const auto skel = SkeletonModel::default_hand();
    const auto cloud = initialize_from_template<double>(skel, 16, 3);
    ASSERT_EQ(cloud.size(), 778u);
    EXPECT_NO_THROW(cloud.validate());
    EXPECT_GE(cloud.color.minCoeff(), 0.3);
    EXPECT_LE(cloud.color.maxCoeff(), 0.7);
    const auto d = mean_neighbor_distance(skel.template_vertices(), 3);
    for (std::size_t i = 0; i < cloud.size(); i += 50) {
        EXPECT_NEAR(std::exp(cloud.log_scale(Eigen::Index(i), 0)), d[i], 1e-12);
        EXPECT_EQ(cloud.rotation.row(Eigen::Index(i)), Eigen::RowVector4d(1, 0, 0, 0));
    }
}

TEST(Cloud, CovarianceIsPsdAndMatchesFactorization) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    GaussianCloud<double> c;
    c.resize(200, 4, 21);
    for (int i = 0; i < c.rotation.size(); ++i) c.rotation.data()[i] = n(rng);
    for (int i = 0; i < c.log_scale.size(); ++i) c.log_scale.data()[i] = -3 + n(rng);
    c.normalize_rotations();
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Mat3d cov = c.covariance(i);
        EXPECT_LT((cov - cov.transpose()).norm(), 1e-15);
        const Eigen::SelfAdjointEigenSolver<Mat3d> es(cov);
        Vec3d expected = (2.0 * c.log_scale.row(Eigen::Index(i)).transpose()).array().exp();
        std::sort(expected.data(), expected.data() + 3);
        EXPECT_LT((es.eigenvalues() - expected).norm(), 1e-12 * expected.maxCoeff() + 1e-18);
    }
}

TEST(Cloud, MotionEmbeddingMatchesLbs) {
    const auto skel = SkeletonModel::default_hand();
    const auto cloud = initialize_from_template<double>(skel, 4, 2);
    Pose pose;
    pose.axis_angle[1] = Vec3d(0.8, 0.1, -0.2);
    pose.global_translation = Vec3d(0.1, 0.0, -0.2);
    const auto posed = forward_kinematics(skel, pose);
    const MatX<double> motion = motion_embedding(cloud, posed);
    const MatX<double> x = apply_motion(motion, cloud.position);
    const auto ref = lbs_transform(posed, cloud.position, cloud.skin_weights);
    EXPECT_LT((x - ref.points).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Deform, ZeroGatesAreIdentity) {
    const auto skel = SkeletonModel::default_hand();
    const auto cloud = initialize_from_template<double>(skel, 8, 2);
    DeformationNets<double> nets(8, 20, 16, 2, 3);
    const MatX<double> coords = MatX<double>::Random(778, 20);
    const auto posed = forward_kinematics(skel, Pose{});
    const auto d = deform(cloud, coords, motion_embedding(cloud, posed), nets, DeformOptions{});
    EXPECT_EQ(d.position, cloud.position);
    EXPECT_EQ(d.log_scale, cloud.log_scale);
    EXPECT_EQ(d.color, cloud.color);
    EXPECT_LT((d.rotation - cloud.rotation).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Deform, BackwardMatchesFiniteDifferences) {
    const auto skel = SkeletonModel::default_hand(12);
    auto cloud = initialize_from_template<double>(skel, 3, 2);
    DeformationNets<double> nets(3, 5, 6, 1, 3);
    nets.geo.gate() = 0.5;
    nets.app.gate() = 0.4;
    nets.fusion.gate() = 0.3;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    for (int i = 0; i < cloud.embed_geo.size(); ++i) cloud.embed_geo.data()[i] = n(rng);
    for (int i = 0; i < cloud.embed_app.size(); ++i) cloud.embed_app.data()[i] = n(rng);
    MatX<double> coords(12, 5);
    for (int i = 0; i < coords.size(); ++i) coords.data()[i] = 0.5 * n(rng);
    const auto posed = forward_kinematics(skel, Pose{});
    const MatX<double> motion = motion_embedding(cloud, posed);
    MatX<double> cp(12, 3), cq(12, 4), cs(12, 3), cc(12, 3);
    for (auto* m : {&cp, &cq, &cs, &cc}) {
        for (int i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
    }
    auto f = [&] {
        const auto d = deform(cloud, coords, motion, nets, DeformOptions{});
        return (d.position.array() * cp.array()).sum() + (d.rotation.array() * cq.array()).sum() +
               (d.log_scale.array() * cs.array()).sum() + (d.color.array() * cc.array()).sum();
    };
    const auto d = deform(cloud, coords, motion, nets, DeformOptions{});
    CloudGrads<double> cg;
    cg.resize_like(cloud);
    DeformationGrads<double> ng(nets);
    MatX<double> dcoords;
    deform_backward(cloud, coords, motion, nets, DeformOptions{}, d, cp, cq, cs, cc, cg, ng, dcoords);
    for (int i = 0; i < coords.size(); i += 3) {
        EXPECT_TRUE(close_relative(dcoords.data()[i], central_difference(f, coords.data()[i], 1e-6), 1e-5, 1e-8));
    }
    for (int i = 0; i < cloud.rotation.size(); i += 5) {
        EXPECT_TRUE(close_relative(cg.rotation.data()[i], central_difference(f, cloud.rotation.data()[i], 1e-6), 1e-5,
                                   1e-8));
    }
    for (int i = 0; i < cloud.embed_app.size(); i += 2) {
        EXPECT_TRUE(close_relative(cg.embed_app.data()[i], central_difference(f, cloud.embed_app.data()[i], 1e-6),
                                   1e-5, 1e-8));
    }
    auto params = nets.fusion.parameters();
    auto grads = ng.fusion.spans();
    for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t i = 0; i < params[l].second.size(); i += 7) {
            EXPECT_TRUE(close_relative(grads[l][i], central_difference(f, params[l].second[i], 1e-6), 1e-5, 1e-8));
        }
    }
}

TEST(Densify, SplitOneLargeGaussian) {
    GaussianCloud<double> c;
    c.resize(3, 2, 21);
    c.position << 0, 0, 0, 1, 0, 0, 2, 0, 0;
    c.log_scale.setConstant(std::log(0.001));
    c.log_scale.row(1).setConstant(std::log(0.02));
    c.opacity.setConstant(2.0);
    c.skin_weights.col(0).setOnes();
    DensifyConfig cfg;
    cfg.grad_threshold = 0.5;
    cfg.scale_threshold = 0.004;
    std::vector<std::int64_t> source;
    DensifyStats stats;
    const auto out = densify_and_prune(c, {0.0, 5.0, 0.0}, {1.0, 1.0, 1.0}, cfg, 1, source, stats);
    ASSERT_EQ(out.size(), 4u);  // N + 1: the parent is replaced by two children
    EXPECT_EQ(stats.split, 1u);
    EXPECT_EQ(stats.cloned, 0u);
    int children = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (source[i] >= 0) continue;
        ++children;
        EXPECT_NEAR(std::exp(out.log_scale(Eigen::Index(i), 0)), 0.02 / 1.6, 1e-12);
    }
    EXPECT_EQ(children, 2);
}

TEST(Densify, CloneSmallAndPruneTransparent) {
    GaussianCloud<double> c;
    c.resize(3, 2, 21);
    c.log_scale.setConstant(std::log(0.001));
    c.opacity << 2.0, 2.0, -10.0;  // last one is nearly transparent
    c.skin_weights.col(0).setOnes();
    std::vector<std::int64_t> source;
    DensifyStats stats;
    const auto out = densify_and_prune(c, {3.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, DensifyConfig{}, 1, source, stats);
    EXPECT_EQ(stats.cloned, 1u);
    EXPECT_EQ(stats.pruned, 1u);
    EXPECT_EQ(out.size(), 3u);
    EXPECT_EQ(source[0], 0);
    EXPECT_EQ(source[1], 1);
}

TEST(Ply, WritesHeaderAndVertices) {
    const auto cloud = initialize_from_template<double>(SkeletonModel::default_hand(20), 2, 1);
    const auto path = std::filesystem::temp_directory_path() / "handsplat_test.ply";
    write_ply(cloud, path.string());
    std::ifstream in(path);
    std::string first, line;
    std::getline(in, first);
    EXPECT_EQ(first, "ply");
    int vertices = -1, rows = 0;
    bool body = false;
    while (std::getline(in, line)) {
        if (body && !line.empty()) ++rows;
        if (line.rfind("element vertex", 0) == 0) vertices = std::stoi(line.substr(15));
        if (line == "end_header") body = true;
    }
    EXPECT_EQ(vertices, 20);
    EXPECT_EQ(rows, 20);
    std::filesystem::remove(path);
}
