#pragma once

// Shared test fixtures and independent reference implementations. Nothing in
// here calls the library code it is used to check.

#include "handsplat/camera.hpp"
#include "handsplat/image.hpp"
#include "handsplat/losses.hpp"
#include "handsplat/model.hpp"
#include "handsplat/renderer.hpp"
#include "handsplat/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace handsplat::testing {

inline Mat3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline Camera small_camera(int w, int h, double focal, double distance = 1.0) {
    return Camera::look_at(Vec3d(0.0, 0.0, -distance), Vec3d::Zero(), Vec3d(0.0, 1.0, 0.0), focal, w, h);
}

// Random anisotropic Gaussians in front of `camera`, roughly inside its view.
template <typename T>
SplatScene<T> random_scene(std::mt19937_64& rng, int n, double spread = 0.3, double min_scale = 0.01,
                           double max_scale = 0.06) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
    SplatScene<T> s;
    s.means.resize(n, 3);
    s.covariances.resize(n, 9);
    s.colors.resize(n, 3);
    s.opacities.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        s.means.row(i) << T(spread * u(rng)), T(spread * u(rng)), T(spread * u(rng));
        const Mat3d r = random_rotation(rng);
        Vec3d sc;
        for (int c = 0; c < 3; ++c) sc[c] = min_scale + (max_scale - min_scale) * unit(rng);
        const Mat3d cov = r * sc.cwiseAbs2().asDiagonal() * r.transpose();
        for (int k = 0; k < 9; ++k) s.covariances(i, k) = T(cov(k / 3, k % 3));
        for (int c = 0; c < 3; ++c) s.colors(i, c) = T(unit(rng));
        s.opacities(i, 0) = T(0.05 + 0.9 * unit(rng));
    }
    return s;
}

// Per-pixel compositing straight from the definition: every Gaussian is
// projected independently (EWA with a 0.3 px^2 dilation), sorted by depth and
// blended front to back until transmittance falls under the floor.
template <typename T>
RenderOutput<T> brute_force_render(const SplatScene<T>& scene, const Camera& cam,
                                   const RenderSettings& settings = {}) {
    struct Splat {
        double depth;
        int index;
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
    };
    std::vector<Splat> splats;
    for (int i = 0; i < static_cast<int>(scene.size()); ++i) {
        const Vec3d x(double(scene.means(i, 0)), double(scene.means(i, 1)), double(scene.means(i, 2)));
        const Vec3d p = cam.rotation * x + cam.translation;
        if (p.z() <= settings.near_plane) continue;
        Mat3d sigma;
        for (int k = 0; k < 9; ++k) sigma(k / 3, k % 3) = double(scene.covariances(i, k));
        Eigen::Matrix<double, 2, 3> j;
        j << cam.fx / p.z(), 0.0, -cam.fx * p.x() / (p.z() * p.z()), 0.0, cam.fy / p.z(),
            -cam.fy * p.y() / (p.z() * p.z());
        Eigen::Matrix2d s2 = j * cam.rotation * sigma * cam.rotation.transpose() * j.transpose();
        s2 += settings.covariance_dilation * Eigen::Matrix2d::Identity();
        s2(0, 1) = s2(1, 0) = 0.5 * (s2(0, 1) + s2(1, 0));
        if (s2.determinant() <= 0.0) continue;
        splats.push_back({p.z(), i, Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy),
                          s2.inverse()});
    }
    std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) { return a.depth < b.depth; });

    RenderOutput<T> out;
    out.color = Image<T>(cam.width, cam.height, 3);
    out.alpha = Image<T>(cam.width, cam.height, 1);
    const double cutoff = -0.5 * settings.extent_sigma * settings.extent_sigma;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::Vector2d px(x + 0.5, y + 0.5);
            double t = 1.0;
            Vec3d c = Vec3d::Zero();
            for (const auto& s : splats) {
                const Eigen::Vector2d d = px - s.mean;
                const double power = -0.5 * d.dot(s.inv * d);
                if (power < cutoff) continue;
                const double a = double(scene.opacities(s.index, 0)) * std::exp(power);
                for (int ch = 0; ch < 3; ++ch) c[ch] += double(scene.colors(s.index, ch)) * a * t;
                t *= 1.0 - a;
                if (t < settings.transmittance_floor) break;
            }
            for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = T(c[ch] + t * settings.background[ch]);
            out.alpha.at(x, y) = T(1.0 - t);
        }
    }
    return out;
}

template <typename T>
Image<T> random_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<T> img(w, h, c);
    for (auto& v : img.data) v = T(u(rng));
    return img;
}

inline double central_difference(const std::function<double()>& f, double& param, double h) {
    const double saved = param;
    param = saved + h;
    const double fp = f();
    param = saved - h;
    const double fm = f();
    param = saved;
    return (fp - fm) / (2.0 * h);
}

inline bool close_relative(double analytic, double numeric, double rel, double abs_floor = 1e-9) {
    return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

// The full training objective of one iteration in double precision, written
// out term by term: photometric L1 + mask L1 + D-SSIM, consistency against a
// frozen memory weighted through the pose embedding, and embedding smoothness.
struct PipelineProblem {
    Pose pose;
    Pose previous_pose;
    Camera camera;
    Image<double> target;
    Image<double> target_mask;
    ConsistencyMemory<double> memory;
    std::vector<std::vector<std::int64_t>> neighbors;
    LossWeights weights;
    double delta = 1.5;
};

inline double pipeline_loss(const HandModel<double>& model, const PipelineProblem& p, ModelGrads<double>* grads) {
    const auto st = forward(model, p.pose, p.camera, RenderSettings{});
    const VecX<double> theta = p.pose.flat();
    const VecX<double> theta_prev = p.previous_pose.flat();
    const double omega = pose_weight(model.phi, theta, theta_prev, p.delta);
    const MatX<double> bundles = attribute_bundles(st);

    if (!grads) {
        LossTerms terms;
        terms.rgb = l1_loss(st.output.color, p.target);
        terms.mask = l1_loss(st.output.alpha, p.target_mask);
        terms.ssim = ssim_loss(st.output.color, p.target);
        terms.consistency = consistency_loss(bundles, p.memory, omega).loss;
        terms.smoothness = smoothness_loss(model.cloud.embed_geo, p.neighbors);
        return total_loss(terms, p.weights);
    }

    Cotangents<double> cot;
    cot.color = Image<double>(p.camera.width, p.camera.height, 3);
    cot.alpha = Image<double>(p.camera.width, p.camera.height, 1);
    LossTerms terms;
    terms.rgb = l1_loss(st.output.color, p.target, &cot.color, 1.0);
    terms.mask = l1_loss(st.output.alpha, p.target_mask, &cot.alpha, p.weights.mask);
    terms.ssim = ssim_loss(st.output.color, p.target, &cot.color, p.weights.ssim);
    cot.bundles = MatX<double>::Zero(bundles.rows(), bundles.cols());
    const auto con = consistency_loss(bundles, p.memory, omega, &cot.bundles, p.weights.consistency);
    terms.consistency = con.loss;
    pose_weight(model.phi, theta, theta_prev, p.delta, p.weights.consistency * con.raw, &grads->phi);
    cot.embed_geo = MatX<double>::Zero(model.cloud.embed_geo.rows(), model.cloud.embed_geo.cols());
    terms.smoothness = smoothness_loss(model.cloud.embed_geo, p.neighbors, &cot.embed_geo, p.weights.smoothness);
    backward(model, st, cot, *grads);
    return total_loss(terms, p.weights);
}

}  // namespace handsplat::testing
