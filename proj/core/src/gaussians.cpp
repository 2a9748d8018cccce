#include "handsplat/gaussians.hpp"

#include "handsplat/knn.hpp"
#include "handsplat/quaternion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace handsplat {

template <typename T>
void GaussianCloud<T>::resize(std::size_t n, int embedding_dim, int joint_count) {
    const auto rows = static_cast<Eigen::Index>(n);
    position = MatX<T>::Zero(rows, 3);
    rotation = MatX<T>::Zero(rows, 4);
    rotation.col(0).setOnes();
    log_scale = MatX<T>::Zero(rows, 3);
    color = MatX<T>::Zero(rows, 3);
    opacity = MatX<T>::Zero(rows, 1);
    embed_geo = MatX<T>::Zero(rows, embedding_dim);
    embed_app = MatX<T>::Zero(rows, embedding_dim);
    skin_weights = MatX<T>::Zero(rows, joint_count);
}

template <typename T>
void GaussianCloud<T>::normalize_rotations() {
    for (Eigen::Index i = 0; i < rotation.rows(); ++i) {
        const T n = rotation.row(i).norm();
        if (n > T(0) && std::isfinite(static_cast<double>(n))) {
            rotation.row(i) /= n;
        } else {
            rotation.row(i) = quat::identity<T>().transpose();
        }
    }
}

template <typename T>
Mat3<T> GaussianCloud<T>::covariance(std::size_t i) const {
    const auto row = static_cast<Eigen::Index>(i);
    const Vec4<T> q = rotation.row(row).transpose().normalized();
    const Mat3<T> r = quat::to_rotation(q);
    const Vec3<T> var = (T(2) * log_scale.row(row).transpose()).array().exp().matrix();
    return r * var.asDiagonal() * r.transpose();
}

template <typename T>
T GaussianCloud<T>::opacity_value(std::size_t i) const {
    return T(1) / (T(1) + std::exp(-opacity(static_cast<Eigen::Index>(i), 0)));
}

template <typename T>
GaussianCloud<T> GaussianCloud<T>::select(const std::vector<std::int64_t>& rows) const {
    GaussianCloud<T> out;
    auto pick = [&rows](const MatX<T>& m) {
        MatX<T> r(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
        return r;
    };
    out.position = pick(position);
    out.rotation = pick(rotation);
    out.log_scale = pick(log_scale);
    out.color = pick(color);
    out.opacity = pick(opacity);
    out.embed_geo = pick(embed_geo);
    out.embed_app = pick(embed_app);
    out.skin_weights = pick(skin_weights);
    return out;
}

template <typename T>
void GaussianCloud<T>::validate() const {
    const Eigen::Index n = position.rows();
    auto check = [n](const MatX<T>& m, Eigen::Index cols, const char* name) {
        if (m.rows() != n || (cols >= 0 && m.cols() != cols)) {
            throw ValidationError(std::string("Gaussian cloud field '") + name + "' has the wrong shape");
        }
        if (!m.allFinite()) throw ValidationError(std::string("Gaussian cloud field '") + name + "' is not finite");
    };
    check(position, 3, "position");
    check(rotation, 4, "rotation");
    check(log_scale, 3, "log_scale");
    check(color, 3, "color");
    check(opacity, 1, "opacity");
    check(embed_geo, -1, "embed_geo");
    check(embed_app, embed_geo.cols(), "embed_app");
    check(skin_weights, -1, "skin_weights");
}

std::vector<double> mean_neighbor_distance(const MatX<double>& points, int k) {
    const auto knn = self_knn(points, k);
    std::vector<double> out(points.rows(), 0.0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double sum = 0.0;
        for (auto j : knn[i]) sum += (points.row(i) - points.row(j)).norm();
        out[i] = knn[i].empty() ? 0.0 : sum / static_cast<double>(knn[i].size());
    }
    return out;
}

template <typename T>
GaussianCloud<T> initialize_from_template(const SkeletonModel& skeleton, int embedding_dim, std::uint64_t seed) {
    const MatX<double>& verts = skeleton.template_vertices();
    GaussianCloud<T> cloud;
    cloud.resize(verts.rows(), embedding_dim, skeleton.joint_count());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> color_dist(0.3, 0.7);
    std::normal_distribution<double> opacity_dist(0.0, 0.25);
    std::normal_distribution<double> embed_dist(0.0, 0.1);
    const auto spacing = mean_neighbor_distance(verts, 3);
    for (Eigen::Index i = 0; i < verts.rows(); ++i) {
        cloud.position.row(i) = verts.row(i).template cast<T>();
        const double s = std::log(std::max(spacing[i], 1e-5));
        cloud.log_scale.row(i).setConstant(static_cast<T>(s));
        for (int c = 0; c < 3; ++c) cloud.color(i, c) = static_cast<T>(color_dist(rng));
        cloud.opacity(i, 0) = static_cast<T>(opacity_dist(rng));
        for (int d = 0; d < embedding_dim; ++d) {
            cloud.embed_geo(i, d) = static_cast<T>(embed_dist(rng));
            cloud.embed_app(i, d) = static_cast<T>(embed_dist(rng));
        }
    }
    cloud.skin_weights = skeleton.skinning_weights().template cast<T>();
    return cloud;
}

template <typename T>
MatX<T> motion_embedding(const GaussianCloud<T>& cloud, const PosedSkeleton& posed) {
    const auto k = static_cast<Eigen::Index>(posed.skinning.size());
    require(cloud.skin_weights.cols() == k, "motion_embedding: skinning weight width mismatch");
    MatX<T> flat(k, 12);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) flat(j, 4 * r + c) = static_cast<T>(posed.skinning[j](r, c));
        }
    }
    return cloud.skin_weights * flat;
}

template <typename T>
MatX<T> apply_motion(const MatX<T>& motion, const MatX<T>& points) {
    require(motion.rows() == points.rows(), "apply_motion: row mismatch");
    MatX<T> out(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (int r = 0; r < 3; ++r) {
            out(i, r) = motion(i, 4 * r) * points(i, 0) + motion(i, 4 * r + 1) * points(i, 1) +
                        motion(i, 4 * r + 2) * points(i, 2) + motion(i, 4 * r + 3);
        }
    }
    return out;
}

template <typename T>
DeformationNets<T>::DeformationNets(int embedding_dim, int coord_dim, int hidden_width, int hidden_layers,
                                    std::uint64_t seed) {
    auto widths = [&](int in, int out) {
        std::vector<int> w = {in};
        for (int l = 0; l < hidden_layers; ++l) w.push_back(hidden_width);
        w.push_back(out);
        return w;
    };
    const int shared = coord_dim + 12;
    geo = Mlp<T>(widths(embedding_dim + shared, kGeoOut), seed + 1, T(0));
    app = Mlp<T>(widths(embedding_dim + shared, kAppOut), seed + 2, T(0));
    fusion = Mlp<T>(widths(2 * embedding_dim + shared, kFusionOut), seed + 3, T(0));
}

namespace {

template <typename T>
Vec4<T> offset_quaternion(const auto& raw) {
    return Vec4<T>(T(1) + raw[0], raw[1], raw[2], raw[3]);
}

}  // namespace

template <typename T>
DeformedCloud<T> deform(const GaussianCloud<T>& cloud, const MatX<T>& coords, const MatX<T>& motion,
                        const DeformationNets<T>& nets, const DeformOptions& options) {
    const Eigen::Index n = cloud.position.rows();
    const Eigen::Index d = cloud.embed_geo.cols();
    const Eigen::Index m = coords.cols();
    require(coords.rows() == n && motion.rows() == n && motion.cols() == 12, "deform: descriptor shape mismatch");

    MatX<T> geo_in(n, d + m + 12), app_in(n, d + m + 12), fusion_in(n, 2 * d + m + 12);
    if (options.use_embeddings) {
        geo_in.leftCols(d) = cloud.embed_geo;
        app_in.leftCols(d) = cloud.embed_app;
        fusion_in.leftCols(d) = cloud.embed_geo;
        fusion_in.middleCols(d, d) = cloud.embed_app;
    } else {
        geo_in.leftCols(d).setZero();
        app_in.leftCols(d).setZero();
        fusion_in.leftCols(2 * d).setZero();
    }
    geo_in.middleCols(d, m) = coords;
    app_in.middleCols(d, m) = coords;
    fusion_in.middleCols(2 * d, m) = coords;
    geo_in.rightCols(12) = motion;
    app_in.rightCols(12) = motion;
    fusion_in.rightCols(12) = motion;

    DeformedCloud<T> out;
    out.geo_out = nets.geo.forward(geo_in, &out.geo_tape);
    out.app_out = nets.app.forward(app_in, &out.app_tape);
    out.fusion_out = nets.fusion.forward(fusion_in, &out.fusion_tape);
    out.zeroed.assign(n, false);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!out.geo_out.row(i).allFinite() || !out.app_out.row(i).allFinite() || !out.fusion_out.row(i).allFinite()) {
            out.geo_out.row(i).setZero();
            out.app_out.row(i).setZero();
            out.fusion_out.row(i).setZero();
            out.zeroed[i] = true;
            ++out.non_finite;
        }
    }

    out.offset_position = out.geo_out.leftCols(3) + out.fusion_out.leftCols(3);
    out.position = cloud.position + out.offset_position;
    out.log_scale = cloud.log_scale + out.geo_out.middleCols(7, 3) + out.fusion_out.middleCols(7, 3);
    out.color_unclamped = cloud.color + out.app_out + out.fusion_out.rightCols(3);
    out.color = out.color_unclamped.cwiseMax(T(0)).cwiseMin(T(1));
    out.rotation.resize(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec4<T> base = cloud.rotation.row(i).transpose().normalized();
        const Vec4<T> dq = offset_quaternion<T>(out.geo_out.row(i).segment(3, 4)).normalized();
        const Vec4<T> dqf = offset_quaternion<T>(out.fusion_out.row(i).segment(3, 4)).normalized();
        out.rotation.row(i) = quat::multiply(dqf, quat::multiply(dq, base)).transpose();
    }
    return out;
}

template <typename T>
void CloudGrads<T>::resize_like(const GaussianCloud<T>& cloud) {
    position = MatX<T>::Zero(cloud.position.rows(), 3);
    rotation = MatX<T>::Zero(cloud.rotation.rows(), 4);
    log_scale = MatX<T>::Zero(cloud.log_scale.rows(), 3);
    color = MatX<T>::Zero(cloud.color.rows(), 3);
    opacity = MatX<T>::Zero(cloud.opacity.rows(), 1);
    embed_geo = MatX<T>::Zero(cloud.embed_geo.rows(), cloud.embed_geo.cols());
    embed_app = MatX<T>::Zero(cloud.embed_app.rows(), cloud.embed_app.cols());
}

template <typename T>
void CloudGrads<T>::zero() {
    for (auto* m : {&position, &rotation, &log_scale, &color, &opacity, &embed_geo, &embed_app}) m->setZero();
}

template <typename T>
void deform_backward(const GaussianCloud<T>& cloud, const MatX<T>& coords, const MatX<T>& motion,
                     const DeformationNets<T>& nets, const DeformOptions& options, const DeformedCloud<T>& deformed,
                     const MatX<T>& d_position, const MatX<T>& d_rotation, const MatX<T>& d_log_scale,
                     const MatX<T>& d_color, CloudGrads<T>& cloud_grads, DeformationGrads<T>& net_grads,
                     MatX<T>& d_coords) {
    (void)motion;
    const Eigen::Index n = cloud.position.rows();
    const Eigen::Index d = cloud.embed_geo.cols();
    const Eigen::Index m = coords.cols();

    MatX<T> d_geo = MatX<T>::Zero(n, DeformationNets<T>::kGeoOut);
    MatX<T> d_app = MatX<T>::Zero(n, DeformationNets<T>::kAppOut);
    MatX<T> d_fusion = MatX<T>::Zero(n, DeformationNets<T>::kFusionOut);

    cloud_grads.position += d_position;
    cloud_grads.log_scale += d_log_scale;
    const MatX<T> d_color_inner =
        ((deformed.color_unclamped.array() >= T(0)) && (deformed.color_unclamped.array() <= T(1)))
            .select(d_color.array(), T(0))
            .matrix();
    cloud_grads.color += d_color_inner;

    d_geo.leftCols(3) = d_position;
    d_fusion.leftCols(3) = d_position;
    d_geo.middleCols(7, 3) = d_log_scale;
    d_fusion.middleCols(7, 3) = d_log_scale;
    d_app = d_color_inner;
    d_fusion.rightCols(3) = d_color_inner;

    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec4<T> g = d_rotation.row(i).transpose();
        const Vec4<T> base_raw = cloud.rotation.row(i).transpose();
        const Vec4<T> base = base_raw.normalized();
        const Vec4<T> dq_raw = offset_quaternion<T>(deformed.geo_out.row(i).segment(3, 4));
        const Vec4<T> dqf_raw = offset_quaternion<T>(deformed.fusion_out.row(i).segment(3, 4));
        const Vec4<T> dq = dq_raw.normalized();
        const Vec4<T> dqf = dqf_raw.normalized();
        // result = dqf * (dq * base)
        const Vec4<T> inner = quat::multiply(dq, base);
        const Vec4<T> g_dqf = quat::right_matrix(inner).transpose() * g;
        const Vec4<T> g_inner = quat::left_matrix(dqf).transpose() * g;
        const Vec4<T> g_dq = quat::right_matrix(base).transpose() * g_inner;
        const Vec4<T> g_base = quat::left_matrix(dq).transpose() * g_inner;
        cloud_grads.rotation.row(i) += quat::normalize_backward(base_raw, g_base).transpose();
        d_geo.row(i).segment(3, 4) = quat::normalize_backward(dq_raw, g_dq).transpose();
        d_fusion.row(i).segment(3, 4) = quat::normalize_backward(dqf_raw, g_dqf).transpose();
        if (deformed.zeroed[i]) {
            d_geo.row(i).setZero();
            d_app.row(i).setZero();
            d_fusion.row(i).setZero();
        }
    }

    const MatX<T> g_geo_in = nets.geo.backward(deformed.geo_tape, d_geo, net_grads.geo);
    const MatX<T> g_app_in = nets.app.backward(deformed.app_tape, d_app, net_grads.app);
    const MatX<T> g_fusion_in = nets.fusion.backward(deformed.fusion_tape, d_fusion, net_grads.fusion);

    d_coords = g_geo_in.middleCols(d, m) + g_app_in.middleCols(d, m) + g_fusion_in.middleCols(2 * d, m);
    if (options.use_embeddings) {
        cloud_grads.embed_geo += g_geo_in.leftCols(d) + g_fusion_in.leftCols(d);
        cloud_grads.embed_app += g_app_in.leftCols(d) + g_fusion_in.middleCols(d, d);
    }
}

template <typename T>
GaussianCloud<T> densify_and_prune(const GaussianCloud<T>& cloud, const std::vector<double>& grad_accum,
                                   const std::vector<double>& grad_count, const DensifyConfig& config,
                                   std::uint64_t seed, std::vector<std::int64_t>& source, DensifyStats& stats) {
    const std::size_t n = cloud.size();
    require(grad_accum.size() == n && grad_count.size() == n, "densify_and_prune: statistics size mismatch");
    stats = {};
    std::vector<std::int64_t> clone_rows, split_rows;
    for (std::size_t i = 0; i < n; ++i) {
        if (grad_count[i] <= 0.0) continue;
        if (grad_accum[i] / grad_count[i] < config.grad_threshold) continue;
        const double max_scale = std::exp(static_cast<double>(cloud.log_scale.row(static_cast<Eigen::Index>(i)).maxCoeff()));
        (max_scale > config.scale_threshold ? split_rows : clone_rows).push_back(static_cast<std::int64_t>(i));
    }
    if (n + clone_rows.size() + split_rows.size() > config.max_count) {
        stats.capped = true;
        clone_rows.clear();
        split_rows.clear();
    }
    std::vector<bool> is_split(n, false);
    for (auto r : split_rows) is_split[r] = true;

    // Survivors keep their row and optimizer state; clones and split children
    // are appended and start fresh.
    std::vector<std::int64_t> rows;
    std::vector<std::int64_t> origin;
    for (std::size_t i = 0; i < n; ++i) {
        if (is_split[i]) continue;
        rows.push_back(static_cast<std::int64_t>(i));
        origin.push_back(static_cast<std::int64_t>(i));
    }
    for (auto r : clone_rows) {
        rows.push_back(r);
        origin.push_back(-1);
    }
    for (auto r : split_rows) {
        rows.push_back(r);
        rows.push_back(r);
        origin.push_back(-1);
        origin.push_back(-1);
    }
    GaussianCloud<T> out = cloud.select(rows);
    stats.cloned = clone_rows.size();
    stats.split = split_rows.size();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const T shrink = static_cast<T>(std::log(config.split_factor));
    const Eigen::Index first_child = static_cast<Eigen::Index>(rows.size() - 2 * split_rows.size());
    for (Eigen::Index c = first_child; c < static_cast<Eigen::Index>(rows.size()); ++c) {
        const Vec4<T> q = out.rotation.row(c).transpose().normalized();
        const Vec3<T> scale = out.log_scale.row(c).transpose().array().exp().matrix();
        Vec3<T> eps;
        for (int a = 0; a < 3; ++a) eps[a] = static_cast<T>(normal(rng));
        out.position.row(c) += (quat::to_rotation(q) * scale.cwiseProduct(eps)).transpose();
        out.log_scale.row(c).array() -= shrink;
    }

    std::vector<std::int64_t> keep;
    for (Eigen::Index i = 0; i < out.opacity.rows(); ++i) {
        const double alpha = 1.0 / (1.0 + std::exp(-static_cast<double>(out.opacity(i, 0))));
        if (alpha >= config.min_opacity) keep.push_back(i);
    }
    stats.pruned = static_cast<std::size_t>(out.opacity.rows()) - keep.size();
    source.clear();
    for (auto k : keep) source.push_back(origin[k]);
    return out.select(keep);
}

template <typename T>
void write_ply(const GaussianCloud<T>& cloud, const std::string& path) {
    std::ofstream file(path);
    if (!file) throw std::runtime_error("cannot open '" + path + "' for writing");
    file << "ply\nformat ascii 1.0\n";
    file << "element vertex " << cloud.size() << "\n";
    for (const char* p : {"x", "y", "z"}) file << "property float " << p << "\n";
    for (const char* p : {"red", "green", "blue"}) file << "property uchar " << p << "\n";
    file << "property float opacity\n";
    for (const char* p : {"scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
        file << "property float " << p << "\n";
    }
    file << "end_header\n";
    file.precision(7);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        file << cloud.position(r, 0) << ' ' << cloud.position(r, 1) << ' ' << cloud.position(r, 2);
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(cloud.color(r, c)), 0.0, 1.0);
            file << ' ' << static_cast<int>(std::lround(v * 255.0));
        }
        file << ' ' << cloud.opacity_value(i);
        for (int c = 0; c < 3; ++c) file << ' ' << cloud.log_scale(r, c);
        for (int c = 0; c < 4; ++c) file << ' ' << cloud.rotation(r, c);
        file << '\n';
    }
    if (!file) throw std::runtime_error("failed writing '" + path + "'");
}

#define HANDSPLAT_INSTANTIATE_GAUSSIANS(T)                                                                        \
    template struct GaussianCloud<T>;                                                                             \
    template GaussianCloud<T> initialize_from_template<T>(const SkeletonModel&, int, std::uint64_t);              \
    template MatX<T> motion_embedding<T>(const GaussianCloud<T>&, const PosedSkeleton&);                          \
    template MatX<T> apply_motion<T>(const MatX<T>&, const MatX<T>&);                                             \
    template struct DeformationNets<T>;                                                                           \
    template DeformedCloud<T> deform<T>(const GaussianCloud<T>&, const MatX<T>&, const MatX<T>&,                  \
                                        const DeformationNets<T>&, const DeformOptions&);                         \
    template struct CloudGrads<T>;                                                                                \
    template void deform_backward<T>(const GaussianCloud<T>&, const MatX<T>&, const MatX<T>&,                     \
                                     const DeformationNets<T>&, const DeformOptions&, const DeformedCloud<T>&,    \
                                     const MatX<T>&, const MatX<T>&, const MatX<T>&, const MatX<T>&,              \
                                     CloudGrads<T>&, DeformationGrads<T>&, MatX<T>&);                             \
    template GaussianCloud<T> densify_and_prune<T>(const GaussianCloud<T>&, const std::vector<double>&,           \
                                                   const std::vector<double>&, const DensifyConfig&,              \
                                                   std::uint64_t, std::vector<std::int64_t>&, DensifyStats&);     \
    template void write_ply<T>(const GaussianCloud<T>&, const std::string&);

HANDSPLAT_INSTANTIATE_GAUSSIANS(float)
HANDSPLAT_INSTANTIATE_GAUSSIANS(double)

}  // namespace handsplat
