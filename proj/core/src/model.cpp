#include "handsplat/model.hpp"

#include "handsplat/losses.hpp"
#include "handsplat/quaternion.hpp"

#include <algorithm>
#include <cmath>

namespace handsplat {

template <typename T>
HandModel<T>::HandModel(SkeletonModel skel, const ModelConfig& cfg, std::uint64_t seed)
    : skeleton(std::move(skel)), config(cfg) {
    require(cfg.embedding_dim > 0 && cfg.hidden_width > 0 && cfg.hidden_layers >= 0 && cfg.dynamic_bones > 0,
            "HandModel: invalid widths");
    skeleton.validate();
    topology = build_static_topology(skeleton);
    kernel = SmoothingKernel::from_topology(topology);
    cloud = initialize_from_template<T>(skeleton, cfg.embedding_dim, seed);
    nets = DeformationNets<T>(cfg.embedding_dim, coord_dim(), cfg.hidden_width, cfg.hidden_layers, seed + 100);
    DynamicBoneOptions options;
    options.count = cfg.dynamic_bones;
    options.learn_t = !cfg.ablations.no_t;
    options.learn_delta = !cfg.ablations.no_delta;
    options.delta_scale = cfg.delta_scale;
    generator = DynamicBoneGenerator<T>(topology.size(), SkeletonModel::kJointCount, options, cfg.hidden_width,
                                        cfg.hidden_layers, seed + 200, T(1));
    phi = Mlp<T>({SkeletonModel::kPoseDim, cfg.phi_hidden, cfg.phi_out}, seed + 300, T(1));
}

std::vector<bool> active_coordinate_columns(const ModelConfig& config, std::size_t static_count) {
    const auto& a = config.ablations;
    std::vector<bool> mask(static_count + static_cast<std::size_t>(config.dynamic_bones), !a.no_intra_pose);
    if (a.no_static_bones) std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(static_count), false);
    if (a.no_dynamic_bones) std::fill(mask.begin() + static_cast<std::ptrdiff_t>(static_count), mask.end(), false);
    return mask;
}

namespace {

template <typename T>
Mat3<T> motion_linear(const MatX<T>& motion, Eigen::Index i) {
    Mat3<T> a;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) a(r, c) = motion(i, 4 * r + c);
    }
    return a;
}

template <typename T>
MatX<T> posed_covariances(const MatX<T>& motion, const MatX<T>& rotation, const MatX<T>& log_scale,
                          MatX<T>* rotation_matrices) {
    const Eigen::Index n = rotation.rows();
    MatX<T> cov(n, 9);
    if (rotation_matrices) rotation_matrices->resize(n, 9);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec4<T> q = rotation.row(i).transpose();
        const Mat3<T> r = quat::to_rotation(q);
        const Vec3<T> var = (T(2) * log_scale.row(i).transpose()).array().exp().matrix();
        const Mat3<T> a = motion_linear(motion, i);
        const Mat3<T> ar = a * r;
        const Mat3<T> sigma = ar * var.asDiagonal() * ar.transpose();
        Eigen::Map<Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(cov.row(i).data()) = sigma;
        if (rotation_matrices) Eigen::Map<Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(rotation_matrices->row(i).data()) = r;
    }
    return cov;
}

template <typename T>
MatX<T> sigmoid(const MatX<T>& logits) {
    return logits.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
}

}  // namespace

template <typename T>
ForwardState<T> forward(const HandModel<T>& model, const Pose& pose, const Camera& camera,
                        const RenderSettings& settings) {
    ForwardState<T> st;
    st.pose = pose;
    st.camera = camera;
    st.settings = settings;
    st.posed = forward_kinematics(model.skeleton, pose);
    st.motion = motion_embedding(model.cloud, st.posed);
    st.x_lbs = apply_motion(st.motion, model.cloud.position);

    const std::size_t e = model.topology.size();
    const Eigen::Index n = model.cloud.position.rows();
    const auto columns = active_coordinate_columns(model.config, e);
    st.basis = static_basis<T>(st.posed.joints, model.topology);
    st.has_dynamic = model.uses_generator();
    if (st.has_dynamic) {
        st.dynamic = model.generator.generate(pose.flat(), model.skeleton.canonical_joints(), st.posed.joints,
                                              model.topology, model.kernel);
        append_bones(st.basis, st.dynamic.basis);
    }
    st.coords = MatX<T>::Zero(n, model.coord_dim());
    if (!model.config.ablations.no_intra_pose) {
        const MatX<T> raw = structural_coordinates(st.x_lbs, st.basis, static_cast<T>(model.config.tau));
        for (Eigen::Index m = 0; m < raw.cols(); ++m) {
            if (columns[static_cast<std::size_t>(m)]) st.coords.col(m) = raw.col(m);
        }
    }

    DeformOptions options;
    options.use_embeddings = !model.config.ablations.no_embeddings;
    st.deformed = deform(model.cloud, st.coords, st.motion, model.nets, options);

    if (model.config.posed_offsets) {
        st.scene.means = st.x_lbs + st.deformed.offset_position;
    } else {
        st.scene.means = apply_motion(st.motion, st.deformed.position);
    }
    st.scene.covariances = posed_covariances(st.motion, st.deformed.rotation, st.deformed.log_scale, &st.rotation_matrices);
    st.scene.colors = st.deformed.color;
    st.scene.opacities = sigmoid(model.cloud.opacity);
    st.output = render(st.scene, camera, settings, &st.cache);
    return st;
}

template <typename T>
RenderOutput<T> render_lbs(const HandModel<T>& model, const Pose& pose, const Camera& camera,
                           const RenderSettings& settings) {
    const PosedSkeleton posed = forward_kinematics(model.skeleton, pose);
    const MatX<T> motion = motion_embedding(model.cloud, posed);
    SplatScene<T> scene;
    scene.means = apply_motion(motion, model.cloud.position);
    MatX<T> unit = model.cloud.rotation;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) unit.row(i).normalize();
    scene.covariances = posed_covariances(motion, unit, model.cloud.log_scale, static_cast<MatX<T>*>(nullptr));
    scene.colors = model.cloud.color;
    scene.opacities = sigmoid(model.cloud.opacity);
    return render(scene, camera, settings);
}

template <typename T>
MatX<T> attribute_bundles(const ForwardState<T>& st) {
    const MatX<T>& fg = st.deformed.geo_tape.activations.front();
    const MatX<T>& fa = st.deformed.app_tape.activations.front();
    const Eigen::Index n = st.scene.means.rows();
    MatX<T> out(n, 13 + fg.cols() + fa.cols());
    out.leftCols(3) = st.deformed.position;
    out.middleCols(3, 4) = st.deformed.rotation;
    out.middleCols(7, 3) = st.deformed.log_scale;
    out.middleCols(10, 3) = st.deformed.color;
    out.middleCols(13, fg.cols()) = fg;
    out.rightCols(fa.cols()) = fa;
    return out;
}

template <typename T>
ModelGrads<T>::ModelGrads(const HandModel<T>& model)
    : nets(model.nets), generator(model.generator.net()), phi(model.phi) {
    cloud.resize_like(model.cloud);
    mean2d_norm = VecX<T>::Zero(model.cloud.position.rows());
}

template <typename T>
void ModelGrads<T>::zero() {
    cloud.zero();
    nets.zero();
    generator.zero();
    phi.zero();
    mean2d_norm.setZero();
}

template <typename T>
void backward(const HandModel<T>& model, const ForwardState<T>& st, const Cotangents<T>& cot, ModelGrads<T>& grads) {
    const Eigen::Index n = model.cloud.position.rows();
    const Eigen::Index d = model.config.embedding_dim;
    const Eigen::Index m = model.coord_dim();
    const auto e = static_cast<Eigen::Index>(model.topology.size());
    require(grads.cloud.position.rows() == n, "backward: gradient buffers do not match the cloud");

    const Image<T> zero_color(st.output.color.width, st.output.color.height, 3);
    const Image<T> zero_alpha(st.output.alpha.width, st.output.alpha.height, 1);
    const RenderGrads<T> rg = render_backward(st.scene, st.camera, st.settings, st.cache,
                                              cot.color.data.empty() ? zero_color : cot.color,
                                              cot.alpha.data.empty() ? zero_alpha : cot.alpha);
    grads.mean2d_norm += rg.mean2d_norm;

    MatX<T> d_means = rg.means;
    MatX<T> d_rotation = MatX<T>::Zero(n, 4);
    MatX<T> d_log_scale = MatX<T>::Zero(n, 3);
    MatX<T> d_color = rg.colors;
    MatX<T> d_coords_direct = MatX<T>::Zero(n, m);
    const bool use_embeddings = !model.config.ablations.no_embeddings;

    for (Eigen::Index i = 0; i < n; ++i) {
        const T o = st.scene.opacities(i, 0);
        grads.cloud.opacity(i, 0) += rg.opacities(i, 0) * o * (T(1) - o);
    }

    if (cot.bundles.size() > 0) {
        require(cot.bundles.rows() == n && cot.bundles.cols() == model.bundle_width(), "backward: bundle cotangent shape");
        d_rotation += cot.bundles.middleCols(3, 4);
        d_log_scale += cot.bundles.middleCols(7, 3);
        d_color += cot.bundles.middleCols(10, 3);
        const Eigen::Index geo = 13, app = 13 + d + m + 12;
        if (use_embeddings) {
            grads.cloud.embed_geo += cot.bundles.middleCols(geo, d);
            grads.cloud.embed_app += cot.bundles.middleCols(app, d);
        }
        if (model.config.consistency_coord_grad) {
            d_coords_direct += cot.bundles.middleCols(geo + d, m) + cot.bundles.middleCols(app + d, m);
        }
    }
    if (cot.embed_geo.size() > 0) grads.cloud.embed_geo += cot.embed_geo;

    // Posed covariance A R D R^T A^T back to the deformed rotation / log-scale.
    for (Eigen::Index i = 0; i < n; ++i) {
        const Mat3<T> g = Eigen::Map<const Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(rg.covariances.row(i).data());
        const Mat3<T> a = motion_linear(st.motion, i);
        const Mat3<T> g_local = a.transpose() * g * a;
        const Mat3<T> gs = T(0.5) * (g_local + g_local.transpose());
        const Mat3<T> r = Eigen::Map<const Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(st.rotation_matrices.row(i).data());
        const Vec3<T> var = (T(2) * st.deformed.log_scale.row(i).transpose()).array().exp().matrix();
        const Mat3<T> g_r = T(2) * gs * r * var.asDiagonal();
        const Vec4<T> q = st.deformed.rotation.row(i).transpose();
        d_rotation.row(i) += quat::to_rotation_backward(q, g_r).transpose();
        const Mat3<T> rgr = r.transpose() * gs * r;
        for (int k = 0; k < 3; ++k) d_log_scale(i, k) += rgr(k, k) * T(2) * var[k];
    }

    // Means back to canonical (or posed-space) offsets.
    MatX<T> d_position(n, 3);
    MatX<T> d_base_position(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Mat3<T> a = motion_linear(st.motion, i);
        d_base_position.row(i) = (a.transpose() * d_means.row(i).transpose()).transpose();
    }
    if (model.config.posed_offsets) {
        d_position = d_means;
        grads.cloud.position += d_base_position - d_means;
    } else {
        d_position = d_base_position;
    }
    if (cot.bundles.size() > 0) d_position += cot.bundles.leftCols(3);

    DeformOptions options;
    options.use_embeddings = use_embeddings;
    MatX<T> d_coords;
    deform_backward(model.cloud, st.coords, st.motion, model.nets, options, st.deformed, d_position, d_rotation,
                    d_log_scale, d_color, grads.cloud, grads.nets, d_coords);
    d_coords += d_coords_direct;

    if (model.config.ablations.no_intra_pose) return;
    const auto columns = active_coordinate_columns(model.config, static_cast<std::size_t>(e));
    for (Eigen::Index k = 0; k < m; ++k) {
        if (!columns[static_cast<std::size_t>(k)]) d_coords.col(k).setZero();
    }
    const auto basis_cols = static_cast<Eigen::Index>(st.basis.size());
    MatX<T> d_points, d_start, d_end;
    structural_coordinates_backward(st.x_lbs, st.basis, static_cast<T>(model.config.tau),
                                    MatX<T>(d_coords.leftCols(basis_cols)), &d_points,
                                    st.has_dynamic ? &d_start : nullptr, st.has_dynamic ? &d_end : nullptr);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Mat3<T> a = motion_linear(st.motion, i);
        grads.cloud.position.row(i) += (a.transpose() * d_points.row(i).transpose()).transpose();
    }
    if (st.has_dynamic) {
        const Eigen::Index slots = model.config.dynamic_bones;
        model.generator.backward(st.dynamic, MatX<T>(d_start.bottomRows(slots)), MatX<T>(d_end.bottomRows(slots)),
                                 st.posed.joints, model.topology, model.kernel, grads.generator);
    }
}

template <typename T>
T pose_weight(const Mlp<T>& phi, const VecX<T>& pose_a, const VecX<T>& pose_b, T delta, T d_omega,
              MlpGrads<T>* grads) {
    MlpTape<T> tape_a, tape_b;
    const MatX<T> ea = phi.forward(MatX<T>(pose_a.transpose()), &tape_a);
    const MatX<T> eb = phi.forward(MatX<T>(pose_b.transpose()), &tape_b);
    const T omega = pose_similarity<T>(ea.row(0).transpose(), eb.row(0).transpose(), delta);
    if (grads && d_omega != T(0)) {
        const MatX<T> g = (-d_omega * omega / (delta * delta)) * (ea - eb);
        phi.backward(tape_a, g, *grads);
        phi.backward(tape_b, MatX<T>(-g), *grads);
    }
    return omega;
}

#define HANDSPLAT_INSTANTIATE_MODEL(T)                                                                               \
    template struct HandModel<T>;                                                                                    \
    template ForwardState<T> forward(const HandModel<T>&, const Pose&, const Camera&, const RenderSettings&);        \
    template RenderOutput<T> render_lbs(const HandModel<T>&, const Pose&, const Camera&, const RenderSettings&);     \
    template MatX<T> attribute_bundles(const ForwardState<T>&);                                                      \
    template struct ModelGrads<T>;                                                                                   \
    template void backward(const HandModel<T>&, const ForwardState<T>&, const Cotangents<T>&, ModelGrads<T>&);      \
    template T pose_weight(const Mlp<T>&, const VecX<T>&, const VecX<T>&, T, T, MlpGrads<T>*);
HANDSPLAT_INSTANTIATE_MODEL(float)
HANDSPLAT_INSTANTIATE_MODEL(double)

}  // namespace handsplat
