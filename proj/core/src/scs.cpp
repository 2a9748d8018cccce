#include "handsplat/scs.hpp"

#include "handsplat/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace handsplat {

namespace {

constexpr std::size_t kPointGrain = 256;
constexpr double kMinBoneLength = 1e-8;
constexpr double kRegularizedLength = 1e-6;

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
VecX<T> softmax(const VecX<T>& logits) {
    const T peak = logits.maxCoeff();
    VecX<T> e = (logits.array() - peak).exp().matrix();
    return e / e.sum();
}

}  // namespace

SmoothingKernel SmoothingKernel::from_topology(const BoneTopology& topology) {
    const auto n = static_cast<Eigen::Index>(topology.size());
    SmoothingKernel kernel;
    kernel.weights = MatX<double>::Zero(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            if (a == b) {
                kernel.weights(a, b) = 0.5;
            } else if (topology.adjacent(a, b)) {
                kernel.weights(a, b) = 0.25;
            }
        }
    }
    return kernel;
}

template <typename T>
VecX<T> smooth_attention(const VecX<T>& logits, const SmoothingKernel& kernel) {
    require(static_cast<std::size_t>(logits.size()) == kernel.size(), "smooth_attention: logits/kernel size mismatch");
    const VecX<T> blended = kernel.weights.cast<T>() * softmax(logits);
    const T total = blended.sum();  // entries are non-negative, so this is the L1 norm
    require(total > T(0), "smooth_attention: zero kernel mass");
    return blended / total;
}

template <typename T>
VecX<T> smooth_attention_backward(const VecX<T>& logits, const SmoothingKernel& kernel, const VecX<T>& cotangent) {
    const MatX<T> k = kernel.weights.cast<T>();
    const VecX<T> s = softmax(logits);
    const VecX<T> u = k * s;
    const T total = u.sum();
    const VecX<T> w = u / total;
    const VecX<T> du = (cotangent.array() - cotangent.dot(w)).matrix() / total;
    const VecX<T> ds = k.transpose() * du;
    return (s.array() * (ds.array() - s.dot(ds))).matrix();
}

template <typename T>
std::size_t StructuralBasis<T>::static_count() const {
    return static_cast<std::size_t>(std::count(source.begin(), source.end(), BoneSource::static_bone));
}

template <typename T>
StructuralBasis<T> static_basis(const std::vector<Vec3d>& posed_joints, const BoneTopology& topology) {
    StructuralBasis<T> basis;
    const auto m = static_cast<Eigen::Index>(topology.size());
    basis.start.resize(m, 3);
    basis.end.resize(m, 3);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& e = topology.edges[i];
        basis.start.row(i) = posed_joints[e.u].cast<T>().transpose();
        basis.end.row(i) = posed_joints[e.v].cast<T>().transpose();
        basis.source.push_back(BoneSource::static_bone);
        basis.source_index.push_back(static_cast<int>(i));
        basis.frozen_direction.push_back(false);
    }
    return basis;
}

template <typename T>
void append_bones(StructuralBasis<T>& basis, const StructuralBasis<T>& more) {
    const Eigen::Index n0 = basis.start.rows();
    const Eigen::Index n1 = more.start.rows();
    basis.start.conservativeResize(n0 + n1, 3);
    basis.end.conservativeResize(n0 + n1, 3);
    if (n1 > 0) {
        basis.start.bottomRows(n1) = more.start;
        basis.end.bottomRows(n1) = more.end;
    }
    basis.source.insert(basis.source.end(), more.source.begin(), more.source.end());
    basis.source_index.insert(basis.source_index.end(), more.source_index.begin(), more.source_index.end());
    basis.frozen_direction.insert(basis.frozen_direction.end(), more.frozen_direction.begin(),
                                  more.frozen_direction.end());
}

template <typename T>
Vec3<T> dynamic_endpoint(const VecX<T>& weights, T t, const Vec3<T>& delta, const std::vector<Vec3d>& posed_joints,
                         const BoneTopology& topology) {
    require(static_cast<std::size_t>(weights.size()) == topology.size(), "dynamic_endpoint: weight count mismatch");
    Vec3<T> p = delta;
    for (std::size_t b = 0; b < topology.size(); ++b) {
        const Vec3<T> ju = posed_joints[topology.edges[b].u].template cast<T>();
        const Vec3<T> jv = posed_joints[topology.edges[b].v].template cast<T>();
        p += weights[static_cast<Eigen::Index>(b)] * ((T(1) - t) * ju + t * jv);
    }
    return p;
}

template <typename T>
DynamicBoneGenerator<T>::DynamicBoneGenerator(std::size_t static_count, int joint_count, DynamicBoneOptions options,
                                              int hidden_width, int hidden_layers, std::uint64_t seed, T gate_init)
    : options_(options), static_count_(static_count) {
    std::vector<int> widths = {SkeletonModel::kPoseDim + 3 * joint_count};
    for (int l = 0; l < hidden_layers; ++l) widths.push_back(hidden_width);
    widths.push_back(options.count * head_width(static_count));
    net_ = Mlp<T>(widths, seed, gate_init);
}

template <typename T>
DynamicBones<T> DynamicBoneGenerator<T>::generate(const VecX<double>& pose_flat,
                                                  const std::vector<Vec3d>& canonical_joints,
                                                  const std::vector<Vec3d>& posed_joints,
                                                  const BoneTopology& topology,
                                                  const SmoothingKernel& kernel) const {
    const auto e = static_cast<Eigen::Index>(static_count_);
    require(topology.size() == static_count_ && kernel.size() == static_count_,
            "DynamicBoneGenerator: topology size mismatch");
    MatX<T> input(1, net_.input_width());
    require(pose_flat.size() + 3 * static_cast<Eigen::Index>(canonical_joints.size()) == input.cols(),
            "DynamicBoneGenerator: input width mismatch");
    for (Eigen::Index i = 0; i < pose_flat.size(); ++i) input(0, i) = static_cast<T>(pose_flat[i]);
    for (std::size_t j = 0; j < canonical_joints.size(); ++j) {
        for (int c = 0; c < 3; ++c) input(0, pose_flat.size() + 3 * j + c) = static_cast<T>(canonical_joints[j][c]);
    }

    DynamicBones<T> out;
    const MatX<T> raw_row = net_.forward(input, &out.tape);
    const int slots = options_.count;
    const int width = head_width(static_count_);
    out.raw = Eigen::Map<const MatX<T>>(raw_row.data(), slots, width);
    out.start_weights.resize(slots, e);
    out.end_weights.resize(slots, e);
    out.t_start.resize(slots);
    out.t_end.resize(slots);
    out.delta_start = MatX<T>::Zero(slots, 3);
    out.delta_end = MatX<T>::Zero(slots, 3);
    out.basis.start.resize(slots, 3);
    out.basis.end.resize(slots, 3);

    const T scale = static_cast<T>(options_.delta_scale);
    for (int s = 0; s < slots; ++s) {
        const auto row = out.raw.row(s);
        out.start_weights.row(s) = smooth_attention<T>(row.segment(0, e).transpose(), kernel).transpose();
        out.end_weights.row(s) = smooth_attention<T>(row.segment(e, e).transpose(), kernel).transpose();
        out.t_start[s] = options_.learn_t ? sigmoid(row[2 * e]) : T(0.5);
        out.t_end[s] = options_.learn_t ? sigmoid(row[2 * e + 1]) : T(0.5);
        if (options_.learn_delta) {
            for (int c = 0; c < 3; ++c) {
                out.delta_start(s, c) = scale * std::tanh(row[2 * e + 2 + c]);
                out.delta_end(s, c) = scale * std::tanh(row[2 * e + 5 + c]);
            }
        }
        const Vec3<T> p = dynamic_endpoint<T>(out.start_weights.row(s).transpose(), out.t_start[s],
                                              out.delta_start.row(s).transpose(), posed_joints, topology);
        Vec3<T> q = dynamic_endpoint<T>(out.end_weights.row(s).transpose(), out.t_end[s],
                                        out.delta_end.row(s).transpose(), posed_joints, topology);
        bool frozen = false;
        if ((q - p).norm() < T(kMinBoneLength)) {
            Eigen::Index dominant = 0;
            out.end_weights.row(s).maxCoeff(&dominant);
            const Vec3d dir =
                (posed_joints[topology.edges[dominant].v] - posed_joints[topology.edges[dominant].u]).normalized();
            q = p + T(kRegularizedLength) * dir.cast<T>();
            frozen = true;
        }
        out.basis.start.row(s) = p.transpose();
        out.basis.end.row(s) = q.transpose();
        out.basis.source.push_back(BoneSource::dynamic_bone);
        out.basis.source_index.push_back(s);
        out.basis.frozen_direction.push_back(frozen);
    }
    return out;
}

template <typename T>
void DynamicBoneGenerator<T>::backward(const DynamicBones<T>& bones, const MatX<T>& d_start, const MatX<T>& d_end,
                                       const std::vector<Vec3d>& posed_joints, const BoneTopology& topology,
                                       const SmoothingKernel& kernel, MlpGrads<T>& grads) const {
    const auto e = static_cast<Eigen::Index>(static_count_);
    const int slots = options_.count;
    const int width = head_width(static_count_);
    require(d_start.rows() == slots && d_end.rows() == slots, "DynamicBoneGenerator::backward: shape mismatch");
    MatX<T> d_raw = MatX<T>::Zero(slots, width);
    const T scale = static_cast<T>(options_.delta_scale);
    for (int s = 0; s < slots; ++s) {
        Vec3<T> gp = d_start.row(s).transpose();
        Vec3<T> gq = d_end.row(s).transpose();
        if (bones.basis.frozen_direction[s]) {
            gp += gq;  // end = start + constant
            gq.setZero();
        }
        VecX<T> dws(e), dwe(e);
        T dts = 0, dte = 0;
        for (Eigen::Index b = 0; b < e; ++b) {
            const Vec3<T> ju = posed_joints[topology.edges[b].u].cast<T>();
            const Vec3<T> jv = posed_joints[topology.edges[b].v].cast<T>();
            dws[b] = gp.dot((T(1) - bones.t_start[s]) * ju + bones.t_start[s] * jv);
            dwe[b] = gq.dot((T(1) - bones.t_end[s]) * ju + bones.t_end[s] * jv);
            dts += bones.start_weights(s, b) * gp.dot(jv - ju);
            dte += bones.end_weights(s, b) * gq.dot(jv - ju);
        }
        const auto row = bones.raw.row(s);
        d_raw.row(s).segment(0, e) = smooth_attention_backward<T>(row.segment(0, e).transpose(), kernel, dws).transpose();
        d_raw.row(s).segment(e, e) = smooth_attention_backward<T>(row.segment(e, e).transpose(), kernel, dwe).transpose();
        if (options_.learn_t) {
            d_raw(s, 2 * e) = dts * bones.t_start[s] * (T(1) - bones.t_start[s]);
            d_raw(s, 2 * e + 1) = dte * bones.t_end[s] * (T(1) - bones.t_end[s]);
        }
        if (options_.learn_delta) {
            for (int c = 0; c < 3; ++c) {
                const T tp = std::tanh(row[2 * e + 2 + c]);
                const T tq = std::tanh(row[2 * e + 5 + c]);
                d_raw(s, 2 * e + 2 + c) = gp[c] * scale * (T(1) - tp * tp);
                d_raw(s, 2 * e + 5 + c) = gq[c] * scale * (T(1) - tq * tq);
            }
        }
    }
    const MatX<T> d_row = Eigen::Map<const MatX<T>>(d_raw.data(), 1, d_raw.size());
    net_.backward(bones.tape, d_row, grads);
}

namespace {

// Per (point, bone) descriptor entry and its partials with respect to
// r = start - x and b = end - start.
template <typename T>
struct EntryPartials {
    T value = 0;
    Vec3<T> d_r = Vec3<T>::Zero();
    Vec3<T> d_b = Vec3<T>::Zero();
};

template <typename T>
T entry_value(const Vec3<T>& r, const Vec3<T>& b, T inv_tau2) {
    const T rn = r.norm();
    if (rn <= T(1e-12)) return T(0);
    const T rho = r.dot(b) / (rn * b.norm());
    return std::exp(-rn * rn * inv_tau2) * rho;
}

template <typename T>
EntryPartials<T> entry_partials(const Vec3<T>& r, const Vec3<T>& b, T inv_tau2, bool frozen) {
    EntryPartials<T> out;
    const T rn = r.norm();
    if (rn <= T(1e-12)) return out;
    const T bn = b.norm();
    const Vec3<T> r_hat = r / rn;
    const Vec3<T> b_hat = b / bn;
    const T rho = r_hat.dot(b_hat);
    const T d = std::exp(-rn * rn * inv_tau2);
    out.value = d * rho;
    out.d_r = rho * (T(-2) * inv_tau2 * d) * r + d * (b_hat - rho * r_hat) / rn;
    if (!frozen) out.d_b = d * (r_hat - rho * b_hat) / bn;
    return out;
}

}  // namespace

template <typename T>
MatX<T> structural_coordinates(const MatX<T>& points, const StructuralBasis<T>& basis, T tau) {
    require(points.cols() == 3, "structural_coordinates: points must be N x 3");
    require(tau > T(0), "structural_coordinates: tau must be positive");
    const Eigen::Index n = points.rows();
    const auto m = static_cast<Eigen::Index>(basis.size());
    const T inv_tau2 = T(1) / (tau * tau);
    MatX<T> bone = basis.end - basis.start;
    MatX<T> out(n, m);
    parallel_for(static_cast<std::size_t>(n), kPointGrain, [&](std::size_t begin, std::size_t end) {
        for (auto i = static_cast<Eigen::Index>(begin); i < static_cast<Eigen::Index>(end); ++i) {
            const Vec3<T> x = points.row(i).transpose();
            for (Eigen::Index k = 0; k < m; ++k) {
                const Vec3<T> r = basis.start.row(k).transpose() - x;
                out(i, k) = entry_value<T>(r, bone.row(k).transpose(), inv_tau2);
            }
        }
    });
    return out;
}

template <typename T>
void structural_coordinates_backward(const MatX<T>& points, const StructuralBasis<T>& basis, T tau,
                                     const MatX<T>& d_coords, MatX<T>* d_points, MatX<T>* d_start, MatX<T>* d_end) {
    const Eigen::Index n = points.rows();
    const auto m = static_cast<Eigen::Index>(basis.size());
    require(d_coords.rows() == n && d_coords.cols() == m, "structural_coordinates_backward: cotangent shape mismatch");
    const T inv_tau2 = T(1) / (tau * tau);
    const MatX<T> bone = basis.end - basis.start;
    if (d_points) d_points->setZero(n, 3);
    const std::size_t chunks = chunk_count(static_cast<std::size_t>(n), kPointGrain);
    std::vector<MatX<T>> chunk_start(chunks, MatX<T>::Zero(m, 3));
    std::vector<MatX<T>> chunk_end(chunks, MatX<T>::Zero(m, 3));
    parallel_for(static_cast<std::size_t>(n), kPointGrain, [&](std::size_t begin, std::size_t end) {
        const std::size_t c = begin / kPointGrain;
        for (auto i = static_cast<Eigen::Index>(begin); i < static_cast<Eigen::Index>(end); ++i) {
            const Vec3<T> x = points.row(i).transpose();
            Vec3<T> gx = Vec3<T>::Zero();
            for (Eigen::Index k = 0; k < m; ++k) {
                const T g = d_coords(i, k);
                if (g == T(0)) continue;
                const Vec3<T> r = basis.start.row(k).transpose() - x;
                const auto partials = entry_partials<T>(r, bone.row(k).transpose(), inv_tau2, basis.frozen_direction[k]);
                gx -= g * partials.d_r;
                chunk_start[c].row(k) += g * (partials.d_r - partials.d_b).transpose();
                chunk_end[c].row(k) += g * partials.d_b.transpose();
            }
            if (d_points) d_points->row(i) = gx.transpose();
        }
    });
    if (d_start) d_start->setZero(m, 3);
    if (d_end) d_end->setZero(m, 3);
    for (std::size_t c = 0; c < chunks; ++c) {
        if (d_start) *d_start += chunk_start[c];
        if (d_end) *d_end += chunk_end[c];
    }
}

template <typename T>
std::vector<MatX<T>> scs_jacobian(const MatX<T>& points, const StructuralBasis<T>& basis, T tau) {
    const auto m = static_cast<Eigen::Index>(basis.size());
    const T inv_tau2 = T(1) / (tau * tau);
    const MatX<T> bone = basis.end - basis.start;
    std::vector<MatX<T>> out(points.rows(), MatX<T>::Zero(m, 3));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const Vec3<T> x = points.row(i).transpose();
        for (Eigen::Index k = 0; k < m; ++k) {
            const Vec3<T> r = basis.start.row(k).transpose() - x;
            out[i].row(k) = -entry_partials<T>(r, bone.row(k).transpose(), inv_tau2, false).d_r.transpose();
        }
    }
    return out;
}

#define HANDSPLAT_INSTANTIATE_SCS(T)                                                                              \
    template VecX<T> smooth_attention<T>(const VecX<T>&, const SmoothingKernel&);                                 \
    template VecX<T> smooth_attention_backward<T>(const VecX<T>&, const SmoothingKernel&, const VecX<T>&);        \
    template struct StructuralBasis<T>;                                                                           \
    template StructuralBasis<T> static_basis<T>(const std::vector<Vec3d>&, const BoneTopology&);                  \
    template void append_bones<T>(StructuralBasis<T>&, const StructuralBasis<T>&);                                \
    template Vec3<T> dynamic_endpoint<T>(const VecX<T>&, T, const Vec3<T>&, const std::vector<Vec3d>&,           \
                                         const BoneTopology&);                                                    \
    template class DynamicBoneGenerator<T>;                                                                       \
    template MatX<T> structural_coordinates<T>(const MatX<T>&, const StructuralBasis<T>&, T);                     \
    template void structural_coordinates_backward<T>(const MatX<T>&, const StructuralBasis<T>&, T, const MatX<T>&, \
                                                     MatX<T>*, MatX<T>*, MatX<T>*);                               \
    template std::vector<MatX<T>> scs_jacobian<T>(const MatX<T>&, const StructuralBasis<T>&, T);

HANDSPLAT_INSTANTIATE_SCS(float)
HANDSPLAT_INSTANTIATE_SCS(double)

}  // namespace handsplat
