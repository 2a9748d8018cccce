#pragma once

#include "handsplat/nn.hpp"
#include "handsplat/skeleton.hpp"
#include "handsplat/types.hpp"

#include <vector>

namespace handsplat {

// Fixed bone-adjacency smoothing over the static bones: 0.5 on the diagonal,
// 0.25 between bones sharing a joint, 0 elsewhere.
struct SmoothingKernel {
    MatX<double> weights;

    static SmoothingKernel from_topology(const BoneTopology& topology);
    std::size_t size() const { return static_cast<std::size_t>(weights.rows()); }
};

// softmax -> kernel blend -> L1 normalization. Output is a probability vector.
template <typename T>
VecX<T> smooth_attention(const VecX<T>& logits, const SmoothingKernel& kernel);

// Vector-Jacobian product of smooth_attention with respect to the logits.
template <typename T>
VecX<T> smooth_attention_backward(const VecX<T>& logits, const SmoothingKernel& kernel, const VecX<T>& cotangent);

enum class BoneSource { static_bone, dynamic_bone };

// Bone segments in posed space, static bones first, then dynamic slots.
template <typename T>
struct StructuralBasis {
    MatX<T> start;  // M x 3
    MatX<T> end;    // M x 3
    std::vector<BoneSource> source;
    std::vector<int> source_index;  // static edge index or dynamic slot
    // Regularized (near-degenerate) bones whose direction is held constant.
    std::vector<bool> frozen_direction;

    std::size_t size() const { return source.size(); }
    std::size_t static_count() const;
};

// Static part of the basis: posed joint pairs of the active topology.
template <typename T>
StructuralBasis<T> static_basis(const std::vector<Vec3d>& posed_joints, const BoneTopology& topology);

template <typename T>
void append_bones(StructuralBasis<T>& basis, const StructuralBasis<T>& more);

// One dynamic endpoint: sum_b w_b ((1 - t) J_u(b) + t J_v(b)) + delta over the
// posed static bones.
template <typename T>
Vec3<T> dynamic_endpoint(const VecX<T>& weights, T t, const Vec3<T>& delta, const std::vector<Vec3d>& posed_joints,
                         const BoneTopology& topology);

struct DynamicBoneOptions {
    int count = 20;
    bool learn_t = true;      // false: endpoints at bone midpoints (t fixed to 0.5)
    bool learn_delta = true;  // false: no positional offsets
    double delta_scale = 0.02;  // meters; offsets are delta_scale * tanh(head)
};

// Per-slot outputs of the generator together with what backward needs.
template <typename T>
struct DynamicBones {
    StructuralBasis<T> basis;
    MatX<T> start_weights;  // slots x |E_s|, smoothed attention
    MatX<T> end_weights;
    VecX<T> t_start;
    VecX<T> t_end;
    MatX<T> delta_start;  // slots x 3
    MatX<T> delta_end;
    MatX<T> raw;  // slots x head width, gated network output
    MlpTape<T> tape;
};

// Pose-conditioned generator of virtual bones. Each slot predicts start and
// end attention logits over the static bones, interpolation factors and
// offsets; endpoints are interpolated along the POSED static bones.
template <typename T>
class DynamicBoneGenerator {
public:
    DynamicBoneGenerator() = default;
    DynamicBoneGenerator(std::size_t static_count, int joint_count, DynamicBoneOptions options, int hidden_width,
                         int hidden_layers, std::uint64_t seed, T gate_init = T(1));

    static int head_width(std::size_t static_count) { return 2 * static_cast<int>(static_count) + 2 + 6; }

    DynamicBones<T> generate(const VecX<double>& pose_flat, const std::vector<Vec3d>& canonical_joints,
                             const std::vector<Vec3d>& posed_joints, const BoneTopology& topology,
                             const SmoothingKernel& kernel) const;

    // Backpropagates endpoint cotangents (slots x 3 each) into the network.
    void backward(const DynamicBones<T>& bones, const MatX<T>& d_start, const MatX<T>& d_end,
                  const std::vector<Vec3d>& posed_joints, const BoneTopology& topology, const SmoothingKernel& kernel,
                  MlpGrads<T>& grads) const;

    Mlp<T>& net() { return net_; }
    const Mlp<T>& net() const { return net_; }
    const DynamicBoneOptions& options() const { return options_; }
    int slots() const { return options_.count; }

    template <typename U>
    DynamicBoneGenerator<U> cast() const {
        DynamicBoneGenerator<U> out;
        out.net_ = net_.template cast<U>();
        out.options_ = options_;
        out.static_count_ = static_count_;
        return out;
    }

private:
    template <typename U>
    friend class DynamicBoneGenerator;

    Mlp<T> net_;
    DynamicBoneOptions options_;
    std::size_t static_count_ = 0;
};

// Angular-radial descriptor of every point against every bone:
// P[i][m] = exp(-|r|^2 / tau^2) * cos(r, b) with r = start_m - x_i and
// b = end_m - start_m. At r = 0 the entry is 0.
template <typename T>
MatX<T> structural_coordinates(const MatX<T>& points, const StructuralBasis<T>& basis, T tau);

// Vector-Jacobian product of structural_coordinates. Any output pointer may
// be null. Bone gradients are reduced in a fixed chunk order.
template <typename T>
void structural_coordinates_backward(const MatX<T>& points, const StructuralBasis<T>& basis, T tau,
                                     const MatX<T>& d_coords, MatX<T>* d_points, MatX<T>* d_start, MatX<T>* d_end);

// Dense dP/dx, one M x 3 block per point (zero rows at r = 0).
template <typename T>
std::vector<MatX<T>> scs_jacobian(const MatX<T>& points, const StructuralBasis<T>& basis, T tau);

}  // namespace handsplat
