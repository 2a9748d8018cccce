#pragma once

#include "handsplat/gaussians.hpp"
#include "handsplat/nn.hpp"
#include "handsplat/renderer.hpp"
#include "handsplat/scs.hpp"
#include "handsplat/skeleton.hpp"

#include <cstdint>

namespace handsplat {

struct Ablations {
    bool no_embeddings = false;
    bool no_intra_pose = false;     // structural coordinates replaced by zeros
    bool no_inter_pose = false;     // consistency loss disabled
    bool no_static_bones = false;   // static columns of P zeroed
    bool no_dynamic_bones = false;  // dynamic columns of P zeroed, generator unused
    bool no_t = false;
    bool no_delta = false;
};

struct ModelConfig {
    int embedding_dim = 16;
    int hidden_width = 64;
    int hidden_layers = 2;
    int dynamic_bones = 20;
    double tau = 0.08;
    double delta_scale = 0.02;
    int phi_hidden = 64;
    int phi_out = 32;
    bool posed_offsets = false;  // add position offsets after LBS instead of before
    // Let the consistency loss differentiate through the bundled structural
    // coordinates. Off: they are compared but held constant, since they are
    // pose-determined inputs rather than per-Gaussian attributes.
    bool consistency_coord_grad = false;
    Ablations ablations;
};

template <typename T>
struct HandModel {
    SkeletonModel skeleton;
    BoneTopology topology;
    SmoothingKernel kernel;
    ModelConfig config;

    GaussianCloud<T> cloud;
    DeformationNets<T> nets;
    DynamicBoneGenerator<T> generator;
    Mlp<T> phi;  // pose embedding, 45 -> phi_hidden -> phi_out

    HandModel() = default;
    HandModel(SkeletonModel skeleton, const ModelConfig& config, std::uint64_t seed);

    int coord_dim() const { return static_cast<int>(topology.edges.size()) + config.dynamic_bones; }
    int bundle_width() const { return 13 + 2 * (config.embedding_dim + coord_dim() + 12); }
    bool uses_generator() const { return !config.ablations.no_intra_pose && !config.ablations.no_dynamic_bones; }

    template <typename U>
    HandModel<U> cast() const {
        HandModel<U> out;
        out.skeleton = skeleton;
        out.topology = topology;
        out.kernel = kernel;
        out.config = config;
        out.cloud = cloud.template cast<U>();
        out.nets.geo = nets.geo.template cast<U>();
        out.nets.app = nets.app.template cast<U>();
        out.nets.fusion = nets.fusion.template cast<U>();
        out.generator = generator.template cast<U>();
        out.phi = phi.template cast<U>();
        return out;
    }
};

// Everything the reverse pass needs from one posed render.
template <typename T>
struct ForwardState {
    Pose pose;
    Camera camera;
    RenderSettings settings;
    PosedSkeleton posed;
    MatX<T> motion;  // N x 12
    MatX<T> x_lbs;   // LBS-posed undeformed centers, where P is evaluated
    StructuralBasis<T> basis;
    DynamicBones<T> dynamic;
    bool has_dynamic = false;
    MatX<T> coords;  // N x M after ablation masking
    DeformedCloud<T> deformed;
    MatX<T> rotation_matrices;  // N x 9, R of the deformed quaternion
    SplatScene<T> scene;
    RenderCache<T> cache;
    RenderOutput<T> output;
};

// Column mask for the structural coordinates under the active ablations.
std::vector<bool> active_coordinate_columns(const ModelConfig& config, std::size_t static_count);

template <typename T>
ForwardState<T> forward(const HandModel<T>& model, const Pose& pose, const Camera& camera,
                        const RenderSettings& settings);

// Posed render of the undeformed cloud: LBS only, no networks.
template <typename T>
RenderOutput<T> render_lbs(const HandModel<T>& model, const Pose& pose, const Camera& camera,
                           const RenderSettings& settings);

// Per-Gaussian attribute bundles: deformed canonical x, rotation and log-scale,
// deformed color, then the geometry and appearance decoder inputs [e, P, T].
template <typename T>
MatX<T> attribute_bundles(const ForwardState<T>& state);

template <typename T>
struct ModelGrads {
    CloudGrads<T> cloud;
    DeformationGrads<T> nets;
    MlpGrads<T> generator;
    MlpGrads<T> phi;
    VecX<T> mean2d_norm;  // screen-space gradient magnitude per Gaussian

    ModelGrads() = default;
    explicit ModelGrads(const HandModel<T>& model);
    void zero();
};

// Cotangents entering the reverse pass; empty matrices mean zero.
template <typename T>
struct Cotangents {
    Image<T> color;
    Image<T> alpha;
    MatX<T> bundles;    // N x bundle_width
    MatX<T> embed_geo;  // N x d, direct embedding gradients
};

template <typename T>
void backward(const HandModel<T>& model, const ForwardState<T>& state, const Cotangents<T>& cot,
              ModelGrads<T>& grads);

// omega between two poses through the pose embedding net. When `grads` is
// non-null, d_omega * d(omega)/d(phi params) is accumulated.
template <typename T>
T pose_weight(const Mlp<T>& phi, const VecX<T>& pose_a, const VecX<T>& pose_b, T delta, T d_omega = T(0),
              MlpGrads<T>* grads = nullptr);

}  // namespace handsplat
