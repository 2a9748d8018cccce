#pragma once

#include "handsplat/nn.hpp"
#include "handsplat/skeleton.hpp"
#include "handsplat/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace handsplat {

// Canonical-space Gaussian set with per-Gaussian learnable embeddings.
// Covariance is factorized as R(q) diag(exp(2 s)) R(q)^T; opacity is stored as
// a logit.
template <typename T>
struct GaussianCloud {
    MatX<T> position;   // N x 3, meters
    MatX<T> rotation;   // N x 4 quaternion (w, x, y, z)
    MatX<T> log_scale;  // N x 3
    MatX<T> color;      // N x 3 RGB in [0, 1]
    MatX<T> opacity;    // N x 1 logit
    MatX<T> embed_geo;  // N x d
    MatX<T> embed_app;  // N x d
    MatX<T> skin_weights;  // N x K, not optimized

    std::size_t size() const { return static_cast<std::size_t>(position.rows()); }
    int embedding_dim() const { return static_cast<int>(embed_geo.cols()); }
    void resize(std::size_t n, int embedding_dim, int joint_count);
    void normalize_rotations();
    Mat3<T> covariance(std::size_t i) const;
    T opacity_value(std::size_t i) const;
    // Rows of `rows` in order, duplicates allowed.
    GaussianCloud select(const std::vector<std::int64_t>& rows) const;
    void validate() const;

    template <typename U>
    GaussianCloud<U> cast() const {
        GaussianCloud<U> out;
        out.position = position.template cast<U>();
        out.rotation = rotation.template cast<U>();
        out.log_scale = log_scale.template cast<U>();
        out.color = color.template cast<U>();
        out.opacity = opacity.template cast<U>();
        out.embed_geo = embed_geo.template cast<U>();
        out.embed_app = embed_app.template cast<U>();
        out.skin_weights = skin_weights.template cast<U>();
        return out;
    }
};

// Gaussians seeded on the skeleton's template vertices: random colors in
// [0.3, 0.7], opacity logits ~ N(0, 0.25^2), isotropic scales equal to the
// mean distance to the 3 nearest template neighbors, identity rotations.
template <typename T>
GaussianCloud<T> initialize_from_template(const SkeletonModel& skeleton, int embedding_dim, std::uint64_t seed);

// Mean distance from each point to its k nearest neighbors.
std::vector<double> mean_neighbor_distance(const MatX<double>& points, int k);

// Per-Gaussian flattened 3x4 blended skinning transform (N x 12).
template <typename T>
MatX<T> motion_embedding(const GaussianCloud<T>& cloud, const PosedSkeleton& posed);

// LBS-posed centers from motion embeddings.
template <typename T>
MatX<T> apply_motion(const MatX<T>& motion, const MatX<T>& points);

template <typename T>
Mat34<T> motion_matrix(const MatX<T>& motion, Eigen::Index row) {
    Mat34<T> m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) m(r, c) = motion(row, 4 * r + c);
    }
    return m;
}

template <typename T>
struct DeformationNets {
    Mlp<T> geo;     // [e_g, P, T] -> dx(3), dq(4), ds(3)
    Mlp<T> app;     // [e_a, P, T] -> dc(3)
    Mlp<T> fusion;  // [e_g, e_a, P, T] -> dx(3), dq(4), ds(3), dc(3)

    static constexpr int kGeoOut = 10;
    static constexpr int kAppOut = 3;
    static constexpr int kFusionOut = 13;

    DeformationNets() = default;
    DeformationNets(int embedding_dim, int coord_dim, int hidden_width, int hidden_layers, std::uint64_t seed);
};

template <typename T>
struct DeformationGrads {
    MlpGrads<T> geo, app, fusion;
    explicit DeformationGrads(const DeformationNets<T>& nets) : geo(nets.geo), app(nets.app), fusion(nets.fusion) {}
    DeformationGrads() = default;
    void zero() {
        geo.zero();
        app.zero();
        fusion.zero();
    }
};

struct DeformOptions {
    bool use_embeddings = true;
};

// Deformed canonical attributes plus the cache needed by deform_backward.
template <typename T>
struct DeformedCloud {
    MatX<T> position;   // x + dx + dx_f
    MatX<T> rotation;   // unit dq_f * dq * q_hat
    MatX<T> log_scale;  // s + ds + ds_f
    MatX<T> color;      // clamp(c + dc + dc_f, 0, 1)
    MatX<T> offset_position;  // dx + dx_f, used by the posed-space offset mode

    // cache
    MatX<T> geo_out, app_out, fusion_out;
    MlpTape<T> geo_tape, app_tape, fusion_tape;
    MatX<T> color_unclamped;
    std::vector<bool> zeroed;  // Gaussians whose network output was non-finite
    std::size_t non_finite = 0;
};

template <typename T>
DeformedCloud<T> deform(const GaussianCloud<T>& cloud, const MatX<T>& coords, const MatX<T>& motion,
                        const DeformationNets<T>& nets, const DeformOptions& options);

template <typename T>
struct CloudGrads {
    MatX<T> position, rotation, log_scale, color, opacity, embed_geo, embed_app;

    void resize_like(const GaussianCloud<T>& cloud);
    void zero();
};

// Reverse pass of deform. Cotangents on the deformed attributes accumulate
// into `cloud_grads`, `net_grads`, and `d_coords` (N x M, overwritten).
template <typename T>
void deform_backward(const GaussianCloud<T>& cloud, const MatX<T>& coords, const MatX<T>& motion,
                     const DeformationNets<T>& nets, const DeformOptions& options, const DeformedCloud<T>& deformed,
                     const MatX<T>& d_position, const MatX<T>& d_rotation, const MatX<T>& d_log_scale,
                     const MatX<T>& d_color, CloudGrads<T>& cloud_grads, DeformationGrads<T>& net_grads,
                     MatX<T>& d_coords);

struct DensifyConfig {
    double grad_threshold = 0.5;     // mean |d loss / d mean2d| in pixels, scaled per frame
    double scale_threshold = 0.004;  // meters; above -> split, else clone
    double min_opacity = 0.005;
    double split_factor = 1.6;
    std::size_t max_count = 200000;
};

struct DensifyStats {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    bool capped = false;
};

// Clone/split Gaussians whose mean positional gradient exceeds the
// threshold, then prune transparent ones. `source` receives, for every output
// row, the input row it kept (or -1 for freshly created children).
template <typename T>
GaussianCloud<T> densify_and_prune(const GaussianCloud<T>& cloud, const std::vector<double>& grad_accum,
                                   const std::vector<double>& grad_count, const DensifyConfig& config,
                                   std::uint64_t seed, std::vector<std::int64_t>& source, DensifyStats& stats);

// ASCII PLY with position, color, opacity, scale and rotation per vertex.
template <typename T>
void write_ply(const GaussianCloud<T>& cloud, const std::string& path);

}  // namespace handsplat
