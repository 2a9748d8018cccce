#pragma once

#include "handsplat/camera.hpp"
#include "handsplat/image.hpp"
#include "handsplat/types.hpp"

#include <cstdint>
#include <vector>

namespace handsplat {

struct RenderSettings {
    int tile_size = 16;
    double near_plane = 0.01;          // meters; Gaussians at or behind it are culled
    double covariance_dilation = 0.3;  // px^2 added to the 2D covariance diagonal
    double transmittance_floor = 1e-4; // compositing stops once T drops below
    double extent_sigma = 3.0;         // footprint: Mahalanobis radius of the ellipse
    Vec3d background = Vec3d::Zero();
};

// Posed Gaussians in world space.
template <typename T>
struct SplatScene {
    MatX<T> means;        // N x 3
    MatX<T> covariances;  // N x 9, row-major 3x3, symmetric
    MatX<T> colors;       // N x 3
    MatX<T> opacities;    // N x 1, in (0, 1)

    std::size_t size() const { return static_cast<std::size_t>(means.rows()); }
};

template <typename T>
struct ProjectedSplats {
    MatX<T> camera_points;  // N x 3
    MatX<T> mean2d;         // N x 2, pixels
    MatX<T> cov2d;          // N x 3 (xx, xy, yy), dilation included
    MatX<T> conic;          // N x 3 inverse of cov2d
    VecX<T> depth;
    std::vector<bool> visible;
    std::vector<Eigen::Vector4i> tile_rect;  // x0, y0, x1, y1 inclusive tile range
    std::vector<std::int32_t> depth_order;   // visible Gaussians, front to back, ties by index
};

template <typename T>
ProjectedSplats<T> project(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings);

template <typename T>
struct RenderOutput {
    Image<T> color;  // W x H x 3
    Image<T> alpha;  // W x H x 1
    std::vector<std::int32_t> contributors;  // per pixel
};

// Per-tile Gaussian lists in depth order; produced by the forward pass and
// reused by the backward pass.
struct TileBins {
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::int32_t>> lists;
};

template <typename T>
TileBins bin_tiles(const ProjectedSplats<T>& projected, const Camera& camera, const RenderSettings& settings);

template <typename T>
RenderOutput<T> rasterize(const ProjectedSplats<T>& projected, const SplatScene<T>& scene, const Camera& camera,
                          const RenderSettings& settings, const TileBins& bins);

template <typename T>
struct RenderCache {
    ProjectedSplats<T> projected;
    TileBins bins;
};

template <typename T>
RenderOutput<T> render(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings,
                       RenderCache<T>* cache = nullptr);

template <typename T>
struct RasterGrads {
    MatX<T> mean2d;  // N x 2
    MatX<T> conic;   // N x 3, (a, b, c) with b the shared off-diagonal
    MatX<T> colors;
    MatX<T> opacities;
};

template <typename T>
RasterGrads<T> rasterize_backward(const ProjectedSplats<T>& projected, const SplatScene<T>& scene,
                                  const Camera& camera, const RenderSettings& settings, const TileBins& bins,
                                  const Image<T>& d_color, const Image<T>& d_alpha);

template <typename T>
struct RenderGrads {
    MatX<T> means;        // N x 3
    MatX<T> covariances;  // N x 9, gradient w.r.t. each entry of the 3x3
    MatX<T> colors;
    MatX<T> opacities;
    VecX<T> mean2d_norm;  // |d loss / d mean2d|, for densification statistics
};

// Chains raster gradients through the perspective projection.
template <typename T>
void project_backward(const SplatScene<T>& scene, const ProjectedSplats<T>& projected, const Camera& camera,
                      const RasterGrads<T>& raster, RenderGrads<T>& out);

template <typename T>
RenderGrads<T> render_backward(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings,
                               const RenderCache<T>& cache, const Image<T>& d_color, const Image<T>& d_alpha);

}  // namespace handsplat
