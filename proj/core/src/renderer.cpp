#include "handsplat/renderer.hpp"

#include "handsplat/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace handsplat {

namespace {

// Gaussians whose Mahalanobis distance exceeds the footprint radius do not
// touch a pixel at all; inside it they contribute alpha = o * exp(power).
template <typename T>
T footprint_floor(const RenderSettings& settings) {
    return T(-0.5 * settings.extent_sigma * settings.extent_sigma);
}

template <typename T>
struct PixelHit {
    std::int32_t slot;  // position in the tile list
    T alpha;
    T transmittance;    // before this Gaussian
    T power;
    T dx, dy;
};

// Walks a tile list front to back for one pixel. visit(slot, gid, alpha,
// T_before, power, dx, dy) is called per contributor; returns final T.
template <typename T, typename Visit>
T composite_pixel(const ProjectedSplats<T>& projected, const SplatScene<T>& scene,
                  const std::vector<std::int32_t>& list, T px, T py, const RenderSettings& settings, Visit&& visit) {
    const T floor = footprint_floor<T>(settings);
    const T t_floor = T(settings.transmittance_floor);
    T transmittance = T(1);
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::int32_t g = list[k];
        const T dx = px - projected.mean2d(g, 0);
        const T dy = py - projected.mean2d(g, 1);
        const T a = projected.conic(g, 0), b = projected.conic(g, 1), c = projected.conic(g, 2);
        const T power = T(-0.5) * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if (power < floor) continue;
        const T alpha = scene.opacities(g, 0) * std::exp(power);
        visit(static_cast<std::int32_t>(k), g, alpha, transmittance, power, dx, dy);
        transmittance *= T(1) - alpha;
        if (transmittance < t_floor) break;
    }
    return transmittance;
}

template <typename T>
void atomic_add(T& target, T value) {
    std::atomic_ref<T>(target).fetch_add(value, std::memory_order_relaxed);
}

}  // namespace

template <typename T>
ProjectedSplats<T> project(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings) {
    const auto n = static_cast<Eigen::Index>(scene.size());
    require(scene.covariances.rows() == n && scene.covariances.cols() == 9, "project: covariances must be N x 9");
    require(scene.means.cols() == 3, "project: means must be N x 3");
    ProjectedSplats<T> out;
    out.camera_points.setZero(n, 3);
    out.mean2d.setZero(n, 2);
    out.cov2d.setZero(n, 3);
    out.conic.setZero(n, 3);
    out.depth.setZero(n);
    out.visible.assign(static_cast<std::size_t>(n), false);
    out.tile_rect.assign(static_cast<std::size_t>(n), Eigen::Vector4i(0, 0, -1, -1));

    const Mat3<T> w = camera.rotation.cast<T>();
    const Vec3<T> tr = camera.translation.cast<T>();
    const T fx = T(camera.fx), fy = T(camera.fy), cx = T(camera.cx), cy = T(camera.cy);
    const T dilation = T(settings.covariance_dilation);
    const T extent = T(settings.extent_sigma);
    const int ts = settings.tile_size;

    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3<T> t = w * scene.means.row(i).transpose() + tr;
        out.camera_points.row(i) = t.transpose();
        out.depth(i) = t.z();
        if (!(t.z() > T(settings.near_plane))) continue;
        const T inv_z = T(1) / t.z();
        const T u = fx * t.x() * inv_z + cx;
        const T v = fy * t.y() * inv_z + cy;
        Eigen::Matrix<T, 2, 3> jac;
        jac << fx * inv_z, T(0), -fx * t.x() * inv_z * inv_z, T(0), fy * inv_z, -fy * t.y() * inv_z * inv_z;
        const Eigen::Matrix<T, 2, 3> m = jac * w;
        const Mat3<T> sigma = Eigen::Map<const Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(scene.covariances.row(i).data());
        Mat2<T> s2 = m * sigma * m.transpose();
        s2(0, 0) += dilation;
        s2(1, 1) += dilation;
        const T sxy = T(0.5) * (s2(0, 1) + s2(1, 0));
        const T det = s2(0, 0) * s2(1, 1) - sxy * sxy;
        if (!(det > T(0)) || !std::isfinite(u) || !std::isfinite(v)) continue;
        out.mean2d(i, 0) = u;
        out.mean2d(i, 1) = v;
        out.cov2d.row(i) << s2(0, 0), sxy, s2(1, 1);
        out.conic.row(i) << s2(1, 1) / det, -sxy / det, s2(0, 0) / det;

        // Pixels whose centers fall inside the ellipse's bounding box.
        const T rx = extent * std::sqrt(s2(0, 0));
        const T ry = extent * std::sqrt(s2(1, 1));
        const long x0 = std::max<long>(0, static_cast<long>(std::ceil(u - rx - T(0.5))));
        const long x1 = std::min<long>(camera.width - 1, static_cast<long>(std::floor(u + rx - T(0.5))));
        const long y0 = std::max<long>(0, static_cast<long>(std::ceil(v - ry - T(0.5))));
        const long y1 = std::min<long>(camera.height - 1, static_cast<long>(std::floor(v + ry - T(0.5))));
        if (x0 > x1 || y0 > y1) continue;
        out.visible[static_cast<std::size_t>(i)] = true;
        out.tile_rect[static_cast<std::size_t>(i)] =
            Eigen::Vector4i(int(x0 / ts), int(y0 / ts), int(x1 / ts), int(y1 / ts));
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        if (out.visible[static_cast<std::size_t>(i)]) out.depth_order.push_back(static_cast<std::int32_t>(i));
    }
    std::stable_sort(out.depth_order.begin(), out.depth_order.end(),
                     [&](std::int32_t a, std::int32_t b) { return out.depth(a) < out.depth(b); });
    return out;
}

template <typename T>
TileBins bin_tiles(const ProjectedSplats<T>& projected, const Camera& camera, const RenderSettings& settings) {
    require(settings.tile_size > 0, "bin_tiles: tile size must be positive");
    TileBins bins;
    bins.tiles_x = (camera.width + settings.tile_size - 1) / settings.tile_size;
    bins.tiles_y = (camera.height + settings.tile_size - 1) / settings.tile_size;
    bins.lists.assign(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y, {});
    for (const std::int32_t g : projected.depth_order) {
        const Eigen::Vector4i& r = projected.tile_rect[static_cast<std::size_t>(g)];
        for (int ty = r[1]; ty <= r[3]; ++ty) {
            for (int tx = r[0]; tx <= r[2]; ++tx) bins.lists[static_cast<std::size_t>(ty) * bins.tiles_x + tx].push_back(g);
        }
    }
    return bins;
}

template <typename T>
RenderOutput<T> rasterize(const ProjectedSplats<T>& projected, const SplatScene<T>& scene, const Camera& camera,
                          const RenderSettings& settings, const TileBins& bins) {
    RenderOutput<T> out;
    out.color = Image<T>(camera.width, camera.height, 3);
    out.alpha = Image<T>(camera.width, camera.height, 1);
    out.contributors.assign(out.alpha.pixel_count(), 0);
    const int ts = settings.tile_size;
    const Vec3<T> bg = settings.background.cast<T>();

    parallel_for(bins.lists.size(), 1, [&](std::size_t begin, std::size_t end) {
        for (std::size_t tile = begin; tile < end; ++tile) {
            const auto& list = bins.lists[tile];
            const int tx = static_cast<int>(tile) % bins.tiles_x;
            const int ty = static_cast<int>(tile) / bins.tiles_x;
            const int xe = std::min(camera.width, (tx + 1) * ts);
            const int ye = std::min(camera.height, (ty + 1) * ts);
            for (int y = ty * ts; y < ye; ++y) {
                for (int x = tx * ts; x < xe; ++x) {
                    Vec3<T> rgb = Vec3<T>::Zero();
                    std::int32_t count = 0;
                    const T final_t = composite_pixel(
                        projected, scene, list, T(x) + T(0.5), T(y) + T(0.5), settings,
                        [&](std::int32_t, std::int32_t g, T alpha, T trans, T, T, T) {
                            const T wgt = alpha * trans;
                            rgb.x() += wgt * scene.colors(g, 0);
                            rgb.y() += wgt * scene.colors(g, 1);
                            rgb.z() += wgt * scene.colors(g, 2);
                            ++count;
                        });
                    for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = rgb[ch] + final_t * bg[ch];
                    out.alpha.at(x, y) = T(1) - final_t;
                    out.contributors[static_cast<std::size_t>(y) * camera.width + x] = count;
                }
            }
        }
    });
    return out;
}

template <typename T>
RenderOutput<T> render(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings,
                       RenderCache<T>* cache) {
    camera.validate();
    ProjectedSplats<T> projected = project(scene, camera, settings);
    TileBins bins = bin_tiles(projected, camera, settings);
    RenderOutput<T> out = rasterize(projected, scene, camera, settings, bins);
    if (cache) {
        cache->projected = std::move(projected);
        cache->bins = std::move(bins);
    }
    return out;
}

template <typename T>
RasterGrads<T> rasterize_backward(const ProjectedSplats<T>& projected, const SplatScene<T>& scene,
                                  const Camera& camera, const RenderSettings& settings, const TileBins& bins,
                                  const Image<T>& d_color, const Image<T>& d_alpha) {
    require(d_color.width == camera.width && d_color.height == camera.height && d_color.channels == 3,
            "rasterize_backward: color cotangent shape");
    require(d_alpha.width == camera.width && d_alpha.height == camera.height && d_alpha.channels == 1,
            "rasterize_backward: alpha cotangent shape");
    const auto n = static_cast<Eigen::Index>(scene.size());
    RasterGrads<T> grads;
    grads.mean2d.setZero(n, 2);
    grads.conic.setZero(n, 3);
    grads.colors.setZero(n, 3);
    grads.opacities.setZero(n, 1);

    constexpr int kStride = 9;  // mean2d(2) conic(3) color(3) opacity(1)
    const int ts = settings.tile_size;
    const Vec3<T> bg = settings.background.cast<T>();
    const bool fixed_order = deterministic();
    std::vector<std::vector<T>> tile_grads(fixed_order ? bins.lists.size() : 0);

    auto scatter = [&](std::int32_t g, const T* local) {
        T* targets[kStride] = {&grads.mean2d(g, 0), &grads.mean2d(g, 1), &grads.conic(g, 0),
                               &grads.conic(g, 1),  &grads.conic(g, 2),  &grads.colors(g, 0),
                               &grads.colors(g, 1), &grads.colors(g, 2), &grads.opacities(g, 0)};
        for (int k = 0; k < kStride; ++k) {
            if (local[k] != T(0)) atomic_add(*targets[k], local[k]);
        }
    };

    parallel_for(bins.lists.size(), 1, [&](std::size_t begin, std::size_t end) {
        std::vector<PixelHit<T>> hits;
        std::vector<T> local;
        for (std::size_t tile = begin; tile < end; ++tile) {
            const auto& list = bins.lists[tile];
            if (list.empty()) continue;
            local.assign(list.size() * kStride, T(0));
            const int tx = static_cast<int>(tile) % bins.tiles_x;
            const int ty = static_cast<int>(tile) / bins.tiles_x;
            const int xe = std::min(camera.width, (tx + 1) * ts);
            const int ye = std::min(camera.height, (ty + 1) * ts);
            for (int y = ty * ts; y < ye; ++y) {
                for (int x = tx * ts; x < xe; ++x) {
                    const T gc[3] = {d_color.at(x, y, 0), d_color.at(x, y, 1), d_color.at(x, y, 2)};
                    const T ga = d_alpha.at(x, y);
                    if (gc[0] == T(0) && gc[1] == T(0) && gc[2] == T(0) && ga == T(0)) continue;
                    hits.clear();
                    composite_pixel(projected, scene, list, T(x) + T(0.5), T(y) + T(0.5), settings,
                                    [&](std::int32_t slot, std::int32_t, T alpha, T trans, T power, T dx, T dy) {
                                        hits.push_back({slot, alpha, trans, power, dx, dy});
                                    });
                    // Back to front: behind[] is the normalized color composited
                    // behind the current Gaussian, behind_a the same for alpha.
                    T behind[3] = {bg.x(), bg.y(), bg.z()};
                    T behind_a = T(0);
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const std::int32_t g = list[static_cast<std::size_t>(it->slot)];
                        T* out = local.data() + static_cast<std::size_t>(it->slot) * kStride;
                        const T w = it->alpha * it->transmittance;
                        T d_alpha_i = ga * it->transmittance * (T(1) - behind_a);
                        for (int ch = 0; ch < 3; ++ch) {
                            const T col = scene.colors(g, ch);
                            out[5 + ch] += gc[ch] * w;
                            d_alpha_i += gc[ch] * it->transmittance * (col - behind[ch]);
                            behind[ch] = col * it->alpha + (T(1) - it->alpha) * behind[ch];
                        }
                        behind_a = it->alpha + (T(1) - it->alpha) * behind_a;

                        out[8] += d_alpha_i * std::exp(it->power);
                        const T d_power = d_alpha_i * it->alpha;
                        const T a = projected.conic(g, 0), b = projected.conic(g, 1), c = projected.conic(g, 2);
                        out[0] += d_power * (a * it->dx + b * it->dy);
                        out[1] += d_power * (b * it->dx + c * it->dy);
                        out[2] += d_power * T(-0.5) * it->dx * it->dx;
                        out[3] += d_power * -(it->dx * it->dy);
                        out[4] += d_power * T(-0.5) * it->dy * it->dy;
                    }
                }
            }
            if (fixed_order) {
                tile_grads[tile] = local;
            } else {
                for (std::size_t k = 0; k < list.size(); ++k) scatter(list[k], local.data() + k * kStride);
            }
        }
    });

    if (fixed_order) {
        for (std::size_t tile = 0; tile < bins.lists.size(); ++tile) {
            const auto& list = bins.lists[tile];
            const auto& local = tile_grads[tile];
            if (local.empty()) continue;
            for (std::size_t k = 0; k < list.size(); ++k) {
                const T* v = local.data() + k * kStride;
                const std::int32_t g = list[k];
                grads.mean2d(g, 0) += v[0];
                grads.mean2d(g, 1) += v[1];
                grads.conic(g, 0) += v[2];
                grads.conic(g, 1) += v[3];
                grads.conic(g, 2) += v[4];
                grads.colors(g, 0) += v[5];
                grads.colors(g, 1) += v[6];
                grads.colors(g, 2) += v[7];
                grads.opacities(g, 0) += v[8];
            }
        }
    }
    return grads;
}

template <typename T>
void project_backward(const SplatScene<T>& scene, const ProjectedSplats<T>& projected, const Camera& camera,
                      const RasterGrads<T>& raster, RenderGrads<T>& out) {
    const auto n = static_cast<Eigen::Index>(scene.size());
    out.means.setZero(n, 3);
    out.covariances.setZero(n, 9);
    out.colors = raster.colors;
    out.opacities = raster.opacities;
    out.mean2d_norm.setZero(n);

    const Mat3<T> w = camera.rotation.cast<T>();
    const T fx = T(camera.fx), fy = T(camera.fy);

    for (Eigen::Index i = 0; i < n; ++i) {
        if (!projected.visible[static_cast<std::size_t>(i)]) continue;
        const T gu = raster.mean2d(i, 0), gv = raster.mean2d(i, 1);
        out.mean2d_norm(i) = std::sqrt(gu * gu + gv * gv);

        const T tx = projected.camera_points(i, 0), ty = projected.camera_points(i, 1), tz = projected.camera_points(i, 2);
        const T iz = T(1) / tz, iz2 = iz * iz, iz3 = iz2 * iz;
        Eigen::Matrix<T, 2, 3> jac;
        jac << fx * iz, T(0), -fx * tx * iz2, T(0), fy * iz, -fy * ty * iz2;
        const Eigen::Matrix<T, 2, 3> m = jac * w;
        const Mat3<T> sigma = Eigen::Map<const Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(scene.covariances.row(i).data());

        // Conic -> 2D covariance: dL/dS = -Q G_Q Q with G_Q the symmetric
        // gradient (off-diagonal derivative split over both entries).
        Mat2<T> q;
        q << projected.conic(i, 0), projected.conic(i, 1), projected.conic(i, 1), projected.conic(i, 2);
        Mat2<T> gq;
        gq << raster.conic(i, 0), T(0.5) * raster.conic(i, 1), T(0.5) * raster.conic(i, 1), raster.conic(i, 2);
        const Mat2<T> gs = -q * gq * q;

        const Mat3<T> g_sigma = m.transpose() * gs * m;
        Eigen::Map<Eigen::Matrix<T, 3, 3, Eigen::RowMajor>>(out.covariances.row(i).data()) = g_sigma;

        const Eigen::Matrix<T, 2, 3> g_m = T(2) * gs * m * sigma;
        const Eigen::Matrix<T, 2, 3> g_j = g_m * w.transpose();

        Vec3<T> g_t;
        g_t.x() = gu * fx * iz + g_j(0, 2) * (-fx * iz2);
        g_t.y() = gv * fy * iz + g_j(1, 2) * (-fy * iz2);
        g_t.z() = gu * (-fx * tx * iz2) + gv * (-fy * ty * iz2) + g_j(0, 0) * (-fx * iz2) +
                  g_j(0, 2) * (T(2) * fx * tx * iz3) + g_j(1, 1) * (-fy * iz2) + g_j(1, 2) * (T(2) * fy * ty * iz3);
        out.means.row(i) = (w.transpose() * g_t).transpose();
    }
}

template <typename T>
RenderGrads<T> render_backward(const SplatScene<T>& scene, const Camera& camera, const RenderSettings& settings,
                               const RenderCache<T>& cache, const Image<T>& d_color, const Image<T>& d_alpha) {
    require(cache.projected.visible.size() == scene.size(), "render_backward: cache does not match the scene");
    const RasterGrads<T> raster =
        rasterize_backward(cache.projected, scene, camera, settings, cache.bins, d_color, d_alpha);
    RenderGrads<T> out;
    project_backward(scene, cache.projected, camera, raster, out);
    return out;
}

#define HANDSPLAT_INSTANTIATE_RENDERER(T)                                                                            \
    template ProjectedSplats<T> project(const SplatScene<T>&, const Camera&, const RenderSettings&);                \
    template TileBins bin_tiles(const ProjectedSplats<T>&, const Camera&, const RenderSettings&);                   \
    template RenderOutput<T> rasterize(const ProjectedSplats<T>&, const SplatScene<T>&, const Camera&,              \
                                       const RenderSettings&, const TileBins&);                                     \
    template RenderOutput<T> render(const SplatScene<T>&, const Camera&, const RenderSettings&, RenderCache<T>*);   \
    template RasterGrads<T> rasterize_backward(const ProjectedSplats<T>&, const SplatScene<T>&, const Camera&,      \
                                               const RenderSettings&, const TileBins&, const Image<T>&,             \
                                               const Image<T>&);                                                    \
    template void project_backward(const SplatScene<T>&, const ProjectedSplats<T>&, const Camera&,                 \
                                   const RasterGrads<T>&, RenderGrads<T>&);                                         \
    template RenderGrads<T> render_backward(const SplatScene<T>&, const Camera&, const RenderSettings&,             \
                                            const RenderCache<T>&, const Image<T>&, const Image<T>&);

HANDSPLAT_INSTANTIATE_RENDERER(float)
HANDSPLAT_INSTANTIATE_RENDERER(double)

}  // namespace handsplat
