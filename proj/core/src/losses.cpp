#include "handsplat/losses.hpp"

#include "handsplat/knn.hpp"

#include <cmath>

namespace handsplat {

namespace {

std::vector<double> gaussian_taps(const SsimSettings& s) {
    require(s.window > 0 && s.window % 2 == 1, "ssim: window must be a positive odd size");
    std::vector<double> taps(static_cast<std::size_t>(s.window));
    const int half = s.window / 2;
    double sum = 0.0;
    for (int i = 0; i < s.window; ++i) {
        const double d = i - half;
        taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * s.sigma * s.sigma));
        sum += taps[static_cast<std::size_t>(i)];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

// Separable "same" filtering of a single-channel plane with zero padding.
template <typename T>
std::vector<T> blur(const std::vector<T>& plane, int w, int h, const std::vector<double>& taps) {
    const int half = static_cast<int>(taps.size()) / 2;
    std::vector<T> tmp(plane.size(), T(0)), out(plane.size(), T(0));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T acc = T(0);
            for (int k = -half; k <= half; ++k) {
                const int xx = x + k;
                if (xx < 0 || xx >= w) continue;
                acc += T(taps[static_cast<std::size_t>(k + half)]) * plane[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T acc = T(0);
            for (int k = -half; k <= half; ++k) {
                const int yy = y + k;
                if (yy < 0 || yy >= h) continue;
                acc += T(taps[static_cast<std::size_t>(k + half)]) * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

template <typename T>
std::vector<T> channel(const Image<T>& img, int c) {
    std::vector<T> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i * img.channels + c];
    return out;
}

// Sums the SSIM map of one channel; optionally adds scale * d(sum)/dx into grad.
template <typename T>
T ssim_channel(const std::vector<T>& x, const std::vector<T>& y, int w, int h, const std::vector<double>& taps,
               const SsimSettings& s, std::vector<T>* grad, T scale) {
    const std::size_t n = x.size();
    std::vector<T> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x, w, h, taps), my = blur(y, w, h, taps);
    const auto exx = blur(xx, w, h, taps), eyy = blur(yy, w, h, taps), exy = blur(xy, w, h, taps);
    const T c1 = T(s.c1), c2 = T(s.c2);
    std::vector<T> d_mu, d_exx, d_exy;
    if (grad) {
        d_mu.resize(n);
        d_exx.resize(n);
        d_exy.resize(n);
    }
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T a1 = T(2) * mx[i] * my[i] + c1;
        const T a2 = T(2) * (exy[i] - mx[i] * my[i]) + c2;
        const T b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
        const T b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + c2;
        const T val = (a1 * a2) / (b1 * b2);
        sum += val;
        if (grad) {
            d_mu[i] = (T(2) * my[i] * a2 - T(2) * my[i] * a1) / (b1 * b2) -
                      val * (T(2) * mx[i] / b1 - T(2) * mx[i] / b2);
            d_exx[i] = -val / b2;
            d_exy[i] = T(2) * a1 / (b1 * b2);
        }
    }
    if (grad) {
        // The window is symmetric, so the adjoint of the blur is the blur.
        const auto g_mu = blur(d_mu, w, h, taps), g_exx = blur(d_exx, w, h, taps), g_exy = blur(d_exy, w, h, taps);
        for (std::size_t i = 0; i < n; ++i) {
            (*grad)[i] += scale * (g_mu[i] + T(2) * x[i] * g_exx[i] + y[i] * g_exy[i]);
        }
    }
    return sum;
}

template <typename T>
T ssim_impl(const Image<T>& a, const Image<T>& b, const SsimSettings& s, Image<T>* grad, T grad_scale) {
    require(a.same_shape(b), "ssim: image shapes differ");
    if (grad) require(grad->same_shape(a), "ssim: gradient image shape");
    const auto taps = gaussian_taps(s);
    const T count = T(a.pixel_count() * static_cast<std::size_t>(a.channels));
    T total = T(0);
    for (int c = 0; c < a.channels; ++c) {
        const auto x = channel(a, c), y = channel(b, c);
        std::vector<T> g;
        if (grad) g.assign(x.size(), T(0));
        total += ssim_channel(x, y, a.width, a.height, taps, s, grad ? &g : nullptr, grad_scale / count);
        if (grad) {
            for (std::size_t i = 0; i < g.size(); ++i) grad->data[i * a.channels + c] += g[i];
        }
    }
    return total / count;
}

}  // namespace

template <typename T>
T l1_loss(const Image<T>& pred, const Image<T>& target, Image<T>* grad, T scale) {
    require(pred.same_shape(target), "l1_loss: image shapes differ");
    if (grad) require(grad->same_shape(pred), "l1_loss: gradient image shape");
    const T n = T(pred.data.size());
    T sum = T(0);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const T d = pred.data[i] - target.data[i];
        sum += std::abs(d);
        if (grad && d != T(0)) grad->data[i] += scale * (d > T(0) ? T(1) : T(-1)) / n;
    }
    return sum / n;
}

template <typename T>
T ssim(const Image<T>& a, const Image<T>& b, const SsimSettings& settings) {
    return ssim_impl<T>(a, b, settings, nullptr, T(0));
}

template <typename T>
T ssim_loss(const Image<T>& pred, const Image<T>& target, Image<T>* grad, T scale, const SsimSettings& settings) {
    return T(1) - ssim_impl<T>(pred, target, settings, grad, -scale);
}

template <typename T>
T pose_similarity(const VecX<T>& embedding_a, const VecX<T>& embedding_b, T delta) {
    require(delta > T(0), "pose_similarity: delta must be positive");
    require(embedding_a.size() == embedding_b.size(), "pose_similarity: embedding sizes differ");
    return std::exp(-(embedding_a - embedding_b).squaredNorm() / (T(2) * delta * delta));
}

template <typename T>
void ConsistencyMemory<T>::seed(const MatX<T>& current, const VecX<T>& pose) {
    bundles = current;
    previous_pose = pose;
}

template <typename T>
ConsistencyResult<T> consistency_loss(const MatX<T>& bundles, const ConsistencyMemory<T>& memory, T omega,
                                      MatX<T>* grad, T scale) {
    ConsistencyResult<T> result;
    if (!memory.seeded() || bundles.rows() == 0 || memory.bundles.cols() != bundles.cols()) {
        result.skipped = true;
        return result;
    }
    require(bundles.cols() >= 3, "consistency_loss: bundles need positions in columns 0..2");
    if (grad) require(grad->rows() == bundles.rows() && grad->cols() == bundles.cols(), "consistency_loss: gradient shape");
    result.correspondence = nearest_indices(bundles.leftCols(3).template cast<double>(), memory.positions());
    const T n = T(bundles.rows());
    T sum = T(0);
    for (Eigen::Index i = 0; i < bundles.rows(); ++i) {
        const auto diff = bundles.row(i) - memory.bundles.row(result.correspondence[static_cast<std::size_t>(i)]);
        sum += diff.squaredNorm();
        if (grad) grad->row(i) += (scale * T(2) * omega / n) * diff;
    }
    result.raw = sum / n;
    result.loss = omega * result.raw;
    return result;
}

template <typename T>
void update_memory(ConsistencyMemory<T>& memory, const MatX<T>& bundles, const std::vector<std::int64_t>& correspondence,
                   const VecX<T>& pose) {
    if (!memory.seeded() || memory.bundles.cols() != bundles.cols() ||
        correspondence.size() != static_cast<std::size_t>(bundles.rows())) {
        memory.seed(bundles, pose);
        return;
    }
    const T g = T(memory.decay);
    MatX<T> next(bundles.rows(), bundles.cols());
    for (Eigen::Index i = 0; i < bundles.rows(); ++i) {
        next.row(i) = g * memory.bundles.row(correspondence[static_cast<std::size_t>(i)]) + (T(1) - g) * bundles.row(i);
    }
    memory.bundles = std::move(next);
    memory.previous_pose = pose;
}

template <typename T>
T smoothness_loss(const MatX<T>& embeddings, const std::vector<std::vector<std::int64_t>>& neighbors, MatX<T>* grad,
                  T scale) {
    require(neighbors.size() == static_cast<std::size_t>(embeddings.rows()), "smoothness_loss: neighbor list size");
    if (grad) require(grad->rows() == embeddings.rows() && grad->cols() == embeddings.cols(), "smoothness_loss: gradient shape");
    std::size_t pairs = 0;
    for (const auto& nb : neighbors) pairs += nb.size();
    if (pairs == 0) return T(0);
    const T inv = T(1) / T(pairs);
    T sum = T(0);
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        for (const std::int64_t j : neighbors[static_cast<std::size_t>(i)]) {
            const auto diff = embeddings.row(i) - embeddings.row(j);
            sum += diff.squaredNorm();
            if (grad) {
                const RowVecX<T> g = (scale * T(2) * inv) * diff;
                grad->row(i) += g;
                grad->row(j) -= g;
            }
        }
    }
    return sum * inv;
}

double base_loss(const LossTerms& terms, const LossWeights& weights) {
    return terms.rgb + weights.mask * terms.mask + weights.ssim * terms.ssim;
}

double total_loss(const LossTerms& terms, const LossWeights& weights) {
    const std::pair<const char*, double> parts[] = {{"rgb", terms.rgb},
                                                    {"mask", terms.mask},
                                                    {"ssim", terms.ssim},
                                                    {"consistency", terms.consistency},
                                                    {"smoothness", terms.smoothness}};
    for (const auto& [name, value] : parts) {
        if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss component: ") + name);
    }
    return base_loss(terms, weights) + weights.consistency * terms.consistency + weights.smoothness * terms.smoothness;
}

#define HANDSPLAT_INSTANTIATE_LOSSES(T)                                                                               \
    template T l1_loss(const Image<T>&, const Image<T>&, Image<T>*, T);                                              \
    template T ssim(const Image<T>&, const Image<T>&, const SsimSettings&);                                          \
    template T ssim_loss(const Image<T>&, const Image<T>&, Image<T>*, T, const SsimSettings&);                       \
    template T pose_similarity(const VecX<T>&, const VecX<T>&, T);                                                   \
    template struct ConsistencyMemory<T>;                                                                            \
    template ConsistencyResult<T> consistency_loss(const MatX<T>&, const ConsistencyMemory<T>&, T, MatX<T>*, T);     \
    template void update_memory(ConsistencyMemory<T>&, const MatX<T>&, const std::vector<std::int64_t>&,             \
                                const VecX<T>&);                                                                     \
    template T smoothness_loss(const MatX<T>&, const std::vector<std::vector<std::int64_t>>&, MatX<T>*, T);

HANDSPLAT_INSTANTIATE_LOSSES(float)
HANDSPLAT_INSTANTIATE_LOSSES(double)

}  // namespace handsplat
