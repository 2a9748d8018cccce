#pragma once

#include "handsplat/image.hpp"
#include "handsplat/nn.hpp"
#include "handsplat/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace handsplat {

// Image losses return the scalar and, when `grad` is non-null, add
// scale * dLoss/dPred into it (same shape as pred).

template <typename T>
T l1_loss(const Image<T>& pred, const Image<T>& target, Image<T>* grad = nullptr, T scale = T(1));

struct SsimSettings {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

// Mean SSIM over all pixels and channels with a Gaussian window and zero
// padding at the borders.
template <typename T>
T ssim(const Image<T>& a, const Image<T>& b, const SsimSettings& settings = {});

// 1 - ssim(pred, target), differentiated with respect to pred.
template <typename T>
T ssim_loss(const Image<T>& pred, const Image<T>& target, Image<T>* grad = nullptr, T scale = T(1),
            const SsimSettings& settings = {});

// omega = exp(-|phi(a) - phi(b)|^2 / (2 delta^2)).
template <typename T>
T pose_similarity(const VecX<T>& embedding_a, const VecX<T>& embedding_b, T delta);

// Cached attribute bundles from earlier iterations, one row per Gaussian.
template <typename T>
struct ConsistencyMemory {
    MatX<T> bundles;          // N_prev x W; columns 0..2 are canonical positions
    VecX<T> previous_pose;    // pose of the previous iteration
    double decay = 0.9;

    bool seeded() const { return bundles.rows() > 0; }
    MatX<double> positions() const { return bundles.leftCols(3).template cast<double>(); }
    void seed(const MatX<T>& current, const VecX<T>& pose);
};

template <typename T>
struct ConsistencyResult {
    T loss = T(0);            // omega * raw
    T raw = T(0);             // mean squared bundle distance, before omega
    bool skipped = false;     // memory empty
    std::vector<std::int64_t> correspondence;
};

// L = omega / N * sum_i |M_i - memory[pi(i)]|^2 with pi the nearest memory
// position. The memory is treated as a constant. Adds scale * dL/dM into
// `grad` when non-null.
template <typename T>
ConsistencyResult<T> consistency_loss(const MatX<T>& bundles, const ConsistencyMemory<T>& memory, T omega,
                                      MatX<T>* grad = nullptr, T scale = T(1));

// EMA update re-indexed to the current cloud:
// memory_i <- decay * memory[pi(i)] + (1 - decay) * M_i. A width change (or an
// empty memory) reseeds from the current bundles.
template <typename T>
void update_memory(ConsistencyMemory<T>& memory, const MatX<T>& bundles, const std::vector<std::int64_t>& correspondence,
                   const VecX<T>& pose);

// Mean over N * k of |e_i - e_j|^2 across each Gaussian's k canonical nearest
// neighbors (neighbors from self_knn). Adds scale * dL/de into `grad`.
template <typename T>
T smoothness_loss(const MatX<T>& embeddings, const std::vector<std::vector<std::int64_t>>& neighbors,
                  MatX<T>* grad = nullptr, T scale = T(1));

struct LossWeights {
    double mask = 0.1;
    double ssim = 0.01;
    double consistency = 0.01;
    double smoothness = 1.0;
};

struct LossTerms {
    double rgb = 0.0;
    double mask = 0.0;
    double ssim = 0.0;
    double consistency = 0.0;
    double smoothness = 0.0;
};

double base_loss(const LossTerms& terms, const LossWeights& weights);

// L = L_base + w_con * L_con + w_smooth * L_smooth. A non-finite component
// throws NumericError naming it.
double total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace handsplat
