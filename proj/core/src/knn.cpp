#include "handsplat/knn.hpp"

#include "handsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace handsplat {

namespace {

constexpr int kMaxCellsPerAxis = 256;

struct Candidate {
    double dist_sq;
    std::int64_t index;
    bool operator<(const Candidate& o) const {
        return dist_sq < o.dist_sq || (dist_sq == o.dist_sq && index < o.index);
    }
};

}  // namespace

UniformGrid::UniformGrid(MatX<double> points, double cell_size) : points_(std::move(points)) {
    require(points_.cols() == 3, "UniformGrid: points must be N x 3");
    const Eigen::Index n = points_.rows();
    if (n == 0) {
        cell_start_.assign(2, 0);
        return;
    }
    const Vec3d lo = points_.colwise().minCoeff().transpose();
    const Vec3d hi = points_.colwise().maxCoeff().transpose();
    const Vec3d extent = (hi - lo).cwiseMax(1e-9);
    if (cell_size <= 0.0) {
        const double volume = extent.prod();
        cell_size = std::cbrt(2.0 * volume / static_cast<double>(n));
        // Flat or degenerate sets: fall back to the largest extent.
        if (!(cell_size > 0.0) || !std::isfinite(cell_size)) cell_size = extent.maxCoeff();
    }
    cell_size = std::max(cell_size, extent.maxCoeff() / kMaxCellsPerAxis);
    cell_ = cell_size;
    origin_ = lo;
    for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_)) + 1);

    const std::size_t cells = static_cast<std::size_t>(dims_.prod());
    std::vector<std::int64_t> cell_of(n);
    std::vector<std::int64_t> counts(cells + 1, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Vector3i c;
        for (int a = 0; a < 3; ++a) {
            c[a] = std::clamp(static_cast<int>(std::floor((points_(i, a) - origin_[a]) / cell_)), 0, dims_[a] - 1);
        }
        cell_of[i] = (static_cast<std::int64_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
        ++counts[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) counts[c + 1] += counts[c];
    cell_start_ = counts;
    cell_items_.resize(n);
    std::vector<std::int64_t> fill(counts.begin(), counts.end() - 1);
    for (Eigen::Index i = 0; i < n; ++i) cell_items_[fill[cell_of[i]]++] = i;  // ascending index per cell
}

template <typename Visit>
void UniformGrid::search(const Vec3d& query, const Visit& visit, const auto& bound_sq) const {
    // Rings grow around the query's cell clamped into the grid, so far-away
    // queries do not walk empty space.
    Eigen::Vector3i center;
    for (int a = 0; a < 3; ++a) {
        const double c = std::floor((query[a] - origin_[a]) / cell_);
        center[a] = static_cast<int>(std::clamp(c, 0.0, static_cast<double>(dims_[a] - 1)));
    }
    for (int ring = 0;; ++ring) {
        for (int z = center[2] - ring; z <= center[2] + ring; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            for (int y = center[1] - ring; y <= center[1] + ring; ++y) {
                if (y < 0 || y >= dims_[1]) continue;
                const bool yz_shell = std::abs(z - center[2]) == ring || std::abs(y - center[1]) == ring;
                for (int x = center[0] - ring; x <= center[0] + ring; ++x) {
                    if (x < 0 || x >= dims_[0]) continue;
                    if (!yz_shell && std::abs(x - center[0]) != ring) continue;
                    const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
                    for (std::int64_t p = cell_start_[cell]; p < cell_start_[cell + 1]; ++p) visit(cell_items_[p]);
                }
            }
        }
        // Unvisited cells lie beyond some face of the block that still has
        // grid cells behind it; the nearest such face bounds their distance.
        double gap = std::numeric_limits<double>::infinity();
        bool remaining = false;
        for (int a = 0; a < 3; ++a) {
            if (center[a] - ring > 0) {
                remaining = true;
                gap = std::min(gap, std::max(0.0, query[a] - (origin_[a] + (center[a] - ring) * cell_)));
            }
            if (center[a] + ring < dims_[a] - 1) {
                remaining = true;
                gap = std::min(gap, std::max(0.0, origin_[a] + (center[a] + ring + 1) * cell_ - query[a]));
            }
        }
        if (!remaining || gap * gap > bound_sq()) return;
    }
}

std::int64_t UniformGrid::nearest(const Vec3d& query) const {
    if (points_.rows() == 0) return -1;
    Candidate best{std::numeric_limits<double>::infinity(), -1};
    search(
        query,
        [&](std::int64_t i) {
            const Candidate c{(points_.row(i).transpose() - query).squaredNorm(), i};
            if (c < best) best = c;
        },
        [&] { return best.dist_sq; });
    return best.index;
}

std::vector<std::int64_t> UniformGrid::k_nearest(const Vec3d& query, int k, std::int64_t exclude) const {
    std::vector<Candidate> best;
    if (k <= 0) return {};
    best.reserve(k + 1);
    search(
        query,
        [&](std::int64_t i) {
            if (i == exclude) return;
            const Candidate c{(points_.row(i).transpose() - query).squaredNorm(), i};
            if (static_cast<int>(best.size()) == k && !(c < best.back())) return;
            best.insert(std::upper_bound(best.begin(), best.end(), c), c);
            if (static_cast<int>(best.size()) > k) best.pop_back();
        },
        [&] {
            return static_cast<int>(best.size()) < k ? std::numeric_limits<double>::infinity() : best.back().dist_sq;
        });
    std::vector<std::int64_t> out;
    out.reserve(best.size());
    for (const auto& c : best) out.push_back(c.index);
    return out;
}

std::vector<std::int64_t> nearest_indices(const MatX<double>& current, const MatX<double>& previous) {
    const UniformGrid grid(previous);
    std::vector<std::int64_t> out(current.rows());
    parallel_for(out.size(), 512, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) out[i] = grid.nearest(current.row(i).transpose());
    });
    return out;
}

std::vector<std::vector<std::int64_t>> self_knn(const MatX<double>& points, int k) {
    const UniformGrid grid(points);
    std::vector<std::vector<std::int64_t>> out(points.rows());
    parallel_for(out.size(), 512, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            out[i] = grid.k_nearest(points.row(i).transpose(), k, static_cast<std::int64_t>(i));
        }
    });
    return out;
}

}  // namespace handsplat
