#pragma once

#include "handsplat/types.hpp"

#include <cstdint>
#include <vector>

namespace handsplat {

// Uniform spatial grid for exact nearest-neighbor queries. Distances are
// squared Euclidean in double precision; ties go to the smallest index, so
// results match an exhaustive scan exactly.
class UniformGrid {
public:
    // cell_size <= 0 picks a size giving roughly two points per cell.
    explicit UniformGrid(MatX<double> points, double cell_size = 0.0);

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    double cell_size() const { return cell_; }

    // Index of the nearest point, or -1 when the grid is empty.
    std::int64_t nearest(const Vec3d& query) const;
    // Up to k nearest indices sorted by (distance, index); `exclude` is skipped.
    std::vector<std::int64_t> k_nearest(const Vec3d& query, int k, std::int64_t exclude = -1) const;

private:
    template <typename Visit>
    void search(const Vec3d& query, const Visit& visit, const auto& bound_sq) const;

    MatX<double> points_;
    double cell_ = 1.0;
    Vec3d origin_ = Vec3d::Zero();
    Eigen::Vector3i dims_ = Eigen::Vector3i::Ones();
    std::vector<std::int64_t> cell_start_;
    std::vector<std::int64_t> cell_items_;
};

// Correspondence map: for every row of `current`, the index of the nearest
// row of `previous`.
std::vector<std::int64_t> nearest_indices(const MatX<double>& current, const MatX<double>& previous);

// k nearest neighbors of every point within the same set, excluding itself.
std::vector<std::vector<std::int64_t>> self_knn(const MatX<double>& points, int k);

}  // namespace handsplat
