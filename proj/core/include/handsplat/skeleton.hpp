#pragma once

#include "handsplat/types.hpp"

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace handsplat {

enum class EdgeTag { mano, cross, removed };

const char* to_string(EdgeTag tag);
EdgeTag edge_tag_from_string(const std::string& name);

struct Edge {
    int u = 0;
    int v = 0;
    EdgeTag tag = EdgeTag::mano;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Static bone topology. `edges` is the active set used as the structural
// basis: kinematic-tree edges minus the removed wrist edges, plus the
// cross-finger pseudo-bones. `removed` keeps the dropped tree edges so the
// provenance of every kinematic edge stays queryable.
struct BoneTopology {
    std::vector<Edge> edges;
    std::vector<Edge> removed;

    std::size_t size() const { return edges.size(); }
    // Index into `edges`, or -1 when (u, v) is not an active edge (either
    // orientation is accepted).
    int find(int u, int v) const;
    // True when active bones a and b share a joint.
    bool adjacent(std::size_t a, std::size_t b) const;
};

// Simplified parametric hand: wrist root plus a 4-joint chain per finger
// (thumb, index, middle, ring, pinky), 21 joints. Shape is carried only by
// per-edge bone lengths.
class SkeletonModel {
public:
    static constexpr int kJointCount = 21;
    static constexpr int kArticulatedCount = 15;
    static constexpr int kPoseDim = 3 * kArticulatedCount;
    static constexpr int kFingerCount = 5;

    struct Joint {
        std::string name;
        int parent = -1;
        Vec3d direction = Vec3d::Zero();  // unit offset from parent, canonical frame
        double length = 0.0;              // bone length parent -> joint, meters
        double radius = 0.0;              // capsule radius of the parent -> joint bone
    };

    // Default right-hand layout: wrist at the origin, fingers along +y, palm
    // facing +z. Template count mirrors the usual 778-vertex hand mesh.
    static SkeletonModel default_hand(int template_count = 778);

    SkeletonModel(std::vector<Joint> joints, std::vector<std::pair<int, int>> cross_edges,
                  std::vector<std::pair<int, int>> removed_edges, int template_count);

    int joint_count() const { return static_cast<int>(joints_.size()); }
    const std::vector<Joint>& joints() const { return joints_; }
    int parent(int joint) const { return joints_[joint].parent; }
    const std::vector<Vec3d>& canonical_joints() const { return canonical_; }
    const std::vector<int>& articulated_joints() const { return articulated_; }
    const std::vector<std::pair<int, int>>& cross_edges() const { return cross_edges_; }
    const std::vector<std::pair<int, int>>& removed_edges() const { return removed_edges_; }
    // Kinematic-tree edges (parent, child) in child-index order.
    std::vector<Edge> tree_edges() const;
    // Joint indices belonging to a finger chain, base first (finger 0 = thumb).
    std::array<int, 4> finger_chain(int finger) const;
    int template_count() const { return template_count_; }

    // Canonical surface samples and their row-stochastic skinning weights.
    const MatX<double>& template_vertices() const { return template_vertices_; }
    const MatX<double>& skinning_weights() const { return skinning_weights_; }

    // Procedural skinning weights for arbitrary canonical points: normalized
    // Gaussian falloff of the distance to the two nearest tree bones, falloff
    // scale 1.5x the bone radius; each bone drives its parent joint.
    MatX<double> skinning_weights_for(const MatX<double>& points) const;

    // Capsules (start joint, end joint, radius) that make up the canonical
    // surface: every tree edge plus the cross-finger edges.
    struct Capsule {
        int u;
        int v;
        double radius;
    };
    std::vector<Capsule> surface_capsules() const;

    // Throws ValidationError describing the first broken invariant.
    void validate() const;

private:
    void rebuild();

    std::vector<Joint> joints_;
    std::vector<std::pair<int, int>> cross_edges_;
    std::vector<std::pair<int, int>> removed_edges_;
    int template_count_ = 778;

    std::vector<Vec3d> canonical_;
    std::vector<int> articulated_;
    MatX<double> template_vertices_;
    MatX<double> skinning_weights_;
};

struct Pose {
    std::vector<Vec3d> axis_angle = std::vector<Vec3d>(SkeletonModel::kArticulatedCount, Vec3d::Zero());
    Vec3d global_rotation = Vec3d::Zero();
    Vec3d global_translation = Vec3d::Zero();

    // Flattened articulation (45 scalars, articulated-joint order).
    VecX<double> flat() const;
    static Pose from_flat(std::span<const double> articulation);
    // Throws ValidationError when a dimension is off or |axis-angle| > pi.
    void validate() const;

    friend bool operator==(const Pose&, const Pose&) = default;
};

struct PosedSkeleton {
    std::vector<Vec3d> joints;
    std::vector<Mat34d> global;    // joint frames in posed space
    std::vector<Mat34d> skinning;  // global * inverse canonical bind
};

Mat3d rotation_from_axis_angle(const Vec3d& axis_angle);

PosedSkeleton forward_kinematics(const SkeletonModel& model, const Pose& pose);
inline std::vector<Vec3d> posed_joints(const SkeletonModel& model, const Pose& pose) {
    return forward_kinematics(model, pose).joints;
}

struct LbsResult {
    MatX<double> points;      // N x 3 posed points
    MatX<double> transforms;  // N x 12 blended 3x4 transforms, row-major
};

// Blends the per-joint skinning transforms by each point's weight row and
// applies the result. Weight rows must sum to 1 within 1e-6.
LbsResult lbs_transform(const PosedSkeleton& posed, const MatX<double>& points, const MatX<double>& weights);
LbsResult lbs_transform(const SkeletonModel& model, const Pose& pose, const MatX<double>& points,
                        const MatX<double>& weights);

// Active static bones: tree edges minus removed ones, plus cross edges.
BoneTopology build_static_topology(const SkeletonModel& model);

// Structured-text round trip (JSON).
std::string skeleton_to_json(const SkeletonModel& model);
SkeletonModel skeleton_from_json(const std::string& text);
std::string pose_to_json(const Pose& pose);
Pose pose_from_json(const std::string& text);

}  // namespace handsplat
