#include "handsplat/skeleton.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace handsplat {

using nlohmann::json;

const char* to_string(EdgeTag tag) {
    switch (tag) {
        case EdgeTag::mano: return "mano";
        case EdgeTag::cross: return "cross";
        case EdgeTag::removed: return "removed";
    }
    return "unknown";
}

EdgeTag edge_tag_from_string(const std::string& name) {
    if (name == "mano") return EdgeTag::mano;
    if (name == "cross") return EdgeTag::cross;
    if (name == "removed") return EdgeTag::removed;
    throw ValidationError("unknown edge tag '" + name + "'");
}

int BoneTopology::find(int u, int v) const {
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto& e = edges[i];
        if ((e.u == u && e.v == v) || (e.u == v && e.v == u)) return static_cast<int>(i);
    }
    return -1;
}

bool BoneTopology::adjacent(std::size_t a, std::size_t b) const {
    const auto& x = edges[a];
    const auto& y = edges[b];
    return x.u == y.u || x.u == y.v || x.v == y.u || x.v == y.v;
}

namespace {

const char* kFingerNames[SkeletonModel::kFingerCount] = {"thumb", "index", "middle", "ring", "pinky"};

double segment_distance(const Vec3d& x, const Vec3d& a, const Vec3d& b) {
    const Vec3d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (x - (a + t * ab)).norm();
}

// Orthonormal frame around a unit axis.
std::pair<Vec3d, Vec3d> perpendicular_basis(const Vec3d& axis) {
    const Vec3d helper = std::abs(axis.z()) < 0.9 ? Vec3d::UnitZ() : Vec3d::UnitX();
    Vec3d e1 = axis.cross(helper).normalized();
    Vec3d e2 = axis.cross(e1).normalized();
    return {e1, e2};
}

}  // namespace

SkeletonModel SkeletonModel::default_hand(int template_count) {
    struct FingerSpec {
        Vec3d base;
        Vec3d direction;
        std::array<double, 3> lengths;
        double radius;
    };
    const std::array<FingerSpec, kFingerCount> fingers = {{
        {{0.020, 0.022, 0.006}, {0.62, 0.76, 0.18}, {0.040, 0.032, 0.028}, 0.0105},
        {{0.024, 0.085, 0.0}, {0.05, 1.0, 0.0}, {0.040, 0.024, 0.020}, 0.0085},
        {{0.006, 0.090, 0.0}, {0.0, 1.0, 0.0}, {0.045, 0.028, 0.022}, 0.0088},
        {{-0.012, 0.086, 0.0}, {-0.05, 1.0, 0.0}, {0.041, 0.026, 0.021}, 0.0083},
        {{-0.028, 0.077, 0.0}, {-0.12, 1.0, 0.0}, {0.032, 0.020, 0.018}, 0.0072},
    }};
    constexpr double kPalmRadius = 0.0125;

    std::vector<Joint> joints;
    joints.push_back({"wrist", -1, Vec3d::Zero(), 0.0, 0.0});
    for (int f = 0; f < kFingerCount; ++f) {
        const auto& spec = fingers[f];
        const int base = static_cast<int>(joints.size());
        joints.push_back({std::string(kFingerNames[f]) + "1", 0, spec.base.normalized(), spec.base.norm(),
                          f == 0 ? spec.radius : kPalmRadius});
        for (int k = 0; k < 3; ++k) {
            joints.push_back({std::string(kFingerNames[f]) + std::to_string(k + 2), base + k,
                              spec.direction.normalized(), spec.lengths[k], spec.radius * (1.0 - 0.08 * k)});
        }
    }
    std::vector<std::pair<int, int>> cross = {{1, 5}, {5, 9}, {9, 13}, {13, 17}};
    std::vector<std::pair<int, int>> removed = {{0, 5}, {0, 9}, {0, 13}, {0, 17}};
    return SkeletonModel(std::move(joints), std::move(cross), std::move(removed), template_count);
}

SkeletonModel::SkeletonModel(std::vector<Joint> joints, std::vector<std::pair<int, int>> cross_edges,
                             std::vector<std::pair<int, int>> removed_edges, int template_count)
    : joints_(std::move(joints)),
      cross_edges_(std::move(cross_edges)),
      removed_edges_(std::move(removed_edges)),
      template_count_(template_count) {
    validate();
    rebuild();
}

void SkeletonModel::validate() const {
    const int k = joint_count();
    if (k == 0) throw ValidationError("skeleton has no joints");
    int roots = 0;
    for (int j = 0; j < k; ++j) {
        const auto& joint = joints_[j];
        if (joint.parent < 0) {
            ++roots;
            continue;
        }
        // Parents precede children, which rules out cycles.
        if (joint.parent >= j) {
            throw ValidationError("joint '" + joint.name + "' has parent index " + std::to_string(joint.parent) +
                                  " not preceding it");
        }
        if (!(joint.length > 0.0)) throw ValidationError("joint '" + joint.name + "' has non-positive bone length");
        if (std::abs(joint.direction.norm() - 1.0) > 1e-6) {
            throw ValidationError("joint '" + joint.name + "' direction is not unit length");
        }
        if (!(joint.radius > 0.0)) throw ValidationError("joint '" + joint.name + "' has non-positive radius");
    }
    if (roots != 1) throw ValidationError("skeleton must have exactly one root, found " + std::to_string(roots));
    if (joints_[0].parent != -1) throw ValidationError("joint 0 must be the root");

    auto in_range = [k](int i) { return i >= 0 && i < k; };
    for (auto [u, v] : removed_edges_) {
        if (!in_range(u) || !in_range(v) || joints_[v].parent != u) {
            throw ValidationError("removed edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") is not a kinematic-tree edge");
        }
    }
    for (auto [u, v] : cross_edges_) {
        if (!in_range(u) || !in_range(v) || u == v) {
            throw ValidationError("cross edge (" + std::to_string(u) + "," + std::to_string(v) + ") is invalid");
        }
        if (joints_[v].parent == u || joints_[u].parent == v) {
            throw ValidationError("cross edge (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") duplicates a tree edge");
        }
    }
    if (template_count_ < 1) throw ValidationError("template_count must be positive");
}

std::vector<Edge> SkeletonModel::tree_edges() const {
    std::vector<Edge> edges;
    for (int j = 1; j < joint_count(); ++j) edges.push_back({joints_[j].parent, j, EdgeTag::mano});
    return edges;
}

std::array<int, 4> SkeletonModel::finger_chain(int finger) const {
    const int base = 1 + 4 * finger;
    return {base, base + 1, base + 2, base + 3};
}

std::vector<SkeletonModel::Capsule> SkeletonModel::surface_capsules() const {
    std::vector<Capsule> capsules;
    for (int j = 1; j < joint_count(); ++j) capsules.push_back({joints_[j].parent, j, joints_[j].radius});
    for (auto [u, v] : cross_edges_) {
        capsules.push_back({u, v, 0.5 * (joints_[u].radius + joints_[v].radius)});
    }
    return capsules;
}

MatX<double> SkeletonModel::skinning_weights_for(const MatX<double>& points) const {
    const auto edges = tree_edges();
    MatX<double> weights = MatX<double>::Zero(points.rows(), joint_count());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const Vec3d x = points.row(i).transpose();
        int best[2] = {-1, -1};
        double dist[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
        for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
            const double d = segment_distance(x, canonical_[edges[e].u], canonical_[edges[e].v]);
            if (d < dist[0]) {
                dist[1] = dist[0];
                best[1] = best[0];
                dist[0] = d;
                best[0] = e;
            } else if (d < dist[1]) {
                dist[1] = d;
                best[1] = e;
            }
        }
        double w[2] = {0.0, 0.0};
        for (int s = 0; s < 2; ++s) {
            if (best[s] < 0) continue;
            const double scale = 1.5 * joints_[edges[best[s]].v].radius;
            w[s] = std::exp(-(dist[s] / scale) * (dist[s] / scale));
        }
        const double total = w[0] + w[1];
        if (!(total > 1e-300)) {
            weights(i, edges[best[0]].u) = 1.0;
            continue;
        }
        for (int s = 0; s < 2; ++s) {
            if (best[s] >= 0) weights(i, edges[best[s]].u) += w[s] / total;
        }
    }
    return weights;
}

void SkeletonModel::rebuild() {
    const int k = joint_count();
    canonical_.assign(k, Vec3d::Zero());
    for (int j = 1; j < k; ++j) {
        canonical_[j] = canonical_[joints_[j].parent] + joints_[j].length * joints_[j].direction;
    }
    std::vector<int> child_count(k, 0);
    for (int j = 1; j < k; ++j) ++child_count[joints_[j].parent];
    articulated_.clear();
    for (int j = 1; j < k; ++j) {
        if (child_count[j] > 0) articulated_.push_back(j);
    }

    // Candidate points on the capsule surfaces; interior points (inside another
    // capsule) are dropped, then farthest-point sampling picks an even subset.
    const auto capsules = surface_capsules();
    std::vector<double> areas;
    double total_area = 0.0;
    std::vector<bool> is_tip(k, true);
    for (int j = 1; j < k; ++j) is_tip[joints_[j].parent] = false;
    for (const auto& c : capsules) {
        const double len = (canonical_[c.v] - canonical_[c.u]).norm();
        double area = 2.0 * std::numbers::pi * c.radius * len;
        if (is_tip[c.v]) area += 2.0 * std::numbers::pi * c.radius * c.radius;
        areas.push_back(area);
        total_area += area;
    }
    const int candidates_wanted = std::max(template_count_ * 6, 2000);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3d> candidates;
    for (std::size_t ci = 0; ci < capsules.size(); ++ci) {
        const auto& c = capsules[ci];
        const Vec3d a = canonical_[c.u];
        const Vec3d b = canonical_[c.v];
        const Vec3d axis = (b - a).normalized();
        const double len = (b - a).norm();
        const auto [e1, e2] = perpendicular_basis(axis);
        const int n = std::max(8, static_cast<int>(std::round(candidates_wanted * areas[ci] / total_area)));
        const double cyl_area = 2.0 * std::numbers::pi * c.radius * len;
        const int n_cyl = is_tip[c.v] ? static_cast<int>(std::round(n * cyl_area / areas[ci])) : n;
        for (int s = 0; s < n_cyl; ++s) {
            const double h = (s + 0.5) / n_cyl * len;
            const double phi = s * golden;
            candidates.push_back(a + h * axis + c.radius * (std::cos(phi) * e1 + std::sin(phi) * e2));
        }
        const int n_cap = n - n_cyl;
        for (int s = 0; s < n_cap; ++s) {
            const double z = (s + 0.5) / n_cap;  // hemisphere, uniform in height
            const double ring = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double phi = s * golden;
            candidates.push_back(b + c.radius * (z * axis + ring * (std::cos(phi) * e1 + std::sin(phi) * e2)));
        }
    }
    std::vector<Vec3d> surface;
    for (const auto& x : candidates) {
        bool interior = false;
        for (const auto& c : capsules) {
            if (segment_distance(x, canonical_[c.u], canonical_[c.v]) < c.radius * (1.0 - 1e-3)) {
                interior = true;
                break;
            }
        }
        if (!interior) surface.push_back(x);
    }
    if (static_cast<int>(surface.size()) < template_count_) {
        throw ValidationError("template_count exceeds the available surface samples");
    }

    std::vector<double> nearest(surface.size(), std::numeric_limits<double>::infinity());
    std::vector<std::size_t> chosen;
    chosen.reserve(template_count_);
    std::size_t next = 0;
    for (int s = 0; s < template_count_; ++s) {
        chosen.push_back(next);
        const Vec3d& p = surface[next];
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < surface.size(); ++i) {
            nearest[i] = std::min(nearest[i], (surface[i] - p).squaredNorm());
            if (nearest[i] > far_d) {
                far_d = nearest[i];
                far = i;
            }
        }
        next = far;
    }
    template_vertices_.resize(template_count_, 3);
    for (int s = 0; s < template_count_; ++s) template_vertices_.row(s) = surface[chosen[s]].transpose();
    skinning_weights_ = skinning_weights_for(template_vertices_);
}

VecX<double> Pose::flat() const {
    VecX<double> out(3 * axis_angle.size());
    for (std::size_t j = 0; j < axis_angle.size(); ++j) out.segment<3>(3 * j) = axis_angle[j];
    return out;
}

Pose Pose::from_flat(std::span<const double> articulation) {
    if (articulation.size() != static_cast<std::size_t>(SkeletonModel::kPoseDim)) {
        throw ValidationError("pose articulation must have 45 entries");
    }
    Pose pose;
    for (int j = 0; j < SkeletonModel::kArticulatedCount; ++j) {
        pose.axis_angle[j] = Vec3d(articulation[3 * j], articulation[3 * j + 1], articulation[3 * j + 2]);
    }
    return pose;
}

void Pose::validate() const {
    if (axis_angle.size() != static_cast<std::size_t>(SkeletonModel::kArticulatedCount)) {
        throw ValidationError("pose must have 15 articulated joints");
    }
    auto check = [](const Vec3d& v, const char* what) {
        if (!v.allFinite()) throw ValidationError(std::string(what) + " is not finite");
        if (v.norm() > std::numbers::pi + 1e-12) throw ValidationError(std::string(what) + " exceeds pi");
    };
    for (const auto& aa : axis_angle) check(aa, "axis-angle");
    check(global_rotation, "global rotation");
    if (!global_translation.allFinite()) throw ValidationError("global translation is not finite");
}

Mat3d rotation_from_axis_angle(const Vec3d& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle < 1e-14) return Mat3d::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

PosedSkeleton forward_kinematics(const SkeletonModel& model, const Pose& pose) {
    const int k = model.joint_count();
    if (pose.axis_angle.size() != model.articulated_joints().size()) {
        throw ContractViolation("pose dimension does not match the skeleton");
    }
    std::vector<Mat3d> local(k, Mat3d::Identity());
    for (std::size_t a = 0; a < model.articulated_joints().size(); ++a) {
        local[model.articulated_joints()[a]] = rotation_from_axis_angle(pose.axis_angle[a]);
    }
    const auto& canonical = model.canonical_joints();
    PosedSkeleton out;
    out.joints.resize(k);
    out.global.resize(k);
    out.skinning.resize(k);
    std::vector<Mat3d> rot(k);
    for (int j = 0; j < k; ++j) {
        const int p = model.parent(j);
        Vec3d origin;
        if (p < 0) {
            rot[j] = rotation_from_axis_angle(pose.global_rotation);
            origin = pose.global_translation + rot[j] * canonical[j];
        } else {
            rot[j] = rot[p] * local[j];
            origin = out.joints[p] + rot[p] * (canonical[j] - canonical[p]);
        }
        out.joints[j] = origin;
        out.global[j].leftCols<3>() = rot[j];
        out.global[j].col(3) = origin;
        out.skinning[j].leftCols<3>() = rot[j];
        out.skinning[j].col(3) = origin - rot[j] * canonical[j];
    }
    return out;
}

LbsResult lbs_transform(const PosedSkeleton& posed, const MatX<double>& points, const MatX<double>& weights) {
    const Eigen::Index k = static_cast<Eigen::Index>(posed.skinning.size());
    if (weights.rows() != points.rows() || weights.cols() != k || points.cols() != 3) {
        throw ContractViolation("lbs_transform: weight rows must align with points and joints");
    }
    MatX<double> flat(k, 12);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) flat(j, 4 * r + c) = posed.skinning[j](r, c);
        }
    }
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
        const double sum = weights.row(i).sum();
        if (std::abs(sum - 1.0) > 1e-6 || (weights.row(i).array() < 0.0).any()) {
            throw ContractViolation("lbs_transform: skinning weight row " + std::to_string(i) +
                                    " is not a convex combination");
        }
    }
    LbsResult out;
    out.transforms = weights * flat;
    out.points.resize(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (int r = 0; r < 3; ++r) {
            out.points(i, r) = out.transforms(i, 4 * r) * points(i, 0) + out.transforms(i, 4 * r + 1) * points(i, 1) +
                               out.transforms(i, 4 * r + 2) * points(i, 2) + out.transforms(i, 4 * r + 3);
        }
    }
    return out;
}

LbsResult lbs_transform(const SkeletonModel& model, const Pose& pose, const MatX<double>& points,
                        const MatX<double>& weights) {
    return lbs_transform(forward_kinematics(model, pose), points, weights);
}

BoneTopology build_static_topology(const SkeletonModel& model) {
    model.validate();
    std::set<std::pair<int, int>> removed(model.removed_edges().begin(), model.removed_edges().end());
    BoneTopology topology;
    std::set<std::pair<int, int>> seen;
    auto key = [](int u, int v) { return std::pair<int, int>(std::min(u, v), std::max(u, v)); };
    for (const auto& e : model.tree_edges()) {
        if (removed.count({e.u, e.v})) {
            topology.removed.push_back({e.u, e.v, EdgeTag::removed});
            continue;
        }
        seen.insert(key(e.u, e.v));
        topology.edges.push_back(e);
    }
    for (auto [u, v] : model.cross_edges()) {
        if (!seen.insert(key(u, v)).second) {
            throw ValidationError("duplicate static edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
        }
        topology.edges.push_back({u, v, EdgeTag::cross});
    }
    return topology;
}

std::string skeleton_to_json(const SkeletonModel& model) {
    json doc;
    doc["format"] = "handsplat-skeleton";
    doc["version"] = 1;
    doc["template_count"] = model.template_count();
    json joints = json::array();
    for (const auto& j : model.joints()) {
        joints.push_back({{"name", j.name},
                          {"parent", j.parent},
                          {"direction", {j.direction.x(), j.direction.y(), j.direction.z()}},
                          {"length", j.length},
                          {"radius", j.radius}});
    }
    doc["joints"] = joints;
    const auto topology = build_static_topology(model);
    json edges = json::array();
    for (const auto& e : topology.edges) edges.push_back({{"u", e.u}, {"v", e.v}, {"tag", to_string(e.tag)}});
    for (const auto& e : topology.removed) edges.push_back({{"u", e.u}, {"v", e.v}, {"tag", to_string(e.tag)}});
    doc["edges"] = edges;
    return doc.dump(2);
}

SkeletonModel skeleton_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("skeleton JSON: ") + e.what());
    }
    try {
        std::vector<SkeletonModel::Joint> joints;
        for (const auto& j : doc.at("joints")) {
            SkeletonModel::Joint joint;
            joint.name = j.at("name").get<std::string>();
            joint.parent = j.at("parent").get<int>();
            const auto dir = j.at("direction").get<std::vector<double>>();
            if (dir.size() != 3) throw ValidationError("joint direction must have 3 entries");
            joint.direction = Vec3d(dir[0], dir[1], dir[2]);
            joint.length = j.at("length").get<double>();
            joint.radius = j.at("radius").get<double>();
            joints.push_back(joint);
        }
        std::vector<std::pair<int, int>> cross, removed;
        for (const auto& e : doc.at("edges")) {
            const int u = e.at("u").get<int>();
            const int v = e.at("v").get<int>();
            switch (edge_tag_from_string(e.at("tag").get<std::string>())) {
                case EdgeTag::cross: cross.emplace_back(u, v); break;
                case EdgeTag::removed: removed.emplace_back(u, v); break;
                case EdgeTag::mano:
                    if (u < 0 || v < 0 || v >= static_cast<int>(joints.size()) || joints[v].parent != u) {
                        throw ValidationError("mano edge (" + std::to_string(u) + "," + std::to_string(v) +
                                              ") does not match the parent table");
                    }
                    break;
            }
        }
        return SkeletonModel(std::move(joints), std::move(cross), std::move(removed),
                             doc.value("template_count", 778));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("skeleton JSON: ") + e.what());
    }
}

std::string pose_to_json(const Pose& pose) {
    json doc;
    json aa = json::array();
    for (const auto& v : pose.axis_angle) aa.push_back({v.x(), v.y(), v.z()});
    doc["axis_angle"] = aa;
    doc["global_rotation"] = {pose.global_rotation.x(), pose.global_rotation.y(), pose.global_rotation.z()};
    doc["global_translation"] = {pose.global_translation.x(), pose.global_translation.y(),
                                 pose.global_translation.z()};
    return doc.dump(2);
}

Pose pose_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        auto vec3 = [](const json& j) {
            const auto v = j.get<std::vector<double>>();
            if (v.size() != 3) throw ValidationError("pose vectors must have 3 entries");
            return Vec3d(v[0], v[1], v[2]);
        };
        Pose pose;
        pose.axis_angle.clear();
        for (const auto& aa : doc.at("axis_angle")) pose.axis_angle.push_back(vec3(aa));
        pose.global_rotation = vec3(doc.at("global_rotation"));
        pose.global_translation = vec3(doc.at("global_translation"));
        pose.validate();
        return pose;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("pose JSON: ") + e.what());
    }
}

}  // namespace handsplat
