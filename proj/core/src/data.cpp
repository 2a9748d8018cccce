#include "handsplat/data.hpp"

#include "handsplat/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

namespace handsplat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kFingerTips[SkeletonModel::kFingerCount] = {4, 8, 12, 16, 20};
constexpr double kPalmRadius = 0.0125;

double segment_parameter(const Vec3d& x, const Vec3d& a, const Vec3d& b) {
    const Vec3d ab = b - a;
    const double len2 = ab.squaredNorm();
    return len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
}

// Skin tone per finger (thumb..pinky) and for the palm.
const Vec3d kTints[6] = {{0.90, 0.62, 0.50}, {0.86, 0.66, 0.52}, {0.80, 0.60, 0.54},
                         {0.87, 0.58, 0.57}, {0.78, 0.65, 0.49}, {0.84, 0.63, 0.53}};
const Vec3d kNail(0.52, 0.38, 0.40);

}  // namespace

JointLimits JointLimits::default_hand() {
    JointLimits limits;
    for (int k = 0; k < SkeletonModel::kArticulatedCount; ++k) {
        const int finger = k / 3, level = k % 3;
        Vec3d lo = Vec3d::Zero(), hi = Vec3d::Zero();
        if (finger == 0) {
            const double flex[3][2] = {{-0.3, 0.9}, {0.0, 1.0}, {0.0, 1.3}};
            lo.x() = flex[level][0];
            hi.x() = flex[level][1];
            if (level == 0) {
                lo.y() = -0.2;
                hi.y() = 0.2;
                lo.z() = -0.4;
                hi.z() = 0.4;
            }
        } else {
            const double flex[3][2] = {{-0.2, 1.57}, {0.0, 1.92}, {0.0, 1.45}};
            lo.x() = flex[level][0];
            hi.x() = flex[level][1];
            if (level == 0) {
                lo.z() = -0.3;
                hi.z() = 0.3;
            }
        }
        limits.lower[k] = lo;
        limits.upper[k] = hi;
    }
    return limits;
}

bool JointLimits::contains(const Pose& pose, double tolerance) const {
    if (pose.axis_angle.size() != lower.size()) return false;
    for (std::size_t k = 0; k < lower.size(); ++k) {
        for (int c = 0; c < 3; ++c) {
            const double v = pose.axis_angle[k][c];
            if (v < lower[k][c] - tolerance || v > upper[k][c] + tolerance) return false;
        }
    }
    return true;
}

namespace {

JointLimits scaled_limits(double articulation) {
    JointLimits limits = JointLimits::default_hand();
    for (std::size_t k = 0; k < limits.lower.size(); ++k) {
        limits.lower[k] *= articulation;
        limits.upper[k] *= articulation;
    }
    return limits;
}

std::vector<Pose> sample_trajectory(const DataConfig& config, const JointLimits& limits, std::mt19937_64& rng) {
    constexpr int kBlock = 10;
    constexpr int kDims = SkeletonModel::kPoseDim;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto lo = [&](int d) { return limits.lower[d / 3][d % 3]; };
    auto hi = [&](int d) { return limits.upper[d / 3][d % 3]; };

    VecX<double> target(kDims), state(kDims);
    auto pick_target = [&] {
        const bool grip = unit(rng) < config.grip_fraction;
        for (int d = 0; d < kDims; ++d) target[d] = lo(d) + unit(rng) * (hi(d) - lo(d));
        if (!grip) return;
        for (int f = 0; f < SkeletonModel::kFingerCount; ++f) {
            if (unit(rng) > 0.75) continue;
            for (int level = 0; level < 3; ++level) {
                const int d = 3 * (3 * f + level);  // flexion component
                target[d] = lo(d) + (0.85 + 0.15 * unit(rng)) * (hi(d) - lo(d));
            }
        }
    };

    std::vector<Pose> poses;
    poses.reserve(static_cast<std::size_t>(config.frames));
    for (int t = 0; t < config.frames; ++t) {
        if (t % kBlock == 0) pick_target();
        if (t == 0) state = target;
        for (int d = 0; d < kDims; ++d) {
            const double range = hi(d) - lo(d);
            const double noise = config.ou_sigma * range * std::sqrt(2.0 * config.ou_theta) * normal(rng);
            state[d] = std::clamp(state[d] + config.ou_theta * (target[d] - state[d]) + noise, lo(d), hi(d));
        }
        Pose pose = Pose::from_flat(std::span<const double>(state.data(), kDims));
        poses.push_back(pose);
    }
    return poses;
}

std::vector<Vec3d> fibonacci_sphere(int count) {
    std::vector<Vec3d> out;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / count;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        out.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
    }
    return out;
}

// Smooth procedural value noise: a few random plane waves.
struct WaveNoise {
    std::vector<Vec3d> freq;
    std::vector<double> phase;

    WaveNoise(std::mt19937_64& rng, int waves, double frequency) {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 2.0 * std::numbers::pi);
        for (int w = 0; w < waves; ++w) {
            freq.push_back(Vec3d(normal(rng), normal(rng), normal(rng)).normalized() * frequency);
            phase.push_back(unit(rng));
        }
    }
    double operator()(const Vec3d& x) const {
        double v = 0.0;
        for (std::size_t w = 0; w < freq.size(); ++w) v += std::sin(freq[w].dot(x) + phase[w]);
        return v / std::sqrt(static_cast<double>(freq.size()));
    }
};

}  // namespace

OracleScene generate_scene(const DataConfig& config) {
    validate(config);
    OracleScene scene;
    scene.config = config;
    scene.skeleton = SkeletonModel::default_hand(config.gaussians);
    scene.limits = scaled_limits(config.articulation);
    std::mt19937_64 rng(config.seed);

    const MatX<double>& pts = scene.skeleton.template_vertices();
    const auto n = pts.rows();
    const auto capsules = scene.skeleton.surface_capsules();
    const auto& joints = scene.skeleton.canonical_joints();
    const auto& articulated = scene.skeleton.articulated_joints();

    scene.cloud.resize(static_cast<std::size_t>(n), 1, scene.skeleton.joint_count());
    scene.cloud.embed_geo.setZero();
    scene.cloud.embed_app.setZero();
    scene.cloud.skin_weights = scene.skeleton.skinning_weights().cast<float>();
    scene.normals.resize(n, 3);
    scene.influence.resize(n, SkeletonModel::kArticulatedCount);
    scene.palm_side.resize(n);

    const auto spacing = mean_neighbor_distance(pts, 3);
    const WaveNoise coarse(rng, 6, 90.0), fine(rng, 8, 400.0);
    std::uniform_real_distribution<double> jitter(0.85, 1.15);

    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3d p = pts.row(i).transpose();
        // Nearest capsule gives the outward normal and the body part.
        double best = std::numeric_limits<double>::infinity();
        Vec3d normal = Vec3d::UnitZ();
        int part_u = 0, part_v = 0;
        double along = 0.0;
        for (const auto& c : capsules) {
            const double t = segment_parameter(p, joints[c.u], joints[c.v]);
            const Vec3d closest = joints[c.u] + t * (joints[c.v] - joints[c.u]);
            const double gap = std::abs((p - closest).norm() - c.radius);
            if (gap < best) {
                best = gap;
                normal = (p - closest).normalized();
                part_u = c.u;
                part_v = c.v;
                along = t;
            }
        }
        scene.normals.row(i) = normal.transpose();

        // Flattened disc tangent to the surface.
        const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3d::UnitZ(), normal);
        scene.cloud.rotation.row(i) << float(q.w()), float(q.x()), float(q.y()), float(q.z());
        const double s = std::log(std::max(spacing[static_cast<std::size_t>(i)], 1e-4) * 0.8);
        scene.cloud.log_scale.row(i) << float(s + std::log(jitter(rng))), float(s + std::log(jitter(rng))),
            float(s + std::log(0.35));
        scene.cloud.opacity(i, 0) = 3.0f;

        const bool palm = part_u == 0 || (part_u % 4 == 1 && part_v % 4 == 1 && part_u != part_v);
        const int finger = palm ? 5 : (std::max(part_u, part_v) - 1) / 4;
        Vec3d color = kTints[finger] * (1.0 + 0.10 * coarse(p)) + Vec3d::Constant(0.05 * fine(p));
        const bool distal = !palm && part_v == kFingerTips[finger];
        if (distal && along > 0.4 && normal.z() < -0.35) color = kNail + Vec3d::Constant(0.03 * fine(p));
        for (int c = 0; c < 3; ++c) scene.cloud.color(i, c) = float(std::clamp(color[c], 0.0, 1.0));

        scene.palm_side[i] = 1.0 / (1.0 + std::exp(-normal.z() / 0.25));
        for (int k = 0; k < SkeletonModel::kArticulatedCount; ++k) {
            const double d2 = (p - joints[static_cast<std::size_t>(articulated[static_cast<std::size_t>(k)])]).squaredNorm();
            scene.influence(i, k) = std::exp(-d2 / (2.0 * 0.009 * 0.009));
        }
    }

    scene.poses = sample_trajectory(config, scene.limits, rng);

    Vec3d centroid = Vec3d::Zero();
    for (const auto& j : joints) centroid += j;
    scene.look_target = centroid / static_cast<double>(joints.size());
    const auto dirs = fibonacci_sphere(config.cameras);
    const int held = config.cameras - config.train_cameras;
    scene.train_camera.assign(static_cast<std::size_t>(config.cameras), true);
    for (int k = 0; k < held; ++k) {
        scene.train_camera[static_cast<std::size_t>((2 * k + 1) * config.cameras / (2 * held))] = false;
    }
    const double focal = config.focal_ratio * config.width;
    for (const auto& dir : dirs) {
        const Vec3d up = std::abs(dir.y()) > 0.95 ? Vec3d::UnitZ() : Vec3d::UnitY();
        scene.cameras.push_back(Camera::look_at(scene.look_target + config.rig_radius * dir, scene.look_target, up, focal,
                                                config.width, config.height));
    }
    return scene;
}

SplatScene<float> pose_oracle(const OracleScene& scene, const Pose& pose) {
    const PosedSkeleton posed = forward_kinematics(scene.skeleton, pose);
    const MatX<float> motion = motion_embedding(scene.cloud, posed);
    const Eigen::Index n = scene.cloud.position.rows();
    const double strength = scene.config.effect_strength;

    VecX<double> flex(SkeletonModel::kArticulatedCount);
    for (int k = 0; k < flex.size(); ++k) flex[k] = std::max(0.0, pose.axis_angle[static_cast<std::size_t>(k)].x()) / 1.5;

    MatX<float> canonical = scene.skeleton.template_vertices().cast<float>();
    MatX<float> colors = scene.cloud.color;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double drive = scene.influence.row(i).dot(flex);
        // Flexion creases darken the palm side and bulge the knuckles.
        const double crease = std::min(1.0, drive) * scene.palm_side[i] * strength;
        const double bulge = 0.004 * std::min(1.5, drive) * (1.0 - scene.palm_side[i]) * strength;
        colors.row(i) *= float(std::max(0.2, 1.0 - 0.6 * crease));
        canonical.row(i) += (bulge * scene.normals.row(i)).cast<float>();
    }

    SplatScene<float> out;
    out.means = apply_motion(motion, canonical);
    out.covariances.resize(n, 9);
    out.colors = colors;
    out.opacities.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        Mat3<float> a;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) a(r, c) = motion(i, 4 * r + c);
        }
        const Mat3<float> sigma = a * scene.cloud.covariance(static_cast<std::size_t>(i)) * a.transpose();
        Eigen::Map<Eigen::Matrix<float, 3, 3, Eigen::RowMajor>>(out.covariances.row(i).data()) = sigma;
        out.opacities(i, 0) = scene.cloud.opacity_value(static_cast<std::size_t>(i));
    }
    return out;
}

RenderOutput<float> render_oracle(const OracleScene& scene, const Pose& pose, const Camera& camera) {
    return render(pose_oracle(scene, pose), camera, RenderSettings{});
}

bool has_self_contact(const SkeletonModel& skeleton, const Pose& pose) {
    const auto joints = posed_joints(skeleton, pose);
    const Vec3d& wrist = joints[0];
    const Vec3d& index = joints[5];
    const Vec3d& pinky = joints[17];
    const Vec3d n = (index - wrist).cross(pinky - wrist).normalized();
    const Vec3d u = (index - pinky).normalized();
    const Vec3d v = n.cross(u);
    // Palm outline in plane coordinates: widened wrist edge, then the knuckles.
    const Vec3d half = 0.5 * (index - pinky);
    const std::array<Vec3d, 4> corners = {wrist - 0.6 * half, wrist + 0.6 * half, index, pinky};
    std::array<Eigen::Vector2d, 4> poly;
    for (std::size_t c = 0; c < 4; ++c) poly[c] = {(corners[c] - wrist).dot(u), (corners[c] - wrist).dot(v)};
    auto inside = [&](const Eigen::Vector2d& p) {
        int sign = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            const Eigen::Vector2d a = poly[c], b = poly[(c + 1) % 4];
            const double cr = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
            const int s = cr > 0 ? 1 : (cr < 0 ? -1 : 0);
            if (s == 0) continue;
            if (sign == 0) sign = s;
            if (s != sign) return false;
        }
        return true;
    };
    for (int f = 0; f < SkeletonModel::kFingerCount; ++f) {
        const int tip = kFingerTips[f];
        const Vec3d d = joints[static_cast<std::size_t>(tip)] - wrist;
        const double gap = d.dot(n) - kPalmRadius - skeleton.joints()[static_cast<std::size_t>(tip)].radius;
        if (d.dot(n) < 0.0 || gap > 0.01) continue;
        if (inside({d.dot(u), d.dot(v)})) return true;
    }
    return false;
}

double self_contact_fraction(const SkeletonModel& skeleton, const std::vector<Pose>& poses) {
    if (poses.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& pose : poses) hits += has_self_contact(skeleton, pose) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(poses.size());
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::novel_pose: return "novel-pose";
        case Split::novel_view: return "novel-view";
    }
    return "train";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "novel-pose") return Split::novel_pose;
    if (name == "novel-view") return Split::novel_view;
    throw ValidationError("unknown split '" + name + "' (expected train, novel-pose or novel-view)");
}

namespace {

std::string frame_name(int frame) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", frame);
    return buf;
}

}  // namespace

std::string DatasetManifest::to_json() const {
    json doc;
    doc["config"] = json::parse(handsplat::to_json(config));
    doc["frames"] = frames;
    json cams = json::array();
    for (std::size_t c = 0; c < cameras.size(); ++c) {
        cams.push_back({{"id", c}, {"train", bool(train_camera[c])}, {"camera", json::parse(camera_to_json(cameras[c]))}});
    }
    doc["cameras"] = cams;
    json recs = json::array();
    for (const auto& r : records) {
        recs.push_back({{"frame", r.frame},
                        {"camera", r.camera},
                        {"image", r.image},
                        {"mask", r.mask},
                        {"pose", r.pose},
                        {"split", handsplat::to_string(r.split)}});
    }
    doc["records"] = recs;
    return doc.dump(1);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        DatasetManifest m;
        m.config = data_config_from_json(doc.at("config").dump());
        m.frames = doc.at("frames").get<int>();
        for (const auto& c : doc.at("cameras")) {
            m.cameras.push_back(camera_from_json(c.at("camera").dump()));
            m.train_camera.push_back(c.at("train").get<bool>());
        }
        for (const auto& r : doc.at("records")) {
            FrameRecord rec;
            rec.frame = r.at("frame").get<int>();
            rec.camera = r.at("camera").get<int>();
            rec.image = r.at("image").get<std::string>();
            rec.mask = r.at("mask").get<std::string>();
            rec.pose = r.at("pose").get<std::string>();
            rec.split = split_from_string(r.at("split").get<std::string>());
            if (rec.frame < 0 || rec.frame >= m.frames || rec.camera < 0 ||
                rec.camera >= static_cast<int>(m.cameras.size())) {
                throw ValidationError("manifest record references a missing frame or camera");
            }
            m.records.push_back(rec);
        }
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest JSON: ") + e.what());
    }
}

std::vector<const FrameRecord*> DatasetManifest::split(Split which) const {
    std::vector<const FrameRecord*> out;
    for (const auto& r : records) {
        if (r.split == which) out.push_back(&r);
    }
    return out;
}

DatasetManifest build_manifest(const OracleScene& scene) {
    DatasetManifest m;
    m.config = scene.config;
    m.cameras = scene.cameras;
    m.train_camera = scene.train_camera;
    m.frames = static_cast<int>(scene.poses.size());
    for (int f = 0; f < m.frames; ++f) {
        for (int c = 0; c < static_cast<int>(scene.cameras.size()); ++c) {
            FrameRecord r;
            r.frame = f;
            r.camera = c;
            r.image = "images/" + std::to_string(c) + "/" + frame_name(f) + ".png";
            r.mask = "masks/" + std::to_string(c) + "/" + frame_name(f) + ".png";
            r.pose = "poses/" + frame_name(f) + ".json";
            if (!scene.train_camera[static_cast<std::size_t>(c)]) {
                r.split = Split::novel_view;
            } else if (f >= scene.train_frames()) {
                r.split = Split::novel_pose;
            } else {
                r.split = Split::train;
            }
            m.records.push_back(r);
        }
    }
    return m;
}

DatasetManifest render_dataset(const OracleScene& scene, const std::string& out_dir) {
    const DatasetManifest manifest = build_manifest(scene);
    const fs::path root(out_dir);
    std::error_code ec;
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
        fs::create_directories(root / "images" / std::to_string(c), ec);
        fs::create_directories(root / "masks" / std::to_string(c), ec);
    }
    fs::create_directories(root / "poses", ec);
    fs::create_directories(root / "cameras", ec);
    if (ec) throw std::runtime_error("cannot create dataset directories under '" + out_dir + "': " + ec.message());

    // Standalone copies of the rig for the render tool; the manifest stays authoritative.
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
        write_text_file((root / "cameras" / (std::to_string(c) + ".json")).string(), camera_to_json(scene.cameras[c]));
    }
    for (int f = 0; f < manifest.frames; ++f) {
        write_text_file((root / ("poses/" + frame_name(f) + ".json")).string(), pose_to_json(scene.poses[static_cast<std::size_t>(f)]));
    }
    parallel_for(static_cast<std::size_t>(manifest.frames), 1, [&](std::size_t begin, std::size_t end) {
        for (std::size_t f = begin; f < end; ++f) {
            const SplatScene<float> posed = pose_oracle(scene, scene.poses[f]);
            for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
                const RenderOutput<float> out = render(posed, scene.cameras[c], RenderSettings{});
                const auto& rec = manifest.records[f * scene.cameras.size() + c];
                write_image((root / rec.image).string(), out.color);
                Image<float> mask(out.alpha.width, out.alpha.height, 1);
                for (std::size_t p = 0; p < mask.data.size(); ++p) mask.data[p] = out.alpha.data[p] > 0.5f ? 1.0f : 0.0f;
                write_image((root / rec.mask).string(), mask);
            }
        }
    });
    write_text_file((root / "manifest.json").string(), manifest.to_json());
    return manifest;
}

Image<float> Dataset::image(const FrameRecord& record) const { return read_image((fs::path(root) / record.image).string()); }

Image<float> Dataset::mask(const FrameRecord& record) const { return read_image((fs::path(root) / record.mask).string()); }

Dataset load_dataset(const std::string& root) {
    Dataset ds;
    ds.root = root;
    ds.manifest = DatasetManifest::from_json(read_text_file((fs::path(root) / "manifest.json").string()));
    ds.poses.resize(static_cast<std::size_t>(ds.manifest.frames));
    std::vector<bool> loaded(ds.poses.size(), false);
    for (const auto& r : ds.manifest.records) {
        if (loaded[static_cast<std::size_t>(r.frame)]) continue;
        ds.poses[static_cast<std::size_t>(r.frame)] = pose_from_json(read_text_file((fs::path(root) / r.pose).string()));
        loaded[static_cast<std::size_t>(r.frame)] = true;
    }
    return ds;
}

}  // namespace handsplat
