#pragma once

#include "handsplat/camera.hpp"
#include "handsplat/config.hpp"
#include "handsplat/gaussians.hpp"
#include "handsplat/image.hpp"
#include "handsplat/renderer.hpp"
#include "handsplat/skeleton.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace handsplat {

// Per-articulated-joint box limits on the axis-angle components
// (x: flexion, y: twist, z: abduction).
struct JointLimits {
    std::array<Vec3d, SkeletonModel::kArticulatedCount> lower;
    std::array<Vec3d, SkeletonModel::kArticulatedCount> upper;

    static JointLimits default_hand();
    bool contains(const Pose& pose, double tolerance = 1e-12) const;
};

// Ground-truth hand: a dense textured cloud with its own pose-dependent
// creasing and bulging, which the trained model must learn.
struct OracleScene {
    DataConfig config;
    SkeletonModel skeleton = SkeletonModel::default_hand();
    JointLimits limits;
    GaussianCloud<float> cloud;  // canonical
    MatX<double> normals;        // N x 3 outward canonical normals
    MatX<double> influence;      // N x 15, proximity to each articulated joint
    VecX<double> palm_side;      // N, 1 on the flexion side of the fingers
    std::vector<Pose> poses;
    std::vector<Camera> cameras;
    std::vector<bool> train_camera;
    Vec3d look_target = Vec3d::Zero();

    int train_frames() const { return config.frames - config.test_frames; }
};

// Deterministic in (config.seed, config). Throws ValidationError on an
// infeasible config.
OracleScene generate_scene(const DataConfig& config);

SplatScene<float> pose_oracle(const OracleScene& scene, const Pose& pose);
RenderOutput<float> render_oracle(const OracleScene& scene, const Pose& pose, const Camera& camera);

// A fingertip within 1 cm of the palm surface whose projection lands inside
// the palm.
bool has_self_contact(const SkeletonModel& skeleton, const Pose& pose);
double self_contact_fraction(const SkeletonModel& skeleton, const std::vector<Pose>& poses);

enum class Split { train, novel_pose, novel_view };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct FrameRecord {
    int frame = 0;
    int camera = 0;
    std::string image;  // relative to the dataset root
    std::string mask;
    std::string pose;
    Split split = Split::train;
};

struct DatasetManifest {
    DataConfig config;
    std::vector<Camera> cameras;
    std::vector<bool> train_camera;
    int frames = 0;
    std::vector<FrameRecord> records;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
    std::vector<const FrameRecord*> split(Split which) const;
};

// Layout: manifest.json, images/<cam>/<frame>.png, masks/<cam>/<frame>.png,
// cameras/<cam>.json, poses/<frame>.json. A held-out camera makes a record novel-view; otherwise a
// held-out frame makes it novel-pose.
DatasetManifest build_manifest(const OracleScene& scene);
DatasetManifest render_dataset(const OracleScene& scene, const std::string& out_dir);

struct Dataset {
    std::string root;
    DatasetManifest manifest;
    std::vector<Pose> poses;  // indexed by frame

    Image<float> image(const FrameRecord& record) const;
    Image<float> mask(const FrameRecord& record) const;
};

Dataset load_dataset(const std::string& root);

}  // namespace handsplat
