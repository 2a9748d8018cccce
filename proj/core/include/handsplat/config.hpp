#pragma once

#include "handsplat/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace handsplat {

struct DataConfig {
    std::uint64_t seed = 1;
    int gaussians = 8000;
    int cameras = 12;
    int train_cameras = 8;
    int frames = 60;
    int test_frames = 10;  // held out from the end of the trajectory
    int width = 256;
    int height = 256;
    double rig_radius = 0.5;
    double focal_ratio = 1.3;  // focal length in units of image width
    double articulation = 1.0;  // scales every joint range; 0 freezes the pose
    double ou_theta = 0.2;      // mean reversion per frame
    double ou_sigma = 0.1;      // stationary std as a fraction of the joint range
    double grip_fraction = 0.4; // share of the trajectory pulled toward grip poses
    double effect_strength = 1.0;  // pose-dependent creasing and bulging
};

struct RunConfig {
    std::uint64_t seed = 7;
    int iterations = 3000;
    ModelConfig model;

    double delta = 1.5;  // pose similarity bandwidth
    double ema_decay = 0.9;
    double lambda_mask = 0.1;
    double lambda_ssim = 0.01;
    double lambda_con = 0.01;
    double lambda_smooth = 1.0;
    int smooth_k = 5;
    bool freeze_phi = false;

    double lr_network = 1e-3;
    double lr_embedding = 1e-3;
    double lr_position = 1e-4;
    double lr_rotation = 1e-4;
    double lr_scale = 1e-4;
    double lr_color = 1e-4;
    double lr_opacity = 1e-4;

    int densify_from = 200;
    int densify_until = 2000;
    int densify_every = 200;
    double densify_grad_threshold = 0.15;
    double densify_scale_threshold = 0.004;
    double prune_opacity = 0.005;
    int max_gaussians = 200000;

    double same_pose_prob = 0.5;  // chance the next iteration keeps the pose with another camera
    int checkpoint_every = 1000;
    int log_every = 10;
    int threads = 0;  // 0: hardware concurrency
    bool deterministic = false;
};

// Throws ValidationError naming the offending field.
void validate(const DataConfig& config);
void validate(const RunConfig& config);

// Flat JSON objects keyed by field name. Unknown keys are rejected.
std::string to_json(const DataConfig& config);
std::string to_json(const RunConfig& config);
DataConfig data_config_from_json(const std::string& text);
RunConfig run_config_from_json(const std::string& text);

// "key=value" overrides; unknown keys and unparsable values are rejected.
// Cross-field validation is left to the caller, after all overrides.
void apply_override(DataConfig& config, const std::string& assignment);
void apply_override(RunConfig& config, const std::string& assignment);

// Ablation presets: "full", "no_scs" (no_intra_pose + no_inter_pose), or any
// single ablation flag name.
void apply_ablation_preset(RunConfig& config, const std::string& preset);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace handsplat
