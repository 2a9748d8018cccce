#include "handsplat/data.hpp"
#include "handsplat/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace handsplat;
namespace fs = std::filesystem;

namespace {

DataConfig tiny_config() {
    DataConfig c;
    c.gaussians = 1500;
    c.cameras = 3;
    c.train_cameras = 2;
    c.frames = 6;
    c.test_frames = 2;
    c.width = 48;
    c.height = 48;
    return c;
}

}  // namespace

TEST(Data, GenerationIsDeterministic) {
    const auto a = generate_scene(tiny_config());
    const auto b = generate_scene(tiny_config());
    EXPECT_EQ(a.cloud.position, b.cloud.position);
    ASSERT_EQ(a.poses.size(), b.poses.size());
    for (std::size_t i = 0; i < a.poses.size(); ++i) EXPECT_EQ(a.poses[i], b.poses[i]);
    auto other = tiny_config();
    other.seed = 2;
    EXPECT_NE(generate_scene(other).cloud.color, a.cloud.color);
}

TEST(Data, PosesRespectLimits) {
    const auto s = generate_scene(DataConfig{});
    for (const auto& p : s.poses) EXPECT_TRUE(s.limits.contains(p));
}

TEST(Data, DefaultTrajectoryHasSelfContact) {
    const auto s = generate_scene(DataConfig{});
    EXPECT_GE(self_contact_fraction(s.skeleton, s.poses), 0.2);
    EXPECT_FALSE(has_self_contact(s.skeleton, Pose{}));
}

TEST(Data, CamerasSeeTheHand) {
    const auto s = generate_scene(tiny_config());
    for (const auto& cam : s.cameras) {
        const auto out = render_oracle(s, s.poses[0], cam);
        double coverage = 0;
        for (float a : out.alpha.data) coverage += a;
        EXPECT_GT(coverage / double(out.alpha.data.size()), 0.02);
    }
}

TEST(Data, SplitsPartitionRecords) {
    const auto m = build_manifest(generate_scene(tiny_config()));
    EXPECT_EQ(m.records.size(), 18u);
    EXPECT_EQ(m.split(Split::train).size(), 8u);       // 4 frames x 2 cameras
    EXPECT_EQ(m.split(Split::novel_pose).size(), 4u);  // 2 frames x 2 cameras
    EXPECT_EQ(m.split(Split::novel_view).size(), 6u);  // held-out camera, every frame
    EXPECT_EQ(split_from_string(to_string(Split::novel_view)), Split::novel_view);
    EXPECT_THROW(split_from_string("nope"), ValidationError);
}

TEST(Data, RenderedDatasetRoundTripsAndOracleIsExact) {
    const auto dir = fs::temp_directory_path() / "handsplat_data_test";
    fs::remove_all(dir);
    const auto scene = generate_scene(tiny_config());
    render_dataset(scene, dir.string());
    const auto ds = load_dataset(dir.string());
    EXPECT_EQ(ds.manifest.records.size(), 18u);
    EXPECT_EQ(ds.poses.size(), 6u);
    EXPECT_EQ(ds.poses[3], scene.poses[3]);
    const auto report = evaluate_oracle(ds, Split::novel_pose);
    EXPECT_GE(report.mean_psnr, 50.0);
    fs::remove_all(dir);
}

TEST(Data, InvalidConfigRejected) {
    auto c = tiny_config();
    c.test_frames = c.frames;
    EXPECT_THROW(generate_scene(c), ValidationError);
}
