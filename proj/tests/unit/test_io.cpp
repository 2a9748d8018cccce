#include "handsplat/camera.hpp"
#include "handsplat/config.hpp"
#include "handsplat/image.hpp"
#include "handsplat/tensor_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

using namespace handsplat;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("handsplat_io_" + name); }

}  // namespace

TEST(Config, JsonRoundTrip) {
    RunConfig run;
    run.iterations = 123;
    run.model.ablations.no_dynamic_bones = true;
    run.model.tau = 0.05;
    const auto back = run_config_from_json(to_json(run));
    EXPECT_EQ(to_json(back), to_json(run));
    EXPECT_EQ(back.iterations, 123);
    EXPECT_TRUE(back.model.ablations.no_dynamic_bones);

    DataConfig data;
    data.width = 64;
    EXPECT_EQ(to_json(data_config_from_json(to_json(data))), to_json(data));
}

TEST(Config, OverridesAndPresets) {
    RunConfig c;
    apply_override(c, "lambda_con=0.5");
    EXPECT_EQ(c.lambda_con, 0.5);
    EXPECT_THROW(apply_override(c, "no_such_key=1"), ValidationError);
    EXPECT_THROW(apply_override(c, "iterations=abc"), ValidationError);
    apply_ablation_preset(c, "no_scs");
    EXPECT_TRUE(c.model.ablations.no_intra_pose);
    EXPECT_TRUE(c.model.ablations.no_inter_pose);
    EXPECT_THROW(apply_ablation_preset(c, "bogus"), ValidationError);
    EXPECT_THROW(run_config_from_json("{\"unknown\": 1}"), ValidationError);
}

TEST(Config, ValidationNamesField) {
    DataConfig d;
    d.train_cameras = 99;
    try {
        validate(d);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("train_cameras"), std::string::npos);
    }
}

TEST(TensorIo, RoundTripIsBitExact) {
    TensorFile f;
    f.metadata = "{\"k\": 1}";
    f.tensors["a"] = MatX<double>::Random(3, 4);
    f.tensors["b"] = MatX<double>(1, 2);
    f.tensors["b"] << std::numeric_limits<double>::denorm_min(), -0.0;
    const auto path = temp_path("t.hsck");
    write_tensor_file(path.string(), f);
    const auto back = read_tensor_file(path.string());
    EXPECT_EQ(back.metadata, f.metadata);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.at("a"), f.at("a"));
    EXPECT_TRUE(std::signbit(back.at("b")(0, 1)));
    EXPECT_THROW(back.at("missing"), ValidationError);
    fs::remove(path);
}

TEST(TensorIo, RejectsCorruptFiles) {
    const auto path = temp_path("bad.hsck");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE1234";
    }
    EXPECT_THROW(read_tensor_file(path.string()), ValidationError);
    TensorFile f;
    f.tensors["a"] = MatX<double>::Ones(10, 10);
    write_tensor_file(path.string(), f);
    fs::resize_file(path, fs::file_size(path) - 8);
    EXPECT_THROW(read_tensor_file(path.string()), ValidationError);
    fs::remove(path);
}

TEST(CameraIo, JsonRoundTripAndValidation) {
    const Camera c = Camera::look_at(Vec3d(0.3, -0.2, 0.4), Vec3d(0, 0.05, 0), Vec3d(0, 1, 0), 200, 64, 48);
    EXPECT_NO_THROW(c.validate());
    EXPECT_LT((c.center() - Vec3d(0.3, -0.2, 0.4)).norm(), 1e-12);
    EXPECT_GT(c.to_camera(Vec3d(0, 0.05, 0)).z(), 0.0);
    const Camera back = camera_from_json(camera_to_json(c));
    EXPECT_LT((back.rotation - c.rotation).norm(), 1e-12);
    EXPECT_EQ(back.width, 64);
    Camera bad = c;
    bad.fx = -1;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(ImageIo, PngRoundTripIsQuantized) {
    Image<float> img(5, 4, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i % 17) / 16.0f;
    const auto path = temp_path("img.png");
    write_image(path.string(), img);
    const auto back = read_image(path.string());
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-6);
    fs::remove(path);
    EXPECT_ANY_THROW(read_image(temp_path("missing.png").string()));
}

TEST(ImageIo, Psnr) {
    Image<float> a(4, 4, 1, 0.5f), b(4, 4, 1, 0.6f);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
}
