#include "handsplat/model.hpp"
#include "handsplat/parallel.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace handsplat;

namespace {

SplatScene<float> random_scene(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1), s(0.002, 0.01), c(0.0, 1.0);
    SplatScene<float> scene;
    scene.means.resize(n, 3);
    scene.covariances = MatX<float>::Zero(n, 9);
    scene.colors.resize(n, 3);
    scene.opacities.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        scene.means.row(i) << float(u(rng)), float(u(rng)), float(u(rng));
        for (int k = 0; k < 3; ++k) {
            const double v = s(rng);
            scene.covariances(i, 4 * k) = float(v * v);
            scene.colors(i, k) = float(c(rng));
        }
        scene.opacities(i, 0) = float(0.2 + 0.7 * c(rng));
    }
    return scene;
}

Camera bench_camera(int size) {
    return Camera::look_at(Vec3d(0, 0, -0.5), Vec3d::Zero(), Vec3d(0, 1, 0), 1.3 * size, size, size);
}

void BM_RenderForward(benchmark::State& state) {
    const auto scene = random_scene(int(state.range(0)), 1);
    const Camera cam = bench_camera(int(state.range(1)));
    set_num_threads(1);
    for (auto _ : state) benchmark::DoNotOptimize(render(scene, cam, RenderSettings{}));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderForward)->Args({1000, 128})->Args({8000, 256})->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state) {
    const auto scene = random_scene(int(state.range(0)), 2);
    const Camera cam = bench_camera(int(state.range(1)));
    set_num_threads(1);
    RenderCache<float> cache;
    render(scene, cam, RenderSettings{}, &cache);
    const Image<float> gc(cam.width, cam.height, 3, 0.1f), ga(cam.width, cam.height, 1, 0.1f);
    for (auto _ : state) benchmark::DoNotOptimize(render_backward(scene, cam, RenderSettings{}, cache, gc, ga));
}
BENCHMARK(BM_RenderBackward)->Args({1000, 128})->Args({8000, 256})->Unit(benchmark::kMillisecond);

void BM_StructuralCoordinates(benchmark::State& state) {
    const auto skel = SkeletonModel::default_hand();
    const auto basis = static_basis<float>(skel.canonical_joints(), build_static_topology(skel));
    const MatX<float> x = skel.template_vertices().cast<float>();
    for (auto _ : state) benchmark::DoNotOptimize(structural_coordinates(x, basis, 0.08f));
    state.SetItemsProcessed(state.iterations() * x.rows());
}
BENCHMARK(BM_StructuralCoordinates)->Unit(benchmark::kMicrosecond);

void BM_ForwardPass(benchmark::State& state) {
    const HandModel<float> model(SkeletonModel::default_hand(), ModelConfig{}, 1);
    Pose pose;
    pose.axis_angle[3] = Vec3d(0.6, 0, 0);
    const Camera cam = Camera::look_at(Vec3d(0, 0.08, 0.5), Vec3d(0, 0.08, 0), Vec3d(0, 1, 0), 333, 256, 256);
    set_num_threads(1);
    for (auto _ : state) benchmark::DoNotOptimize(forward(model, pose, cam, RenderSettings{}));
}
BENCHMARK(BM_ForwardPass)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
