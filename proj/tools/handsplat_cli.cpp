// Command-line driver: dataset generation, training, evaluation, rendering
// and inspection dumps. Exit codes: 0 ok, 2 validation error, 3 numeric error.

#include "handsplat/camera.hpp"
#include "handsplat/config.hpp"
#include "handsplat/data.hpp"
#include "handsplat/image.hpp"
#include "handsplat/model.hpp"
#include "handsplat/parallel.hpp"
#include "handsplat/skeleton.hpp"
#include "handsplat/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace handsplat;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointName = "checkpoint.hsck";

RunConfig resolve_run_config(const std::string& config_path, const std::vector<std::string>& sets,
                             const std::vector<std::string>& ablations) {
    RunConfig config = config_path.empty() ? RunConfig{} : run_config_from_json(read_text_file(config_path));
    for (const auto& a : ablations) apply_ablation_preset(config, a);
    for (const auto& s : sets) apply_override(config, s);
    validate(config);
    return config;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << '\n';
    } else {
        write_text_file(out_path, text);
    }
}

HandModel<float> model_or_init(const std::string& checkpoint) {
    if (!checkpoint.empty()) return load_model(checkpoint);
    const RunConfig config;
    return HandModel<float>(SkeletonModel::default_hand(), config.model, config.seed);
}

Pose pose_or_rest(const std::string& path) {
    if (path.empty()) return Pose{};
    Pose pose = pose_from_json(read_text_file(path));
    pose.validate();
    return pose;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structure-aware Gaussian hand avatars"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0: hardware)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render the synthetic oracle dataset");
    std::string gen_out, gen_config;
    std::vector<std::string> gen_sets;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--config", gen_config, "data config JSON");
    gen->add_option("--set", gen_sets, "key=value override");

    // train
    auto* train = app.add_subcommand("train", "fit a hand model to a dataset");
    std::string train_data, train_out, train_config;
    std::vector<std::string> train_sets, train_ablations;
    bool train_resume = false, train_det = false;
    int train_iters = -1;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--config", train_config, "run config JSON");
    train->add_option("--set", train_sets, "key=value override");
    train->add_option("--ablation", train_ablations, "preset: full, no_scs, or a single ablation flag");
    train->add_option("--iterations", train_iters, "override the iteration count");
    train->add_flag("--resume", train_resume, "continue from <out>/checkpoint.hsck");
    train->add_flag("--deterministic", train_det, "fixed-order reductions");

    // eval
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM on a dataset split");
    std::string eval_ckpt, eval_data, eval_split = "novel-pose", eval_csv;
    bool eval_oracle = false;
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    eval->add_flag("--oracle", eval_oracle, "evaluate the dataset's own oracle cloud");
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--split", eval_split, "train | novel-pose | novel-view");
    eval->add_option("--csv", eval_csv, "per-frame CSV output");

    // render
    auto* rend = app.add_subcommand("render", "render a posed model");
    std::string rend_ckpt, rend_pose, rend_camera, rend_out;
    bool rend_lbs = false;
    rend->add_option("--checkpoint", rend_ckpt, "model checkpoint (default: initialization)");
    rend->add_option("--pose", rend_pose, "pose JSON (default: rest)");
    rend->add_option("--camera", rend_camera, "camera JSON")->required();
    rend->add_option("--out", rend_out, "output image (.png/.ppm)")->required();
    rend->add_flag("--lbs", rend_lbs, "skinning only, no deformation networks");

    // bench
    auto* bench = app.add_subcommand("bench", "forward rendering throughput");
    std::string bench_ckpt;
    int bench_w = 256, bench_h = 256, bench_count = 10000, bench_repeats = 5;
    bench->add_option("--checkpoint", bench_ckpt, "render this model instead of an oracle cloud");
    bench->add_option("--width", bench_w);
    bench->add_option("--height", bench_h);
    bench->add_option("--count", bench_count, "oracle Gaussian count (ignored with --checkpoint)");
    bench->add_option("--repeats", bench_repeats);

    // scs dump
    auto* scs = app.add_subcommand("scs", "structural coordinate inspection");
    auto* scs_dump = scs->add_subcommand("dump", "basis segments and per-Gaussian coordinates");
    scs->require_subcommand(1);
    std::string scs_ckpt, scs_pose, scs_out;
    int scs_limit = -1;
    scs_dump->add_option("--checkpoint", scs_ckpt);
    scs_dump->add_option("--pose", scs_pose);
    scs_dump->add_option("--out", scs_out);
    scs_dump->add_option("--limit", scs_limit, "emit only the first N Gaussians");

    // skeleton dump|validate
    auto* skel = app.add_subcommand("skeleton", "skeleton definition");
    skel->require_subcommand(1);
    auto* skel_dump = skel->add_subcommand("dump", "emit the default skeleton as JSON");
    auto* skel_validate = skel->add_subcommand("validate", "check a skeleton JSON file");
    std::string skel_out, skel_file;
    skel_dump->add_option("--out", skel_out);
    skel_validate->add_option("file", skel_file)->required();

    // export
    auto* exp = app.add_subcommand("export", "export a model's canonical cloud");
    std::string exp_ckpt, exp_ply;
    exp->add_option("--checkpoint", exp_ckpt)->required();
    exp->add_option("--ply", exp_ply, "ASCII PLY output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (threads > 0) set_num_threads(threads);

        if (*gen) {
            DataConfig config = gen_config.empty() ? DataConfig{} : data_config_from_json(read_text_file(gen_config));
            for (const auto& s : gen_sets) apply_override(config, s);
            validate(config);
            const OracleScene scene = generate_scene(config);
            const DatasetManifest manifest = render_dataset(scene, gen_out);
            std::printf("wrote %zu records (%zu train, %zu novel-pose, %zu novel-view) to %s\n",
                        manifest.records.size(), manifest.split(Split::train).size(),
                        manifest.split(Split::novel_pose).size(), manifest.split(Split::novel_view).size(),
                        gen_out.c_str());
            std::printf("self-contact frames: %.1f%%\n", 100.0 * self_contact_fraction(scene.skeleton, scene.poses));
        } else if (*train) {
            const Dataset dataset = load_dataset(train_data);
            const fs::path ckpt = fs::path(train_out) / kCheckpointName;
            RunConfig config;
            TensorFile resume_file;
            if (train_resume) {
                resume_file = read_tensor_file(ckpt.string());
                config = run_config_from_json(json::parse(resume_file.metadata).at("config").dump());
                for (const auto& s : train_sets) apply_override(config, s);
            } else {
                config = resolve_run_config(train_config, train_sets, train_ablations);
            }
            if (train_det) config.deterministic = true;
            if (threads > 0) config.threads = threads;
            if (train_iters >= 0) config.iterations = train_iters;
            validate(config);
            Trainer trainer(config, dataset, train_out);
            if (train_resume) trainer.restore(resume_file);
            trainer.on_log = [&](const IterationLog& log) {
                if ((log.iteration + 1) % config.log_every == 0) {
                    std::printf("it %5d  loss %.5f  rgb %.5f  con %.6f  omega %.3f  psnr %.2f  N %zu\n",
                                log.iteration + 1, log.total, log.terms.rgb, log.terms.consistency, log.omega,
                                log.psnr, log.gaussians);
                    std::fflush(stdout);
                }
            };
            trainer.train();
            std::printf("checkpoint: %s\n", ckpt.string().c_str());
        } else if (*eval) {
            const Dataset dataset = load_dataset(eval_data);
            const Split split = split_from_string(eval_split);
            if (eval_oracle == !eval_ckpt.empty()) throw ValidationError("eval needs exactly one of --checkpoint, --oracle");
            const EvalReport report =
                eval_oracle ? evaluate_oracle(dataset, split) : evaluate(load_model(eval_ckpt), dataset, split);
            std::cout << report.table();
            if (!eval_csv.empty()) write_text_file(eval_csv, report.csv());
        } else if (*rend) {
            const HandModel<float> model = model_or_init(rend_ckpt);
            const Pose pose = pose_or_rest(rend_pose);
            const Camera camera = camera_from_json(read_text_file(rend_camera));
            const Image<float> image = rend_lbs ? render_lbs(model, pose, camera, RenderSettings{}).color
                                                : forward(model, pose, camera, RenderSettings{}).output.color;
            write_image(rend_out, image);
        } else if (*bench) {
            if (bench_w <= 0 || bench_h <= 0 || bench_count < 0 || bench_repeats <= 0) {
                throw ValidationError("bench sizes must be positive");
            }
            DataConfig dc;
            dc.width = bench_w;
            dc.height = bench_h;
            dc.gaussians = std::max(bench_count, 1);
            const OracleScene oracle = generate_scene(dc);
            const Camera& camera = oracle.cameras.front();
            SplatScene<float> scene;
            if (!bench_ckpt.empty()) {
                scene = forward(load_model(bench_ckpt), Pose{}, camera, RenderSettings{}).scene;
            } else if (bench_count == 0) {
                scene.means.resize(0, 3);
                scene.covariances.resize(0, 9);
                scene.colors.resize(0, 3);
                scene.opacities.resize(0, 1);
            } else {
                scene = pose_oracle(oracle, Pose{});
            }
            const BenchReport r = bench_render(scene, camera, bench_repeats, threads > 0 ? threads : num_threads());
            std::printf("%d x %d, %zu Gaussians\n", r.width, r.height, r.gaussians);
            std::printf("  1 thread    %9.3f ms/frame\n", r.ms_single);
            if (r.threads > 1) std::printf("  %d threads  %9.3f ms/frame\n", r.threads, r.ms_multi);
            std::printf("  overhead    %9.3f ms/frame (empty scene)\n", r.overhead_ms);
        } else if (*scs_dump) {
            const HandModel<float> model = model_or_init(scs_ckpt);
            const Pose pose = pose_or_rest(scs_pose);
            Camera camera = Camera::look_at(Vec3d(0, 0.1, 0.5), Vec3d(0, 0.1, 0), Vec3d(0, 1, 0), 64, 8, 8);
            const auto st = forward(model, pose, camera, RenderSettings{});
            json out;
            json bones = json::array();
            for (std::size_t b = 0; b < st.basis.size(); ++b) {
                const auto e = static_cast<Eigen::Index>(b);
                bones.push_back({{"kind", st.basis.source[b] == BoneSource::static_bone ? "static" : "dynamic"},
                                 {"index", st.basis.source_index[b]},
                                 {"start", {st.basis.start(e, 0), st.basis.start(e, 1), st.basis.start(e, 2)}},
                                 {"end", {st.basis.end(e, 0), st.basis.end(e, 1), st.basis.end(e, 2)}}});
            }
            out["bones"] = bones;
            out["tau"] = model.config.tau;
            json rows = json::array();
            const Eigen::Index n = scs_limit >= 0 ? std::min<Eigen::Index>(scs_limit, st.coords.rows()) : st.coords.rows();
            for (Eigen::Index i = 0; i < n; ++i) {
                json row = json::array();
                for (Eigen::Index c = 0; c < st.coords.cols(); ++c) row.push_back(st.coords(i, c));
                rows.push_back({{"position", {st.x_lbs(i, 0), st.x_lbs(i, 1), st.x_lbs(i, 2)}}, {"P", row}});
            }
            out["gaussians"] = rows;
            emit(out.dump(1), scs_out);
        } else if (*skel_dump) {
            emit(skeleton_to_json(SkeletonModel::default_hand()), skel_out);
        } else if (*skel_validate) {
            const SkeletonModel model = skeleton_from_json(read_text_file(skel_file));
            model.validate();
            std::printf("ok: %d joints, %zu static bones\n", model.joint_count(), build_static_topology(model).size());
        } else if (*exp) {
            write_ply(load_model(exp_ckpt).cloud, exp_ply);
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
