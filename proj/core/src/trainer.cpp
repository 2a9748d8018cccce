#include "handsplat/trainer.hpp"

#include "handsplat/knn.hpp"
#include "handsplat/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace handsplat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 iteration_rng(std::uint64_t seed, int iteration, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

MatX<double> to_tensor(const MatX<float>& m) { return m.cast<double>(); }

MatX<double> to_tensor(std::span<const float> values) {
    MatX<double> out(1, static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) out(0, static_cast<Eigen::Index>(i)) = values[i];
    return out;
}

void from_tensor(const MatX<double>& src, MatX<float>& dst, const std::string& name) {
    if (dst.cols() != src.cols()) throw ValidationError("checkpoint tensor '" + name + "' has the wrong width");
    dst = src.cast<float>();
}

void from_tensor(const MatX<double>& src, std::span<float> dst, const std::string& name) {
    if (static_cast<std::size_t>(src.size()) != dst.size()) {
        throw ValidationError("checkpoint tensor '" + name + "' has the wrong size");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(src.data()[i]);
}

std::vector<std::pair<std::string, Mlp<float>*>> networks(HandModel<float>& model) {
    return {{"geo", &model.nets.geo},
            {"app", &model.nets.app},
            {"fusion", &model.nets.fusion},
            {"generator", &model.generator.net()},
            {"phi", &model.phi}};
}

std::vector<std::pair<std::string, MatX<float>*>> cloud_tensors(GaussianCloud<float>& cloud) {
    return {{"position", &cloud.position}, {"rotation", &cloud.rotation},   {"log_scale", &cloud.log_scale},
            {"color", &cloud.color},       {"opacity", &cloud.opacity},     {"embed_geo", &cloud.embed_geo},
            {"embed_app", &cloud.embed_app}, {"skin_weights", &cloud.skin_weights}};
}

double image_psnr(const Image<float>& a, const Image<float>& b) { return psnr(a, b); }

}  // namespace

TensorFile model_to_tensors(const HandModel<float>& model) {
    auto& m = const_cast<HandModel<float>&>(model);
    TensorFile file;
    for (const auto& [name, tensor] : cloud_tensors(m.cloud)) file.tensors["cloud." + name] = to_tensor(*tensor);
    for (const auto& [net_name, net] : networks(m)) {
        for (const auto& [pname, values] : std::as_const(*net).parameters()) {
            file.tensors["net." + net_name + "." + pname] = to_tensor(values);
        }
    }
    return file;
}

void model_from_tensors(HandModel<float>& model, const TensorFile& file) {
    const Eigen::Index n = file.at("cloud.position").rows();
    model.cloud.resize(static_cast<std::size_t>(n), model.config.embedding_dim, model.skeleton.joint_count());
    for (const auto& [name, tensor] : cloud_tensors(model.cloud)) {
        const auto& src = file.at("cloud." + name);
        if (src.rows() != n) throw ValidationError("checkpoint tensor 'cloud." + name + "' has the wrong row count");
        from_tensor(src, *tensor, "cloud." + name);
    }
    for (const auto& [net_name, net] : networks(model)) {
        for (auto& [pname, values] : net->parameters()) from_tensor(file.at("net." + net_name + "." + pname), values, pname);
    }
    model.cloud.validate();
}

HandModel<float> load_model(const std::string& checkpoint_path, RunConfig* config_out) {
    const TensorFile file = read_tensor_file(checkpoint_path);
    json meta;
    try {
        meta = json::parse(file.metadata);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint metadata: ") + e.what());
    }
    const RunConfig config = run_config_from_json(meta.at("config").dump());
    HandModel<float> model(SkeletonModel::default_hand(), config.model, config.seed);
    model_from_tensors(model, file);
    if (config_out) *config_out = config;
    return model;
}

Trainer::Trainer(RunConfig config, const Dataset& dataset, std::string out_dir)
    : config_(std::move(config)),
      dataset_(dataset),
      out_dir_(std::move(out_dir)),
      model_(SkeletonModel::default_hand(), config_.model, config_.seed) {
    validate(config_);
    set_deterministic(config_.deterministic);
    if (config_.threads > 0) set_num_threads(config_.threads);
    grads_ = ModelGrads<float>(model_);
    memory_.decay = config_.ema_decay;
    train_records_ = dataset_.manifest.split(Split::train);
    if (train_records_.empty()) throw ValidationError("dataset has no training records");
    densify_accum_.assign(model_.cloud.size(), 0.0);
    densify_count_.assign(model_.cloud.size(), 0.0);
    refresh_neighbors();
    if (!out_dir_.empty()) {
        fs::create_directories(out_dir_);
        write_text_file((fs::path(out_dir_) / "config.json").string(), to_json(config_));
        std::ofstream csv(fs::path(out_dir_) / "metrics.csv");
        csv << "iteration,frame,camera,l_rgb,l_mask,l_ssim,l_con,l_smooth,omega,total,psnr,gaussians\n";
    }
}

Trainer::Sample Trainer::sample(int iteration) const {
    auto rng = iteration_rng(config_.seed, iteration, 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (last_frame_ >= 0 && unit(rng) < config_.same_pose_prob) {
        std::vector<const FrameRecord*> same;
        for (const auto* r : train_records_) {
            if (r->frame == last_frame_ && r->camera != last_camera_) same.push_back(r);
        }
        if (!same.empty()) {
            const auto* r = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
            return {r->frame, r->camera, r};
        }
    }
    const auto* r = train_records_[std::uniform_int_distribution<std::size_t>(0, train_records_.size() - 1)(rng)];
    return {r->frame, r->camera, r};
}

const Image<float>& Trainer::cached_image(const FrameRecord& record, bool mask) {
    const std::string& key = mask ? record.mask : record.image;
    auto it = image_cache_.find(key);
    if (it != image_cache_.end()) return it->second;
    Image<float> img = mask ? dataset_.mask(record) : dataset_.image(record);
    return image_cache_.emplace(key, std::move(img)).first->second;
}

void Trainer::refresh_neighbors() {
    const int n = static_cast<int>(model_.cloud.size());
    const int k = std::min(config_.smooth_k, n - 1);
    neighbors_ = k > 0 ? self_knn(model_.cloud.position.cast<double>(), k)
                       : std::vector<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
}

void Trainer::reset_grads() {
    if (grads_.cloud.position.rows() != model_.cloud.position.rows()) {
        grads_ = ModelGrads<float>(model_);
    } else {
        grads_.zero();
    }
}

IterationLog Trainer::step() {
    reset_grads();
    const Sample s = sample(iteration_);
    const Pose& pose = dataset_.poses[static_cast<std::size_t>(s.frame)];
    const Camera& camera = dataset_.manifest.cameras[static_cast<std::size_t>(s.camera)];
    const Image<float>& gt = cached_image(*s.record, false);
    const Image<float>& gt_mask = cached_image(*s.record, true);

    const ForwardState<float> st = forward(model_, pose, camera, RenderSettings{});

    IterationLog log;
    log.iteration = iteration_;
    log.frame = s.frame;
    log.camera = s.camera;

    Cotangents<float> cot;
    cot.color = Image<float>(camera.width, camera.height, 3);
    cot.alpha = Image<float>(camera.width, camera.height, 1);
    log.terms.rgb = l1_loss(st.output.color, gt, &cot.color, 1.0f);
    log.terms.mask = l1_loss(st.output.alpha, gt_mask, &cot.alpha, float(config_.lambda_mask));
    log.terms.ssim = ssim_loss(st.output.color, gt, &cot.color, float(config_.lambda_ssim));

    const VecX<float> theta = pose.flat().cast<float>();
    if (!config_.model.ablations.no_inter_pose) {
        const MatX<float> bundles = attribute_bundles(st);
        if (memory_.seeded() && memory_.bundles.cols() == bundles.cols()) {
            const float omega = pose_weight(model_.phi, theta, memory_.previous_pose, float(config_.delta));
            cot.bundles = MatX<float>::Zero(bundles.rows(), bundles.cols());
            const auto res = consistency_loss(bundles, memory_, omega, &cot.bundles, float(config_.lambda_con));
            log.terms.consistency = res.loss;
            log.omega = omega;
            if (!config_.freeze_phi) {
                pose_weight(model_.phi, theta, memory_.previous_pose, float(config_.delta),
                            float(config_.lambda_con) * res.raw, &grads_.phi);
            }
            update_memory(memory_, bundles, res.correspondence, theta);
        } else {
            memory_.seed(bundles, theta);
            log.omega = 1.0;
        }
    }

    cot.embed_geo = MatX<float>::Zero(model_.cloud.embed_geo.rows(), model_.cloud.embed_geo.cols());
    if (!config_.model.ablations.no_embeddings) {
        log.terms.smoothness = smoothness_loss(model_.cloud.embed_geo, neighbors_, &cot.embed_geo,
                                               float(config_.lambda_smooth));
    }

    LossWeights weights;
    weights.mask = config_.lambda_mask;
    weights.ssim = config_.lambda_ssim;
    weights.consistency = config_.lambda_con;
    weights.smoothness = config_.lambda_smooth;
    log.total = total_loss(log.terms, weights);
    log.psnr = image_psnr(st.output.color, gt);

    backward(model_, st, cot, grads_);

    // Screen-space gradient statistics, scaled to a per-pixel-sum loss so the
    // threshold does not depend on resolution.
    const double pixels = double(camera.width) * camera.height;
    for (std::size_t i = 0; i < densify_accum_.size(); ++i) {
        if (!st.cache.projected.visible[i]) continue;
        densify_accum_[i] += grads_.mean2d_norm[static_cast<Eigen::Index>(i)] * pixels;
        densify_count_[i] += 1.0;
    }

    optimizer_step();
    model_.cloud.normalize_rotations();
    last_frame_ = s.frame;
    last_camera_ = s.camera;
    ++iteration_;

    if (iteration_ >= config_.densify_from && iteration_ <= config_.densify_until &&
        iteration_ % config_.densify_every == 0) {
        densify();
    }
    log.gaussians = model_.cloud.size();
    history_.push_back(log);

    if (!out_dir_.empty()) {
        if (iteration_ % config_.log_every == 0 || iteration_ == 1) {
            std::ofstream csv(fs::path(out_dir_) / "metrics.csv", std::ios::app);
            csv << std::setprecision(8) << log.iteration << ',' << log.frame << ',' << log.camera << ','
                << log.terms.rgb << ',' << log.terms.mask << ',' << log.terms.ssim << ',' << log.terms.consistency
                << ',' << log.terms.smoothness << ',' << log.omega << ',' << log.total << ',' << log.psnr << ','
                << log.gaussians << '\n';
        }
        if (config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0) {
            save_checkpoint((fs::path(out_dir_) / "checkpoint.hsck").string());
        }
    }
    if (on_log) on_log(log);
    return log;
}

void Trainer::optimizer_step() {
    auto run = [&](const std::string& name, std::span<float> params, std::span<const float> grads, double lr) {
        if (lr <= 0.0) return;
        AdamConfig cfg;
        cfg.lr = lr;
        adam_step(params, grads, adam_[name], cfg);
    };
    auto mat = [](MatX<float>& m) { return std::span<float>(m.data(), static_cast<std::size_t>(m.size())); };
    auto cmat = [](const MatX<float>& m) { return std::span<const float>(m.data(), static_cast<std::size_t>(m.size())); };

    auto& c = model_.cloud;
    auto& g = grads_.cloud;
    run("cloud.position", mat(c.position), cmat(g.position), config_.lr_position);
    run("cloud.rotation", mat(c.rotation), cmat(g.rotation), config_.lr_rotation);
    run("cloud.log_scale", mat(c.log_scale), cmat(g.log_scale), config_.lr_scale);
    run("cloud.color", mat(c.color), cmat(g.color), config_.lr_color);
    run("cloud.opacity", mat(c.opacity), cmat(g.opacity), config_.lr_opacity);
    if (!config_.model.ablations.no_embeddings) {
        run("cloud.embed_geo", mat(c.embed_geo), cmat(g.embed_geo), config_.lr_embedding);
        run("cloud.embed_app", mat(c.embed_app), cmat(g.embed_app), config_.lr_embedding);
    }
    c.color = c.color.cwiseMax(0.0f).cwiseMin(1.0f);

    std::vector<std::pair<std::string, MlpGrads<float>*>> net_grads = {{"geo", &grads_.nets.geo},
                                                                        {"app", &grads_.nets.app},
                                                                        {"fusion", &grads_.nets.fusion},
                                                                        {"generator", &grads_.generator},
                                                                        {"phi", &grads_.phi}};
    const auto nets = networks(model_);
    for (std::size_t k = 0; k < nets.size(); ++k) {
        const std::string& name = nets[k].first;
        if (name == "generator" && !model_.uses_generator()) continue;
        if (name == "phi" && (config_.freeze_phi || config_.model.ablations.no_inter_pose)) continue;
        auto params = nets[k].second->parameters();
        auto grads = net_grads[k].second->spans();
        for (std::size_t p = 0; p < params.size(); ++p) {
            run("net." + name + "." + params[p].first, params[p].second,
                std::span<const float>(grads[p].data(), grads[p].size()), config_.lr_network);
        }
    }
}

void Trainer::densify() {
    DensifyConfig dc;
    dc.grad_threshold = config_.densify_grad_threshold;
    dc.scale_threshold = config_.densify_scale_threshold;
    dc.min_opacity = config_.prune_opacity;
    dc.max_count = static_cast<std::size_t>(config_.max_gaussians);
    std::vector<std::int64_t> source;
    DensifyStats stats;
    auto rng_seed = iteration_rng(config_.seed, iteration_, 2)();
    model_.cloud = densify_and_prune(model_.cloud, densify_accum_, densify_count_, dc, rng_seed, source, stats);
    for (const auto& [name, tensor] : cloud_tensors(model_.cloud)) {
        auto it = adam_.find("cloud." + name);
        if (it != adam_.end()) it->second.remap_rows(source, static_cast<std::size_t>(tensor->cols()));
    }
    densify_accum_.assign(model_.cloud.size(), 0.0);
    densify_count_.assign(model_.cloud.size(), 0.0);
    grads_ = ModelGrads<float>(model_);
    refresh_neighbors();
}

void Trainer::train(int iterations) {
    const int target = iterations < 0 ? config_.iterations : iteration_ + iterations;
    while (iteration_ < target) step();
    if (!out_dir_.empty()) save_checkpoint((fs::path(out_dir_) / "checkpoint.hsck").string());
}

TensorFile Trainer::checkpoint() const {
    TensorFile file = model_to_tensors(model_);
    json meta;
    meta["config"] = json::parse(to_json(config_));
    meta["iteration"] = iteration_;
    meta["last_frame"] = last_frame_;
    meta["last_camera"] = last_camera_;
    json steps = json::object();
    for (const auto& [name, state] : adam_) {
        steps[name] = {{"step", state.step}, {"skipped", state.skipped}};
        file.tensors["adam." + name + ".m"] = to_tensor(std::span<const float>(state.m));
        file.tensors["adam." + name + ".v"] = to_tensor(std::span<const float>(state.v));
    }
    meta["adam"] = steps;
    file.metadata = meta.dump();
    if (memory_.seeded()) {
        file.tensors["memory.bundles"] = to_tensor(memory_.bundles);
        file.tensors["memory.previous_pose"] = to_tensor(std::span<const float>(memory_.previous_pose.data(),
                                                                                 static_cast<std::size_t>(memory_.previous_pose.size())));
    }
    MatX<double> stats(2, static_cast<Eigen::Index>(densify_accum_.size()));
    for (std::size_t i = 0; i < densify_accum_.size(); ++i) {
        stats(0, static_cast<Eigen::Index>(i)) = densify_accum_[i];
        stats(1, static_cast<Eigen::Index>(i)) = densify_count_[i];
    }
    file.tensors["densify.stats"] = stats;
    // Neighbor lists are refreshed only at densification, so they are state.
    const std::size_t k = neighbors_.empty() ? 0 : neighbors_.front().size();
    MatX<double> nb(static_cast<Eigen::Index>(neighbors_.size()), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < neighbors_.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            nb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(neighbors_[i][j]);
        }
    }
    file.tensors["smooth.neighbors"] = nb;
    return file;
}

void Trainer::save_checkpoint(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    write_tensor_file(tmp, checkpoint());
    fs::rename(tmp, path);
}

void Trainer::restore(const TensorFile& file) {
    json meta;
    try {
        meta = json::parse(file.metadata);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint metadata: ") + e.what());
    }
    const RunConfig saved = run_config_from_json(meta.at("config").dump());
    const ModelConfig& a = saved.model;
    const ModelConfig& b = config_.model;
    if (a.embedding_dim != b.embedding_dim || a.hidden_width != b.hidden_width || a.hidden_layers != b.hidden_layers ||
        a.dynamic_bones != b.dynamic_bones || a.phi_hidden != b.phi_hidden || a.phi_out != b.phi_out) {
        throw ValidationError("checkpoint network shapes do not match the run configuration");
    }
    model_from_tensors(model_, file);
    iteration_ = meta.at("iteration").get<int>();
    last_frame_ = meta.at("last_frame").get<int>();
    last_camera_ = meta.at("last_camera").get<int>();
    adam_.clear();
    for (const auto& [name, info] : meta.at("adam").items()) {
        AdamState<float> state;
        const auto& m = file.at("adam." + name + ".m");
        const auto& v = file.at("adam." + name + ".v");
        state.m.resize(static_cast<std::size_t>(m.size()));
        state.v.resize(static_cast<std::size_t>(v.size()));
        for (Eigen::Index i = 0; i < m.size(); ++i) state.m[static_cast<std::size_t>(i)] = float(m.data()[i]);
        for (Eigen::Index i = 0; i < v.size(); ++i) state.v[static_cast<std::size_t>(i)] = float(v.data()[i]);
        state.step = info.at("step").get<std::int64_t>();
        state.skipped = info.at("skipped").get<std::int64_t>();
        adam_[name] = std::move(state);
    }
    memory_ = ConsistencyMemory<float>{};
    memory_.decay = config_.ema_decay;
    if (file.contains("memory.bundles")) {
        memory_.bundles = file.at("memory.bundles").cast<float>();
        const auto& p = file.at("memory.previous_pose");
        memory_.previous_pose = Eigen::Map<const VecX<double>>(p.data(), p.size()).cast<float>();
    }
    const auto& stats = file.at("densify.stats");
    densify_accum_.assign(model_.cloud.size(), 0.0);
    densify_count_.assign(model_.cloud.size(), 0.0);
    if (static_cast<std::size_t>(stats.cols()) == model_.cloud.size()) {
        for (std::size_t i = 0; i < densify_accum_.size(); ++i) {
            densify_accum_[i] = stats(0, static_cast<Eigen::Index>(i));
            densify_count_[i] = stats(1, static_cast<Eigen::Index>(i));
        }
    }
    grads_ = ModelGrads<float>(model_);
    const MatX<double>* nb = file.contains("smooth.neighbors") ? &file.at("smooth.neighbors") : nullptr;
    if (nb && static_cast<std::size_t>(nb->rows()) == model_.cloud.size()) {
        neighbors_.assign(model_.cloud.size(), {});
        for (Eigen::Index i = 0; i < nb->rows(); ++i) {
            for (Eigen::Index j = 0; j < nb->cols(); ++j) {
                neighbors_[static_cast<std::size_t>(i)].push_back(static_cast<std::int64_t>((*nb)(i, j)));
            }
        }
    } else {
        refresh_neighbors();
    }
}

std::string EvalReport::csv() const {
    std::ostringstream out;
    out << "frame,camera,split,psnr,ssim\n" << std::setprecision(8);
    for (const auto& r : rows) out << r.frame << ',' << r.camera << ',' << to_string(split) << ',' << r.psnr << ',' << r.ssim << '\n';
    return out.str();
}

std::string EvalReport::table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << "split " << to_string(split) << ": " << rows.size() << " frames";
    if (!missing.empty()) out << " (" << missing.size() << " missing)";
    out << "\n  PSNR " << mean_psnr << " dB\n  SSIM " << mean_ssim << "\n";
    for (const auto& m : missing) out << "  missing: " << m << "\n";
    return out.str();
}

namespace {

template <typename RenderFn>
EvalReport evaluate_with(const Dataset& dataset, Split split, RenderFn&& render_fn) {
    EvalReport report;
    report.split = split;
    for (const FrameRecord* rec : dataset.manifest.split(split)) {
        Image<float> gt;
        try {
            gt = dataset.image(*rec);
        } catch (const std::exception&) {
            report.missing.push_back(rec->image);
            continue;
        }
        const Image<float> pred = render_fn(*rec);
        EvalRow row;
        row.frame = rec->frame;
        row.camera = rec->camera;
        row.psnr = psnr(pred, gt);
        row.ssim = ssim(pred, gt);
        report.rows.push_back(row);
    }
    for (const auto& r : report.rows) {
        report.mean_psnr += r.psnr;
        report.mean_ssim += r.ssim;
    }
    if (!report.rows.empty()) {
        report.mean_psnr /= static_cast<double>(report.rows.size());
        report.mean_ssim /= static_cast<double>(report.rows.size());
    }
    return report;
}

}  // namespace

EvalReport evaluate(const HandModel<float>& model, const Dataset& dataset, Split split) {
    return evaluate_with(dataset, split, [&](const FrameRecord& rec) {
        const auto st = forward(model, dataset.poses[static_cast<std::size_t>(rec.frame)],
                                dataset.manifest.cameras[static_cast<std::size_t>(rec.camera)], RenderSettings{});
        return st.output.color;
    });
}

EvalReport evaluate_oracle(const Dataset& dataset, Split split) {
    const OracleScene scene = generate_scene(dataset.manifest.config);
    return evaluate_with(dataset, split, [&](const FrameRecord& rec) {
        return render_oracle(scene, dataset.poses[static_cast<std::size_t>(rec.frame)],
                             dataset.manifest.cameras[static_cast<std::size_t>(rec.camera)])
            .color;
    });
}

BenchReport bench_render(const SplatScene<float>& scene, const Camera& camera, int repeats, int threads) {
    using clock = std::chrono::steady_clock;
    BenchReport report;
    report.width = camera.width;
    report.height = camera.height;
    report.gaussians = scene.size();
    report.threads = threads;
    repeats = std::max(1, repeats);
    const int saved = num_threads();
    auto time = [&](const SplatScene<float>& s) {
        render(s, camera, RenderSettings{});  // warm-up
        const auto t0 = clock::now();
        for (int r = 0; r < repeats; ++r) render(s, camera, RenderSettings{});
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count() / repeats;
    };
    set_num_threads(1);
    report.ms_single = time(scene);
    SplatScene<float> empty;
    empty.means.resize(0, 3);
    empty.covariances.resize(0, 9);
    empty.colors.resize(0, 3);
    empty.opacities.resize(0, 1);
    report.overhead_ms = time(empty);
    set_num_threads(threads);
    report.ms_multi = time(scene);
    set_num_threads(saved);
    return report;
}

}  // namespace handsplat
