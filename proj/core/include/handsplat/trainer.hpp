#pragma once

#include "handsplat/config.hpp"
#include "handsplat/data.hpp"
#include "handsplat/losses.hpp"
#include "handsplat/model.hpp"
#include "handsplat/tensor_io.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace handsplat {

struct IterationLog {
    int iteration = 0;
    int frame = 0;
    int camera = 0;
    LossTerms terms;
    double total = 0.0;
    double omega = 0.0;
    double psnr = 0.0;
    std::size_t gaussians = 0;
};

// Single-logical-thread optimizer loop. Frame sampling uses a counter-based
// RNG keyed by (seed, iteration), so a resumed run continues identically.
class Trainer {
public:
    // `out_dir` may be empty (no files written).
    Trainer(RunConfig config, const Dataset& dataset, std::string out_dir = {});

    // Runs `iterations` more steps; -1 continues up to config.iterations.
    void train(int iterations = -1);
    // Runs a single iteration and returns its log.
    IterationLog step();

    int iteration() const { return iteration_; }
    const HandModel<float>& model() const { return model_; }
    HandModel<float>& model() { return model_; }
    const RunConfig& config() const { return config_; }
    const std::vector<IterationLog>& history() const { return history_; }

    TensorFile checkpoint() const;
    void save_checkpoint(const std::string& path) const;
    void restore(const TensorFile& file);

    std::function<void(const IterationLog&)> on_log;

private:
    struct Sample {
        int frame;
        int camera;
        const FrameRecord* record;
    };
    Sample sample(int iteration) const;
    const Image<float>& cached_image(const FrameRecord& record, bool mask);
    void refresh_neighbors();
    void optimizer_step();
    void densify();
    void reset_grads();

    RunConfig config_;
    const Dataset& dataset_;
    std::string out_dir_;
    HandModel<float> model_;
    ModelGrads<float> grads_;
    ConsistencyMemory<float> memory_;
    std::vector<const FrameRecord*> train_records_;
    std::map<std::string, Image<float>> image_cache_;
    std::vector<std::vector<std::int64_t>> neighbors_;
    std::map<std::string, AdamState<float>> adam_;
    std::vector<double> densify_accum_;
    std::vector<double> densify_count_;
    std::vector<IterationLog> history_;
    int iteration_ = 0;
    int last_frame_ = -1;
    int last_camera_ = -1;
};

// Model <-> named tensors (shared by checkpoints and the export tools).
TensorFile model_to_tensors(const HandModel<float>& model);
void model_from_tensors(HandModel<float>& model, const TensorFile& file);

// Rebuilds a model from a checkpoint (its embedded config is used).
HandModel<float> load_model(const std::string& checkpoint_path, RunConfig* config = nullptr);

struct EvalRow {
    int frame = 0;
    int camera = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    Split split = Split::train;
    std::vector<EvalRow> rows;
    std::vector<std::string> missing;  // records whose files could not be read
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    std::string csv() const;
    std::string table() const;
};

EvalReport evaluate(const HandModel<float>& model, const Dataset& dataset, Split split);
// Re-renders the dataset's own oracle scene; bounded only by 8-bit quantization.
EvalReport evaluate_oracle(const Dataset& dataset, Split split);

struct BenchReport {
    int width = 0;
    int height = 0;
    std::size_t gaussians = 0;
    int threads = 1;
    double ms_single = 0.0;
    double ms_multi = 0.0;
    double overhead_ms = 0.0;  // empty-scene frame time
};

BenchReport bench_render(const SplatScene<float>& scene, const Camera& camera, int repeats, int threads);

}  // namespace handsplat
