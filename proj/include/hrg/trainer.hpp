#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hrg/data.hpp"
#include "hrg/ikt.hpp"
#include "hrg/isc.hpp"
#include "hrg/metrics.hpp"
#include "hrg/temporal_encoder.hpp"

namespace hrg {

enum class ModuleOrder { IscIkt, IktIsc };

const char* module_order_name(ModuleOrder o);
ModuleOrder module_order_from_name(const std::string& name);

struct TrainConfig {
    int way = 5;
    int shot = 1;
    int query_count = 5;
    int frame_count = 8;
    int channels = 32;

    int epochs = 10;
    int episodes_per_epoch = 200;
    double learning_rate = 1e-3;
    std::vector<int> lr_milestones = {6};  // 1-based epoch indices
    double lr_decay = 0.1;
    uint64_t seed = 42;

    MaskStrategy mask_strategy = MaskStrategy::Adaptive;
    MetricKind metric = MetricKind::Otam;
    double kappa = 0.7;
    int prototype_count = 3;
    int bank_capacity = 50;
    double momentum = 0.99;
    double gamma = 0.1;
    double tau = 0.1;
    ModuleOrder module_order = ModuleOrder::IscIkt;
    bool disable_isc = false;
    bool disable_ikt = false;
    RetrievalWeighting retrieval_weighting = RetrievalWeighting::Softmax;

    int encoder_layers = 1;
    int encoder_heads = 2;
    int isc_heads = 2;
    int ikt_heads = 2;
    double pe_scale = 0.1;

    void validate() const;  // throws ConfigError outside documented ranges
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);  // unknown keys rejected

// A full run description: the training configuration plus where the data
// comes from. This is what config files hold and checkpoints echo.
struct RunConfig {
    TrainConfig train;
    enum class Source { Synthetic, Files };
    Source source = Source::Synthetic;
    SyntheticConfig synthetic;  // frame_count/channels mirror `train`
    std::string index_path;     // for Source::Files

    void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);  // unknown keys rejected

// Synthesizes or loads the dataset the run describes.
SplitDataset build_dataset(const RunConfig& cfg);

// All learnable state. Every module's parameters exist regardless of the
// ablation flags so a seed pins identical initializations across variants;
// disabled modules simply receive zero gradient.
struct Model {
    TemporalEncoderParams encoder;
    IscParams isc;
    IktParams ikt;
    Tensor prototypes;  // [M x C]

    std::vector<std::pair<std::string, Tensor>> named_params;

    static Model init(const TrainConfig& cfg);
    void zero_grad();
};

struct EpisodeForward {
    Tensor logits;          // [L x N]
    Tensor prototypes_hat;  // [M x C]; undefined when IKT is bypassed
};

EpisodeForward forward_episode(const Episode& ep, const Model& model,
                               const KnowledgeBank& bank, const TrainConfig& cfg);

struct AdamState {
    uint64_t step = 0;
    std::vector<std::vector<double>> m, v;  // aligned with named_params
};

// One optimizer step (beta = (0.9, 0.999), eps = 1e-8, bias-corrected)
// using whatever gradients the parameters currently hold; parameters
// without gradients step by exactly zero.
void adam_step(Model& model, AdamState& state, double lr);

struct Checkpoint {
    RunConfig config;
    Model model;
    KnowledgeBank bank;
    AdamState opt;
    std::string rng_state;
    uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct StepLog {
    uint64_t step;  // 1-based global step
    int epoch;      // 1-based
    int episode;    // 1-based within epoch
    double loss;
    double lr;
};

using StepCallback = std::function<void(const StepLog&)>;

// Episodic training; with `resume` the loop continues from its step, RNG
// state, bank, and optimizer moments.
Checkpoint train(const RunConfig& cfg, const SplitDataset& ds,
                 const StepCallback& on_step = {},
                 const Checkpoint* resume = nullptr);

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(tasks)
    int num_tasks = 0;
    std::vector<double> per_task;
    double wall_clock_ms = 0.0;
};

// Tasks are sampled from per-task generators seeded by (seed, index), so
// the report is identical for any thread count. The bank is copied and
// frozen internally; the caller's state is never touched.
EvalReport evaluate(const Model& model, const KnowledgeBank& bank,
                    const TrainConfig& cfg, const SplitDataset& ds, Split split,
                    int num_tasks, uint64_t seed, int threads = 1);

// Resolves evaluation worker count: HRG_THREADS caps hardware concurrency.
int eval_thread_count();

}  // namespace hrg
