#pragma once

#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "bitkit/checkpoint.hpp"
#include "bitkit/data.hpp"
#include "bitkit/metrics.hpp"
#include "bitkit/optim.hpp"

namespace bitkit {

// Full trace of one training run: per-step (step, lr, loss), per-eval
// accuracy, final metrics, and a config echo sufficient to reproduce the
// run bit-for-bit. Serialized as line-delimited records with stable key
// order.
struct StepRecord {
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    uint64_t batch_hash = 0;
};

struct EvalRecord {
    int64_t step = 0;
    double top1 = 0.0;
    std::optional<double> top5;
};

struct RunRecord {
    nlohmann::ordered_json config;  // includes the rng seed
    uint64_t seed = 0;
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    nlohmann::ordered_json final_metrics;

    std::string to_jsonl() const;
};

MetricRow evaluate_model(const ResNet<float>& net, const Params<float>& params,
                         const Dataset& dataset, const AugPolicy& policy, int64_t batch,
                         ForwardOptions<float> fwd = {});

struct TrainLoopOptions {
    OptimizerConfig optim;
    int64_t total_steps = 0;
    AugPolicy policy;
    std::optional<double> mixup_alpha;
    double dropout_rate = 0.0;
    uint64_t seed = 0;
    const Dataset* eval_ds = nullptr;
    std::vector<int64_t> eval_at;  // evaluate after these step counts
    int64_t eval_batch = 128;
    ForwardOptions<float> fwd;
    int64_t log_every = 1;
    std::function<void(int64_t step, const Params<float>&)> on_step;
};

// Shared step loop: shuffled epochs, per-step aug/mixup/dropout substreams,
// SGD with the configured schedule. Fills step/eval entries of `record` and
// returns the trained parameters.
Params<float> train_loop(const ResNet<float>& net, Params<float> params, const Dataset& train_ds,
                         const TrainLoopOptions& opts, RunRecord& record);

struct PretrainOptions {
    AugPolicy policy;        // defaults to native-resolution, flip+crop
    bool policy_set = false;
    int64_t epochs = 0;      // required: schedule length in epochs
    int64_t log_every = 1;
};

struct PretrainResult {
    ModelConfig config;
    Params<float> params;
    RunRecord record;
};

// Upstream training: epoch-milestone decay with warmup and weight decay
// toward zero, per the optimizer config. Aborts with a diagnostic if the
// loss goes non-finite.
PretrainResult pretrain(const ModelConfig& model_config, const OptimizerConfig& optimizer_config,
                        const Dataset& dataset, uint64_t seed, const PretrainOptions& opts);

// Backbone copied verbatim, classifier head zero-initialized for the new
// class count.
Params<float> reinit_head(const ModelConfig& config, const Params<float>& pretrained,
                          int64_t new_num_classes);

enum class InitMode { FromCheckpoint, Random };

struct FinetuneOverrides {
    std::optional<int64_t> shots;             // balanced subsample of the train split
    std::optional<int64_t> batch_size;        // desk knob; lr scales by batch/512
    std::optional<AugPolicy> aug_policy;      // desk knob; overrides plan resolution
    std::optional<int64_t> total_steps;       // test knob; overrides plan schedule
    bool allow_flip = true;
    bool allow_crop = true;
    bool largest_model_mode = false;
    InitMode init_mode = InitMode::FromCheckpoint;
    uint64_t seed = 0;
    int64_t eval_batch = 128;
    int64_t log_every = 1;
};

struct FinetuneResult {
    ModelConfig config;
    Params<float> params;
    HyperRulePlan plan;
    RunRecord record;
    MetricRow final_eval;
};

// BiT-style fine-tuning: derives the TaskSpec from the dataset, plans with
// the HyperRule, re-initializes the head, and trains with no weight decay,
// MixUp per plan, and the plan's decay schedule; evaluates on the held-out
// split at each decay milestone and at the end.
FinetuneResult finetune(const LoadedModel& checkpoint, const Dataset& task_dataset,
                        const FinetuneOverrides& overrides);

}  // namespace bitkit
