#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bitkit/transfer.hpp"

namespace bitkit {

// Random-search space over fine-tuning hyperparameters. Defaults are the
// published search ranges; desk-scale runs swap in smaller step counts and
// resolutions as data.
struct SearchSpace {
    double lr_lo = 1e-4, lr_hi = 1e-1;           // log-uniform
    std::vector<int64_t> steps = {500, 1000, 2000, 4000, 8000, 16000};
    double dropout_lo = 0.0, dropout_hi = 0.7;   // uniform
    double wd_lo = 1e-6, wd_hi = 1e-1;           // log-uniform, decay toward init
    std::vector<std::optional<double>> mixup_alphas = {std::nullopt, 0.05, 0.1, 0.2, 0.4};
    std::vector<int64_t> resolutions = {64, 128, 192, 256, 320, 384};
};

struct TrialConfig {
    double lr = 0.0;
    int64_t steps = 0;
    double dropout = 0.0;
    double wd_to_init = 0.0;
    std::optional<double> mixup_alpha;
    int64_t resolution = 0;
};

// Independent draws per field with the stated distributions.
TrialConfig sample_config(const SearchSpace& space, Rng& rng);

nlohmann::ordered_json trial_config_to_json(const TrialConfig& c);

struct TrialResult {
    int64_t trial_index = -1;
    TrialConfig config;
    double val_top1 = 0.0;
    bool failed = false;
    std::string error;
    uint64_t seed = 0;
};

struct TrialOptions {
    int64_t batch_size = 32;
    int64_t eval_batch = 128;
    uint64_t seed = 0;
    bool flip = true;
};

// One fine-tuning trial from a frozen checkpoint: head re-initialized,
// weight decay toward the re-initialized weights, dropout on the pooled
// features, decay milestones at 30/60/90% of the sampled step count.
TrialResult run_trial(const LoadedModel& checkpoint, const Dataset& train_split,
                      const Dataset& val_split, const TrialConfig& config,
                      const TrialOptions& options);

struct SearchOptions {
    int64_t budget_trials = 20;
    uint64_t seed = 0;
    SearchSpace space;
    TrialOptions trial;
    int64_t train_count = 800;
    int64_t val_count = 200;
    bool retrain_on_union = false;
};

struct SearchResult {
    std::vector<TrialResult> trials;
    std::vector<double> best_so_far;  // running max of validation top-1
    int64_t best_index = -1;
    TrialConfig best_config;
    std::vector<int64_t> train_ids, val_ids;
    std::optional<double> union_retrain_train_top1;  // from optional final retrain
};

// Budgeted random search with validation-based selection. Test data never
// enters: the search only ever sees the task's train/val carve-out.
SearchResult run_search(const LoadedModel& checkpoint, const Dataset& task,
                        const SearchOptions& options);

// The HyperRule-default configuration expressed as a trial on the same
// desk settings, for search-vs-default comparisons.
TrialConfig hyperrule_default_trial(const Dataset& train_split, int64_t batch_size,
                                    int64_t resolution);

}  // namespace bitkit
