#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bitkit/hyperrule.hpp"
#include "bitkit/layers.hpp"

namespace bitkit {

enum class WeightDecayMode { None, TowardZero, TowardInit };

inline const char* to_string(WeightDecayMode m) {
    switch (m) {
        case WeightDecayMode::None: return "none";
        case WeightDecayMode::TowardZero: return "toward_zero";
        case WeightDecayMode::TowardInit: return "toward_init";
    }
    return "?";
}

// Step-decay learning-rate schedule, either by upstream epoch milestones
// (with linear warmup and batch-size scaling) or by downstream fractional
// milestones of a fixed step budget.
struct Schedule {
    enum class Kind { UpstreamEpochs, DownstreamFractions };
    Kind kind = Kind::DownstreamFractions;

    // upstream
    std::vector<int64_t> milestone_epochs;
    int64_t steps_per_epoch = 0;
    int64_t warmup_steps = 0;
    bool lr_scaling = false;  // multiply lr by batch_size/256

    // downstream
    int64_t total_steps = 0;
    std::vector<double> fractions = {0.3, 0.6, 0.9};

    double decay_factor = 10.0;

    static Schedule upstream(std::vector<int64_t> milestone_epochs, int64_t steps_per_epoch,
                             int64_t warmup_steps, bool lr_scaling);
    static Schedule downstream(int64_t total_steps);

    // Milestones expressed in optimization steps, strictly increasing.
    std::vector<int64_t> milestone_steps() const;
    int64_t schedule_steps() const;  // total steps implied by the schedule
};

struct OptimizerConfig {
    double base_lr = 0.0;
    double momentum = 0.0;
    int64_t batch_size = 0;
    WeightDecayMode weight_decay_mode = WeightDecayMode::None;
    double weight_decay = 0.0;
    Schedule schedule;
};

// Upstream pre-training presets: SGD momentum 0.9, lr 0.03 scaled by
// batch/256, 5000-step linear warmup, weight decay 1e-4 toward zero.
OptimizerConfig upstream_preset_90ep(int64_t steps_per_epoch, int64_t batch_size);
OptimizerConfig upstream_preset_40ep(int64_t steps_per_epoch, int64_t batch_size);

// Downstream config from a HyperRule plan: no weight decay, no warmup.
OptimizerConfig downstream_from_plan(const HyperRulePlan& plan);

// lr = base * (batch/256 if scaling) * warmup_ramp(step) / decay^drops.
double effective_lr(const OptimizerConfig& config, int64_t step);

struct TrainState {
    int64_t step = 0;
    Params<float> momentum_buffers;
    std::optional<Params<float>> init_snapshot;

    static TrainState init(const Params<float>& params, bool snapshot_init);

    // Checkpoint-container records under the "optim/" prefix.
    Params<float> to_records() const;
    static TrainState from_records(const Params<float>& records);
};

// One SGD-with-momentum update over all parameters; gradients come from a
// consumed tape on which the parameters were watched. Parameters without a
// flowing gradient are treated as zero-gradient (decay still applies).
void sgd_step(Params<float>& params, const Tape<float>& tape, TrainState& state,
              const OptimizerConfig& config);

}  // namespace bitkit
