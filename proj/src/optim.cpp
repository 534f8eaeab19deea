#include "bitkit/optim.hpp"

#include <cmath>

namespace bitkit {

Schedule Schedule::upstream(std::vector<int64_t> milestone_epochs, int64_t steps_per_epoch,
                            int64_t warmup_steps, bool lr_scaling) {
    Schedule s;
    s.kind = Kind::UpstreamEpochs;
    s.milestone_epochs = std::move(milestone_epochs);
    s.steps_per_epoch = steps_per_epoch;
    s.warmup_steps = warmup_steps;
    s.lr_scaling = lr_scaling;
    for (size_t i = 1; i < s.milestone_epochs.size(); ++i)
        if (s.milestone_epochs[i] <= s.milestone_epochs[i - 1])
            throw ConfigError("schedule milestones must be strictly increasing");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be positive");
    return s;
}

Schedule Schedule::downstream(int64_t total_steps) {
    Schedule s;
    s.kind = Kind::DownstreamFractions;
    s.total_steps = total_steps;
    if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
    for (double f : s.fractions)
        if (f <= 0.0 || f >= 1.0) throw ConfigError("fractions must lie in (0,1)");
    return s;
}

std::vector<int64_t> Schedule::milestone_steps() const {
    std::vector<int64_t> out;
    if (kind == Kind::UpstreamEpochs) {
        for (int64_t e : milestone_epochs) out.push_back(e * steps_per_epoch);
    } else {
        for (double f : fractions)
            out.push_back(static_cast<int64_t>(std::floor(static_cast<double>(total_steps) * f)));
    }
    // a decay at or before step 0 is vacuous (arises for degenerate
    // zero-step schedules)
    std::erase_if(out, [](int64_t m) { return m <= 0; });
    return out;
}

int64_t Schedule::schedule_steps() const {
    if (kind == Kind::UpstreamEpochs) {
        int64_t last = milestone_epochs.empty() ? 0 : milestone_epochs.back();
        return last * steps_per_epoch;
    }
    return total_steps;
}

OptimizerConfig upstream_preset_90ep(int64_t steps_per_epoch, int64_t batch_size) {
    OptimizerConfig c;
    c.base_lr = 0.03;
    c.momentum = 0.9;
    c.batch_size = batch_size;
    c.weight_decay_mode = WeightDecayMode::TowardZero;
    c.weight_decay = 1e-4;
    c.schedule = Schedule::upstream({30, 60, 80}, steps_per_epoch, 5000, true);
    return c;
}

OptimizerConfig upstream_preset_40ep(int64_t steps_per_epoch, int64_t batch_size) {
    OptimizerConfig c = upstream_preset_90ep(steps_per_epoch, batch_size);
    c.schedule = Schedule::upstream({10, 23, 30, 37}, steps_per_epoch, 5000, true);
    return c;
}

OptimizerConfig downstream_from_plan(const HyperRulePlan& plan) {
    OptimizerConfig c;
    c.base_lr = plan.lr;
    c.momentum = plan.momentum;
    c.batch_size = plan.batch_size;
    c.weight_decay_mode = WeightDecayMode::None;
    c.weight_decay = 0.0;
    c.schedule = Schedule::downstream(plan.total_steps);
    return c;
}

double effective_lr(const OptimizerConfig& config, int64_t step) {
    if (step < 0) throw UsageError("effective_lr: negative step");
    double lr = config.base_lr;
    if (config.schedule.lr_scaling) lr *= static_cast<double>(config.batch_size) / 256.0;
    if (config.schedule.warmup_steps > 0 && step < config.schedule.warmup_steps)
        lr *= static_cast<double>(step) / static_cast<double>(config.schedule.warmup_steps);
    int drops = 0;
    for (int64_t m : config.schedule.milestone_steps())
        if (step >= m) ++drops;
    return lr / std::pow(config.schedule.decay_factor, drops);
}

TrainState TrainState::init(const Params<float>& params, bool snapshot_init) {
    TrainState s;
    for (const auto& name : params.names())
        s.momentum_buffers.add(name, Tensor<float>::zeros(params.at(name).shape));
    if (snapshot_init) s.init_snapshot = params.clone();
    return s;
}

Params<float> TrainState::to_records() const {
    Params<float> out;
    out.add("optim/step", Tensor<float>::from({1}, {static_cast<float>(step)}));
    for (const auto& name : momentum_buffers.names())
        out.add("optim/momentum/" + name, momentum_buffers.at(name).clone());
    if (init_snapshot)
        for (const auto& name : init_snapshot->names())
            out.add("optim/init/" + name, init_snapshot->at(name).clone());
    return out;
}

TrainState TrainState::from_records(const Params<float>& records) {
    TrainState s;
    if (!records.contains("optim/step"))
        throw FormatError("train state records lack optim/step", 0);
    s.step = static_cast<int64_t>(records.at("optim/step")[0]);
    Params<float> snapshot;
    for (const auto& name : records.names()) {
        if (name.rfind("optim/momentum/", 0) == 0)
            s.momentum_buffers.add(name.substr(15), records.at(name).clone());
        else if (name.rfind("optim/init/", 0) == 0)
            snapshot.add(name.substr(11), records.at(name).clone());
    }
    if (snapshot.size() > 0) s.init_snapshot = std::move(snapshot);
    return s;
}

void sgd_step(Params<float>& params, const Tape<float>& tape, TrainState& state,
              const OptimizerConfig& config) {
    if (config.momentum < 0.0 || config.momentum >= 1.0)
        throw ConfigError("momentum must lie in [0,1)");
    if (config.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (config.weight_decay_mode == WeightDecayMode::TowardInit && !state.init_snapshot)
        throw StateError("toward_init weight decay requires an init snapshot in TrainState");

    const float lr = static_cast<float>(effective_lr(config, state.step));
    const float mom = static_cast<float>(config.momentum);
    const float wd = static_cast<float>(config.weight_decay);

    for (const auto& name : params.names()) {
        Tensor<float>& p = params.at(name);
        Tensor<float>& buf = state.momentum_buffers.at(name);
        if (!buf.same_shape(p)) throw DimensionError("momentum buffer shape mismatch for " + name);
        Tensor<float> g = tape.on_tape(p) ? tape.grad(p) : Tensor<float>();
        if (g.defined() && !g.same_shape(p))
            throw DimensionError("gradient shape mismatch for " + name);

        const float* gp = g.defined() ? g.ptr() : nullptr;
        const float* init = nullptr;
        if (config.weight_decay_mode == WeightDecayMode::TowardInit)
            init = state.init_snapshot->at(name).ptr();

        float* pp = p.ptr();
        float* bp = buf.ptr();
        const int64_t n = p.numel();
        for (int64_t i = 0; i < n; ++i) {
            float decay = 0.0f;
            if (config.weight_decay_mode == WeightDecayMode::TowardZero)
                decay = wd * pp[i];
            else if (config.weight_decay_mode == WeightDecayMode::TowardInit)
                decay = wd * (pp[i] - init[i]);
            const float grad = (gp ? gp[i] : 0.0f) + decay;
            bp[i] = mom * bp[i] + grad;
            pp[i] -= lr * bp[i];
        }
    }
    state.step += 1;
}

}  // namespace bitkit
