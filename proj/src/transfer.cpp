#include "bitkit/transfer.hpp"

#include <algorithm>
#include <cmath>

namespace bitkit {

namespace {

uint64_t hash_indices(const std::vector<int64_t>& idx) {
    uint64_t h = 0x6a09e667f3bcc908ull;
    for (int64_t i : idx) h = splitmix64(h ^ static_cast<uint64_t>(i));
    return h;
}

nlohmann::ordered_json optim_to_json(const OptimizerConfig& c) {
    nlohmann::ordered_json j;
    j["base_lr"] = c.base_lr;
    j["momentum"] = c.momentum;
    j["batch_size"] = c.batch_size;
    j["weight_decay_mode"] = to_string(c.weight_decay_mode);
    j["weight_decay"] = c.weight_decay;
    j["milestone_steps"] = c.schedule.milestone_steps();
    j["warmup_steps"] = c.schedule.warmup_steps;
    j["lr_scaling"] = c.schedule.lr_scaling;
    return j;
}

nlohmann::ordered_json policy_to_json(const AugPolicy& p) {
    nlohmann::ordered_json j;
    j["resize_to"] = p.resize_to;
    j["crop_to"] = p.crop_to;
    j["random_flip"] = p.random_flip;
    j["random_crop"] = p.random_crop;
    j["eval_resize_to"] = p.eval_resize_to;
    return j;
}

nlohmann::ordered_json model_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["depth_preset"] = to_string(c.depth_preset);
    j["widen_factor"] = c.widen_factor;
    j["num_groups"] = c.num_groups;
    j["gn_eps"] = c.gn_eps;
    j["ws_eps"] = c.ws_eps;
    j["num_classes"] = c.num_classes;
    j["input_channels"] = c.input_channels;
    return j;
}

// Deterministic stream of shuffled epoch indices, cycling as needed.
class IndexStream {
public:
    IndexStream(int64_t n, uint64_t seed) : n_(n), seed_(seed) { refill(); }

    std::vector<int64_t> next_batch(int64_t batch) {
        std::vector<int64_t> out;
        out.reserve(static_cast<size_t>(batch));
        while (static_cast<int64_t>(out.size()) < batch) {
            if (cursor_ == n_) refill();
            out.push_back(order_[static_cast<size_t>(cursor_++)]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(static_cast<size_t>(n_));
        for (int64_t i = 0; i < n_; ++i) order_[static_cast<size_t>(i)] = i;
        Rng rng = Rng::substream(seed_, 0x0e70c000ull + static_cast<uint64_t>(epoch_++));
        rng.shuffle(order_);
        cursor_ = 0;
    }

    int64_t n_;
    uint64_t seed_;
    int64_t epoch_ = 0;
    int64_t cursor_ = 0;
    std::vector<int64_t> order_;
};

double global_grad_norm(const Params<float>& params, const Tape<float>& tape) {
    double ss = 0.0;
    for (const auto& name : params.names()) {
        const auto& p = params.at(name);
        if (!tape.on_tape(p)) continue;
        Tensor<float> g = tape.grad(p);
        if (!g.defined()) continue;
        for (int64_t i = 0; i < g.numel(); ++i)
            ss += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    return std::sqrt(ss);
}

}  // namespace

std::string RunRecord::to_jsonl() const {
    std::string out;
    {
        nlohmann::ordered_json j;
        j["kind"] = "config";
        j["seed"] = seed;
        j["config"] = config;
        out += j.dump();
        out += "\n";
    }
    for (const auto& s : steps) {
        nlohmann::ordered_json j;
        j["kind"] = "step";
        j["step"] = s.step;
        j["lr"] = s.lr;
        j["loss"] = s.loss;
        j["batch_hash"] = s.batch_hash;
        out += j.dump();
        out += "\n";
    }
    for (const auto& e : evals) {
        nlohmann::ordered_json j;
        j["kind"] = "eval";
        j["step"] = e.step;
        j["top1"] = e.top1;
        if (e.top5)
            j["top5"] = *e.top5;
        else
            j["top5"] = nullptr;
        out += j.dump();
        out += "\n";
    }
    {
        nlohmann::ordered_json j;
        j["kind"] = "final";
        j["metrics"] = final_metrics;
        out += j.dump();
        out += "\n";
    }
    return out;
}

MetricRow evaluate_model(const ResNet<float>& net, const Params<float>& params,
                         const Dataset& dataset, const AugPolicy& policy, int64_t batch,
                         ForwardOptions<float> fwd) {
    fwd.training = false;
    const int64_t N = dataset.size();
    Tensor<float> logits = Tensor<float>::zeros({N, net.config().num_classes});
    for (int64_t start = 0; start < N; start += batch) {
        const int64_t stop = std::min(N, start + batch);
        std::vector<int64_t> idx;
        for (int64_t i = start; i < stop; ++i) idx.push_back(i);
        Tensor<float> x = make_eval_batch(dataset, idx, policy);
        Tensor<float> out = net.forward(nullptr, x, params, fwd);
        std::copy(out.ptr(), out.ptr() + out.numel(),
                  logits.ptr() + start * net.config().num_classes);
    }
    MetricRow row;
    row.task = dataset.name;
    row.n_eval = N;
    row.top1 = topk_accuracy(logits, dataset.labels, 1);
    if (net.config().num_classes >= 5) row.top5 = topk_accuracy(logits, dataset.labels, 5);
    return row;
}

Params<float> train_loop(const ResNet<float>& net, Params<float> params, const Dataset& train_ds,
                         const TrainLoopOptions& opts, RunRecord& record) {
    train_ds.validate();
    if (train_ds.num_classes != net.config().num_classes)
        throw ConfigError("train_loop: dataset classes do not match model head");
    const int64_t batch = opts.optim.batch_size;
    if (batch < 1) throw ConfigError("train_loop: batch size must be positive");

    TrainState state =
        TrainState::init(params, opts.optim.weight_decay_mode == WeightDecayMode::TowardInit);
    IndexStream stream(train_ds.size(), opts.seed);

    ForwardOptions<float> train_fwd = opts.fwd;
    train_fwd.training = true;

    auto run_evals = [&](int64_t after_step) {
        if (!opts.eval_ds) return;
        if (std::find(opts.eval_at.begin(), opts.eval_at.end(), after_step) == opts.eval_at.end())
            return;
        MetricRow row =
            evaluate_model(net, params, *opts.eval_ds, opts.policy, opts.eval_batch, opts.fwd);
        record.evals.push_back({after_step, row.top1, row.top5});
    };

    run_evals(0);
    double last_grad_norm = 0.0;
    for (int64_t step = 0; step < opts.total_steps; ++step) {
        const std::vector<int64_t> idx = stream.next_batch(batch);
        Rng aug_rng = Rng::substream(opts.seed, 0xa0600000ull + static_cast<uint64_t>(step));
        Tensor<float> x = make_train_batch(train_ds, idx, opts.policy, aug_rng);
        std::vector<uint16_t> batch_labels;
        batch_labels.reserve(idx.size());
        for (int64_t i : idx) batch_labels.push_back(train_ds.labels[static_cast<size_t>(i)]);
        Tensor<float> y = one_hot(batch_labels, net.config().num_classes);
        if (opts.mixup_alpha) {
            Rng mix_rng = Rng::substream(opts.seed, 0x313c0000ull + static_cast<uint64_t>(step));
            auto mixed = mixup_batch(x, y, *opts.mixup_alpha, mix_rng);
            x = std::move(mixed.first);
            y = std::move(mixed.second);
        }

        const double lr = effective_lr(opts.optim, state.step);
        Tape<float> tape;
        params.watch_all(tape);
        double loss_value = 0.0;
        try {
            Tensor<float> feats = net.features(&tape, x, params, train_fwd);
            if (opts.dropout_rate > 0.0) {
                Rng drop_rng =
                    Rng::substream(opts.seed, 0xd0000000ull + static_cast<uint64_t>(step));
                feats = ops::dropout(&tape, feats, opts.dropout_rate, drop_rng);
            }
            Tensor<float> logits = net.logits_from_features(&tape, feats, params);
            Tensor<float> loss = ops::softmax_cross_entropy(&tape, logits, y);
            loss_value = static_cast<double>(loss[0]);
            if (!std::isfinite(loss_value)) throw NumericError("loss is non-finite");
            tape.backward(loss);
        } catch (const NumericError& e) {
            throw NumericError("training aborted at step " + std::to_string(step) + ", lr " +
                               std::to_string(lr) + ", last grad norm " +
                               std::to_string(last_grad_norm) + ": " + e.what());
        }
        last_grad_norm = global_grad_norm(params, tape);
        sgd_step(params, tape, state, opts.optim);

        if (step % opts.log_every == 0 || step == opts.total_steps - 1)
            record.steps.push_back({step, lr, loss_value, hash_indices(idx)});
        if (opts.on_step) opts.on_step(step + 1, params);
        run_evals(step + 1);
    }
    return params;
}

PretrainResult pretrain(const ModelConfig& model_config, const OptimizerConfig& optimizer_config,
                        const Dataset& dataset, uint64_t seed, const PretrainOptions& opts) {
    dataset.validate();
    if (dataset.num_classes != model_config.num_classes)
        throw ConfigError("pretrain: dataset classes do not match model head");
    if (optimizer_config.schedule.kind != Schedule::Kind::UpstreamEpochs)
        throw ConfigError("pretrain: expected an upstream epoch schedule");
    if (opts.epochs < 0) throw ConfigError("pretrain: negative epoch count");

    const ResNet<float> net = ResNet<float>::build(model_config);
    Rng init_rng = Rng::substream(seed, 0x1217ull);
    Params<float> params = net.init_params(init_rng);

    AugPolicy policy = opts.policy;
    if (!opts.policy_set) {
        policy.resize_to = dataset.height();
        policy.crop_to = dataset.height();
        policy.random_flip = true;
        policy.random_crop = true;
        policy.eval_resize_to = dataset.height();
    }

    const int64_t steps_per_epoch = optimizer_config.schedule.steps_per_epoch;
    const int64_t total_steps = opts.epochs * steps_per_epoch;

    RunRecord record;
    record.seed = seed;
    record.config["phase"] = "pretrain";
    record.config["model"] = model_to_json(model_config);
    record.config["optimizer"] = optim_to_json(optimizer_config);
    record.config["policy"] = policy_to_json(policy);
    record.config["epochs"] = opts.epochs;
    record.config["total_steps"] = total_steps;
    record.config["dataset"] = dataset.name;
    record.config["dataset_examples"] = dataset.size();
    record.config["seed"] = seed;

    TrainLoopOptions loop;
    loop.optim = optimizer_config;
    loop.total_steps = total_steps;
    loop.policy = policy;
    loop.seed = seed;
    loop.log_every = opts.log_every;

    PretrainResult result;
    result.config = model_config;
    result.params = train_loop(net, std::move(params), dataset, loop, record);

    MetricRow train_top = evaluate_model(net, result.params, dataset, policy, 256);
    record.final_metrics["train_top1"] = train_top.top1;
    if (train_top.top5) record.final_metrics["train_top5"] = *train_top.top5;
    record.final_metrics["steps"] = total_steps;
    result.record = std::move(record);
    return result;
}

Params<float> reinit_head(const ModelConfig& config, const Params<float>& pretrained,
                          int64_t new_num_classes) {
    if (new_num_classes < 2) throw ConfigError("reinit_head: need at least 2 classes");
    if (!pretrained.contains("head/weight"))
        throw FormatError("reinit_head: checkpoint lacks a classifier head", 0);
    const int64_t feature_dim = pretrained.at("head/weight").shape[0];
    ModelConfig probe = config;
    probe.num_classes = new_num_classes;
    if (ResNet<float>::build(probe).feature_dim() != feature_dim)
        throw FormatError("reinit_head: checkpoint head width does not match its config", 0);
    Params<float> out;
    for (const auto& name : pretrained.names()) {
        if (name == "head/weight")
            out.add(name, Tensor<float>::zeros({feature_dim, new_num_classes}));
        else if (name == "head/bias")
            out.add(name, Tensor<float>::zeros({new_num_classes}));
        else
            out.add(name, pretrained.at(name).clone());
    }
    return out;
}

FinetuneResult finetune(const LoadedModel& checkpoint, const Dataset& task_dataset,
                        const FinetuneOverrides& overrides) {
    task_dataset.validate();

    auto [train_idx, eval_idx] = hash_split(task_dataset.size());
    Dataset train_ds = task_dataset.subset(train_idx);
    Dataset eval_ds = task_dataset.subset(eval_idx);
    train_ds.name = task_dataset.name + "/train";
    eval_ds.name = task_dataset.name + "/eval";
    if (overrides.shots)
        train_ds = fewshot_subsample(train_ds, *overrides.shots, overrides.seed);

    TaskSpec task;
    task.num_train_examples = train_ds.size();
    task.native_height = task_dataset.height();
    task.native_width = task_dataset.width();
    task.num_classes = task_dataset.num_classes;
    task.allow_flip = overrides.allow_flip;
    task.allow_crop = overrides.allow_crop;
    task.largest_model_mode = overrides.largest_model_mode;
    const HyperRulePlan the_plan = plan(task);

    OptimizerConfig optim = downstream_from_plan(the_plan);
    if (overrides.total_steps) optim.schedule = Schedule::downstream(*overrides.total_steps);
    if (overrides.batch_size) {
        // linear lr scaling for reduced desk batches
        optim.base_lr *= static_cast<double>(*overrides.batch_size) / 512.0;
        optim.batch_size = *overrides.batch_size;
    }
    if (optim.weight_decay_mode != WeightDecayMode::None || optim.weight_decay != 0.0)
        throw ConfigError("finetune: weight decay must stay disabled during transfer");

    const AugPolicy policy = overrides.aug_policy
                                 ? *overrides.aug_policy
                                 : AugPolicy::from_plan(the_plan, overrides.allow_flip,
                                                        overrides.allow_crop);

    ModelConfig config = checkpoint.config;
    config.num_classes = task_dataset.num_classes;
    const ResNet<float> net = ResNet<float>::build(config);

    Params<float> params;
    if (overrides.init_mode == InitMode::FromCheckpoint) {
        params = reinit_head(config, checkpoint.params, task_dataset.num_classes);
    } else {
        Rng init_rng = Rng::substream(overrides.seed, 0x1217ull);
        params = net.init_params(init_rng);
    }

    const int64_t total_steps = optim.schedule.total_steps;
    std::vector<int64_t> eval_at = optim.schedule.milestone_steps();
    eval_at.push_back(total_steps);

    RunRecord record;
    record.seed = overrides.seed;
    record.config["phase"] = "finetune";
    record.config["model"] = model_to_json(config);
    record.config["plan"] = nlohmann::ordered_json::parse(plan_to_json(the_plan));
    record.config["optimizer"] = optim_to_json(optim);
    record.config["policy"] = policy_to_json(policy);
    record.config["mixup_applied"] = the_plan.mixup_alpha.has_value();
    record.config["init_mode"] =
        overrides.init_mode == InitMode::FromCheckpoint ? "checkpoint" : "random";
    record.config["shots"] = overrides.shots ? nlohmann::ordered_json(*overrides.shots)
                                             : nlohmann::ordered_json(nullptr);
    record.config["train_examples"] = train_ds.size();
    record.config["eval_examples"] = eval_ds.size();
    record.config["total_steps"] = total_steps;
    record.config["seed"] = overrides.seed;

    TrainLoopOptions loop;
    loop.optim = optim;
    loop.total_steps = total_steps;
    loop.policy = policy;
    loop.mixup_alpha = the_plan.mixup_alpha;
    loop.seed = overrides.seed;
    loop.eval_ds = &eval_ds;
    loop.eval_at = eval_at;
    loop.eval_batch = overrides.eval_batch;
    loop.log_every = overrides.log_every;

    FinetuneResult result;
    result.config = config;
    result.plan = the_plan;
    result.params = train_loop(net, std::move(params), train_ds, loop, record);

    result.final_eval = evaluate_model(net, result.params, eval_ds, policy, overrides.eval_batch);
    result.final_eval.seed = overrides.seed;
    record.final_metrics["eval_top1"] = result.final_eval.top1;
    if (result.final_eval.top5) record.final_metrics["eval_top5"] = *result.final_eval.top5;
    record.final_metrics["steps"] = total_steps;
    result.record = std::move(record);
    return result;
}

}  // namespace bitkit
