#include "bitkit/hpsearch.hpp"

#include <algorithm>

namespace bitkit {

TrialConfig sample_config(const SearchSpace& space, Rng& rng) {
    if (space.steps.empty() || space.mixup_alphas.empty() || space.resolutions.empty())
        throw ConfigError("sample_config: empty search dimension");
    TrialConfig c;
    c.lr = rng.log_uniform(space.lr_lo, space.lr_hi);
    c.steps = space.steps[rng.uniform_int(space.steps.size())];
    c.dropout = rng.uniform(space.dropout_lo, space.dropout_hi);
    c.wd_to_init = rng.log_uniform(space.wd_lo, space.wd_hi);
    c.mixup_alpha = space.mixup_alphas[rng.uniform_int(space.mixup_alphas.size())];
    c.resolution = space.resolutions[rng.uniform_int(space.resolutions.size())];
    return c;
}

nlohmann::ordered_json trial_config_to_json(const TrialConfig& c) {
    nlohmann::ordered_json j;
    j["lr"] = c.lr;
    j["steps"] = c.steps;
    j["dropout"] = c.dropout;
    j["wd_to_init"] = c.wd_to_init;
    j["mixup_alpha"] = c.mixup_alpha ? nlohmann::ordered_json(*c.mixup_alpha)
                                     : nlohmann::ordered_json(nullptr);
    j["resolution"] = c.resolution;
    return j;
}

TrialResult run_trial(const LoadedModel& checkpoint, const Dataset& train_split,
                      const Dataset& val_split, const TrialConfig& config,
                      const TrialOptions& options) {
    TrialResult result;
    result.config = config;
    result.seed = options.seed;
    try {
        ModelConfig model_config = checkpoint.config;
        model_config.num_classes = train_split.num_classes;
        const ResNet<float> net = ResNet<float>::build(model_config);
        Params<float> params =
            reinit_head(checkpoint.config, checkpoint.params, train_split.num_classes);

        OptimizerConfig optim;
        optim.base_lr = config.lr;
        optim.momentum = 0.9;
        optim.batch_size = options.batch_size;
        optim.weight_decay_mode =
            config.wd_to_init > 0.0 ? WeightDecayMode::TowardInit : WeightDecayMode::None;
        optim.weight_decay = config.wd_to_init;
        optim.schedule = Schedule::downstream(config.steps);

        AugPolicy policy;
        policy.resize_to = config.resolution;
        policy.crop_to = config.resolution;
        policy.random_crop = false;
        policy.random_flip = options.flip;
        policy.eval_resize_to = config.resolution;

        TrainLoopOptions loop;
        loop.optim = optim;
        loop.total_steps = config.steps;
        loop.policy = policy;
        loop.mixup_alpha = config.mixup_alpha;
        loop.dropout_rate = config.dropout;
        loop.seed = options.seed;
        loop.log_every = std::max<int64_t>(1, config.steps / 16);

        RunRecord record;
        record.seed = options.seed;
        Params<float> trained = train_loop(net, std::move(params), train_split, loop, record);

        MetricRow row =
            evaluate_model(net, trained, val_split, policy, options.eval_batch);
        result.val_top1 = row.top1;
    } catch (const Error& e) {
        result.failed = true;
        result.error = e.what();
        result.val_top1 = 0.0;
    }
    return result;
}

SearchResult run_search(const LoadedModel& checkpoint, const Dataset& task,
                        const SearchOptions& options) {
    task.validate();
    if (options.budget_trials < 1) throw ConfigError("run_search: need a positive trial budget");
    if (task.size() < options.train_count + options.val_count)
        throw ConfigError("run_search: task smaller than the requested train+val carve-out");

    // deterministic disjoint train/val carve-out
    std::vector<int64_t> order(static_cast<size_t>(task.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng split_rng = Rng::substream(options.seed, 0x509717ull);
    split_rng.shuffle(order);

    SearchResult result;
    result.train_ids.assign(order.begin(), order.begin() + options.train_count);
    result.val_ids.assign(order.begin() + options.train_count,
                          order.begin() + options.train_count + options.val_count);
    Dataset train_split = task.subset(result.train_ids);
    Dataset val_split = task.subset(result.val_ids);
    train_split.name = task.name + "/search-train";
    val_split.name = task.name + "/search-val";

    // sample every configuration up front from one stream so the sequence
    // depends only on the seed
    Rng sampler = Rng::substream(options.seed, 0x5a3b1eull);
    std::vector<TrialConfig> configs;
    for (int64_t t = 0; t < options.budget_trials; ++t)
        configs.push_back(sample_config(options.space, sampler));

    double best = -1.0;
    for (int64_t t = 0; t < options.budget_trials; ++t) {
        TrialOptions topt = options.trial;
        topt.seed = splitmix64(options.seed ^ static_cast<uint64_t>(t));
        TrialResult r = run_trial(checkpoint, train_split, val_split,
                                  configs[static_cast<size_t>(t)], topt);
        r.trial_index = t;
        if (!r.failed && r.val_top1 > best) {
            best = r.val_top1;
            result.best_index = t;
        }
        result.trials.push_back(std::move(r));
        result.best_so_far.push_back(std::max(best, 0.0));
    }
    if (result.best_index < 0) throw Error("run_search: every trial failed");
    result.best_config = result.trials[static_cast<size_t>(result.best_index)].config;

    if (options.retrain_on_union) {
        std::vector<int64_t> union_ids = result.train_ids;
        union_ids.insert(union_ids.end(), result.val_ids.begin(), result.val_ids.end());
        Dataset union_split = task.subset(union_ids);
        union_split.name = task.name + "/search-union";
        TrialOptions topt = options.trial;
        topt.seed = splitmix64(options.seed ^ 0xfeedull);
        // evaluate the retrained model on its own training data only; test
        // data stays outside the search by construction
        TrialResult r = run_trial(checkpoint, union_split, union_split, result.best_config, topt);
        if (!r.failed) result.union_retrain_train_top1 = r.val_top1;
    }
    return result;
}

TrialConfig hyperrule_default_trial(const Dataset& train_split, int64_t batch_size,
                                    int64_t resolution) {
    TaskSpec task;
    task.num_train_examples = train_split.size();
    task.native_height = train_split.height();
    task.native_width = train_split.width();
    task.num_classes = train_split.num_classes;
    const HyperRulePlan p = plan(task);
    TrialConfig c;
    c.lr = p.lr * static_cast<double>(batch_size) / static_cast<double>(p.batch_size);
    c.steps = p.total_steps;
    c.dropout = 0.0;
    c.wd_to_init = 0.0;
    c.mixup_alpha = p.mixup_alpha;
    c.resolution = resolution;
    return c;
}

}  // namespace bitkit
