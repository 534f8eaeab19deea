#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bitkit/hpsearch.hpp"

using namespace bitkit;

TEST_CASE("sampler respects supports and distributions") {
    SearchSpace space;
    Rng rng(101);
    const int n = 10000;
    std::vector<double> log_lr;
    std::set<int64_t> seen_steps, seen_res;
    std::set<std::string> seen_mixup;
    for (int i = 0; i < n; ++i) {
        auto c = sample_config(space, rng);
        CHECK(c.lr >= 1e-4);
        CHECK(c.lr <= 1e-1);
        CHECK(c.dropout >= 0.0);
        CHECK(c.dropout <= 0.7);
        CHECK(c.wd_to_init >= 1e-6);
        CHECK(c.wd_to_init <= 1e-1);
        log_lr.push_back(std::log(c.lr));
        seen_steps.insert(c.steps);
        seen_res.insert(c.resolution);
        seen_mixup.insert(c.mixup_alpha ? std::to_string(*c.mixup_alpha) : "none");
    }
    // steps draws take exactly the published six values
    const std::set<int64_t> expected_steps = {500, 1000, 2000, 4000, 8000, 16000};
    CHECK(seen_steps == expected_steps);
    CHECK(seen_res == std::set<int64_t>{64, 128, 192, 256, 320, 384});
    CHECK(seen_mixup.size() == 5);

    // KS test of log(lr) against the uniform cdf, alpha = 0.01
    std::sort(log_lr.begin(), log_lr.end());
    const double lo = std::log(1e-4), hi = std::log(1e-1);
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = (log_lr[static_cast<size_t>(i)] - lo) / (hi - lo);
        d = std::max(d, std::abs(u - static_cast<double>(i + 1) / n));
        d = std::max(d, std::abs(u - static_cast<double>(i) / n));
    }
    const double critical = 1.628 / std::sqrt(static_cast<double>(n));
    CHECK(d < critical);
}

TEST_CASE("sampler is reproducible for a fixed seed") {
    SearchSpace space;
    Rng a(7), b(7);
    for (int i = 0; i < 50; ++i) {
        auto ca = sample_config(space, a);
        auto cb = sample_config(space, b);
        CHECK(ca.lr == cb.lr);
        CHECK(ca.steps == cb.steps);
        CHECK(ca.dropout == cb.dropout);
        CHECK(ca.wd_to_init == cb.wd_to_init);
        CHECK(ca.resolution == cb.resolution);
        CHECK(ca.mixup_alpha.has_value() == cb.mixup_alpha.has_value());
    }
}

namespace {

Dataset trial_task(uint64_t seed = 31) {
    SynthSpec spec;
    spec.class_ids = {0, 1, 2, 3};
    spec.n_per_class = 20;
    spec.size = 12;
    spec.seed = seed;
    spec.name = "search-task";
    return make_synthetic_dataset(spec);
}

LoadedModel tiny_checkpoint(uint64_t seed = 5) {
    ModelConfig cfg;
    cfg.depth_preset = DepthPreset::Toy8;
    cfg.num_classes = 4;
    LoadedModel m;
    m.config = cfg;
    Rng rng(seed);
    m.params = ResNet<float>::build(cfg).init_params(rng);
    return m;
}

SearchSpace desk_space() {
    SearchSpace s;
    s.steps = {2, 4};
    s.resolutions = {12};
    return s;
}

}  // namespace

TEST_CASE("single-trial budget returns that trial") {
    auto task = trial_task();
    auto ckpt = tiny_checkpoint();
    SearchOptions opt;
    opt.budget_trials = 1;
    opt.seed = 3;
    opt.space = desk_space();
    opt.train_count = 48;
    opt.val_count = 16;
    opt.trial.batch_size = 8;
    auto res = run_search(ckpt, task, opt);
    REQUIRE(res.trials.size() == 1);
    CHECK(res.best_index == 0);
    CHECK(res.best_so_far.size() == 1);
    CHECK(res.best_so_far[0] == res.trials[0].val_top1);
}

TEST_CASE("best-so-far curve is a running max and splits stay disjoint") {
    auto task = trial_task();
    auto ckpt = tiny_checkpoint();
    SearchOptions opt;
    opt.budget_trials = 4;
    opt.seed = 11;
    opt.space = desk_space();
    opt.train_count = 48;
    opt.val_count = 16;
    opt.trial.batch_size = 8;
    auto res = run_search(ckpt, task, opt);
    REQUIRE(res.trials.size() == 4);
    for (size_t i = 1; i < res.best_so_far.size(); ++i)
        CHECK(res.best_so_far[i] >= res.best_so_far[i - 1]);
    double best = -1;
    for (const auto& t : res.trials)
        if (!t.failed) best = std::max(best, t.val_top1);
    CHECK(res.best_so_far.back() == doctest::Approx(best));

    std::set<int64_t> train(res.train_ids.begin(), res.train_ids.end());
    for (int64_t v : res.val_ids) CHECK(train.count(v) == 0);
}

TEST_CASE("failing trial is recorded and the search continues") {
    auto task = trial_task();
    auto ckpt = tiny_checkpoint();
    TrialConfig bad;
    bad.lr = 0.01;
    bad.steps = 2;
    bad.resolution = 0;  // invalid resize target
    TrialOptions topt;
    topt.batch_size = 8;
    auto [train_ids, val_ids] = hash_split(task.size());
    auto train_split = task.subset(train_ids);
    auto val_split = task.subset(val_ids);
    auto r = run_trial(ckpt, train_split, val_split, bad, topt);
    CHECK(r.failed);
    CHECK(!r.error.empty());
    CHECK(r.val_top1 == 0.0);
}

TEST_CASE("hyperrule default trial mirrors the small-regime plan") {
    auto task = trial_task();
    auto c = hyperrule_default_trial(task, 32, 12);
    CHECK(c.steps == 500);
    CHECK(c.lr == doctest::Approx(0.003 * 32.0 / 512.0));
    CHECK(!c.mixup_alpha.has_value());
    CHECK(c.dropout == 0.0);
    CHECK(c.wd_to_init == 0.0);
    CHECK(c.resolution == 12);
}
