#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "bitkit/dedup.hpp"
#include "bitkit/hpsearch.hpp"
#include "bitkit/normcompare.hpp"
#include "bitkit/transfer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace bitkit;
using json = nlohmann::ordered_json;

namespace {

// All subcommands emit line-delimited records with stable key order, to
// stdout and optionally to a file.
struct RecordSink {
    std::ofstream file;

    explicit RecordSink(const std::string& path) {
        if (!path.empty()) {
            file.open(path, std::ios::trunc);
            if (!file) throw Error("cannot open output file: " + path);
        }
    }

    void emit(const json& j) {
        const std::string line = j.dump();
        std::cout << line << "\n";
        if (file.is_open()) file << line << "\n";
    }

    void emit_raw(const std::string& lines) {
        std::cout << lines;
        if (file.is_open()) file << lines;
    }
};

std::vector<int64_t> parse_int_list(const std::string& csv) {
    std::vector<int64_t> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(std::stoll(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig cfg;
    cfg.depth_preset = depth_preset_from_string(j.value("depth", "toy-8"));
    cfg.widen_factor = j.value("widen", 1);
    cfg.num_groups = j.value("groups", 32);
    cfg.gn_eps = j.value("gn_eps", 1e-5f);
    cfg.ws_eps = j.value("ws_eps", 1e-6f);
    cfg.num_classes = j.at("classes").get<int64_t>();
    cfg.input_channels = j.value("input_channels", 3);
    return cfg;
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig c;
    c.base_lr = j.value("base_lr", 0.03);
    c.momentum = j.value("momentum", 0.9);
    c.batch_size = j.at("batch_size").get<int64_t>();
    const std::string mode = j.value("weight_decay_mode", "toward_zero");
    if (mode == "none") c.weight_decay_mode = WeightDecayMode::None;
    else if (mode == "toward_zero") c.weight_decay_mode = WeightDecayMode::TowardZero;
    else if (mode == "toward_init") c.weight_decay_mode = WeightDecayMode::TowardInit;
    else throw ConfigError("unknown weight decay mode: " + mode);
    c.weight_decay = j.value("weight_decay", 1e-4);
    std::vector<int64_t> milestones = j.value("milestone_epochs", std::vector<int64_t>{30, 60, 80});
    c.schedule = Schedule::upstream(milestones, j.at("steps_per_epoch").get<int64_t>(),
                                    j.value("warmup_steps", 5000), j.value("lr_scaling", true));
    return c;
}

json metric_row_json(const MetricRow& row) {
    json j;
    j["task"] = row.task;
    j["top1"] = row.top1;
    j["top5"] = row.top5 ? json(*row.top5) : json(nullptr);
    j["n_eval"] = row.n_eval;
    j["model_id"] = row.model_id;
    j["seed"] = row.seed;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale transfer-learning toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    uint64_t seed = 0;
    int threads = 0;
    std::string out_path;
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--threads", threads, "worker thread count (0 = library default)");
    app.add_option("--out", out_path, "output file or directory");

    // ---- plan ----
    auto* plan_cmd = app.add_subcommand("plan", "emit the fine-tuning plan for a task");
    int64_t examples = 0, height = 0, width = 0;
    bool no_flip = false, no_crop = false, xl = false;
    plan_cmd->add_option("--examples", examples)->required();
    plan_cmd->add_option("--height", height)->required();
    plan_cmd->add_option("--width", width)->required();
    plan_cmd->add_flag("--no-flip", no_flip);
    plan_cmd->add_flag("--no-crop", no_crop);
    plan_cmd->add_flag("--xl", xl);

    // ---- synth-data ----
    auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic shape dataset");
    std::string classes_csv = "0,1,2,3";
    int64_t per_class = 100, size = 32;
    double noise = 0.04;
    std::string synth_name = "synth";
    synth_cmd->add_option("--classes", classes_csv, "comma-separated class combination ids");
    synth_cmd->add_option("--per-class", per_class);
    synth_cmd->add_option("--size", size);
    synth_cmd->add_option("--noise", noise);
    synth_cmd->add_option("--name", synth_name);

    // ---- pretrain ----
    auto* pre_cmd = app.add_subcommand("pretrain", "upstream training from a config file");
    std::string config_path, data_path;
    pre_cmd->add_option("--config", config_path)->required();
    pre_cmd->add_option("--data", data_path)->required();

    // ---- finetune ----
    auto* ft_cmd = app.add_subcommand("finetune", "BiT-HyperRule fine-tuning from a checkpoint");
    std::string ckpt_path;
    int64_t shots = 0, ft_batch = 0, ft_res = 0, ft_steps = -1;
    bool from_scratch = false;
    ft_cmd->add_option("--ckpt", ckpt_path)->required();
    ft_cmd->add_option("--data", data_path)->required();
    ft_cmd->add_option("--shots", shots, "examples per class (0 = all)");
    ft_cmd->add_option("--batch", ft_batch, "desk batch size (lr scales by batch/512)");
    ft_cmd->add_option("--res", ft_res, "desk resolution override");
    ft_cmd->add_option("--steps", ft_steps, "schedule-length override");
    ft_cmd->add_flag("--no-flip", no_flip);
    ft_cmd->add_flag("--no-crop", no_crop);
    ft_cmd->add_flag("--xl", xl);
    ft_cmd->add_flag("--from-scratch", from_scratch, "random init control arm");

    // ---- search ----
    auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
    int64_t trials = 20, train_count = 800, val_count = 200, search_batch = 32;
    std::string steps_csv, res_csv;
    bool retrain_union = false;
    search_cmd->add_option("--ckpt", ckpt_path)->required();
    search_cmd->add_option("--data", data_path)->required();
    search_cmd->add_option("--trials", trials)->required();
    search_cmd->add_option("--train-count", train_count);
    search_cmd->add_option("--val-count", val_count);
    search_cmd->add_option("--batch", search_batch);
    search_cmd->add_option("--steps-set", steps_csv, "override step-count menu (csv)");
    search_cmd->add_option("--resolutions", res_csv, "override resolution menu (csv)");
    search_cmd->add_flag("--retrain-union", retrain_union);

    // ---- dedup ----
    auto* dedup_cmd = app.add_subcommand("dedup", "near-duplicate audit between two datasets");
    std::string upstream_path, test_path;
    int hamming_thresh = kDefaultHammingThresh;
    double cosine_thresh = kDefaultCosineThresh;
    int64_t embed_res = 32;
    dedup_cmd->add_option("--upstream", upstream_path)->required();
    dedup_cmd->add_option("--test", test_path)->required();
    dedup_cmd->add_option("--ckpt", ckpt_path, "backbone for embeddings (optional)");
    dedup_cmd->add_option("--hamming", hamming_thresh);
    dedup_cmd->add_option("--cosine", cosine_thresh);
    dedup_cmd->add_option("--embed-res", embed_res);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or aggregate rows");
    std::string rows_path;
    int64_t eval_res = 0, eval_batch = 256;
    eval_cmd->add_option("--ckpt", ckpt_path);
    eval_cmd->add_option("--data", data_path);
    eval_cmd->add_option("--rows", rows_path, "aggregate a file of metric-row records");
    eval_cmd->add_option("--res", eval_res, "eval resolution (default: native)");
    eval_cmd->add_option("--batch", eval_batch);

    // ---- normcompare ----
    auto* norm_cmd = app.add_subcommand("normcompare", "BN/GN x plain/WS comparison table");
    int64_t nc_batch = 256, nc_steps = 200, nc_seeds = 5, nc_classes = 4;
    double nc_lr = 0.1;
    std::string nc_depth = "toy-8";
    norm_cmd->add_option("--data", data_path)->required();
    norm_cmd->add_option("--batch", nc_batch);
    norm_cmd->add_option("--steps", nc_steps);
    norm_cmd->add_option("--seeds", nc_seeds, "number of seeds");
    norm_cmd->add_option("--lr", nc_lr);
    norm_cmd->add_option("--depth", nc_depth);
    norm_cmd->add_option("--classes", nc_classes);

    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (*plan_cmd) {
            TaskSpec task;
            task.num_train_examples = examples;
            task.native_height = height;
            task.native_width = width;
            task.num_classes = 2;  // not consulted by the planner
            task.allow_flip = !no_flip;
            task.allow_crop = !no_crop;
            task.largest_model_mode = xl;
            RecordSink sink(out_path);
            sink.emit_raw(plan_to_json(plan(task)) + "\n");
        } else if (*synth_cmd) {
            if (out_path.empty()) throw UsageError("synth-data requires --out");
            SynthSpec spec;
            spec.class_ids = parse_int_list(classes_csv);
            spec.n_per_class = per_class;
            spec.size = size;
            spec.seed = seed;
            spec.noise = noise;
            spec.name = synth_name;
            Dataset ds = make_synthetic_dataset(spec);
            save_dataset(ds, out_path);
            RecordSink sink("");
            json j;
            j["kind"] = "synth-data";
            j["path"] = out_path;
            j["examples"] = ds.size();
            j["classes"] = ds.num_classes;
            j["size"] = size;
            sink.emit(j);
        } else if (*pre_cmd) {
            if (out_path.empty()) throw UsageError("pretrain requires --out");
            std::ifstream cf(config_path);
            if (!cf) throw Error("cannot open config: " + config_path);
            json cfg = json::parse(cf);
            Dataset ds = load_dataset(data_path);
            ModelConfig model = model_from_json(cfg.at("model"));
            json oj = cfg.at("optimizer");
            if (!oj.contains("steps_per_epoch"))
                oj["steps_per_epoch"] = (ds.size() + oj.at("batch_size").get<int64_t>() - 1) /
                                        oj.at("batch_size").get<int64_t>();
            OptimizerConfig optim = optimizer_from_json(oj);
            PretrainOptions opts;
            opts.epochs = cfg.at("epochs").get<int64_t>();
            if (cfg.contains("policy")) {
                const json& pj = cfg["policy"];
                opts.policy.resize_to = pj.value("resize_to", ds.height());
                opts.policy.crop_to = pj.value("crop_to", ds.height());
                opts.policy.random_flip = pj.value("flip", true);
                opts.policy.random_crop = pj.value("crop", true);
                opts.policy.eval_resize_to = opts.policy.crop_to;
                opts.policy_set = true;
            }
            opts.log_every = cfg.value("log_every", 1);
            PretrainResult result = pretrain(model, optim, ds, seed, opts);
            save_model(out_path, result.config, result.params);
            RecordSink sink(out_path + ".run.jsonl");
            sink.emit_raw(result.record.to_jsonl());
        } else if (*ft_cmd) {
            if (out_path.empty()) throw UsageError("finetune requires --out");
            LoadedModel ckpt = load_model(ckpt_path);
            Dataset ds = load_dataset(data_path);
            FinetuneOverrides ov;
            if (shots > 0) ov.shots = shots;
            if (ft_batch > 0) ov.batch_size = ft_batch;
            if (ft_steps >= 0) ov.total_steps = ft_steps;
            if (ft_res > 0) {
                AugPolicy p;
                p.resize_to = ft_res;
                p.crop_to = ft_res;
                p.random_flip = !no_flip;
                p.random_crop = !no_crop;
                p.eval_resize_to = ft_res;
                ov.aug_policy = p;
            }
            ov.allow_flip = !no_flip;
            ov.allow_crop = !no_crop;
            ov.largest_model_mode = xl;
            ov.init_mode = from_scratch ? InitMode::Random : InitMode::FromCheckpoint;
            ov.seed = seed;
            FinetuneResult result = finetune(ckpt, ds, ov);
            save_model(out_path, result.config, result.params);
            RecordSink sink(out_path + ".run.jsonl");
            sink.emit_raw(result.record.to_jsonl());
        } else if (*search_cmd) {
            LoadedModel ckpt = load_model(ckpt_path);
            Dataset ds = load_dataset(data_path);
            SearchOptions opt;
            opt.budget_trials = trials;
            opt.seed = seed;
            opt.train_count = train_count;
            opt.val_count = val_count;
            opt.trial.batch_size = search_batch;
            if (!steps_csv.empty()) opt.space.steps = parse_int_list(steps_csv);
            if (!res_csv.empty()) opt.space.resolutions = parse_int_list(res_csv);
            opt.retrain_on_union = retrain_union;
            SearchResult result = run_search(ckpt, ds, opt);

            std::string trials_path, summary_path;
            if (!out_path.empty()) {
                std::filesystem::create_directories(out_path);
                trials_path = out_path + "/trials.jsonl";
                summary_path = out_path + "/summary.jsonl";
            }
            RecordSink sink(trials_path);
            for (const auto& t : result.trials) {
                json j;
                j["kind"] = "trial";
                j["trial"] = t.trial_index;
                j["config"] = trial_config_to_json(t.config);
                j["val_top1"] = t.val_top1;
                j["failed"] = t.failed;
                if (t.failed) j["error"] = t.error;
                j["seed"] = t.seed;
                sink.emit(j);
            }
            RecordSink summary(summary_path);
            json j;
            j["kind"] = "search-summary";
            j["best_trial"] = result.best_index;
            j["best_config"] = trial_config_to_json(result.best_config);
            j["best_val_top1"] = result.best_so_far.back();
            j["best_so_far"] = result.best_so_far;
            j["union_retrain_train_top1"] = result.union_retrain_train_top1
                                                ? json(*result.union_retrain_train_top1)
                                                : json(nullptr);
            summary.emit(j);
        } else if (*dedup_cmd) {
            Dataset upstream = load_dataset(upstream_path);
            Dataset test = load_dataset(test_path);
            std::vector<Fingerprint> ufp, tfp;
            if (!ckpt_path.empty()) {
                LoadedModel ckpt = load_model(ckpt_path);
                const ResNet<float> net = ResNet<float>::build(ckpt.config);
                ufp = fingerprint_dataset(upstream, &net, &ckpt.params, embed_res);
                tfp = fingerprint_dataset(test, &net, &ckpt.params, embed_res);
            } else {
                ufp = fingerprint_dataset(upstream, nullptr, nullptr, 0);
                tfp = fingerprint_dataset(test, nullptr, nullptr, 0);
            }
            auto pairs = find_near_duplicates(ufp, tfp, hamming_thresh, cosine_thresh);
            RecordSink sink(out_path);
            for (const auto& p : pairs) {
                json j;
                j["kind"] = "pair";
                j["upstream_idx"] = p.upstream_idx;
                j["test_idx"] = p.test_idx;
                j["hamming"] = p.hamming;
                j["cosine"] = p.cosine ? json(*p.cosine) : json(nullptr);
                sink.emit(j);
            }
            json j;
            j["kind"] = "dedup-summary";
            j["pairs"] = pairs.size();
            j["hamming_thresh"] = hamming_thresh;
            j["cosine_thresh"] = cosine_thresh;
            sink.emit(j);
        } else if (*eval_cmd) {
            RecordSink sink(out_path);
            if (!rows_path.empty()) {
                std::ifstream rf(rows_path);
                if (!rf) throw Error("cannot open rows file: " + rows_path);
                std::vector<MetricRow> rows;
                std::string line;
                while (std::getline(rf, line)) {
                    if (line.empty()) continue;
                    json j = json::parse(line);
                    if (j.value("kind", "row") == "dedup-summary") continue;
                    MetricRow r;
                    r.task = j.at("task").get<std::string>();
                    r.top1 = j.at("top1").get<double>();
                    if (j.contains("top5") && !j["top5"].is_null())
                        r.top5 = j["top5"].get<double>();
                    r.n_eval = j.value("n_eval", 0);
                    r.seed = j.value("seed", 0);
                    rows.push_back(std::move(r));
                }
                SuiteAggregate agg = aggregate(rows);
                for (const auto& t : agg.per_task) {
                    json j;
                    j["kind"] = "task-aggregate";
                    j["task"] = t.task;
                    j["median_top1"] = t.median;
                    j["stddev"] = t.stddev;
                    j["runs"] = t.runs;
                    sink.emit(j);
                }
                json j;
                j["kind"] = "suite";
                j["score"] = agg.suite_score;
                j["tasks"] = agg.per_task.size();
                sink.emit(j);
            } else {
                if (ckpt_path.empty() || data_path.empty())
                    throw UsageError("eval requires --ckpt and --data (or --rows)");
                LoadedModel ckpt = load_model(ckpt_path);
                Dataset ds = load_dataset(data_path);
                const ResNet<float> net = ResNet<float>::build(ckpt.config);
                AugPolicy policy;
                const int64_t res = eval_res > 0 ? eval_res : ds.height();
                policy.resize_to = policy.crop_to = policy.eval_resize_to = res;
                MetricRow row = evaluate_model(net, ckpt.params, ds, policy, eval_batch);
                row.model_id = ckpt_path;
                row.seed = seed;
                sink.emit(metric_row_json(row));
            }
        } else if (*norm_cmd) {
            Dataset ds = load_dataset(data_path);
            ModelConfig model;
            model.depth_preset = depth_preset_from_string(nc_depth);
            model.num_classes = nc_classes;
            NormCompareOptions opt;
            opt.batch_size = nc_batch;
            opt.steps = nc_steps;
            opt.lr = nc_lr;
            opt.seeds.clear();
            for (int64_t s = 0; s < nc_seeds; ++s)
                opt.seeds.push_back(seed + static_cast<uint64_t>(s));
            NormCompareTable table = normcompare(ds, model, opt);
            RecordSink sink(out_path);
            for (const auto& cell : table.cells) {
                json j;
                j["kind"] = "cell";
                j["variant"] = to_string(cell.variant);
                j["seed"] = cell.seed;
                j["top1"] = cell.top1;
                sink.emit(j);
            }
            json j;
            j["kind"] = "normcompare-table";
            j["bn"] = table.median_top1.at(NormVariant::BN);
            j["gn"] = table.median_top1.at(NormVariant::GN);
            j["bn+ws"] = table.median_top1.at(NormVariant::BN_WS);
            j["gn+ws"] = table.median_top1.at(NormVariant::GN_WS);
            sink.emit(j);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
