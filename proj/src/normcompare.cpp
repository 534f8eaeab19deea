#include "bitkit/normcompare.hpp"

#include <algorithm>
#include <cmath>

namespace bitkit {

namespace {

// Minimal train-mode BatchNorm with running statistics for eval. Lives only
// inside this harness.
struct BnState {
    std::map<std::string, std::vector<float>> running_mean;
    std::map<std::string, std::vector<float>> running_var;
    double momentum = 0.9;
    float eps = 1e-5f;
};

Tensor<float> batch_norm(Tape<float>* tape, const Tensor<float>& x, const Tensor<float>& gamma,
                         const Tensor<float>& beta, const std::string& name, bool training,
                         BnState& state) {
    const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t M = N * H * W;
    auto& rmean = state.running_mean[name];
    auto& rvar = state.running_var[name];
    if (rmean.empty()) {
        rmean.assign(static_cast<size_t>(C), 0.0f);
        rvar.assign(static_cast<size_t>(C), 1.0f);
    }

    Tensor<float> out = Tensor<float>::zeros(x.shape);
    if (!training) {
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const float s = 1.0f / std::sqrt(rvar[static_cast<size_t>(c)] + state.eps);
                const float mu = rmean[static_cast<size_t>(c)];
                const float g = gamma[c], b = beta[c];
                const float* src = x.ptr() + (n * C + c) * H * W;
                float* dst = out.ptr() + (n * C + c) * H * W;
                for (int64_t i = 0; i < H * W; ++i) dst[i] = g * (src[i] - mu) * s + b;
            }
        return out;
    }

    Tensor<float> xhat = Tensor<float>::zeros(x.shape);
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        double mean = 0;
        for (int64_t n = 0; n < N; ++n) {
            const float* src = x.ptr() + (n * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) mean += src[i];
        }
        mean /= static_cast<double>(M);
        double var = 0;
        for (int64_t n = 0; n < N; ++n) {
            const float* src = x.ptr() + (n * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(M);
        const float s = static_cast<float>(1.0 / std::sqrt(var + state.eps));
        (*inv_std)[static_cast<size_t>(c)] = s;
        for (int64_t n = 0; n < N; ++n) {
            const float* src = x.ptr() + (n * C + c) * H * W;
            float* xh = xhat.ptr() + (n * C + c) * H * W;
            float* dst = out.ptr() + (n * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) {
                xh[i] = (src[i] - static_cast<float>(mean)) * s;
                dst[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        rmean[static_cast<size_t>(c)] = static_cast<float>(
            state.momentum * rmean[static_cast<size_t>(c)] + (1.0 - state.momentum) * mean);
        rvar[static_cast<size_t>(c)] = static_cast<float>(
            state.momentum * rvar[static_cast<size_t>(c)] + (1.0 - state.momentum) * var);
    }
    check_finite(out, "batch_norm");

    const bool tx = ops::tracked(tape, x), tg = ops::tracked(tape, gamma),
               tb = ops::tracked(tape, beta);
    if (tx || tg || tb) {
        const int64_t nx = x.node, ng = gamma.node, nb = beta.node;
        Tensor<float> gsave = gamma;
        tape->record(out, [=](const Tensor<float>& g, Tape<float>& tp) {
            if (tg || tb) {
                Tensor<float> dgamma = Tensor<float>::zeros({C});
                Tensor<float> dbeta = Tensor<float>::zeros({C});
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        const float* gp = g.ptr() + (n * C + c) * H * W;
                        const float* xh = xhat.ptr() + (n * C + c) * H * W;
                        float dg = 0, db = 0;
                        for (int64_t i = 0; i < H * W; ++i) {
                            dg += gp[i] * xh[i];
                            db += gp[i];
                        }
                        dgamma[c] += dg;
                        dbeta[c] += db;
                    }
                if (tg) tp.accumulate(ng, dgamma);
                if (tb) tp.accumulate(nb, dbeta);
            }
            if (tx) {
                Tensor<float> dx = Tensor<float>::zeros({N, C, H, W});
                for (int64_t c = 0; c < C; ++c) {
                    double gmean = 0, gxmean = 0;
                    for (int64_t n = 0; n < N; ++n) {
                        const float* gp = g.ptr() + (n * C + c) * H * W;
                        const float* xh = xhat.ptr() + (n * C + c) * H * W;
                        for (int64_t i = 0; i < H * W; ++i) {
                            gmean += gp[i] * gsave[c];
                            gxmean += gp[i] * gsave[c] * xh[i];
                        }
                    }
                    gmean /= static_cast<double>(M);
                    gxmean /= static_cast<double>(M);
                    const float s = (*inv_std)[static_cast<size_t>(c)];
                    for (int64_t n = 0; n < N; ++n) {
                        const float* gp = g.ptr() + (n * C + c) * H * W;
                        const float* xh = xhat.ptr() + (n * C + c) * H * W;
                        float* dp = dx.ptr() + (n * C + c) * H * W;
                        for (int64_t i = 0; i < H * W; ++i)
                            dp[i] = s * (gp[i] * gsave[c] - static_cast<float>(gmean) -
                                         xh[i] * static_cast<float>(gxmean));
                    }
                }
                tp.accumulate(nx, dx);
            }
        });
    }
    return out;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

NormCompareTable normcompare(const Dataset& dataset, const ModelConfig& model_config,
                             const NormCompareOptions& options) {
    dataset.validate();
    if (options.seeds.empty()) throw ConfigError("normcompare: need at least one seed");

    auto [train_idx, eval_idx] = hash_split(dataset.size());
    Dataset train_ds = dataset.subset(train_idx);
    Dataset eval_ds = dataset.subset(eval_idx);
    train_ds.name = dataset.name + "/train";
    eval_ds.name = dataset.name + "/eval";

    AugPolicy policy;
    policy.resize_to = dataset.height();
    policy.crop_to = dataset.height();
    policy.random_flip = true;
    policy.random_crop = true;
    policy.eval_resize_to = dataset.height();

    const ResNet<float> net = ResNet<float>::build(model_config);

    NormCompareTable table;
    std::map<NormVariant, std::vector<double>> scores;
    for (const uint64_t seed : options.seeds) {
        std::vector<std::vector<uint64_t>> seed_hashes;
        for (NormVariant variant :
             {NormVariant::BN, NormVariant::GN, NormVariant::BN_WS, NormVariant::GN_WS}) {
            const bool use_bn = variant == NormVariant::BN || variant == NormVariant::BN_WS;
            const bool use_ws = variant == NormVariant::BN_WS || variant == NormVariant::GN_WS;

            Rng init_rng = Rng::substream(seed, 0x1217ull);  // same init across variants
            Params<float> params = net.init_params(init_rng);

            auto bn_state = std::make_shared<BnState>();
            ForwardOptions<float> fwd;
            fwd.use_ws = use_ws;
            if (use_bn)
                fwd.norm_hook = [bn_state](Tape<float>* tape, const Tensor<float>& x,
                                           const Tensor<float>& gamma, const Tensor<float>& beta,
                                           const std::string& name, bool training) {
                    return batch_norm(tape, x, gamma, beta, name, training, *bn_state);
                };

            OptimizerConfig optim;
            optim.base_lr = options.lr;
            optim.momentum = options.momentum;
            optim.batch_size = options.batch_size;
            optim.weight_decay_mode = WeightDecayMode::TowardZero;
            optim.weight_decay = 1e-4;
            optim.schedule = Schedule::downstream(options.steps);

            TrainLoopOptions loop;
            loop.optim = optim;
            loop.total_steps = options.steps;
            loop.policy = policy;
            loop.seed = seed;  // identical data order across variants
            loop.fwd = fwd;
            loop.log_every = options.log_every;

            RunRecord record;
            record.seed = seed;
            Params<float> trained = train_loop(net, std::move(params), train_ds, loop, record);

            MetricRow row = evaluate_model(net, trained, eval_ds, policy, options.eval_batch, fwd);

            NormCompareCell cell;
            cell.variant = variant;
            cell.seed = seed;
            cell.top1 = row.top1;
            for (const auto& s : record.steps) cell.batch_hashes.push_back(s.batch_hash);
            seed_hashes.push_back(cell.batch_hashes);
            scores[variant].push_back(cell.top1);
            table.cells.push_back(std::move(cell));
        }
        // paired comparison: every variant must have consumed the same batches
        for (size_t v = 1; v < seed_hashes.size(); ++v)
            if (seed_hashes[v] != seed_hashes[0])
                throw StateError("normcompare: variants diverged in data order");
    }
    for (auto& [variant, vals] : scores) table.median_top1[variant] = median_of(vals);
    return table;
}

}  // namespace bitkit
