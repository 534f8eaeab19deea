#pragma once

#include <map>
#include <vector>

#include "bitkit/transfer.hpp"

namespace bitkit {

// 2x2 comparison harness: {BatchNorm, GroupNorm} x {plain conv, WS}. The
// BatchNorm here is test scaffolding local to this harness, not a supported
// layer; everything else reuses the production model and train loop.
enum class NormVariant { BN, GN, BN_WS, GN_WS };

inline const char* to_string(NormVariant v) {
    switch (v) {
        case NormVariant::BN: return "bn";
        case NormVariant::GN: return "gn";
        case NormVariant::BN_WS: return "bn+ws";
        case NormVariant::GN_WS: return "gn+ws";
    }
    return "?";
}

struct NormCompareOptions {
    int64_t batch_size = 256;
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    int64_t steps = 200;
    double lr = 0.1;
    double momentum = 0.9;
    int64_t eval_batch = 256;
    int64_t log_every = 8;
};

struct NormCompareCell {
    NormVariant variant = NormVariant::GN;
    uint64_t seed = 0;
    double top1 = 0.0;
    std::vector<uint64_t> batch_hashes;  // per logged step, for pairing checks
};

struct NormCompareTable {
    std::vector<NormCompareCell> cells;
    std::map<NormVariant, double> median_top1;
};

// Trains each variant identically (same init, same data order) except for
// the normalization/WS wiring and reports held-out top-1 per cell plus the
// per-variant median over seeds.
NormCompareTable normcompare(const Dataset& dataset, const ModelConfig& model_config,
                             const NormCompareOptions& options);

}  // namespace bitkit
