#pragma once

#include <optional>
#include <vector>

#include "bitkit/data.hpp"
#include "bitkit/layers.hpp"

namespace bitkit {

// Near-duplicate signature: a 64-bit difference hash over an 8x8 grid of
// horizontal gradient signs, plus an optional unit-norm embedding from a
// frozen backbone's pooled features.
struct Fingerprint {
    uint64_t dhash = 0;
    bool low_entropy = false;
    std::optional<std::vector<float>> embed;
};

uint64_t dhash64(const Tensor<float>& chw);
int hamming_distance(uint64_t a, uint64_t b);

Fingerprint fingerprint(const Tensor<float>& chw);
Fingerprint fingerprint(const Tensor<float>& chw, const ResNet<float>& net,
                        const Params<float>& params, int64_t embed_resize);

std::vector<Fingerprint> fingerprint_dataset(const Dataset& ds, const ResNet<float>* net,
                                             const Params<float>* params, int64_t embed_resize);

struct DupPair {
    int64_t upstream_idx = 0;
    int64_t test_idx = 0;
    int hamming = 0;
    std::optional<double> cosine;
};

// A pair is reported when the hash Hamming distance is within threshold OR
// (both embeddings present and) cosine similarity reaches its threshold.
// Hash candidates come from multi-index lookups over 8-bit bands, so small
// thresholds stay near-linear in corpus size.
std::vector<DupPair> find_near_duplicates(const std::vector<Fingerprint>& upstream,
                                          const std::vector<Fingerprint>& test,
                                          int hamming_thresh, double cosine_thresh);

constexpr int kDefaultHammingThresh = 6;
constexpr double kDefaultCosineThresh = 0.95;

struct DedupReport {
    double full_acc = 0.0;
    std::optional<double> dedup_acc;  // absent when every item was flagged
    int64_t dup_count = 0;
};

// Accuracy on the full test set vs the test set minus flagged items.
DedupReport dedup_report(const Dataset& test, const std::vector<DupPair>& pairs,
                         const ResNet<float>& net, const Params<float>& params,
                         const AugPolicy& policy);

}  // namespace bitkit
