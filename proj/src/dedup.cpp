#include "bitkit/dedup.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <unordered_map>

#include "bitkit/metrics.hpp"

namespace bitkit {

namespace {

// Mean-free grayscale plane from a CHW image.
Tensor<float> to_gray(const Tensor<float>& chw) {
    const int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
    Tensor<float> gray = Tensor<float>::zeros({1, H, W});
    if (C == 3) {
        const float* r = chw.ptr();
        const float* g = chw.ptr() + H * W;
        const float* b = chw.ptr() + 2 * H * W;
        for (int64_t i = 0; i < H * W; ++i)
            gray[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    } else {
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < H * W; ++i) gray[i] += chw[c * H * W + i];
        for (int64_t i = 0; i < H * W; ++i) gray[i] /= static_cast<float>(C);
    }
    return gray;
}

}  // namespace

uint64_t dhash64(const Tensor<float>& chw) {
    if (chw.rank() != 3) throw DimensionError("dhash64: expected CxHxW");
    if (chw.shape[1] < 9 || chw.shape[2] < 9)
        throw ValidationError("dhash64: image must be at least 9x9");
    Tensor<float> small = bilinear_resize(to_gray(chw), 8, 9);
    uint64_t hash = 0;
    for (int64_t r = 0; r < 8; ++r)
        for (int64_t c = 0; c < 8; ++c)
            if (small[r * 9 + c + 1] > small[r * 9 + c])
                hash |= 1ull << (r * 8 + c);
    return hash;
}

int hamming_distance(uint64_t a, uint64_t b) { return std::popcount(a ^ b); }

Fingerprint fingerprint(const Tensor<float>& chw) {
    Fingerprint fp;
    fp.dhash = dhash64(chw);
    fp.low_entropy = fp.dhash == 0;
    return fp;
}

Fingerprint fingerprint(const Tensor<float>& chw, const ResNet<float>& net,
                        const Params<float>& params, int64_t embed_resize) {
    Fingerprint fp = fingerprint(chw);
    Tensor<float> img = bilinear_resize(chw, embed_resize, embed_resize);
    Tensor<float> batch = Tensor<float>::zeros({1, chw.shape[0], embed_resize, embed_resize});
    std::copy(img.ptr(), img.ptr() + img.numel(), batch.ptr());
    Tensor<float> feats = net.features(nullptr, batch, params);
    std::vector<float> e(static_cast<size_t>(feats.numel()));
    double norm = 0.0;
    for (int64_t i = 0; i < feats.numel(); ++i) norm += static_cast<double>(feats[i]) * feats[i];
    norm = std::sqrt(std::max(norm, 1e-24));
    for (int64_t i = 0; i < feats.numel(); ++i)
        e[static_cast<size_t>(i)] = static_cast<float>(feats[i] / norm);
    fp.embed = std::move(e);
    return fp;
}

std::vector<Fingerprint> fingerprint_dataset(const Dataset& ds, const ResNet<float>* net,
                                             const Params<float>* params, int64_t embed_resize) {
    std::vector<Fingerprint> out;
    out.reserve(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) {
        Tensor<float> img = ds.image(i);
        out.push_back(net && params ? fingerprint(img, *net, *params, embed_resize)
                                    : fingerprint(img));
    }
    return out;
}

std::vector<DupPair> find_near_duplicates(const std::vector<Fingerprint>& upstream,
                                          const std::vector<Fingerprint>& test,
                                          int hamming_thresh, double cosine_thresh) {
    if (hamming_thresh < 0 || hamming_thresh > 64)
        throw ValidationError("find_near_duplicates: hamming threshold must lie in [0,64]");
    if (cosine_thresh < -1.0 || cosine_thresh > 1.0)
        throw ValidationError("find_near_duplicates: cosine threshold must lie in [-1,1]");

    std::vector<DupPair> pairs;
    // multi-index: band b of fingerprint h is byte b; any pair within the
    // hamming threshold (< 8) shares at least one exact band
    const bool use_bands = hamming_thresh < 8;
    std::unordered_map<uint64_t, std::vector<int64_t>> bands;
    if (use_bands) {
        for (size_t i = 0; i < upstream.size(); ++i)
            for (int b = 0; b < 8; ++b) {
                const uint64_t key = (static_cast<uint64_t>(b) << 8) |
                                     ((upstream[i].dhash >> (b * 8)) & 0xff);
                bands[key].push_back(static_cast<int64_t>(i));
            }
    }

    std::vector<int64_t> last_seen(upstream.size(), -1);
    for (size_t t = 0; t < test.size(); ++t) {
        // hash route
        auto consider = [&](int64_t u) {
            if (last_seen[static_cast<size_t>(u)] == static_cast<int64_t>(t)) return;
            last_seen[static_cast<size_t>(u)] = static_cast<int64_t>(t);
            const int dist = hamming_distance(upstream[static_cast<size_t>(u)].dhash,
                                              test[t].dhash);
            if (dist <= hamming_thresh) {
                DupPair p;
                p.upstream_idx = u;
                p.test_idx = static_cast<int64_t>(t);
                p.hamming = dist;
                if (upstream[static_cast<size_t>(u)].embed && test[t].embed) {
                    const auto& a = *upstream[static_cast<size_t>(u)].embed;
                    const auto& b = *test[t].embed;
                    double dot = 0.0;
                    for (size_t k = 0; k < a.size(); ++k) dot += static_cast<double>(a[k]) * b[k];
                    p.cosine = dot;
                }
                pairs.push_back(p);
            }
        };
        if (use_bands) {
            for (int b = 0; b < 8; ++b) {
                const uint64_t key =
                    (static_cast<uint64_t>(b) << 8) | ((test[t].dhash >> (b * 8)) & 0xff);
                auto it = bands.find(key);
                if (it == bands.end()) continue;
                for (int64_t u : it->second) consider(u);
            }
        } else {
            for (size_t u = 0; u < upstream.size(); ++u) consider(static_cast<int64_t>(u));
        }

        // embedding route: catches resized/recompressed variants the hash
        // misses
        if (!test[t].embed) continue;
        for (size_t u = 0; u < upstream.size(); ++u) {
            if (!upstream[u].embed) continue;
            const int dist = hamming_distance(upstream[u].dhash, test[t].dhash);
            if (dist <= hamming_thresh) continue;  // already handled by the hash route
            const auto& a = *upstream[u].embed;
            const auto& b = *test[t].embed;
            double dot = 0.0;
            for (size_t k = 0; k < a.size(); ++k) dot += static_cast<double>(a[k]) * b[k];
            if (dot >= cosine_thresh) {
                DupPair p;
                p.upstream_idx = static_cast<int64_t>(u);
                p.test_idx = static_cast<int64_t>(t);
                p.hamming = dist;
                p.cosine = dot;
                pairs.push_back(p);
            }
        }
    }
    return pairs;
}

DedupReport dedup_report(const Dataset& test, const std::vector<DupPair>& pairs,
                         const ResNet<float>& net, const Params<float>& params,
                         const AugPolicy& policy) {
    test.validate();
    const int64_t N = test.size();
    std::vector<bool> flagged(static_cast<size_t>(N), false);
    for (const auto& p : pairs) {
        if (p.test_idx < 0 || p.test_idx >= N)
            throw ValidationError("dedup_report: pair references test index " +
                                  std::to_string(p.test_idx));
        flagged[static_cast<size_t>(p.test_idx)] = true;
    }

    // per-example correctness at top-1, evaluated in bounded batches
    int64_t correct_full = 0, correct_flagged = 0, dup_count = 0;
    const int64_t kBatch = 256;
    for (int64_t start = 0; start < N; start += kBatch) {
        const int64_t stop = std::min(N, start + kBatch);
        std::vector<int64_t> idx;
        for (int64_t i = start; i < stop; ++i) idx.push_back(i);
        Tensor<float> x = make_eval_batch(test, idx, policy);
        Tensor<float> logits = net.forward(nullptr, x, params);
        for (int64_t i = start; i < stop; ++i) {
            const int64_t row = i - start;
            const uint16_t label = test.labels[static_cast<size_t>(i)];
            const float lv = logits.at2(row, label);
            int64_t rank = 0;
            for (int64_t c = 0; c < net.config().num_classes; ++c) {
                if (logits.at2(row, c) > lv) ++rank;
                else if (logits.at2(row, c) == lv && c < label) ++rank;
            }
            const bool correct = rank < 1;
            if (correct) ++correct_full;
            if (flagged[static_cast<size_t>(i)]) {
                ++dup_count;
                if (correct) ++correct_flagged;
            }
        }
    }

    DedupReport report;
    report.full_acc = static_cast<double>(correct_full) / static_cast<double>(N);
    report.dup_count = dup_count;
    if (dup_count < N)
        report.dedup_acc = static_cast<double>(correct_full - correct_flagged) /
                           static_cast<double>(N - dup_count);
    return report;
}

}  // namespace bitkit
