#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bitkit/hyperrule.hpp"
#include "bitkit/rng.hpp"
#include "bitkit/tensor.hpp"

namespace bitkit {

// In-memory dataset: NxCxHxW float images in [0,1] plus sparse labels.
struct Dataset {
    Tensor<float> images;
    std::vector<uint16_t> labels;
    int64_t num_classes = 0;
    std::string name;

    int64_t size() const { return images.defined() ? images.shape[0] : 0; }
    int64_t channels() const { return images.shape[1]; }
    int64_t height() const { return images.shape[2]; }
    int64_t width() const { return images.shape[3]; }

    void validate() const;
    Dataset subset(const std::vector<int64_t>& indices) const;
    Tensor<float> image(int64_t i) const;  // CxHxW copy of one example
};

struct AugPolicy {
    int64_t resize_to = 0;
    int64_t crop_to = 0;
    bool random_flip = true;
    bool random_crop = true;
    int64_t eval_resize_to = 0;

    // Evaluation resizes to the training crop resolution.
    static AugPolicy from_plan(const HyperRulePlan& plan, bool allow_flip, bool allow_crop);
};

// Bilinear resampling with the half-pixel-center convention.
Tensor<float> bilinear_resize(const Tensor<float>& chw, int64_t out_h, int64_t out_w);

// resize -> (random|center) crop -> coin-flip horizontal mirror.
Tensor<float> preprocess_train(const Tensor<float>& chw, const AugPolicy& policy, Rng& rng);

// Deterministic resize only.
Tensor<float> preprocess_eval(const Tensor<float>& chw, const AugPolicy& policy);

std::vector<float> one_hot_row(uint16_t label, int64_t num_classes);
Tensor<float> one_hot(const std::vector<uint16_t>& labels, int64_t num_classes);

// Deterministic core of MixUp: convex-combine every example (and its label
// row) with its permutation partner using a single lambda.
std::pair<Tensor<float>, Tensor<float>> mixup_apply(const Tensor<float>& images,
                                                    const Tensor<float>& onehot_labels,
                                                    double lambda,
                                                    const std::vector<int64_t>& perm);

// lambda ~ Beta(alpha, alpha) drawn once per batch; partners drawn as a
// uniform random permutation.
std::pair<Tensor<float>, Tensor<float>> mixup_batch(const Tensor<float>& images,
                                                    const Tensor<float>& onehot_labels,
                                                    double alpha, Rng& rng);

// Exactly n examples per class, uniform without replacement, deterministic
// for (dataset, n, seed).
Dataset fewshot_subsample(const Dataset& dataset, int64_t n_per_class, uint64_t seed);

// BITD container: magic "BITD", u32 version=1, u32 N,C,H,W,num_classes,
// then N*C*H*W f32 little-endian, then N u16 labels.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Deterministic index-hash split; examples with splitmix64(i) % fold == 0
// land in the second (held-out) part.
std::pair<std::vector<int64_t>, std::vector<int64_t>> hash_split(int64_t n, uint64_t fold = 5);

// Parametric colored-shape classes; class identity k maps to a
// (shape, color) combination so tasks with disjoint class ids still share
// visual structure. Images are size x size RGB.
struct SynthSpec {
    std::vector<int64_t> class_ids;  // combination indices, each < 36
    int64_t n_per_class = 100;
    int64_t size = 32;
    uint64_t seed = 0;
    std::string name = "synth";
    double noise = 0.04;  // per-pixel background noise amplitude
};
Dataset make_synthetic_dataset(const SynthSpec& spec);

// Gather + preprocess a training or eval batch.
Tensor<float> make_train_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                               const AugPolicy& policy, Rng& rng);
Tensor<float> make_eval_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                              const AugPolicy& policy);

}  // namespace bitkit
