#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bitkit/error.hpp"

namespace bitkit {

// Downstream task statistics the fine-tuning planner keys off.
struct TaskSpec {
    int64_t num_train_examples = 0;
    int64_t native_height = 0;
    int64_t native_width = 0;
    int64_t num_classes = 0;
    bool allow_flip = true;
    bool allow_crop = true;
    bool largest_model_mode = false;
};

enum class SizeRegime { Small, Medium, Large };

inline const char* to_string(SizeRegime r) {
    switch (r) {
        case SizeRegime::Small: return "small";
        case SizeRegime::Medium: return "medium";
        case SizeRegime::Large: return "large";
    }
    return "?";
}

// Complete fine-tuning configuration produced by the planner.
struct HyperRulePlan {
    int64_t resize_to = 0;
    int64_t crop_to = 0;
    int64_t total_steps = 0;
    std::vector<int64_t> decay_steps;  // always 3, strictly increasing
    double lr = 0.0;
    double momentum = 0.0;
    int64_t batch_size = 0;
    std::optional<double> mixup_alpha;
    SizeRegime size_regime = SizeRegime::Small;

    bool operator==(const HyperRulePlan&) const = default;
};

// Deterministic planner: task statistics -> full fine-tuning configuration.
// Small tasks (<20k examples) get 500 steps, medium (<500k) 10k, large 20k;
// images with native area under 96x96 train at resize 160 / crop 128,
// larger ones at 448/384 (512/480 in largest-model mode); learning-rate
// decays by 10x at 30/60/90% of the schedule; MixUp only for medium/large.
HyperRulePlan plan(const TaskSpec& task);

// Canonical single-line JSON rendering with fixed key order, used by the
// CLI and golden-file tests.
std::string plan_to_json(const HyperRulePlan& plan);

}  // namespace bitkit
