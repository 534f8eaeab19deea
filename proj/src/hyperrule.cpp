#include "bitkit/hyperrule.hpp"

#include <json.hpp>

namespace bitkit {

HyperRulePlan plan(const TaskSpec& task) {
    if (task.num_train_examples < 1 || task.native_height < 1 || task.native_width < 1)
        throw ValidationError("plan: TaskSpec extents must be positive");

    HyperRulePlan p;

    // Size regime; the boundaries read "fewer than", so exactly 20k is
    // medium and exactly 500k is large.
    if (task.num_train_examples < 20000) {
        p.size_regime = SizeRegime::Small;
        p.total_steps = 500;
    } else if (task.num_train_examples < 500000) {
        p.size_regime = SizeRegime::Medium;
        p.total_steps = 10000;
    } else {
        p.size_regime = SizeRegime::Large;
        p.total_steps = 20000;
    }

    // Resolution: area threshold of 96x96 pixels.
    if (task.largest_model_mode) {
        p.resize_to = 512;
        p.crop_to = 480;
    } else if (task.native_height * task.native_width < 96 * 96) {
        p.resize_to = 160;
        p.crop_to = 128;
    } else {
        p.resize_to = 448;
        p.crop_to = 384;
    }

    p.decay_steps = {p.total_steps * 3 / 10, p.total_steps * 6 / 10, p.total_steps * 9 / 10};

    p.lr = 0.003;
    p.momentum = 0.9;
    p.batch_size = 512;

    if (p.size_regime != SizeRegime::Small) p.mixup_alpha = 0.1;

    return p;
}

std::string plan_to_json(const HyperRulePlan& plan) {
    nlohmann::ordered_json j;
    j["size_regime"] = to_string(plan.size_regime);
    j["resize_to"] = plan.resize_to;
    j["crop_to"] = plan.crop_to;
    j["total_steps"] = plan.total_steps;
    j["decay_steps"] = plan.decay_steps;
    j["lr"] = plan.lr;
    j["momentum"] = plan.momentum;
    j["batch_size"] = plan.batch_size;
    if (plan.mixup_alpha)
        j["mixup_alpha"] = *plan.mixup_alpha;
    else
        j["mixup_alpha"] = nullptr;
    return j.dump();
}

}  // namespace bitkit
