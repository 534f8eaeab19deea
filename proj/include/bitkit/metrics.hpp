#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bitkit/tensor.hpp"

namespace bitkit {

struct MetricRow {
    std::string task;
    double top1 = 0.0;
    std::optional<double> top5;
    int64_t n_eval = 0;
    std::string model_id;
    uint64_t seed = 0;
};

// Fraction of rows whose label ranks among the k largest logits; ties are
// broken toward the lower class index.
double topk_accuracy(const Tensor<float>& logits, const std::vector<uint16_t>& labels, int64_t k);

struct TaskAggregate {
    std::string task;
    double median = 0.0;
    double stddev = 0.0;
    int64_t runs = 0;
};

struct SuiteAggregate {
    std::vector<TaskAggregate> per_task;
    double suite_score = 0.0;  // unweighted mean of per-task medians
};

// Median +- sample stddev of top-1 per task, suite score across tasks.
SuiteAggregate aggregate(const std::vector<MetricRow>& rows);

}  // namespace bitkit
