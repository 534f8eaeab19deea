#include "bitkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bitkit {

double topk_accuracy(const Tensor<float>& logits, const std::vector<uint16_t>& labels, int64_t k) {
    if (logits.rank() != 2) throw DimensionError("topk_accuracy: logits must be NxC");
    const int64_t N = logits.shape[0], C = logits.shape[1];
    if (static_cast<int64_t>(labels.size()) != N)
        throw DimensionError("topk_accuracy: label count mismatch");
    if (k < 1 || k > C) throw UsageError("topk_accuracy: k must lie in [1, C]");
    int64_t hits = 0;
    for (int64_t i = 0; i < N; ++i) {
        const uint16_t label = labels[static_cast<size_t>(i)];
        if (label >= C) throw ValidationError("topk_accuracy: label out of range");
        const float lv = logits.at2(i, label);
        int64_t rank = 0;
        for (int64_t c = 0; c < C; ++c) {
            if (logits.at2(i, c) > lv) ++rank;
            else if (logits.at2(i, c) == lv && c < label) ++rank;
        }
        if (rank < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(N);
}

SuiteAggregate aggregate(const std::vector<MetricRow>& rows) {
    if (rows.empty()) throw AggregationError("aggregate: no rows");
    // group by task, keeping the order of first appearance
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> groups;
    for (const auto& r : rows) {
        if (!groups.count(r.task)) order.push_back(r.task);
        groups[r.task].push_back(r.top1);
    }
    SuiteAggregate out;
    double sum_medians = 0.0;
    for (const auto& task : order) {
        auto vals = groups[task];
        std::sort(vals.begin(), vals.end());
        const size_t n = vals.size();
        TaskAggregate agg;
        agg.task = task;
        agg.runs = static_cast<int64_t>(n);
        agg.median = (n % 2 == 1) ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
        if (n > 1) {
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            agg.stddev = std::sqrt(ss / static_cast<double>(n - 1));
        }
        sum_medians += agg.median;
        out.per_task.push_back(std::move(agg));
    }
    out.suite_score = sum_medians / static_cast<double>(out.per_task.size());
    return out;
}

}  // namespace bitkit
