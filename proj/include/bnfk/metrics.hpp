#pragma once

#include <string>
#include <vector>

#include "bnfk/tensor.hpp"

namespace bnfk {

struct ModelSpec;  // model.hpp

struct OpCounts {
    long long flops = 0;           // full-precision ops (1 MAC = 2 FLOPs)
    long long bops = 0;            // binary (1-bit) ops
    double effective_flops = 0.0;  // flops + bops/64
    long long param_bytes = 0;
};

struct LayerOps {
    std::string name;
    OpCounts counts;
};

struct EvalReport {
    long long tp = 0, tn = 0, fp = 0, fn = 0;
    double accuracy = 0.0;
    double auc = 0.0;
    OpCounts ops;
    std::string to_json() const;
};

// (TP+TN)/N; throws on empty input
double accuracy(const std::vector<int>& preds, const std::vector<int>& truth);

// Trapezoidal ROC area == Mann-Whitney with ties at 1/2.
// Throws if only one class is present.
double auc(const std::vector<double>& scores, const std::vector<int>& truth);

EvalReport make_report(const std::vector<double>& scores, const std::vector<int>& truth,
                       double threshold = 0.5);

std::vector<LayerOps> count_ops_per_layer(const ModelSpec& spec);
OpCounts count_ops(const ModelSpec& spec);
// Same topology with every binary conv counted full precision.
OpCounts count_ops_full_precision(const ModelSpec& spec);

}  // namespace bnfk
