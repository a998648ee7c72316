#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustcnn/model.hpp"

namespace robustcnn {

// Static multiply-accumulate cost model. "FLOPs" here means MACs (one
// multiply-accumulate counted once): only that convention lands the classic
// ResNet50 at 4.1G. Norms, activations, pooling, and residual adds count as
// zero; their elementwise work is tracked on the side and surfaced as a note
// when it would exceed 1% of the MAC total.

struct FlopsEntry {
  std::string path;
  Shape out_shape{1, 1, 1, 1};
  int64_t param_count = 0;
  uint64_t macs = 0;
};

struct FlopsReport {
  std::vector<FlopsEntry> entries;  // every parameterized layer, in forward order
  uint64_t total_macs = 0;          // equals the sum over entries exactly
  uint64_t elementwise_ops = 0;     // norm/act/pool/add work excluded from the total
  std::string note;                 // sensitivity remark; empty when negligible
};

uint64_t layer_macs(const ConvParams& conv, const Shape& in);
uint64_t layer_macs(int64_t in_features, int64_t out_features);

FlopsReport count_flops(const ModelPlan& plan);
FlopsReport count_flops(const ModelSpec& spec);

std::string format_report_text(const FlopsReport& report);
std::string format_report_tsv(const FlopsReport& report);

}  // namespace robustcnn
