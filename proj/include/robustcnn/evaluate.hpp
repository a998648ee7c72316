#pragma once

#include <functional>
#include <string>
#include <vector>

#include "robustcnn/corrupt.hpp"
#include "robustcnn/dataset.hpp"
#include "robustcnn/model.hpp"

namespace robustcnn {

// Maps a (B, 3, H, W) batch to (B, K, 1, 1) logits.
using BatchPredictor = std::function<Tensor(const Tensor&)>;

struct CorruptionResult {
  CorruptionFamily family;
  int severity = 0;
  double error = 0.0;  // top-1 error, percent
};

struct RobustnessReport {
  double clean_error = 0.0;
  std::vector<CorruptionResult> entries;
  // Mean over families of the per-family mean over severities; unnormalized.
  double mean_corruption_error = 0.0;
};

struct EvalOptions {
  int64_t batch_size = 32;
  int threads = 1;
  uint64_t corruption_seed = 0;
};

double compute_mean_corruption_error(const std::vector<CorruptionResult>& entries);

double evaluate_clean(const BatchPredictor& predict, const Dataset& data,
                      int64_t batch_size = 32);
double evaluate_clean(Model<float>& model, const Dataset& data, int64_t batch_size = 32);

RobustnessReport evaluate(const BatchPredictor& predict, const Dataset& data,
                          const std::vector<CorruptionFamily>& families,
                          const EvalOptions& opts = {});
RobustnessReport evaluate(Model<float>& model, const Dataset& data,
                          const std::vector<CorruptionFamily>& families,
                          const EvalOptions& opts = {});

// `format` is "text" or "tsv"; `normalize_by` rescales each family's summed
// error by the baseline report's sum (x100), mirroring the usual relative-CE
// convention. The tsv form round-trips through parse_robustness_report.
std::string format_robustness_report(const RobustnessReport& report, const std::string& format,
                                     const RobustnessReport* normalize_by = nullptr);
RobustnessReport parse_robustness_report(const std::string& tsv_text);

}  // namespace robustcnn
