#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustcnn/tensor.hpp"

namespace robustcnn {

// On-disk layout: a directory with "manifest.tsv" ("path<TAB>label" per line,
// paths relative to the directory) pointing at serialized image tensors of
// shape (1, 3, H, W) with values in [0, 1].
struct Dataset {
  std::string root;
  std::vector<std::string> paths;
  std::vector<int64_t> labels;
  int64_t num_classes = 0;

  int64_t size() const { return static_cast<int64_t>(paths.size()); }
};

Dataset load_dataset(const std::string& dir);

Tensor load_image(const Dataset& data, int64_t index);

// Stacks the selected samples into one (B, 3, H, W) batch; all images must
// agree on their spatial extent.
Tensor load_batch(const Dataset& data, const std::vector<int64_t>& indices);

// Writes a synthetic class-separable dataset: each class owns a fixed smooth
// color pattern, each sample jitters it with noise and a random shift.
void generate_synth_dataset(const std::string& dir, int64_t samples, int64_t classes,
                            int64_t resolution, uint64_t seed);

}  // namespace robustcnn
