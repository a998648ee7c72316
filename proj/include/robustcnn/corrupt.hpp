#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustcnn/tensor.hpp"

namespace robustcnn {

enum class CorruptionFamily {
  GaussianNoise,
  ShotNoise,
  ImpulseNoise,
  DefocusBlur,
  Brightness,
  Contrast,
  Pixelate,
  JpegBlock,
};

const char* corruption_family_name(CorruptionFamily family);
CorruptionFamily parse_corruption_family(const std::string& name);
const std::vector<CorruptionFamily>& all_corruption_families();

struct CorruptionSpec {
  CorruptionFamily family = CorruptionFamily::GaussianNoise;
  int severity = 1;  // 0 = identity extension, 1..5 from the severity tables
  uint64_t seed = 0;
};

// Severity parameter for a family, from the published 5-entry tables.
double corruption_parameter(CorruptionFamily family, int severity);

// Applies the corruption to an image batch with values in [0, 1]; the result
// is clamped back to [0, 1]. Deterministic under (family, severity, seed).
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec);

}  // namespace robustcnn
