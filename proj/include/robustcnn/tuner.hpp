#pragma once

#include <cstdint>

#include "robustcnn/model.hpp"

namespace robustcnn {

struct TuneResult {
  int64_t depth = 0;        // chosen stage-3 depth
  uint64_t total_macs = 0;  // model total at that depth
};

// Smallest stage-3 depth whose total MACs lands inside budget*(1 +/- tol).
// Total MACs is strictly increasing in the depth, so a linear scan from 1 is
// exact. Throws std::runtime_error with the two bracketing candidates when no
// depth lands inside the band.
TuneResult tune_stage3_depth(const ModelSpec& spec, uint64_t budget, double tol);

}  // namespace robustcnn
