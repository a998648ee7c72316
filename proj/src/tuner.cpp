#include "robustcnn/tuner.hpp"

#include <sstream>

#include "robustcnn/flops.hpp"

namespace robustcnn {

namespace {

uint64_t total_at_depth(ModelSpec spec, int64_t depth) {
  spec.stage_depths[2] = depth;
  return count_flops(build_plan(spec)).total_macs;
}

}  // namespace

TuneResult tune_stage3_depth(const ModelSpec& spec, uint64_t budget, double tol) {
  spec.validate();
  if (budget == 0) throw std::invalid_argument("budget must be positive");
  if (tol < 0.0 || tol >= 1.0) throw std::invalid_argument("tol must be in [0, 1)");
  const double lo = static_cast<double>(budget) * (1.0 - tol);
  const double hi = static_cast<double>(budget) * (1.0 + tol);

  constexpr int64_t kMaxDepth = 4096;
  uint64_t below = 0;  // largest total still under the band, 0 if none
  for (int64_t depth = 1; depth <= kMaxDepth; ++depth) {
    const uint64_t total = total_at_depth(spec, depth);
    if (static_cast<double>(total) < lo) {
      below = total;
      continue;
    }
    if (static_cast<double>(total) <= hi) return {depth, total};
    std::ostringstream msg;
    msg << "no stage-3 depth lands in [" << static_cast<uint64_t>(lo) << ", "
        << static_cast<uint64_t>(hi) << "] MACs; nearest candidates:";
    if (depth > 1) msg << " depth " << depth - 1 << " -> " << below << " (below)";
    msg << " depth " << depth << " -> " << total << " (above)";
    throw std::runtime_error(msg.str());
  }
  std::ostringstream msg;
  msg << "budget " << budget << " unreachable: depth " << kMaxDepth << " gives only "
      << total_at_depth(spec, kMaxDepth) << " MACs";
  throw std::runtime_error(msg.str());
}

}  // namespace robustcnn
