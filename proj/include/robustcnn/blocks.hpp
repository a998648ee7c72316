#pragma once

#include <array>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "robustcnn/layers.hpp"

namespace robustcnn {

// Four residual block instantiations differing in where the depthwise
// convolution sits relative to the 1x1 expand/reduce pair.
enum class BlockKind { DW, InvertedDW, UpInvertedDW, DownInvertedDW };

inline const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::DW: return "dw";
    case BlockKind::InvertedDW: return "inverted_dw";
    case BlockKind::UpInvertedDW: return "up_inverted_dw";
    case BlockKind::DownInvertedDW: return "down_inverted_dw";
  }
  throw std::logic_error("unreachable");
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "dw") return BlockKind::DW;
  if (s == "inverted_dw") return BlockKind::InvertedDW;
  if (s == "up_inverted_dw") return BlockKind::UpInvertedDW;
  if (s == "down_inverted_dw") return BlockKind::DownInvertedDW;
  throw std::invalid_argument("unknown block kind '" + s + "'");
}

// Placement index i means "after the i-th convolution"; 0 means "after every
// convolution" (the full baseline placement).
constexpr int kAllPlacement = 0;

struct NormActPlacement {
  int norm_at = kAllPlacement;
  int act_at = kAllPlacement;

  void validate() const {
    if (norm_at < 0 || norm_at > 3 || act_at < 0 || act_at > 3) {
      throw std::invalid_argument("placement index must be 'all' or 1..3");
    }
  }
  bool full() const { return norm_at == kAllPlacement && act_at == kAllPlacement; }
  bool norm_after(int conv_index) const {
    return norm_at == kAllPlacement || norm_at == conv_index;
  }
  bool act_after(int conv_index) const { return act_at == kAllPlacement || act_at == conv_index; }
  bool operator==(const NormActPlacement&) const = default;
};

// 1-based index of the conv whose output channel count exceeds its input count.
inline int expansion_conv_index(BlockKind kind) {
  switch (kind) {
    case BlockKind::DW: return 3;
    case BlockKind::InvertedDW: return 1;
    case BlockKind::UpInvertedDW: return 2;
    case BlockKind::DownInvertedDW: return 1;
  }
  throw std::logic_error("unreachable");
}

// One norm after conv 1, one act after the expanding conv.
inline NormActPlacement optimal_placement(BlockKind kind) {
  return NormActPlacement{1, expansion_conv_index(kind)};
}

struct BlockSpec {
  BlockKind kind = BlockKind::DW;
  int64_t width = 64;  // w; block output is 4w for DW, w for inverted kinds
  int64_t kernel = 3;
  int64_t stride = 1;
  NormActPlacement placement;
  double drop_path = 0.0;
  bool dense_middle = false;  // DW only: plain (groups=1) middle conv, as in the original bottleneck

  void validate() const {
    if (width <= 0) throw std::invalid_argument("block width must be positive");
    if (kernel < 3 || kernel % 2 == 0) {
      throw std::invalid_argument("block kernel must be odd and >= 3, got " +
                                  std::to_string(kernel));
    }
    if (stride != 1 && stride != 2) {
      throw std::invalid_argument("block stride must be 1 or 2, got " + std::to_string(stride));
    }
    if (drop_path < 0.0 || drop_path >= 1.0) {
      throw std::invalid_argument("block drop_path must be in [0,1)");
    }
    if (dense_middle && kind != BlockKind::DW) {
      throw std::invalid_argument("dense_middle applies only to the DW kind");
    }
    placement.validate();
  }

  int64_t out_channels() const { return kind == BlockKind::DW ? 4 * width : width; }
};

// Block descriptor grammar: "<kind>:w<width>:k<kernel>:s<stride>:norm<idx|all>:act<idx|all>"
inline std::string format_block_descriptor(const BlockSpec& s) {
  auto idx = [](int v) { return v == kAllPlacement ? std::string("all") : std::to_string(v); };
  std::ostringstream os;
  os << block_kind_name(s.kind) << ":w" << s.width << ":k" << s.kernel << ":s" << s.stride
     << ":norm" << idx(s.placement.norm_at) << ":act" << idx(s.placement.act_at);
  return os.str();
}

inline BlockSpec parse_block_descriptor(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.size() != 6) {
    throw std::invalid_argument("block descriptor '" + text + "' must have 6 ':'-fields");
  }
  auto field = [&](size_t i, const std::string& prefix) -> std::string {
    if (parts[i].rfind(prefix, 0) != 0) {
      throw std::invalid_argument("block descriptor field '" + parts[i] + "' must start with '" +
                                  prefix + "'");
    }
    return parts[i].substr(prefix.size());
  };
  auto parse_int = [&](const std::string& s) -> int64_t {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("bad integer '" + s + "' in block descriptor");
    return v;
  };
  auto parse_idx = [&](const std::string& s) -> int {
    if (s == "all") return kAllPlacement;
    int64_t v = parse_int(s);
    if (v < 1 || v > 3) throw std::invalid_argument("placement index must be 'all' or 1..3");
    return static_cast<int>(v);
  };
  BlockSpec spec;
  spec.kind = parse_block_kind(parts[0]);
  spec.width = parse_int(field(1, "w"));
  spec.kernel = parse_int(field(2, "k"));
  spec.stride = parse_int(field(3, "s"));
  spec.placement.norm_at = parse_idx(field(4, "norm"));
  spec.placement.act_at = parse_idx(field(5, "act"));
  spec.validate();
  return spec;
}

// Conv shapes of the branch, a pure function of (spec, in_channels). Index i
// is the i+1-th convolution.
inline std::array<ConvParams, 3> block_conv_params(const BlockSpec& spec, int64_t in_channels) {
  spec.validate();
  const int64_t w = spec.width;
  const int64_t k = spec.kernel;
  const int64_t s = spec.stride;
  const int64_t pad = same_padding(k);
  switch (spec.kind) {
    case BlockKind::DW: {
      const int64_t g = spec.dense_middle ? 1 : w;
      return {ConvParams{in_channels, w, 1, 1, 0, 1}, ConvParams{w, w, k, s, pad, g},
              ConvParams{w, 4 * w, 1, 1, 0, 1}};
    }
    case BlockKind::InvertedDW:
      return {ConvParams{in_channels, 4 * w, 1, 1, 0, 1}, ConvParams{4 * w, 4 * w, k, s, pad, 4 * w},
              ConvParams{4 * w, w, 1, 1, 0, 1}};
    case BlockKind::UpInvertedDW:
      return {ConvParams{in_channels, in_channels, k, s, pad, in_channels},
              ConvParams{in_channels, 4 * w, 1, 1, 0, 1}, ConvParams{4 * w, w, 1, 1, 0, 1}};
    case BlockKind::DownInvertedDW:
      // depthwise sits last; a stride there would discard the expensive
      // expanded computation, so the stride goes on the first conv
      return {ConvParams{in_channels, 4 * w, 1, s, 0, 1}, ConvParams{4 * w, w, 1, 1, 0, 1},
              ConvParams{w, w, k, 1, pad, w}};
  }
  throw std::logic_error("unreachable");
}

template <typename T>
struct BlockT {
  BlockSpec spec;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  std::vector<Conv2d<T>> convs;                       // exactly 3
  std::vector<std::optional<BatchNorm2d<T>>> norms;   // norms[i] follows convs[i]
  std::vector<bool> acts;                             // acts[i]: ReLU follows convs[i]
  std::optional<Conv2d<T>> proj;
  std::optional<BatchNorm2d<T>> proj_norm;

  bool has_projection() const { return proj.has_value(); }

  int branch_norm_count() const {
    int n = 0;
    for (const auto& o : norms) n += o.has_value() ? 1 : 0;
    return n;
  }
  int branch_act_count() const {
    int n = 0;
    for (bool a : acts) n += a ? 1 : 0;
    return n;
  }

  template <typename Rng>
  TensorT<T> forward(const TensorT<T>& x, NormMode mode, Rng& rng) {
    TensorT<T> h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
      h = convs[i](h);
      if (norms[i]) {
        norms[i]->state.mode = mode;
        h = (*norms[i])(h);
      }
      if (acts[i]) h = relu(h);
    }
    TensorT<T> sc = x;
    if (proj) {
      sc = (*proj)(x);
      proj_norm->state.mode = mode;
      sc = (*proj_norm)(sc);
    }
    if (spec.drop_path > 0.0) h = stochastic_depth(h, spec.drop_path, mode, rng);
    return add(sc, h);
  }

  void visit_params(const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    for (size_t i = 0; i < convs.size(); ++i) {
      fn("conv" + std::to_string(i + 1) + ".weight", convs[i].weight);
      if (norms[i]) {
        fn("norm" + std::to_string(i + 1) + ".gamma", norms[i]->state.gamma);
        fn("norm" + std::to_string(i + 1) + ".beta", norms[i]->state.beta);
      }
    }
    if (proj) {
      fn("proj.weight", proj->weight);
      fn("proj_norm.gamma", proj_norm->state.gamma);
      fn("proj_norm.beta", proj_norm->state.beta);
    }
  }

  void visit_norms(const std::function<void(const std::string&, BatchNormStateT<T>&)>& fn) {
    for (size_t i = 0; i < norms.size(); ++i) {
      if (norms[i]) fn("norm" + std::to_string(i + 1), norms[i]->state);
    }
    if (proj_norm) fn("proj_norm", proj_norm->state);
  }
};

template <typename T, typename Rng>
BlockT<T> build_block(const BlockSpec& spec, int64_t in_channels, Rng& rng) {
  spec.validate();
  if (in_channels <= 0) throw std::invalid_argument("block input channels must be positive");
  BlockT<T> b;
  b.spec = spec;
  b.in_channels = in_channels;
  b.out_channels = spec.out_channels();
  const auto params = block_conv_params(spec, in_channels);
  for (int i = 0; i < 3; ++i) {
    b.convs.emplace_back(params[i], rng);
    if (spec.placement.norm_after(i + 1)) {
      b.norms.emplace_back(std::in_place, params[i].out_channels);
    } else {
      b.norms.emplace_back(std::nullopt);
    }
    b.acts.push_back(spec.placement.act_after(i + 1));
  }
  if (spec.stride != 1 || in_channels != b.out_channels) {
    b.proj.emplace(ConvParams{in_channels, b.out_channels, 1, spec.stride, 0, 1}, rng);
    b.proj_norm.emplace(b.out_channels);
  }
  return b;
}

}  // namespace robustcnn
