#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "robustcnn/blocks.hpp"
#include "robustcnn/layers.hpp"
#include "robustcnn/rng.hpp"

namespace robustcnn {

enum class StemKind { ResNetStyle, Patchify, ConvStem };

inline const char* stem_kind_name(StemKind k) {
  switch (k) {
    case StemKind::ResNetStyle: return "resnet";
    case StemKind::Patchify: return "patchify";
    case StemKind::ConvStem: return "conv_stem";
  }
  throw std::logic_error("unreachable");
}

inline StemKind parse_stem_kind(const std::string& s) {
  if (s == "resnet") return StemKind::ResNetStyle;
  if (s == "patchify") return StemKind::Patchify;
  if (s == "conv_stem") return StemKind::ConvStem;
  throw std::invalid_argument("unknown stem kind '" + s + "'");
}

inline int64_t stem_stride(StemKind stem, int64_t patch_size) {
  switch (stem) {
    case StemKind::ResNetStyle: return 4;
    case StemKind::Patchify: return patch_size;
    case StemKind::ConvStem: return 16;
  }
  throw std::logic_error("unreachable");
}

// First-block strides per stage. The stem covers part of the total
// downsampling; stride-2 stages are assigned from the last stage backwards so
// early stages run at high resolution (under a 16x16 patchify stem, the first
// blocks of stages 2 and 3 end up at stride 1).
inline std::array<int64_t, 4> stride_plan(StemKind stem, int64_t patch_size = 16,
                                          int64_t total_stride = 32) {
  const int64_t s = stem_stride(stem, patch_size);
  if (s <= 0 || total_stride % s != 0) {
    throw std::invalid_argument("total stride " + std::to_string(total_stride) +
                                " not divisible by stem stride " + std::to_string(s));
  }
  int64_t remaining = total_stride / s;
  std::array<int64_t, 4> plan{1, 1, 1, 1};
  for (int i = 3; i >= 0 && remaining > 1; --i) {
    if (remaining % 2 != 0 || i == 0) {
      throw std::invalid_argument("cannot distribute residual stride " +
                                  std::to_string(remaining) + " across stages 2..4");
    }
    plan[i] = 2;
    remaining /= 2;
  }
  if (remaining != 1) throw std::invalid_argument("residual stride does not reduce to 1");
  return plan;
}

struct ModelSpec {
  StemKind stem = StemKind::ResNetStyle;
  int64_t patch_size = 16;  // used by the patchify stem only
  std::array<int64_t, 4> stage_widths{64, 128, 256, 512};
  std::array<int64_t, 4> stage_depths{3, 4, 6, 3};
  BlockKind block_kind = BlockKind::DW;
  int64_t kernel = 3;
  NormActPlacement placement;
  int64_t num_classes = 1000;
  int64_t input_resolution = 224;
  int64_t total_stride = 32;
  double drop_path = 0.1;
  bool stem_norm = false;     // patchify stem: follow the projection with a norm
  bool dense_middle = false;  // DW kind: plain 3x3 middle conv (original bottleneck)

  int64_t stage_out_channels(int i) const {
    return block_kind == BlockKind::DW ? 4 * stage_widths[i] : stage_widths[i];
  }

  std::array<int64_t, 4> strides() const {
    return stride_plan(stem, patch_size, total_stride);
  }

  BlockSpec block_spec(int stage, bool first) const {
    BlockSpec b;
    b.kind = block_kind;
    b.width = stage_widths[stage];
    b.kernel = kernel;
    b.stride = first ? strides()[stage] : 1;
    b.placement = placement;
    b.drop_path = drop_path;
    b.dense_middle = dense_middle;
    return b;
  }

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      if (stage_widths[i] <= 0) throw std::invalid_argument("stage widths must be positive");
      if (stage_depths[i] < 1) throw std::invalid_argument("stage depths must be >= 1");
    }
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (input_resolution <= 0) throw std::invalid_argument("input resolution must be positive");
    if (stem == StemKind::Patchify) {
      if (patch_size < 1) throw std::invalid_argument("patch size must be >= 1");
      if (input_resolution % patch_size != 0) {
        throw std::invalid_argument("input resolution " + std::to_string(input_resolution) +
                                    " not divisible by patch size " + std::to_string(patch_size));
      }
    }
    if (stem == StemKind::ConvStem && stage_widths[0] % 8 != 0) {
      throw std::invalid_argument("conv stem needs stage-1 width divisible by 8");
    }
    if (input_resolution % total_stride != 0) {
      throw std::invalid_argument("input resolution " + std::to_string(input_resolution) +
                                  " not divisible by total stride " +
                                  std::to_string(total_stride));
    }
    block_spec(0, true).validate();  // kernel/stride/placement checks
    (void)strides();
  }
};

// ---------------------------------------------------------------------------
// Structural plan: every parameterized layer with its input shape, plus
// element counts for the unparameterized ops. Pure structure; weight-free.
// ---------------------------------------------------------------------------

struct PlannedConv {
  std::string path;
  ConvParams params;
  Shape in_shape;

  Shape out_shape() const { return params.out_shape(in_shape); }
  uint64_t macs() const { return params.macs(in_shape); }
};

struct PlannedLinear {
  std::string path;
  int64_t in_features = 0;
  int64_t out_features = 0;

  uint64_t macs() const { return static_cast<uint64_t>(in_features) * out_features; }
};

struct PlannedElementwise {
  std::string path;
  uint64_t ops = 0;  // rough elementwise operation count (not MACs)
};

struct ModelPlan {
  ModelSpec spec;
  std::vector<PlannedConv> convs;
  PlannedLinear head;
  std::vector<PlannedElementwise> elementwise;
  Shape pre_pool_shape{1, 1, 1, 1};
};

inline ModelPlan build_plan(const ModelSpec& spec) {
  spec.validate();
  ModelPlan plan;
  plan.spec = spec;
  const int64_t w1 = spec.stage_widths[0];
  Shape cur(1, 3, spec.input_resolution, spec.input_resolution);

  auto push_conv = [&](const std::string& path, const ConvParams& p) {
    plan.convs.push_back({path, p, cur});
    cur = p.out_shape(cur);
  };
  auto push_ew = [&](const std::string& path, uint64_t ops) {
    plan.elementwise.push_back({path, ops});
  };

  switch (spec.stem) {
    case StemKind::ResNetStyle: {
      push_conv("stem.conv1", ConvParams{3, w1, 7, 2, 3, 1});
      push_ew("stem.norm1", 2 * static_cast<uint64_t>(cur.numel()));
      push_ew("stem.act1", static_cast<uint64_t>(cur.numel()));
      PoolParams pool;
      Shape pooled = pool.out_shape(cur);
      push_ew("stem.maxpool", static_cast<uint64_t>(pooled.numel()) * pool.kernel * pool.kernel);
      cur = pooled;
      break;
    }
    case StemKind::Patchify: {
      push_conv("stem.conv1",
                ConvParams{3, w1, spec.patch_size, spec.patch_size, 0, 1});
      if (spec.stem_norm) push_ew("stem.norm1", 2 * static_cast<uint64_t>(cur.numel()));
      break;
    }
    case StemKind::ConvStem: {
      int64_t ch = 3;
      for (int i = 0; i < 4; ++i) {
        const int64_t out = w1 >> (3 - i);  // w/8, w/4, w/2, w
        push_conv("stem.conv" + std::to_string(i + 1), ConvParams{ch, out, 3, 2, 1, 1});
        push_ew("stem.norm" + std::to_string(i + 1), 2 * static_cast<uint64_t>(cur.numel()));
        push_ew("stem.act" + std::to_string(i + 1), static_cast<uint64_t>(cur.numel()));
        ch = out;
      }
      break;
    }
  }

  int64_t in_ch = w1;
  for (int stage = 0; stage < 4; ++stage) {
    for (int64_t b = 0; b < spec.stage_depths[stage]; ++b) {
      const std::string prefix =
          "stage" + std::to_string(stage + 1) + ".block" + std::to_string(b + 1) + ".";
      BlockSpec bs = spec.block_spec(stage, b == 0);
      if (bs.stride == 2 && (cur.h % 2 != 0 || cur.w % 2 != 0)) {
        throw std::invalid_argument("stride plan incompatible with input resolution: stage " +
                                    std::to_string(stage + 1) + " strides an odd-sized map " +
                                    cur.str());
      }
      const Shape block_in = cur;
      auto params = block_conv_params(bs, in_ch);
      for (int ci = 0; ci < 3; ++ci) {
        push_conv(prefix + "conv" + std::to_string(ci + 1), params[ci]);
        if (bs.placement.norm_after(ci + 1)) {
          push_ew(prefix + "norm" + std::to_string(ci + 1),
                  2 * static_cast<uint64_t>(cur.numel()));
        }
        if (bs.placement.act_after(ci + 1)) {
          push_ew(prefix + "act" + std::to_string(ci + 1), static_cast<uint64_t>(cur.numel()));
        }
      }
      const Shape branch_out = cur;
      if (bs.stride != 1 || in_ch != bs.out_channels()) {
        cur = block_in;
        push_conv(prefix + "proj",
                  ConvParams{in_ch, bs.out_channels(), 1, bs.stride, 0, 1});
        push_ew(prefix + "proj_norm", 2 * static_cast<uint64_t>(cur.numel()));
        if (cur != branch_out) {
          throw std::logic_error("projection shape mismatch: " + cur.str() + " vs " +
                                 branch_out.str());
        }
      }
      push_ew(prefix + "add", static_cast<uint64_t>(cur.numel()));
      in_ch = bs.out_channels();
    }
  }

  plan.pre_pool_shape = cur;
  push_ew("gap", static_cast<uint64_t>(cur.numel()));
  plan.head = {"head", in_ch, spec.num_classes};
  return plan;
}

// ---------------------------------------------------------------------------
// Weight-owning model
// ---------------------------------------------------------------------------

template <typename T>
struct StemT {
  std::vector<Conv2d<T>> convs;
  std::vector<std::optional<BatchNorm2d<T>>> norms;
  std::vector<bool> acts;
  bool maxpool = false;
  int64_t out_channels = 0;

  TensorT<T> forward(const TensorT<T>& x, NormMode mode) {
    TensorT<T> h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
      h = convs[i](h);
      if (norms[i]) {
        norms[i]->state.mode = mode;
        h = (*norms[i])(h);
      }
      if (acts[i]) h = relu(h);
    }
    if (maxpool) h = max_pool2d(h);
    return h;
  }

  void visit_params(const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    for (size_t i = 0; i < convs.size(); ++i) {
      fn("conv" + std::to_string(i + 1) + ".weight", convs[i].weight);
      if (norms[i]) {
        fn("norm" + std::to_string(i + 1) + ".gamma", norms[i]->state.gamma);
        fn("norm" + std::to_string(i + 1) + ".beta", norms[i]->state.beta);
      }
    }
  }

  void visit_norms(const std::function<void(const std::string&, BatchNormStateT<T>&)>& fn) {
    for (size_t i = 0; i < norms.size(); ++i) {
      if (norms[i]) fn("norm" + std::to_string(i + 1), norms[i]->state);
    }
  }
};

template <typename T>
struct Model {
  ModelSpec spec;
  StemT<T> stem;
  std::array<std::vector<BlockT<T>>, 4> stages;
  std::optional<LinearLayer<T>> head;
  NormMode mode = NormMode::Train;
  std::mt19937_64 drop_rng;

  void set_mode(NormMode m) { mode = m; }

  TensorT<T> forward_features(const TensorT<T>& x) {
    TensorT<T> h = stem.forward(x, mode);
    for (auto& stage : stages) {
      for (auto& block : stage) h = block.forward(h, mode, drop_rng);
    }
    return h;
  }

  TensorT<T> forward(const TensorT<T>& x) {
    TensorT<T> h = forward_features(x);
    h = global_avg_pool(h);
    return (*head)(h);
  }

  void visit_params(const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    stem.visit_params([&](const std::string& n, TensorT<T>& t) { fn("stem." + n, t); });
    for (int s = 0; s < 4; ++s) {
      for (size_t b = 0; b < stages[s].size(); ++b) {
        const std::string prefix =
            "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1) + ".";
        stages[s][b].visit_params(
            [&](const std::string& n, TensorT<T>& t) { fn(prefix + n, t); });
      }
    }
    fn("head.weight", head->weight);
    fn("head.bias", head->bias);
  }

  void visit_norms(const std::function<void(const std::string&, BatchNormStateT<T>&)>& fn) {
    stem.visit_norms([&](const std::string& n, BatchNormStateT<T>& st) { fn("stem." + n, st); });
    for (int s = 0; s < 4; ++s) {
      for (size_t b = 0; b < stages[s].size(); ++b) {
        const std::string prefix =
            "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1) + ".";
        stages[s][b].visit_norms(
            [&](const std::string& n, BatchNormStateT<T>& st) { fn(prefix + n, st); });
      }
    }
  }

  int64_t num_params() {
    int64_t n = 0;
    visit_params([&](const std::string&, TensorT<T>& t) { n += t.numel(); });
    return n;
  }
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Model<T> model;
  model.spec = spec;
  model.drop_rng = make_rng(seed, rng_stream::kDropPath);
  auto rng = make_rng(seed, rng_stream::kWeightInit);
  const int64_t w1 = spec.stage_widths[0];

  auto& stem = model.stem;
  switch (spec.stem) {
    case StemKind::ResNetStyle:
      stem.convs.emplace_back(ConvParams{3, w1, 7, 2, 3, 1}, rng);
      stem.norms.emplace_back(std::in_place, w1);
      stem.acts.push_back(true);
      stem.maxpool = true;
      break;
    case StemKind::Patchify:
      stem.convs.emplace_back(ConvParams{3, w1, spec.patch_size, spec.patch_size, 0, 1}, rng);
      if (spec.stem_norm) {
        stem.norms.emplace_back(std::in_place, w1);
      } else {
        stem.norms.emplace_back(std::nullopt);
      }
      stem.acts.push_back(false);
      break;
    case StemKind::ConvStem: {
      int64_t ch = 3;
      for (int i = 0; i < 4; ++i) {
        const int64_t out = w1 >> (3 - i);
        stem.convs.emplace_back(ConvParams{ch, out, 3, 2, 1, 1}, rng);
        stem.norms.emplace_back(std::in_place, out);
        stem.acts.push_back(true);
        ch = out;
      }
      break;
    }
  }
  stem.out_channels = w1;

  int64_t in_ch = w1;
  for (int stage = 0; stage < 4; ++stage) {
    for (int64_t b = 0; b < spec.stage_depths[stage]; ++b) {
      BlockSpec bs = spec.block_spec(stage, b == 0);
      model.stages[stage].push_back(build_block<T>(bs, in_ch, rng));
      in_ch = bs.out_channels();
    }
  }
  model.head.emplace(in_ch, spec.num_classes, rng);
  return model;
}

}  // namespace robustcnn
