// Acceptance gate: ten integration criteria spanning the compute model, the
// architecture rules, the autodiff numerics, training, distillation, and the
// corruption benchmark. Each criterion prints exactly one PASS/FAIL line with
// its pinned tolerance outcome; the process exits nonzero if any criterion
// fails. The heavyweight criterion (desk-scale training) runs last so the
// cheap structural checks report first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "robustcnn/blocks.hpp"
#include "robustcnn/config.hpp"
#include "robustcnn/corrupt.hpp"
#include "robustcnn/dataset.hpp"
#include "robustcnn/evaluate.hpp"
#include "robustcnn/flops.hpp"
#include "robustcnn/grad_check.hpp"
#include "robustcnn/layers.hpp"
#include "robustcnn/model.hpp"
#include "robustcnn/rng.hpp"
#include "robustcnn/serialize.hpp"
#include "robustcnn/tensor.hpp"
#include "robustcnn/train.hpp"
#include "robustcnn/tuner.hpp"

namespace {

using namespace robustcnn;
namespace fs = std::filesystem;

struct check_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw check_error(msg);
}

std::string gstr(uint64_t macs) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3fG", static_cast<double>(macs) * 1e-9);
  return buf;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("robustcnn-accept-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

double mse(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mse: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

// Natural-spectrum test card (same construction as the unit suite): octaves of
// sinusoids with roughly 1/f amplitudes, a plane gradient, seeded jitter,
// values strictly inside (0, 1).
Tensor textured_image(int64_t h = 32, int64_t w = 32) {
  auto rng = make_rng(77, 1);
  std::uniform_real_distribution<double> jitter(-0.12, 0.12);
  const double freq[5] = {1.3, 2.7, 5.3, 9.8, 14.6};
  const double amp[5] = {0.16, 0.10, 0.06, 0.035, 0.02};
  std::vector<float> v(3 * h * w);
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const double pi = std::numbers::pi;
        double val = 0.5;
        for (int o = 0; o < 5; ++o) {
          val += amp[o] * std::sin(2 * pi * freq[o] * y / h + c + o) *
                 std::cos(2 * pi * freq[o] * 1.37 * x / w + 0.7 * o);
        }
        val += 0.1 * (static_cast<double>(y) / h - 0.5) +
               0.06 * (static_cast<double>(x) / w - 0.5) + jitter(rng);
        v[(c * h + y) * w + x] = static_cast<float>(std::clamp(val, 0.03, 0.97));
      }
    }
  }
  return Tensor::from_vector(Shape(1, 3, h, w), std::move(v));
}

// --------------------------------------------------------------------------
// 1. ResNet-50 anchor: 4.1e9 MACs within 2%, counted in under a second.
// --------------------------------------------------------------------------
std::string criterion_flops_anchor() {
  const auto t0 = std::chrono::steady_clock::now();
  const FlopsReport report = count_flops(get_preset("resnet50"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const double anchor = 4.1e9;
  const double rel = (static_cast<double>(report.total_macs) - anchor) / anchor;
  require(std::abs(rel) <= 0.02, "resnet50 total " + std::to_string(report.total_macs) +
                                     " deviates " + std::to_string(rel * 100) + "% from 4.1e9");
  require(report.total_macs == 4'089'184'256ULL,
          "resnet50 total drifted from the pinned 4,089,184,256");
  require(secs < 1.0, "flops count took " + std::to_string(secs) + "s (budget 1s)");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "resnet50 = %llu MACs (%+.2f%% vs 4.1e9) in %.0f ms",
                static_cast<unsigned long long>(report.total_macs), rel * 100, secs * 1e3);
  return buf;
}

// --------------------------------------------------------------------------
// 2. Budget matching: stage-3 depth tuning lands every robust preset within
//    5% of 4.6e9 MACs and every robust-base preset within 5% of 17.6e9, the
//    latter also within 5% of the reported 17.1-17.3G models.
// --------------------------------------------------------------------------
std::string criterion_budget_matching() {
  struct Case {
    const char* preset;
    uint64_t budget;
  };
  const Case cases[] = {
      {"robust-dw", 4'600'000'000ULL},
      {"robust-inverted-dw", 4'600'000'000ULL},
      {"robust-up-inverted-dw", 4'600'000'000ULL},
      {"robust-down-inverted-dw", 4'600'000'000ULL},
      {"robust-base-dw", 17'600'000'000ULL},
      {"robust-base-inverted-dw", 17'600'000'000ULL},
      {"robust-base-up-inverted-dw", 17'600'000'000ULL},
      {"robust-base-down-inverted-dw", 17'600'000'000ULL},
  };
  std::string depths;
  for (const auto& c : cases) {
    ModelSpec spec = get_preset(c.preset);
    const TuneResult tuned = tune_stage3_depth(spec, c.budget, 0.05);
    require(tuned.depth >= 1, std::string(c.preset) + ": nonpositive tuned depth");

    const double budget = static_cast<double>(c.budget);
    const double total = static_cast<double>(tuned.total_macs);
    require(std::abs(total - budget) <= 0.05 * budget,
            std::string(c.preset) + ": tuned total " + gstr(tuned.total_macs) +
                " outside 5% of " + gstr(c.budget));
    if (c.budget > 10'000'000'000ULL) {
      // The published Base models sit at 17.1-17.3G; the tuned totals must be
      // within 5% of that range's center as well.
      require(std::abs(total - 17.2e9) <= 0.05 * 17.2e9,
              std::string(c.preset) + ": tuned total " + gstr(tuned.total_macs) +
                  " outside 5% of 17.2G");
    }

    // Independent recount at the tuned depth must reproduce the tuner's total.
    spec.stage_depths[2] = tuned.depth;
    const FlopsReport recount = count_flops(spec);
    require(recount.total_macs == tuned.total_macs,
            std::string(c.preset) + ": recount disagrees with the tuner");
    if (!depths.empty()) depths += "/";
    depths += std::to_string(tuned.depth);
  }
  return "stage-3 depths " + depths + ", all totals within 5% of budget";
}

// --------------------------------------------------------------------------
// 3. Kernel-size cost law: growing the depthwise kernel from 3 to 13 adds
//    about 0.3G MACs for DW/Up/Down blocks (10x width in the InvertedDW case:
//    about 1.4G).
// --------------------------------------------------------------------------
std::string criterion_kernel_cost() {
  struct Case {
    const char* preset;
    double expected;
    double tol;  // relative
  };
  const Case cases[] = {
      {"resnet-dw", 0.3e9, 0.30},
      {"resnet-up-inverted-dw", 0.3e9, 0.30},
      {"resnet-down-inverted-dw", 0.3e9, 0.30},
      {"resnet-inverted-dw", 1.4e9, 0.15},
  };
  std::string deltas;
  for (const auto& c : cases) {
    ModelSpec spec = get_preset(c.preset);
    spec.kernel = 3;
    const uint64_t k3 = count_flops(spec).total_macs;
    spec.kernel = 13;
    const uint64_t k13 = count_flops(spec).total_macs;
    require(k13 > k3, std::string(c.preset) + ": kernel growth did not add MACs");
    const double delta = static_cast<double>(k13 - k3);
    require(std::abs(delta - c.expected) <= c.tol * c.expected,
            std::string(c.preset) + ": k3->k13 delta " + gstr(k13 - k3) + " outside " +
                std::to_string(c.tol * 100) + "% of " + gstr(static_cast<uint64_t>(c.expected)));
    if (!deltas.empty()) deltas += ", ";
    deltas += gstr(k13 - k3);
  }
  return "k3->k13 deltas " + deltas + " (dw/up/down/inverted)";
}

// --------------------------------------------------------------------------
// 4. Stem geometry: every stem kind at 224x224 with total stride 32 produces
//    a 7x7 pre-pooling feature map.
// --------------------------------------------------------------------------
std::string criterion_stem_geometry() {
  struct Case {
    StemKind stem;
    int64_t patch;
    const char* label;
  };
  const Case cases[] = {
      {StemKind::ResNetStyle, 16, "resnet"},
      {StemKind::Patchify, 4, "patchify4"},
      {StemKind::Patchify, 8, "patchify8"},
      {StemKind::Patchify, 16, "patchify16"},
      {StemKind::ConvStem, 16, "convstem"},
  };
  for (const auto& c : cases) {
    ModelSpec spec;  // defaults: 64/128/256/512 widths, 224 input, stride 32
    spec.stem = c.stem;
    spec.patch_size = c.patch;
    const ModelPlan plan = build_plan(spec);
    require(plan.pre_pool_shape.h == 7 && plan.pre_pool_shape.w == 7,
            std::string(c.label) + ": pre-pool map " + plan.pre_pool_shape.str() +
                " is not 7x7");
  }
  return "5 stem configurations -> 7x7 pre-pool map at 224";
}

// --------------------------------------------------------------------------
// 5. Placement rule: one norm after conv 1, one act after the expanding conv
//    (3/1/2/1 for DW/Inverted/Up/Down); built reduced blocks carry exactly
//    one branch norm and one branch act.
// --------------------------------------------------------------------------
std::string criterion_placement_rule() {
  const std::pair<BlockKind, int> expected[] = {
      {BlockKind::DW, 3},
      {BlockKind::InvertedDW, 1},
      {BlockKind::UpInvertedDW, 2},
      {BlockKind::DownInvertedDW, 1},
  };
  auto rng = make_rng(11, rng_stream::kWeightInit);
  for (const auto& [kind, act] : expected) {
    const NormActPlacement p = optimal_placement(kind);
    require(p.norm_at == 1, std::string(block_kind_name(kind)) + ": norm placement " +
                                std::to_string(p.norm_at) + " != 1");
    require(p.act_at == act, std::string(block_kind_name(kind)) + ": act placement " +
                                 std::to_string(p.act_at) + " != " + std::to_string(act));

    BlockSpec spec;
    spec.kind = kind;
    spec.width = 8;
    spec.kernel = 7;
    spec.stride = 2;
    spec.placement = p;
    BlockT<float> block = build_block<float>(spec, 12, rng);
    require(block.branch_norm_count() == 1,
            std::string(block_kind_name(kind)) + ": built block has " +
                std::to_string(block.branch_norm_count()) + " branch norms");
    require(block.branch_act_count() == 1,
            std::string(block_kind_name(kind)) + ": built block has " +
                std::to_string(block.branch_act_count()) + " branch acts");
  }
  return "norm1 + act 3/1/2/1; reduced blocks carry exactly one norm and one act";
}

// --------------------------------------------------------------------------
// 6. Numerical correctness: analytic gradients match central differences with
//    rel err < 1e-6 in double precision across conv/norm/act/pool/linear,
//    whole blocks, and a whole CIFAR-scale model; depthwise conv matches the
//    naive loop oracle within 1e-6 on an exhaustive small-shape sweep.
//
//    Central differences are only meaningful where the loss is differentiable:
//    a relu preactivation inside the finite-difference stencil's reach makes
//    the numeric estimate measure a kink, not the gradient. Composite
//    instances therefore redraw their input (deterministically) until every
//    relu margin clears the stencil, then the check must pass as usual.
// --------------------------------------------------------------------------

// Mirrors BlockT::forward (drop_path 0) while recording the smallest |input|
// seen by any branch relu.
TensorT<double> walk_block(BlockT<double>& b, const TensorT<double>& x, double& margin) {
  TensorT<double> h = x;
  for (size_t i = 0; i < b.convs.size(); ++i) {
    h = b.convs[i](h);
    if (b.norms[i]) {
      b.norms[i]->state.mode = NormMode::Train;
      h = (*b.norms[i])(h);
    }
    if (b.acts[i]) {
      for (int64_t j = 0; j < h.numel(); ++j) {
        margin = std::min(margin, std::abs(h.ptr()[j]));
      }
      h = relu(h);
    }
  }
  TensorT<double> sc = x;
  if (b.proj) {
    sc = (*b.proj)(x);
    b.proj_norm->state.mode = NormMode::Train;
    sc = (*b.proj_norm)(sc);
  }
  return add(sc, h);
}

// Mirrors Model::forward_features, recording relu margins stem-to-tail.
TensorT<double> walk_features(Model<double>& m, const TensorT<double>& x, double& margin) {
  TensorT<double> h = x;
  for (size_t i = 0; i < m.stem.convs.size(); ++i) {
    h = m.stem.convs[i](h);
    if (m.stem.norms[i]) {
      m.stem.norms[i]->state.mode = NormMode::Train;
      h = (*m.stem.norms[i])(h);
    }
    if (m.stem.acts[i]) {
      for (int64_t j = 0; j < h.numel(); ++j) {
        margin = std::min(margin, std::abs(h.ptr()[j]));
      }
      h = relu(h);
    }
  }
  if (m.stem.maxpool) h = max_pool2d(h);
  for (auto& stage : m.stages) {
    for (auto& block : stage) h = walk_block(block, h, margin);
  }
  return h;
}

std::string criterion_numerics() {
  using D = double;
  int instances = 0;
  double worst = 0.0;
  auto rng = make_rng(29, rng_stream::kWeightInit);

  auto run_check = [&](const std::string& label, std::vector<TensorT<D>> leaves,
                       const std::function<TensorT<D>()>& f, int64_t max_coords) {
    const auto res = grad_check_leaves<D>(f, std::move(leaves), 1e-4, 1e-6, max_coords,
                                          1000 + instances, 2);
    require(res.pass, label + ": grad rel err " + std::to_string(res.max_rel_err) + " >= 1e-6");
    worst = std::max(worst, static_cast<double>(res.max_rel_err));
    ++instances;
  };
  // conv2d across group settings (dense, grouped, depthwise), strides, kernels.
  struct ConvCase {
    Shape in;
    ConvParams p;
  };
  const ConvCase convs[] = {
      {Shape(2, 4, 5, 5), ConvParams{4, 6, 3, 1, 1, 1}},
      {Shape(1, 4, 6, 6), ConvParams{4, 8, 3, 2, 1, 2}},
      {Shape(2, 6, 5, 5), ConvParams{6, 6, 3, 1, 1, 6}},
      {Shape(1, 3, 7, 7), ConvParams{3, 3, 5, 2, 2, 3}},
      {Shape(2, 8, 4, 4), ConvParams{8, 5, 1, 1, 0, 1}},
      {Shape(1, 4, 8, 8), ConvParams{4, 4, 7, 2, 3, 4}},
  };
  for (const auto& c : convs) {
    auto x = TensorT<D>::rand_uniform(c.in, -1.0, 1.0, rng);
    auto w = TensorT<D>::rand_normal(
        Shape(c.p.out_channels, c.p.in_channels / c.p.groups, c.p.kernel, c.p.kernel), 0.0, 0.5,
        rng);
    auto r = TensorT<D>::rand_uniform(c.p.out_shape(c.in), -1.0, 1.0, rng);
    run_check("conv2d g" + std::to_string(c.p.groups), {x, w},
              [=]() { return sum(mul(conv2d(x, w, c.p), r)); }, 8);
  }

  // batch_norm in training mode: gradients through batch statistics.
  for (int i = 0; i < 2; ++i) {
    const int64_t C = i == 0 ? 3 : 5;
    const Shape s = i == 0 ? Shape(2, 3, 4, 4) : Shape(3, 5, 3, 3);
    auto bn = std::make_shared<BatchNorm2d<D>>(C);
    bn->state.mode = NormMode::Train;
    auto x = TensorT<D>::rand_uniform(s, -1.0, 1.0, rng);
    auto r = TensorT<D>::rand_uniform(s, -1.0, 1.0, rng);
    run_check("batch_norm C" + std::to_string(C), {x, bn->state.gamma, bn->state.beta},
              [=]() { return sum(mul(batch_norm(x, bn->state), r)); }, 8);
  }

  // Activations; relu inputs are kept away from the kink at zero.
  for (int i = 0; i < 2; ++i) {
    const Shape s(2, 3, 3 + i, 3);
    std::vector<D> vals(s.numel());
    std::uniform_real_distribution<D> mag(0.2, 1.2);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : vals) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    auto x = TensorT<D>::from_vector(s, std::move(vals));
    auto r = TensorT<D>::rand_uniform(s, -1.0, 1.0, rng);
    run_check("relu", {x}, [=]() { return sum(mul(relu(x), r)); }, 10);
    auto xg = TensorT<D>::rand_uniform(s, -2.0, 2.0, rng);
    run_check("gelu", {xg}, [=]() { return sum(mul(gelu(xg), r)); }, 10);
  }

  // Pooling: max pool on well-separated values (margins >> the step ladder),
  // plus global average pooling.
  for (int i = 0; i < 2; ++i) {
    const Shape s(1 + i, 2, 6, 6);
    std::vector<D> vals(s.numel());
    std::iota(vals.begin(), vals.end(), D(0));
    for (auto& v : vals) v *= 0.05;
    std::shuffle(vals.begin(), vals.end(), rng);
    auto x = TensorT<D>::from_vector(s, std::move(vals));
    PoolParams pool;
    auto r = TensorT<D>::rand_uniform(pool.out_shape(s), -1.0, 1.0, rng);
    run_check("max_pool2d", {x}, [=]() { return sum(mul(max_pool2d(x, pool), r)); }, 10);

    auto xa = TensorT<D>::rand_uniform(s, -1.0, 1.0, rng);
    auto ra = TensorT<D>::rand_uniform(Shape(s.n, s.c, 1, 1), -1.0, 1.0, rng);
    run_check("global_avg_pool", {xa}, [=]() { return sum(mul(global_avg_pool(xa), ra)); }, 10);
  }

  // Linear head.
  for (int i = 0; i < 2; ++i) {
    const int64_t C = 5 + i, K = 3 + i, N = 2;
    auto x = TensorT<D>::rand_uniform(Shape(N, C, 1, 1), -1.0, 1.0, rng);
    auto w = TensorT<D>::rand_normal(Shape(K, C, 1, 1), 0.0, 0.5, rng);
    auto b = TensorT<D>::rand_uniform(Shape(1, K, 1, 1), -0.5, 0.5, rng);
    auto r = TensorT<D>::rand_uniform(Shape(N, K, 1, 1), -1.0, 1.0, rng);
    run_check("linear", {x, w, b}, [=]() { return sum(mul(linear(x, w, b), r)); }, 10);
  }

  // Whole blocks, one per kind, projection path exercised via stride 2. The
  // input is redrawn until every relu margin clears 2e-3 (the walker doubles
  // as an independent forward: its output must match the block bitwise).
  for (const BlockKind kind : {BlockKind::DW, BlockKind::InvertedDW, BlockKind::UpInvertedDW,
                               BlockKind::DownInvertedDW}) {
    BlockSpec bs;
    bs.kind = kind;
    bs.width = 4;
    bs.kernel = 3;
    bs.stride = 2;
    bs.placement = optimal_placement(kind);
    auto block = std::make_shared<BlockT<D>>(build_block<D>(bs, 6, rng));
    const Shape in(2, 6, 6, 6);
    const Shape out(2, block->out_channels, 3, 3);
    auto x = TensorT<D>::rand_uniform(in, -1.0, 1.0, rng);
    {
      NoGradT<D> guard;
      for (int tries = 0;; ++tries) {
        double margin = 1e300;
        const TensorT<D> walked = walk_block(*block, x, margin);
        if (margin >= 2e-3) {
          auto drop_rng = make_rng(0, rng_stream::kDropPath);
          require(walked.data() == block->forward(x, NormMode::Train, drop_rng).data(),
                  std::string(block_kind_name(kind)) + ": margin walker diverged from forward");
          break;
        }
        require(tries < 100, std::string(block_kind_name(kind)) + ": no kink-free draw found");
        x = TensorT<D>::rand_uniform(in, -1.0, 1.0, rng);
      }
    }
    auto r = TensorT<D>::rand_uniform(out, -1.0, 1.0, rng);
    std::vector<TensorT<D>> leaves{x};
    block->visit_params([&](const std::string&, TensorT<D>& t) { leaves.push_back(t); });
    auto drop_rng = make_rng(0, rng_stream::kDropPath);
    auto drop = std::make_shared<std::mt19937_64>(drop_rng);
    run_check(std::string("block ") + block_kind_name(kind), leaves,
              [=]() { return sum(mul(block->forward(x, NormMode::Train, *drop), r)); }, 3);
  }

  // Whole CIFAR-scale model: the cifar-robust geometry (patchify stem, four
  // stages at the preset's depths and strides, reduced placement, residual
  // projections, head) at thin widths. Thin widths keep the relu count low
  // enough that a kink-free evaluation point exists; at full width the
  // network's ~1e5 relus put some preactivation inside any double-precision
  // stencil's reach, which limits the measurement, not the gradients.
  {
    ModelSpec spec = get_preset("cifar-robust");
    spec.stage_widths = {8, 8, 16, 16};
    spec.drop_path = 0.0;  // keep repeated forwards bitwise comparable
    auto model = std::make_shared<Model<D>>(build_model<D>(spec, 17));
    model->set_mode(NormMode::Train);
    auto x = TensorT<D>::rand_uniform(Shape(1, 3, 32, 32), 0.0, 1.0, rng);
    {
      NoGradT<D> guard;
      for (int tries = 0;; ++tries) {
        double margin = 1e300;
        const TensorT<D> walked = walk_features(*model, x, margin);
        if (margin >= 2e-4) {
          require(walked.data() == model->forward_features(x).data(),
                  "model margin walker diverged from forward_features");
          break;
        }
        require(tries < 2000, "model: no kink-free draw found");
        x = TensorT<D>::rand_uniform(Shape(1, 3, 32, 32), 0.0, 1.0, rng);
      }
    }
    auto r = TensorT<D>::rand_uniform(Shape(1, spec.num_classes, 1, 1), -1.0, 1.0, rng);
    std::vector<TensorT<D>> params;
    model->visit_params([&](const std::string&, TensorT<D>& t) { params.push_back(t); });
    run_check("cifar-geometry model", {x, params.front(), params.back()},
              [=]() { return sum(mul(model->forward(x), r)); }, 2);
  }

  require(instances >= 20,
          "only " + std::to_string(instances) + " grad-check instances (need >= 20)");

  // Depthwise forward vs the naive loop oracle, exhaustive over small shapes.
  int sweeps = 0;
  double worst_fwd = 0.0;
  for (const int64_t k : {int64_t{3}, int64_t{5}}) {
    for (const int64_t stride : {int64_t{1}, int64_t{2}}) {
      for (const int64_t n : {int64_t{1}, int64_t{2}}) {
        for (const int64_t c : {int64_t{1}, int64_t{2}, int64_t{3}}) {
          for (const int64_t h : {k, k + 2, int64_t{16}}) {
            for (const int64_t w : {k, int64_t{11}, int64_t{16}}) {
              const Shape in(n, c, h, w);
              const ConvParams p{c, c, k, stride, k / 2, c};
              auto x = TensorT<D>::rand_uniform(in, -1.0, 1.0, rng);
              auto wt = TensorT<D>::rand_normal(Shape(c, 1, k, k), 0.0, 0.7, rng);
              const TensorT<D> got = conv2d(x, wt, p);
              const std::vector<D> want =
                  oracle::conv2d_reference<D>(x.data(), in, wt.data(), c, k, stride, k / 2, c);
              require(got.numel() == static_cast<int64_t>(want.size()),
                      "depthwise sweep: size mismatch");
              for (size_t i = 0; i < want.size(); ++i) {
                const double diff = std::abs(static_cast<double>(got.data()[i]) - want[i]);
                worst_fwd = std::max(worst_fwd, diff);
                require(diff <= 1e-6, "depthwise sweep " + in.str() + " k" + std::to_string(k) +
                                          ": |diff| " + std::to_string(diff) + " > 1e-6");
              }
              ++sweeps;
            }
          }
        }
      }
    }
  }

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%d grad instances (worst rel err %.2e); %d depthwise shapes vs oracle "
                "(worst |diff| %.2e)",
                instances, worst, sweeps, worst_fwd);
  return buf;
}

// --------------------------------------------------------------------------
// 8. Distillation identities: kd == (1-lambda)*CE exactly when the teacher
//    equals the student, the teacher gets zero gradient, lambda=0 reduces to
//    plain CE within 1e-7.
// --------------------------------------------------------------------------
std::string criterion_distillation() {
  using D = double;
  auto rng = make_rng(41, rng_stream::kWeightInit);
  const int64_t n = 5, k = 7;
  auto logits = TensorT<D>::rand_normal(Shape(n, k, 1, 1), 0.0, 2.0, rng);
  std::vector<int64_t> labels(n);
  std::uniform_int_distribution<int64_t> lab(0, k - 1);
  for (auto& l : labels) l = lab(rng);
  const auto targets = smooth_targets<D>(labels, k, 0.0);

  // Teacher == student: the soft term vanishes identically.
  for (const double lambda : {0.0, 0.3, 0.9}) {
    auto student = logits;
    auto teacher = TensorT<D>::from_vector(logits.shape(), logits.data());
    const D kd = kd_loss(student, teacher, targets, 3.0, lambda).item();
    const D want = (1.0 - lambda) * cross_entropy(student, targets).item();
    require(kd == want, "kd(teacher==student, lambda=" + std::to_string(lambda) +
                            ") != (1-lambda)*CE exactly");
  }

  // The teacher receives no gradient even when it differs from the student.
  {
    GradTapeT<D> tape;
    auto student = logits;
    student.set_requires_grad(true);
    auto teacher = TensorT<D>::rand_normal(Shape(n, k, 1, 1), 0.0, 2.0, rng);
    teacher.set_requires_grad(true);
    auto loss = kd_loss(student, teacher, targets, 2.0, 0.5);
    tape.backward(loss);
    require(student.has_grad(), "student logits received no gradient");
    require(!teacher.has_grad(), "teacher logits received a gradient");
  }

  // lambda = 0 reduces to plain cross-entropy.
  {
    auto teacher = TensorT<D>::rand_normal(Shape(n, k, 1, 1), 0.0, 2.0, rng);
    const D kd = kd_loss(logits, teacher, targets, 4.0, 0.0).item();
    const D ce = cross_entropy(logits, targets).item();
    require(std::abs(kd - ce) <= 1e-7,
            "kd(lambda=0) deviates from CE by " + std::to_string(std::abs(kd - ce)));
  }
  return "teacher==student identity exact; teacher gradient-free; lambda=0 -> CE";
}

// --------------------------------------------------------------------------
// 9. Corruption benchmark invariants: severity 0 is the identity, per-family
//    distortion MSE grows strictly with severity, corruption is bitwise
//    deterministic under a fixed seed, and the report's mCE equals an
//    independent recomputation exactly.
// --------------------------------------------------------------------------
std::string criterion_corruptions() {
  const Tensor card = textured_image();

  for (const CorruptionFamily f : all_corruption_families()) {
    const Tensor id = corrupt(card, {f, 0, 9});
    require(id.data() == card.data(),
            std::string(corruption_family_name(f)) + ": severity 0 is not the identity");

    double prev = 0.0;
    for (int sev = 1; sev <= 5; ++sev) {
      const Tensor out = corrupt(card, {f, sev, 9});
      const double err = mse(card, out);
      require(err > prev, std::string(corruption_family_name(f)) + ": MSE not strictly " +
                              "increasing at severity " + std::to_string(sev));
      prev = err;

      const Tensor again = corrupt(card, {f, sev, 9});
      require(out.data() == again.data(),
              std::string(corruption_family_name(f)) + ": not bitwise deterministic");
    }
  }

  // Report arithmetic: mCE must equal a from-scratch recomputation.
  TempDir dir;
  const fs::path root = dir.path / "coded";
  fs::create_directories(root);
  {
    std::ofstream manifest(root / "manifest.tsv");
    for (int i = 0; i < 6; ++i) {
      const int label = i % 2;
      const std::string name = "img_" + std::to_string(i) + ".rbt";
      save_tensor_file((root / name).string(),
                       Tensor::full(Shape(1, 3, 16, 16), 0.1f + 0.4f * label));
      manifest << name << "\t" << label << "\n";
    }
  }
  const Dataset data = load_dataset(root.string());
  const BatchPredictor oracle = [](const Tensor& batch) {
    const Shape s = batch.shape();
    std::vector<float> logits(s.n * 2);
    for (int64_t i = 0; i < s.n; ++i) {
      double level = 0.0;
      const float* px = batch.ptr() + i * s.c * s.h * s.w;
      for (int64_t j = 0; j < s.c * s.h * s.w; ++j) level += px[j];
      level /= static_cast<double>(s.c * s.h * s.w);
      for (int64_t cls = 0; cls < 2; ++cls) {
        logits[i * 2 + cls] = static_cast<float>(-std::abs(level - (0.1 + 0.4 * cls)));
      }
    }
    return Tensor::from_vector(Shape(s.n, 2, 1, 1), std::move(logits));
  };
  const std::vector<CorruptionFamily> families{CorruptionFamily::GaussianNoise,
                                               CorruptionFamily::Contrast};
  EvalOptions opts;
  opts.batch_size = 4;
  opts.corruption_seed = 3;
  const RobustnessReport report = evaluate(oracle, data, families, opts);
  require(report.entries.size() == 10, "expected 10 (family, severity) entries");

  double recomputed = 0.0;
  for (const CorruptionFamily f : families) {
    double fam = 0.0;
    int count = 0;
    for (const auto& e : report.entries) {
      if (e.family != f) continue;
      require(e.error >= 0.0 && e.error <= 100.0, "entry error outside [0, 100]");
      fam += e.error;
      ++count;
    }
    require(count == 5, "family does not carry 5 severities");
    recomputed += fam / count;
  }
  recomputed /= static_cast<double>(families.size());
  require(report.mean_corruption_error == recomputed,
          "stored mCE differs from independent recomputation");

  const RobustnessReport again = evaluate(oracle, data, families, opts);
  require(again.clean_error == report.clean_error &&
              again.mean_corruption_error == report.mean_corruption_error,
          "evaluation is not deterministic under a fixed seed");
  for (size_t i = 0; i < report.entries.size(); ++i) {
    require(again.entries[i].error == report.entries[i].error,
            "evaluation entries differ across identical runs");
  }
  return "8 families: identity/monotonicity/determinism hold; mCE matches recount";
}

// --------------------------------------------------------------------------
// 10. Schedule and optimizer anchors: cosine warmup peak and final floor are
//     exact; AdamW with zero gradients applies pure decoupled decay.
// --------------------------------------------------------------------------
std::string criterion_schedule_optimizer() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.warmup_epochs = 3;
  cfg.base_lr = 5e-4;
  cfg.min_lr = 1e-6;
  const int64_t total = 100;
  const int64_t warmup = total * cfg.warmup_epochs / cfg.epochs;
  require(cosine_lr(warmup, total, cfg) == cfg.base_lr, "warmup end is not exactly base_lr");
  require(cosine_lr(total, total, cfg) == cfg.min_lr, "final step is not exactly min_lr");
  require(cosine_lr(0, total, cfg) == 0.0, "warmup does not start at zero");
  const double mid = cosine_lr(warmup + (total - warmup) / 2, total, cfg);
  require(std::abs(mid - 0.5 * (cfg.base_lr + cfg.min_lr)) <= 1e-12,
          "cosine midpoint is not the (base+min)/2 average");

  // Zero-gradient AdamW: p <- p * (1 - lr*wd) each step, nothing else.
  using D = double;
  auto rng = make_rng(53, rng_stream::kWeightInit);
  std::vector<TensorT<D>> params{TensorT<D>::rand_uniform(Shape(2, 3, 2, 2), -1.0, 1.0, rng),
                                 TensorT<D>::rand_uniform(Shape(1, 7, 1, 1), -1.0, 1.0, rng)};
  std::vector<std::vector<D>> start;
  for (const auto& p : params) start.push_back(p.data());

  AdamWStateT<D> state;
  OptimConfig opt;
  opt.weight_decay = 0.1;
  const double lr = 0.01;
  const int steps = 7;
  for (int i = 0; i < steps; ++i) adamw_step(params, state, lr, opt);

  const double decay = std::pow(1.0 - lr * opt.weight_decay, steps);
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < start[pi].size(); ++i) {
      const double want = start[pi][i] * decay;
      const double got = params[pi].data()[i];
      const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-12);
      worst = std::max(worst, rel);
      require(rel <= 1e-9, "zero-grad AdamW deviates from pure decay by rel " +
                               std::to_string(rel));
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf),
                "cosine anchors exact; zero-grad decay matches (1-lr*wd)^%d to %.1e", steps,
                worst);
  return buf;
}

// --------------------------------------------------------------------------
// 7. Desk-scale training: the cifar-robust preset exceeds 90% train accuracy
//    on a 1000-sample 10-class synthetic set within 50 epochs and 30 CPU
//    minutes, with a non-increasing 5-epoch moving average of the loss.
// --------------------------------------------------------------------------
std::string criterion_training() {
  TempDir dir;
  const std::string train_dir = (dir.path / "train").string();
  generate_synth_dataset(train_dir, 1000, 10, 32, 5);
  const Dataset data = load_dataset(train_dir);

  const ModelSpec spec = get_preset("cifar-robust");
  Model<float> model = build_model<float>(spec, 7);

  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.base_lr = 5e-4;
  cfg.warmup_epochs = 1;
  cfg.weight_decay = 0.05;
  cfg.mixup_alpha = 0.0;
  cfg.cutmix_alpha = 0.0;
  cfg.erase_prob = 0.0;
  cfg.label_smoothing = 0.0;
  cfg.seed = 1;
  cfg.early_stop_train_acc = 0.9;

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train(model, data, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  require(!res.log.empty(), "training produced no epochs");
  const double acc = res.log.back().train_acc;
  const auto epochs = static_cast<int64_t>(res.log.size());
  require(epochs <= 50, "training ran more than 50 epochs");
  require(acc > 0.9, "train accuracy " + std::to_string(acc) + " did not exceed 0.9 within " +
                         std::to_string(epochs) + " epochs");
  require(secs < 1800.0, "training took " + std::to_string(secs) + "s (budget 1800s)");

  // 5-epoch moving average of the train loss must never increase.
  double prev_ma = 0.0;
  for (int64_t e = 0; e < epochs; ++e) {
    const int64_t lo = std::max<int64_t>(0, e - 4);
    double ma = 0.0;
    for (int64_t i = lo; i <= e; ++i) ma += res.log[i].train_loss;
    ma /= static_cast<double>(e - lo + 1);
    require(e == 0 || ma <= prev_ma,
            "loss moving average rose at epoch " + std::to_string(e + 1));
    prev_ma = ma;
  }

  char buf[160];
  std::snprintf(buf, sizeof(buf), "train acc %.3f after %lld epoch(s) in %.0f s; loss MA never rose",
                acc, static_cast<long long>(epochs), secs);
  return buf;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* label;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "flops anchor", criterion_flops_anchor},
      {2, "budget matching", criterion_budget_matching},
      {3, "kernel cost law", criterion_kernel_cost},
      {4, "stem geometry", criterion_stem_geometry},
      {5, "placement rule", criterion_placement_rule},
      {6, "autodiff numerics", criterion_numerics},
      {8, "distillation identities", criterion_distillation},
      {9, "corruption invariants", criterion_corruptions},
      {10, "schedule + optimizer", criterion_schedule_optimizer},
      {7, "desk-scale training", criterion_training},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string verdict;
    bool ok = false;
    try {
      verdict = c.run();
      ok = true;
    } catch (const std::exception& e) {
      verdict = e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %2d (%s): %s [%.1fs]\n", ok ? "PASS" : "FAIL", c.id, c.label,
                verdict.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
  }

  if (failures > 0) {
    std::printf("ACCEPTANCE: %d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("ACCEPTANCE: all %zu criteria passed\n", criteria.size());
  return 0;
}
