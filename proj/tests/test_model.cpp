#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "robustcnn/config.hpp"
#include "robustcnn/model.hpp"
#include "robustcnn/rng.hpp"

using namespace robustcnn;

namespace {

ModelSpec patchify_spec(int64_t patch, int64_t resolution = 224) {
  ModelSpec spec;
  spec.stem = StemKind::Patchify;
  spec.patch_size = patch;
  spec.input_resolution = resolution;
  return spec;
}

const PlannedConv& find_conv(const ModelPlan& plan, const std::string& path) {
  for (const auto& c : plan.convs) {
    if (c.path == path) return c;
  }
  throw std::runtime_error("plan has no conv named " + path);
}

}  // namespace

TEST_CASE("stride_plan assigns stride-2 stages from the back, stage 1 untouched") {
  CHECK(stride_plan(StemKind::ResNetStyle) == std::array<int64_t, 4>{1, 2, 2, 2});
  CHECK(stride_plan(StemKind::Patchify, 4) == std::array<int64_t, 4>{1, 2, 2, 2});
  CHECK(stride_plan(StemKind::Patchify, 8) == std::array<int64_t, 4>{1, 1, 2, 2});
  CHECK(stride_plan(StemKind::Patchify, 16) == std::array<int64_t, 4>{1, 1, 1, 2});
  CHECK(stride_plan(StemKind::Patchify, 32) == std::array<int64_t, 4>{1, 1, 1, 1});
  CHECK(stride_plan(StemKind::ConvStem) == std::array<int64_t, 4>{1, 1, 1, 2});
  // Reduced total stride used by the 32x32 configuration.
  CHECK(stride_plan(StemKind::Patchify, 4, 8) == std::array<int64_t, 4>{1, 1, 1, 2});
  CHECK(stride_plan(StemKind::Patchify, 4, 16) == std::array<int64_t, 4>{1, 1, 2, 2});
}

TEST_CASE("stride_plan rejects impossible stride budgets") {
  // 32 / 12 is not an integer.
  CHECK_THROWS_AS(stride_plan(StemKind::Patchify, 12), std::invalid_argument);
  // Remaining factor 16 would need four stride-2 stages but stage 1 must stay at 1.
  CHECK_THROWS_AS(stride_plan(StemKind::Patchify, 2), std::invalid_argument);
  // Remaining factor 3 is not a power of two.
  CHECK_THROWS_AS(stride_plan(StemKind::Patchify, 8, 24), std::invalid_argument);
  // Stem alone exceeds the total stride.
  CHECK_THROWS_AS(stride_plan(StemKind::Patchify, 16, 8), std::invalid_argument);
}

TEST_CASE("model spec validation rejects malformed configurations") {
  ModelSpec spec;
  spec.stage_widths[2] = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.stage_depths[0] = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.kernel = 4;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = patchify_spec(16, 225);  // not divisible by the patch size
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.input_resolution = 226;  // not divisible by the total stride
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.stem = StemKind::ConvStem;
  spec.stage_widths = {100, 200, 400, 800};  // stage-1 width must divide by 8
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  spec = ModelSpec{};
  spec.dense_middle = true;
  spec.block_kind = BlockKind::InvertedDW;  // dense middle is a DW-only option
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("every stem reaches a 7x7 pre-pool map at 224") {
  std::vector<ModelSpec> specs;
  specs.push_back(ModelSpec{});  // ResNet-style stem
  specs.push_back(patchify_spec(4));
  specs.push_back(patchify_spec(8));
  specs.push_back(patchify_spec(16));
  ModelSpec conv_stem;
  conv_stem.stem = StemKind::ConvStem;
  specs.push_back(conv_stem);

  for (const auto& spec : specs) {
    ModelPlan plan = build_plan(spec);
    CHECK(plan.pre_pool_shape.h == 7);
    CHECK(plan.pre_pool_shape.w == 7);
  }
}

TEST_CASE("stage-1 feature map size depends on the stem downsampling") {
  // ResNet-style stem: conv/2 then pool/2 -> 56x56 entering stage 1.
  ModelPlan plan = build_plan(ModelSpec{});
  CHECK(find_conv(plan, "stage1.block1.conv1").in_shape.h == 56);

  // Patchify p: one conv with stride p.
  CHECK(find_conv(build_plan(patchify_spec(8)), "stage1.block1.conv1").in_shape.h == 28);
  CHECK(find_conv(build_plan(patchify_spec(16)), "stage1.block1.conv1").in_shape.h == 14);
}

TEST_CASE("patchify stem output is exactly input over patch size") {
  for (int64_t p : {4, 8, 16, 32}) {
    ModelPlan plan = build_plan(patchify_spec(p));
    Shape out = plan.convs.front().out_shape();
    CHECK(out.h == 224 / p);
    CHECK(out.w == 224 / p);
  }
}

TEST_CASE("plan enumerates every parameterized layer exactly once") {
  ModelSpec spec = get_preset("cifar-robust");
  ModelPlan plan = build_plan(spec);

  std::set<std::string> paths;
  for (const auto& c : plan.convs) CHECK(paths.insert(c.path).second);

  // depths 2/2/4/2 -> 10 blocks of three convs each, plus stem and projections.
  // Projections sit where channels change or stride is 2: stage2..4 first blocks.
  CHECK(plan.convs.size() == 1 + 3 * 10 + 3);
  CHECK(plan.head.in_features == spec.stage_out_channels(3));
  CHECK(plan.head.out_features == 10);
}

TEST_CASE("plan and model agree on every weight shape") {
  ModelSpec spec = get_preset("cifar-robust");
  ModelPlan plan = build_plan(spec);
  auto model = build_model<float>(spec, 11);

  std::map<std::string, Shape> weights;
  model.visit_params([&](const std::string& name, Tensor& t) {
    CHECK(weights.emplace(name, t.shape()).second);  // unique names
  });

  for (const auto& c : plan.convs) {
    auto it = weights.find(c.path + ".weight");
    REQUIRE(it != weights.end());
    CHECK(it->second == c.params.weight_shape());
  }
  REQUIRE(weights.count("head.weight") == 1);
  CHECK(weights.at("head.weight") == Shape(plan.head.out_features, plan.head.in_features, 1, 1));
  CHECK(weights.count("head.bias") == 1);
}

TEST_CASE("cifar-scale model forward produces logits of the right shape") {
  ModelSpec spec = get_preset("cifar-robust");
  auto model = build_model<float>(spec, 3);
  auto rng = make_rng(99, rng_stream::kSynthData);
  Tensor x = Tensor::rand_uniform(Shape(2, 3, 32, 32), -1.0f, 1.0f, rng);

  Tensor logits = model.forward(x);
  CHECK(logits.shape() == Shape(2, 10, 1, 1));
  CHECK(all_finite(logits));

  // Pre-pool map at 32x32 with a patch-4 stem and total stride 8 is 4x4.
  ModelPlan plan = build_plan(spec);
  CHECK(plan.pre_pool_shape.h == 4);
  CHECK(plan.pre_pool_shape.w == 4);
}

TEST_CASE("model construction and forward are deterministic in the seed") {
  ModelSpec spec = get_preset("cifar-robust");
  auto rng = make_rng(5, rng_stream::kSynthData);
  Tensor x = Tensor::rand_uniform(Shape(1, 3, 32, 32), 0.0f, 1.0f, rng);

  auto a = build_model<float>(spec, 21);
  auto b = build_model<float>(spec, 21);
  Tensor ya = a.forward(x);
  Tensor yb = b.forward(x);
  for (int64_t i = 0; i < ya.numel(); ++i) CHECK(ya.data()[i] == yb.data()[i]);

  auto c = build_model<float>(spec, 22);
  Tensor yc = c.forward(x);
  bool any_diff = false;
  for (int64_t i = 0; i < ya.numel(); ++i) any_diff |= ya.data()[i] != yc.data()[i];
  CHECK(any_diff);
}

TEST_CASE("eval mode requires populated batch-norm statistics") {
  ModelSpec spec = get_preset("cifar-robust");
  auto model = build_model<float>(spec, 4);
  auto rng = make_rng(5, rng_stream::kSynthData);
  Tensor x = Tensor::rand_uniform(Shape(2, 3, 32, 32), 0.0f, 1.0f, rng);

  model.set_mode(NormMode::Eval);
  CHECK_THROWS_AS(model.forward(x), std::runtime_error);

  model.set_mode(NormMode::Train);
  (void)model.forward(x);  // populates running statistics
  model.set_mode(NormMode::Eval);
  Tensor y1 = model.forward(x);
  Tensor y2 = model.forward(x);
  CHECK(all_finite(y1));
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("model accepts other resolutions compatible with its stride plan") {
  ModelSpec spec = get_preset("cifar-robust");
  spec.input_resolution = 64;
  ModelPlan plan = build_plan(spec);
  CHECK(plan.pre_pool_shape.h == 8);

  auto model = build_model<float>(spec, 13);
  auto rng = make_rng(17, rng_stream::kSynthData);
  Tensor x = Tensor::rand_uniform(Shape(1, 3, 64, 64), 0.0f, 1.0f, rng);
  CHECK(model.forward(x).shape() == Shape(1, 10, 1, 1));
}

TEST_CASE("config text round-trips through format and parse for every preset") {
  for (const std::string& name : preset_names()) {
    ModelSpec spec = get_preset(name);
    ModelSpec back = parse_model_config(format_model_config(spec));
    CHECK(back.stem == spec.stem);
    CHECK(back.patch_size == spec.patch_size);
    CHECK(back.stage_widths == spec.stage_widths);
    CHECK(back.stage_depths == spec.stage_depths);
    CHECK(back.block_kind == spec.block_kind);
    CHECK(back.kernel == spec.kernel);
    CHECK(back.placement == spec.placement);
    CHECK(back.num_classes == spec.num_classes);
    CHECK(back.input_resolution == spec.input_resolution);
    CHECK(back.total_stride == spec.total_stride);
    CHECK(back.drop_path == doctest::Approx(spec.drop_path).epsilon(1e-12));
    CHECK(back.stem_norm == spec.stem_norm);
    CHECK(back.dense_middle == spec.dense_middle);
  }
}

TEST_CASE("config parser reports malformed input") {
  CHECK_THROWS_AS(parse_model_config("stem patchify\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("flavor = spicy\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("kernel = 7\nkernel = 9\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("kernel = seven\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("widths = 64,128,256\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("norm_at = 4\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("stem_norm = maybe\n"), std::invalid_argument);
  // Invalid combination caught by validation after parsing.
  CHECK_THROWS_AS(parse_model_config("stem = patchify\npatch_size = 13\n"),
                  std::invalid_argument);
}

TEST_CASE("config parser ignores comments and blank lines") {
  ModelSpec spec = parse_model_config(
      "# robust small model\n"
      "\n"
      "stem = patchify   # vit-style\n"
      "patch_size = 16\n"
      "block_kind = up_inverted_dw\n"
      "kernel = 11\n"
      "norm_at = 1\n"
      "act_at = 2\n");
  CHECK(spec.stem == StemKind::Patchify);
  CHECK(spec.kernel == 11);
  CHECK(spec.placement.norm_at == 1);
  CHECK(spec.placement.act_at == 2);
  // Unspecified keys keep their defaults.
  CHECK(spec.stage_widths == std::array<int64_t, 4>{64, 128, 256, 512});
  CHECK(spec.num_classes == 1000);
}

TEST_CASE("preset table covers the published models and rejects unknown names") {
  auto names = preset_names();
  std::set<std::string> set(names.begin(), names.end());
  CHECK(set.size() == names.size());
  for (const char* expected :
       {"resnet50", "resnet-dw", "resnet-inverted-dw", "resnet-up-inverted-dw",
        "resnet-down-inverted-dw", "robust-dw", "robust-inverted-dw", "robust-up-inverted-dw",
        "robust-down-inverted-dw", "robust-base-dw", "robust-base-inverted-dw",
        "robust-base-up-inverted-dw", "robust-base-down-inverted-dw", "cifar-robust"}) {
    CHECK_MESSAGE(set.count(expected) == 1, expected);
  }
  CHECK_THROWS_AS(get_preset("resnet-colossal"), std::invalid_argument);
  for (const std::string& name : names) CHECK(!preset_summary(name).empty());
}

TEST_CASE("resnet50 preset matches the classic architecture") {
  ModelSpec spec = get_preset("resnet50");
  CHECK(spec.stem == StemKind::ResNetStyle);
  CHECK(spec.block_kind == BlockKind::DW);
  CHECK(spec.dense_middle);
  CHECK(spec.kernel == 3);
  CHECK(spec.stage_widths == std::array<int64_t, 4>{64, 128, 256, 512});
  CHECK(spec.stage_depths == std::array<int64_t, 4>{3, 4, 6, 3});
  CHECK(spec.placement.full());

  ModelPlan plan = build_plan(spec);
  // Bottleneck middle convs are dense 3x3, not depthwise.
  const auto& mid = find_conv(plan, "stage1.block1.conv2");
  CHECK(mid.params.groups == 1);
  CHECK(mid.params.kernel == 3);
  // v1.5 convention: the stride-2 sits on the middle conv of the first block.
  CHECK(find_conv(plan, "stage2.block1.conv2").params.stride == 2);
  CHECK(find_conv(plan, "stage2.block1.conv1").params.stride == 1);
}

TEST_CASE("robust presets follow the patchify + large kernel + reduced placement recipe") {
  for (const char* name : {"robust-dw", "robust-inverted-dw", "robust-up-inverted-dw",
                           "robust-down-inverted-dw"}) {
    ModelSpec spec = get_preset(name);
    CHECK(spec.stem == StemKind::Patchify);
    CHECK(spec.patch_size == 16);
    CHECK(spec.kernel == (spec.block_kind == BlockKind::InvertedDW ? 7 : 11));
    CHECK(spec.placement == optimal_placement(spec.block_kind));
    CHECK(spec.stage_widths[0] == 96);
  }
  for (const char* name : {"robust-base-dw", "robust-base-inverted-dw",
                           "robust-base-up-inverted-dw", "robust-base-down-inverted-dw"}) {
    CHECK(get_preset(name).stage_widths == std::array<int64_t, 4>{128, 256, 512, 1024});
  }
}

TEST_CASE("config files round-trip through the filesystem") {
  ModelSpec spec = get_preset("robust-up-inverted-dw");
  const std::string path = "test_model_config.tmp";
  save_model_config(spec, path);
  ModelSpec back = load_model_config(path);
  CHECK(back.block_kind == spec.block_kind);
  CHECK(back.kernel == spec.kernel);
  CHECK(back.stage_widths == spec.stage_widths);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_model_config("no_such_config_file.tmp"), std::runtime_error);
}
