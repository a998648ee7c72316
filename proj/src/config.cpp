#include "robustcnn/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace robustcnn {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': bad integer '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': bad number '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::array<int64_t, 4> parse_i64x4(const std::string& key, const std::string& v) {
  std::array<int64_t, 4> out{};
  std::stringstream ss(v);
  std::string item;
  size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n >= 4) throw std::invalid_argument("config key '" + key + "': expected 4 values");
    out[n++] = parse_i64(key, trim(item));
  }
  if (n != 4) throw std::invalid_argument("config key '" + key + "': expected 4 values, got " +
                                          std::to_string(n));
  return out;
}

int parse_placement_index(const std::string& key, const std::string& v) {
  if (v == "all") return kAllPlacement;
  int64_t i = parse_i64(key, v);
  if (i < 1 || i > 3) {
    throw std::invalid_argument("config key '" + key + "': index must be 'all' or 1..3");
  }
  return static_cast<int>(i);
}

std::string placement_index_str(int v) {
  return v == kAllPlacement ? "all" : std::to_string(v);
}

}  // namespace

ModelSpec parse_model_config(const std::string& text) {
  ModelSpec spec;
  std::map<std::string, bool> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (seen[key]) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    seen[key] = true;
    if (key == "stem") {
      spec.stem = parse_stem_kind(value);
    } else if (key == "patch_size") {
      spec.patch_size = parse_i64(key, value);
    } else if (key == "block_kind") {
      spec.block_kind = parse_block_kind(value);
    } else if (key == "kernel") {
      spec.kernel = parse_i64(key, value);
    } else if (key == "norm_at") {
      spec.placement.norm_at = parse_placement_index(key, value);
    } else if (key == "act_at") {
      spec.placement.act_at = parse_placement_index(key, value);
    } else if (key == "widths") {
      spec.stage_widths = parse_i64x4(key, value);
    } else if (key == "depths") {
      spec.stage_depths = parse_i64x4(key, value);
    } else if (key == "num_classes") {
      spec.num_classes = parse_i64(key, value);
    } else if (key == "input_resolution") {
      spec.input_resolution = parse_i64(key, value);
    } else if (key == "total_stride") {
      spec.total_stride = parse_i64(key, value);
    } else if (key == "drop_path") {
      spec.drop_path = parse_f64(key, value);
    } else if (key == "stem_norm") {
      spec.stem_norm = parse_bool(key, value);
    } else if (key == "dense_middle") {
      spec.dense_middle = parse_bool(key, value);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

std::string format_model_config(const ModelSpec& spec) {
  std::ostringstream os;
  os << "stem = " << stem_kind_name(spec.stem) << "\n";
  os << "patch_size = " << spec.patch_size << "\n";
  os << "block_kind = " << block_kind_name(spec.block_kind) << "\n";
  os << "kernel = " << spec.kernel << "\n";
  os << "norm_at = " << placement_index_str(spec.placement.norm_at) << "\n";
  os << "act_at = " << placement_index_str(spec.placement.act_at) << "\n";
  os << "widths = " << spec.stage_widths[0] << "," << spec.stage_widths[1] << ","
     << spec.stage_widths[2] << "," << spec.stage_widths[3] << "\n";
  os << "depths = " << spec.stage_depths[0] << "," << spec.stage_depths[1] << ","
     << spec.stage_depths[2] << "," << spec.stage_depths[3] << "\n";
  os << "num_classes = " << spec.num_classes << "\n";
  os << "input_resolution = " << spec.input_resolution << "\n";
  os << "total_stride = " << spec.total_stride << "\n";
  os << "drop_path = " << spec.drop_path << "\n";
  os << "stem_norm = " << (spec.stem_norm ? "true" : "false") << "\n";
  os << "dense_middle = " << (spec.dense_middle ? "true" : "false") << "\n";
  return os.str();
}

ModelSpec load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

void save_model_config(const ModelSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file '" + path + "'");
  out << format_model_config(spec);
}

namespace {

ModelSpec baseline(BlockKind kind) {
  ModelSpec s;
  s.stem = StemKind::ResNetStyle;
  s.stage_widths = {96, 192, 384, 768};
  s.stage_depths = {3, 4, 6, 3};
  s.block_kind = kind;
  s.kernel = 3;
  s.placement = NormActPlacement{};  // full
  return s;
}

int64_t robust_kernel(BlockKind kind) {
  // the inverted kind runs its depthwise conv at 4w, where kernel 11 is
  // disproportionately expensive; its published best uses kernel 7
  return kind == BlockKind::InvertedDW ? 7 : 11;
}

ModelSpec robust(BlockKind kind) {
  ModelSpec s = baseline(kind);
  s.stem = StemKind::Patchify;
  s.patch_size = 16;
  s.kernel = robust_kernel(kind);
  s.placement = optimal_placement(kind);
  return s;
}

ModelSpec robust_base(BlockKind kind) {
  ModelSpec s = robust(kind);
  s.stage_widths = {128, 256, 512, 1024};
  return s;
}

struct PresetDef {
  const char* name;
  ModelSpec (*make)();
  const char* summary;
};

const PresetDef kPresets[] = {
    {"resnet50", [] { ModelSpec s; s.dense_middle = true; s.drop_path = 0.0; return s; },
     "original bottleneck ResNet50 (FLOPs anchor)"},
    {"resnet-dw", [] { return baseline(BlockKind::DW); },
     "DW baseline: ResNet stem, full norm/act"},
    {"resnet-inverted-dw", [] { return baseline(BlockKind::InvertedDW); },
     "Inverted-DW baseline: ResNet stem, full norm/act"},
    {"resnet-up-inverted-dw", [] { return baseline(BlockKind::UpInvertedDW); },
     "Up-Inverted-DW baseline: ResNet stem, full norm/act"},
    {"resnet-down-inverted-dw", [] { return baseline(BlockKind::DownInvertedDW); },
     "Down-Inverted-DW baseline: ResNet stem, full norm/act"},
    {"robust-dw", [] { return robust(BlockKind::DW); },
     "Robust DW: patchify-16 stem, kernel 11, Norm1Act3"},
    {"robust-inverted-dw", [] { return robust(BlockKind::InvertedDW); },
     "Robust Inverted-DW: patchify-16 stem, kernel 7, Norm1Act1"},
    {"robust-up-inverted-dw", [] { return robust(BlockKind::UpInvertedDW); },
     "Robust Up-Inverted-DW: patchify-16 stem, kernel 11, Norm1Act2"},
    {"robust-down-inverted-dw", [] { return robust(BlockKind::DownInvertedDW); },
     "Robust Down-Inverted-DW: patchify-16 stem, kernel 11, Norm1Act1"},
    {"robust-base-dw", [] { return robust_base(BlockKind::DW); },
     "Robust DW at base width (128..1024)"},
    {"robust-base-inverted-dw", [] { return robust_base(BlockKind::InvertedDW); },
     "Robust Inverted-DW at base width (128..1024)"},
    {"robust-base-up-inverted-dw", [] { return robust_base(BlockKind::UpInvertedDW); },
     "Robust Up-Inverted-DW at base width (128..1024)"},
    {"robust-base-down-inverted-dw", [] { return robust_base(BlockKind::DownInvertedDW); },
     "Robust Down-Inverted-DW at base width (128..1024)"},
    {"cifar-robust",
     [] {
       ModelSpec s;
       s.stem = StemKind::Patchify;
       s.patch_size = 4;
       s.stage_widths = {32, 64, 128, 256};
       s.stage_depths = {2, 2, 4, 2};
       s.block_kind = BlockKind::UpInvertedDW;
       s.kernel = 7;
       s.placement = optimal_placement(BlockKind::UpInvertedDW);
       s.num_classes = 10;
       s.input_resolution = 32;
       s.total_stride = 8;
       s.drop_path = 0.0;
       return s;
     },
     "desk-scale robust model for 32x32 inputs"},
};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.push_back(p.name);
  return names;
}

ModelSpec get_preset(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name == p.name) {
      ModelSpec s = p.make();
      s.validate();
      return s;
    }
  }
  throw std::invalid_argument("unknown preset '" + name + "'; see 'presets' for the list");
}

std::string preset_summary(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name == p.name) return p.summary;
  }
  throw std::invalid_argument("unknown preset '" + name + "'");
}

}  // namespace robustcnn
