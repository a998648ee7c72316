#include "robustcnn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "robustcnn/rng.hpp"
#include "robustcnn/serialize.hpp"

namespace robustcnn {

namespace fs = std::filesystem;

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "manifest.tsv";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());

  Dataset data;
  data.root = dir;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) +
                               ": expected path<TAB>label");
    }
    const std::string path = line.substr(0, tab);
    int64_t label = 0;
    try {
      label = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) +
                               ": bad label '" + line.substr(tab + 1) + "'");
    }
    if (label < 0) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) +
                               ": negative label");
    }
    data.paths.push_back(path);
    data.labels.push_back(label);
    data.num_classes = std::max(data.num_classes, label + 1);
  }
  if (data.paths.empty()) throw std::runtime_error("empty dataset: " + manifest.string());
  return data;
}

Tensor load_image(const Dataset& data, int64_t index) {
  if (index < 0 || index >= data.size()) throw std::out_of_range("image index out of range");
  const fs::path path = fs::path(data.root) / data.paths[index];
  Tensor t = load_tensor_file<float>(path.string());
  if (t.shape().n != 1 || t.shape().c != 3) {
    throw std::runtime_error(path.string() + ": expected shape (1, 3, H, W), got " +
                             t.shape().str());
  }
  return t;
}

Tensor load_batch(const Dataset& data, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  Tensor first = load_image(data, indices[0]);
  const Shape per = first.shape();
  Tensor batch = Tensor::zeros(Shape(static_cast<int64_t>(indices.size()), per.c, per.h, per.w));
  float* out = batch.mutable_data().data();
  const int64_t stride = per.numel();
  std::copy_n(first.ptr(), stride, out);
  for (size_t i = 1; i < indices.size(); ++i) {
    Tensor img = load_image(data, indices[i]);
    if (img.shape() != per) {
      throw std::runtime_error("image size mismatch in batch: " + img.shape().str() + " vs " +
                               per.str());
    }
    std::copy_n(img.ptr(), stride, out + static_cast<int64_t>(i) * stride);
  }
  return batch;
}

void generate_synth_dataset(const std::string& dir, int64_t samples, int64_t classes,
                            int64_t resolution, uint64_t seed) {
  if (samples < 1 || classes < 2 || resolution < 8) {
    throw std::invalid_argument("need samples >= 1, classes >= 2, resolution >= 8");
  }
  fs::create_directories(dir);

  // Per-class smooth color template: a few low-frequency waves whose
  // frequencies and phases are fixed by the class id.
  struct Wave {
    double fy, fx, phase, weight;
  };
  std::vector<std::array<std::vector<Wave>, 3>> templates(classes);
  for (int64_t c = 0; c < classes; ++c) {
    auto trng = make_rng(seed + static_cast<uint64_t>(c), rng_stream::kSynthData);
    std::uniform_real_distribution<double> freq(1.0, 3.5);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    for (int ch = 0; ch < 3; ++ch) {
      for (int w = 0; w < 3; ++w) {
        templates[c][ch].push_back({freq(trng), freq(trng), phase(trng), 1.0 / (w + 1)});
      }
    }
  }

  auto rng = make_rng(seed, rng_stream::kSynthData);
  std::uniform_real_distribution<double> jitter(-0.35, 0.35);
  std::normal_distribution<double> noise(0.0, 0.06);

  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (int64_t i = 0; i < samples; ++i) {
    const int64_t label = i % classes;
    const double dy = jitter(rng);
    const double dx = jitter(rng);
    Tensor img = Tensor::zeros(Shape(1, 3, resolution, resolution));
    float* px = img.mutable_data().data();
    for (int ch = 0; ch < 3; ++ch) {
      for (int64_t y = 0; y < resolution; ++y) {
        for (int64_t x = 0; x < resolution; ++x) {
          const double u = static_cast<double>(y) / resolution + dy;
          const double v = static_cast<double>(x) / resolution + dx;
          double val = 0.0;
          for (const Wave& w : templates[label][ch]) {
            val += w.weight * std::sin(2.0 * M_PI * (w.fy * u + w.fx * v) + w.phase);
          }
          val = 0.5 + 0.22 * val + noise(rng);
          px[(ch * resolution + y) * resolution + x] =
              static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
    }
    const std::string cls_dir = "class_" + std::to_string(label);
    fs::create_directories(fs::path(dir) / cls_dir);
    std::ostringstream name;
    name << cls_dir << "/sample_" << std::setw(5) << std::setfill('0') << i << ".rbt";
    save_tensor_file((fs::path(dir) / name.str()).string(), img);
    manifest << name.str() << "\t" << label << "\n";
  }
}

}  // namespace robustcnn
