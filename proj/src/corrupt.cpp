#include "robustcnn/corrupt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "robustcnn/rng.hpp"

namespace robustcnn {

namespace {

struct FamilyInfo {
  CorruptionFamily family;
  const char* name;
  std::array<double, 5> table;
};

// Severity tables are this artifact's calibrated constants; each row is
// strictly monotone in distortion strength.
const FamilyInfo kFamilies[] = {
    {CorruptionFamily::GaussianNoise, "gaussian_noise", {0.04, 0.08, 0.12, 0.18, 0.26}},
    {CorruptionFamily::ShotNoise, "shot_noise", {60.0, 25.0, 12.0, 5.0, 3.0}},
    {CorruptionFamily::ImpulseNoise, "impulse_noise", {0.02, 0.04, 0.07, 0.11, 0.17}},
    {CorruptionFamily::DefocusBlur, "defocus_blur", {1.0, 2.0, 3.0, 4.0, 5.0}},
    {CorruptionFamily::Brightness, "brightness", {0.08, 0.16, 0.26, 0.38, 0.5}},
    {CorruptionFamily::Contrast, "contrast", {0.6, 0.45, 0.32, 0.2, 0.1}},
    // Nested block sizes: each partition refines the next, so block-averaging
    // error is non-decreasing in severity for every image, not just typical
    // ones.
    {CorruptionFamily::Pixelate, "pixelate", {2.0, 4.0, 8.0, 16.0, 32.0}},
    {CorruptionFamily::JpegBlock, "jpeg_block", {0.03, 0.06, 0.1, 0.16, 0.25}},
};

const FamilyInfo& info(CorruptionFamily family) {
  for (const auto& f : kFamilies) {
    if (f.family == family) return f;
  }
  throw std::invalid_argument("unknown corruption family");
}

int64_t family_index(CorruptionFamily family) {
  for (size_t i = 0; i < std::size(kFamilies); ++i) {
    if (kFamilies[i].family == family) return static_cast<int64_t>(i);
  }
  throw std::invalid_argument("unknown corruption family");
}

void add_gaussian(std::vector<float>& v, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  for (float& x : v) x = static_cast<float>(x + noise(rng));
}

void add_shot(std::vector<float>& v, double lam, std::mt19937_64& rng) {
  for (float& x : v) {
    std::poisson_distribution<int> poisson(static_cast<double>(x) * lam);
    x = static_cast<float>(poisson(rng) / lam);
  }
}

void add_impulse(std::vector<float>& v, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution salt(0.5);
  for (float& x : v) {
    // One uniform per pixel regardless of outcome keeps the draw sequence
    // aligned across severities: larger p corrupts a superset of pixels.
    const double roll = u(rng);
    const bool white = salt(rng);
    if (roll < p) x = white ? 1.0f : 0.0f;
  }
}

void defocus(std::vector<float>& v, const Shape& s, int radius) {
  const int k = 2 * radius + 1;
  std::vector<double> kernel(k * k, 0.0);
  double total = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) {
        kernel[(dy + radius) * k + dx + radius] = 1.0;
        total += 1.0;
      }
    }
  }
  for (double& w : kernel) w /= total;

  std::vector<float> out(v.size());
  const int64_t plane = s.h * s.w;
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const float* src = v.data() + nc * plane;
    float* dst = out.data() + nc * plane;
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        double acc = 0.0;
        for (int dy = -radius; dy <= radius; ++dy) {
          // Clamp-to-edge padding avoids darkened borders.
          const int64_t yy = std::clamp<int64_t>(y + dy, 0, s.h - 1);
          for (int dx = -radius; dx <= radius; ++dx) {
            const int64_t xx = std::clamp<int64_t>(x + dx, 0, s.w - 1);
            acc += kernel[(dy + radius) * k + dx + radius] * src[yy * s.w + xx];
          }
        }
        dst[y * s.w + x] = static_cast<float>(acc);
      }
    }
  }
  v = std::move(out);
}

void adjust_contrast(std::vector<float>& v, const Shape& s, double c) {
  const int64_t per_image = s.c * s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    float* img = v.data() + n * per_image;
    double mean = 0.0;
    for (int64_t i = 0; i < per_image; ++i) mean += img[i];
    mean /= static_cast<double>(per_image);
    for (int64_t i = 0; i < per_image; ++i) {
      img[i] = static_cast<float>((img[i] - mean) * c + mean);
    }
  }
}

void pixelate(std::vector<float>& v, const Shape& s, int64_t block) {
  const int64_t plane = s.h * s.w;
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    float* img = v.data() + nc * plane;
    for (int64_t by = 0; by < s.h; by += block) {
      for (int64_t bx = 0; bx < s.w; bx += block) {
        const int64_t yh = std::min(by + block, s.h);
        const int64_t xh = std::min(bx + block, s.w);
        double acc = 0.0;
        for (int64_t y = by; y < yh; ++y) {
          for (int64_t x = bx; x < xh; ++x) acc += img[y * s.w + x];
        }
        const float mean = static_cast<float>(acc / static_cast<double>((yh - by) * (xh - bx)));
        for (int64_t y = by; y < yh; ++y) {
          for (int64_t x = bx; x < xh; ++x) img[y * s.w + x] = mean;
        }
      }
    }
  }
}

// Orthonormal DCT-II / DCT-III pair for block sizes up to 8.
void dct2(const double* in, double* out, int n, int stride) {
  for (int u = 0; u < n; ++u) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += in[i * stride] * std::cos(std::numbers::pi * (2 * i + 1) * u / (2.0 * n));
    }
    const double alpha = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    out[u * stride] = alpha * acc;
  }
}

void idct2(const double* in, double* out, int n, int stride) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int u = 0; u < n; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      acc += alpha * in[u * stride] * std::cos(std::numbers::pi * (2 * i + 1) * u / (2.0 * n));
    }
    out[i * stride] = acc;
  }
}

void jpeg_block(std::vector<float>& v, const Shape& s, double delta) {
  const int64_t plane = s.h * s.w;
  double block[64], tmp[64];
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    float* img = v.data() + nc * plane;
    for (int64_t by = 0; by < s.h; by += 8) {
      for (int64_t bx = 0; bx < s.w; bx += 8) {
        const int bh = static_cast<int>(std::min<int64_t>(8, s.h - by));
        const int bw = static_cast<int>(std::min<int64_t>(8, s.w - bx));
        for (int y = 0; y < bh; ++y) {
          for (int x = 0; x < bw; ++x) block[y * bw + x] = img[(by + y) * s.w + bx + x];
        }
        // Separable 2D DCT: rows then columns.
        for (int y = 0; y < bh; ++y) dct2(block + y * bw, tmp + y * bw, bw, 1);
        for (int x = 0; x < bw; ++x) dct2(tmp + x, block + x, bh, bw);
        // Coarser quantization for higher frequencies.
        for (int u = 0; u < bh; ++u) {
          for (int w = 0; w < bw; ++w) {
            const double q = delta * (1.0 + (u + w) / 2.0);
            block[u * bw + w] = std::round(block[u * bw + w] / q) * q;
          }
        }
        for (int x = 0; x < bw; ++x) idct2(block + x, tmp + x, bh, bw);
        for (int y = 0; y < bh; ++y) idct2(tmp + y * bw, block + y * bw, bw, 1);
        for (int y = 0; y < bh; ++y) {
          for (int x = 0; x < bw; ++x) img[(by + y) * s.w + bx + x] =
              static_cast<float>(block[y * bw + x]);
        }
      }
    }
  }
}

}  // namespace

const char* corruption_family_name(CorruptionFamily family) { return info(family).name; }

CorruptionFamily parse_corruption_family(const std::string& name) {
  for (const auto& f : kFamilies) {
    if (name == f.name) return f.family;
  }
  throw std::invalid_argument("unknown corruption family '" + name + "'");
}

const std::vector<CorruptionFamily>& all_corruption_families() {
  static const std::vector<CorruptionFamily> families = [] {
    std::vector<CorruptionFamily> out;
    for (const auto& f : kFamilies) out.push_back(f.family);
    return out;
  }();
  return families;
}

double corruption_parameter(CorruptionFamily family, int severity) {
  if (severity < 1 || severity > 5) {
    throw std::invalid_argument("severity must lie in 1..5, got " + std::to_string(severity));
  }
  return info(family).table[severity - 1];
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec) {
  const Shape s = image.shape();
  for (int64_t i = 0; i < image.numel(); ++i) {
    const float x = image.ptr()[i];
    if (!(x >= 0.0f && x <= 1.0f)) {
      throw std::invalid_argument("corrupt: pixel values must lie in [0, 1]");
    }
  }
  if (spec.severity < 0 || spec.severity > 5) {
    throw std::invalid_argument("severity must lie in 0..5, got " +
                                std::to_string(spec.severity));
  }
  std::vector<float> v(image.ptr(), image.ptr() + image.numel());
  if (spec.severity == 0) return Tensor::from_vector(s, std::move(v));  // identity extension

  const double param = corruption_parameter(spec.family, spec.severity);
  // The stream depends on the family but not the severity, so stochastic
  // families see aligned draws across severities.
  auto rng = make_rng(spec.seed + static_cast<uint64_t>(family_index(spec.family)) * 1000003ULL,
                      rng_stream::kCorrupt);

  switch (spec.family) {
    case CorruptionFamily::GaussianNoise: add_gaussian(v, param, rng); break;
    case CorruptionFamily::ShotNoise: add_shot(v, param, rng); break;
    case CorruptionFamily::ImpulseNoise: add_impulse(v, param, rng); break;
    case CorruptionFamily::DefocusBlur: defocus(v, s, static_cast<int>(param)); break;
    case CorruptionFamily::Brightness:
      for (float& x : v) x = static_cast<float>(x + param);
      break;
    case CorruptionFamily::Contrast: adjust_contrast(v, s, param); break;
    case CorruptionFamily::Pixelate: pixelate(v, s, static_cast<int64_t>(param)); break;
    case CorruptionFamily::JpegBlock: jpeg_block(v, s, param); break;
  }
  for (float& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return Tensor::from_vector(s, std::move(v));
}

}  // namespace robustcnn
