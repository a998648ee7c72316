#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace robustcnn {

// Rank-4 (N, C, H, W) extent. Rank-2 data is carried as (N, C, 1, 1).
struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  Shape() = default;
  Shape(int64_t n_, int64_t c_, int64_t h_, int64_t w_) : n(n_), c(c_), h(h_), w(w_) {
    if (n <= 0 || c <= 0 || h <= 0 || w <= 0) {
      throw std::invalid_argument("Shape: all extents must be positive, got " + str());
    }
  }

  int64_t numel() const { return n * c * h * w; }

  bool operator==(const Shape& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  int64_t index(int64_t in, int64_t ic, int64_t ih, int64_t iw) const {
    return ((in * c + ic) * h + ih) * w + iw;
  }

  bool is_scalar() const { return n == 1 && c == 1 && h == 1 && w == 1; }
  bool is_per_channel() const { return n == 1 && h == 1 && w == 1; }

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

}  // namespace robustcnn
