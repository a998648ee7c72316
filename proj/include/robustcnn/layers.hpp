#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "robustcnn/tensor.hpp"

namespace robustcnn {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvParams {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;

  bool depthwise() const {
    return groups == in_channels && groups == out_channels;
  }

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0 ||
        groups <= 0) {
      throw std::invalid_argument("conv: non-positive parameter");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      throw std::invalid_argument("conv: channel counts " + std::to_string(in_channels) + "/" +
                                  std::to_string(out_channels) + " not divisible by groups " +
                                  std::to_string(groups));
    }
  }

  int64_t out_extent(int64_t in) const { return (in + 2 * padding - kernel) / stride + 1; }

  Shape out_shape(const Shape& in) const {
    validate();
    if (in.c != in_channels) {
      throw std::invalid_argument("conv: input has " + std::to_string(in.c) +
                                  " channels, expected " + std::to_string(in_channels));
    }
    const int64_t ho = out_extent(in.h);
    const int64_t wo = out_extent(in.w);
    if (ho <= 0 || wo <= 0) {
      throw std::invalid_argument("conv: non-positive output size for input " + in.str());
    }
    return Shape(in.n, out_channels, ho, wo);
  }

  Shape weight_shape() const { return Shape(out_channels, in_channels / groups, kernel, kernel); }

  // MACs for one forward application (cross-correlation of parameterized maps).
  uint64_t macs(const Shape& in) const {
    Shape os = out_shape(in);
    return static_cast<uint64_t>(os.n) * os.h * os.w * out_channels * (in_channels / groups) *
           kernel * kernel;
  }
};

// "same" padding for odd kernels; keeps spatial size at stride 1.
inline int64_t same_padding(int64_t kernel) { return kernel / 2; }

namespace convdetail {

struct Range {
  int64_t lo, hi;  // [lo, hi)
};

// Output indices o whose input index o*stride - pad + koff lands inside [0, in).
inline Range valid_range(int64_t in, int64_t out, int64_t stride, int64_t pad, int64_t koff) {
  const int64_t shift = koff - pad;
  int64_t lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  const int64_t top = in - 1 - shift;
  if (top < 0) return {0, 0};
  const int64_t hi = std::min(out, top / stride + 1);
  if (hi <= lo) return {0, 0};
  return {lo, hi};
}

template <typename T>
void forward(const T* in, const T* wt, T* out, const Shape& is, const Shape& os,
             const ConvParams& p) {
  const int64_t H = is.h, W = is.w, Ho = os.h, Wo = os.w;
  const int64_t k = p.kernel, s = p.stride, pad = p.padding;
  const int64_t cipg = p.in_channels / p.groups;
  const int64_t copg = p.out_channels / p.groups;
  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t g = 0; g < p.groups; ++g) {
      for (int64_t col = 0; col < copg; ++col) {
        const int64_t co = g * copg + col;
        T* outp = out + (n * os.c + co) * Ho * Wo;
        for (int64_t cil = 0; cil < cipg; ++cil) {
          const int64_t ci = g * cipg + cil;
          const T* inp = in + (n * is.c + ci) * H * W;
          const T* wp = wt + (co * cipg + cil) * k * k;
          for (int64_t kh = 0; kh < k; ++kh) {
            const Range hr = valid_range(H, Ho, s, pad, kh);
            for (int64_t kw = 0; kw < k; ++kw) {
              const T wv = wp[kh * k + kw];
              const Range wr = valid_range(W, Wo, s, pad, kw);
              const int64_t cnt = wr.hi - wr.lo;
              for (int64_t ho = hr.lo; ho < hr.hi; ++ho) {
                const T* irow = inp + (ho * s - pad + kh) * W + (wr.lo * s - pad + kw);
                T* orow = outp + ho * Wo + wr.lo;
                if (s == 1) {
                  for (int64_t i = 0; i < cnt; ++i) orow[i] += wv * irow[i];
                } else {
                  for (int64_t i = 0; i < cnt; ++i) orow[i] += wv * irow[i * s];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void backward_input(const T* gout, const T* wt, T* gin, const Shape& is, const Shape& os,
                    const ConvParams& p) {
  const int64_t H = is.h, W = is.w, Ho = os.h, Wo = os.w;
  const int64_t k = p.kernel, s = p.stride, pad = p.padding;
  const int64_t cipg = p.in_channels / p.groups;
  const int64_t copg = p.out_channels / p.groups;
  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t g = 0; g < p.groups; ++g) {
      for (int64_t col = 0; col < copg; ++col) {
        const int64_t co = g * copg + col;
        const T* goutp = gout + (n * os.c + co) * Ho * Wo;
        for (int64_t cil = 0; cil < cipg; ++cil) {
          const int64_t ci = g * cipg + cil;
          T* ginp = gin + (n * is.c + ci) * H * W;
          const T* wp = wt + (co * cipg + cil) * k * k;
          for (int64_t kh = 0; kh < k; ++kh) {
            const Range hr = valid_range(H, Ho, s, pad, kh);
            for (int64_t kw = 0; kw < k; ++kw) {
              const T wv = wp[kh * k + kw];
              const Range wr = valid_range(W, Wo, s, pad, kw);
              const int64_t cnt = wr.hi - wr.lo;
              for (int64_t ho = hr.lo; ho < hr.hi; ++ho) {
                const T* grow = goutp + ho * Wo + wr.lo;
                T* irow = ginp + (ho * s - pad + kh) * W + (wr.lo * s - pad + kw);
                if (s == 1) {
                  for (int64_t i = 0; i < cnt; ++i) irow[i] += wv * grow[i];
                } else {
                  for (int64_t i = 0; i < cnt; ++i) irow[i * s] += wv * grow[i];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void backward_weight(const T* gout, const T* in, T* gw, const Shape& is, const Shape& os,
                     const ConvParams& p) {
  const int64_t H = is.h, W = is.w, Ho = os.h, Wo = os.w;
  const int64_t k = p.kernel, s = p.stride, pad = p.padding;
  const int64_t cipg = p.in_channels / p.groups;
  const int64_t copg = p.out_channels / p.groups;
  for (int64_t g = 0; g < p.groups; ++g) {
    for (int64_t col = 0; col < copg; ++col) {
      const int64_t co = g * copg + col;
      for (int64_t cil = 0; cil < cipg; ++cil) {
        const int64_t ci = g * cipg + cil;
        T* wrow = gw + (co * cipg + cil) * k * k;
        for (int64_t kh = 0; kh < k; ++kh) {
          const Range hr = valid_range(H, Ho, s, pad, kh);
          for (int64_t kw = 0; kw < k; ++kw) {
            const Range wr = valid_range(W, Wo, s, pad, kw);
            const int64_t cnt = wr.hi - wr.lo;
            T acc = T(0);
            for (int64_t n = 0; n < is.n; ++n) {
              const T* goutp = gout + (n * os.c + co) * Ho * Wo;
              const T* inp = in + (n * is.c + ci) * H * W;
              for (int64_t ho = hr.lo; ho < hr.hi; ++ho) {
                const T* grow = goutp + ho * Wo + wr.lo;
                const T* irow = inp + (ho * s - pad + kh) * W + (wr.lo * s - pad + kw);
                if (s == 1) {
                  for (int64_t i = 0; i < cnt; ++i) acc += grow[i] * irow[i];
                } else {
                  for (int64_t i = 0; i < cnt; ++i) acc += grow[i] * irow[i * s];
                }
              }
            }
            wrow[kh * k + kw] += acc;
          }
        }
      }
    }
  }
}

}  // namespace convdetail

// Cross-correlation (no kernel flip) with zero padding. Weight layout is
// (out_channels, in_channels/groups, k, k).
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const ConvParams& params) {
  const Shape out_shape = params.out_shape(x.shape());
  if (w.shape() != params.weight_shape()) {
    throw std::invalid_argument("conv: weight shape " + w.shape().str() + " does not match " +
                                params.weight_shape().str());
  }
  std::vector<T> out(out_shape.numel(), T(0));
  convdetail::forward(x.ptr(), w.ptr(), out.data(), x.shape(), out_shape, params);
  TensorT<T> result = TensorT<T>::from_vector(out_shape, std::move(out));
  if (detail::should_record<T>(x.requires_grad() || w.requires_grad())) {
    auto sx = x.storage();
    auto sw = w.storage();
    auto so = result.storage();
    const Shape is = x.shape();
    const ConvParams p = params;
    GradTapeT<T>::active()->record("conv2d", {x, w}, result, [=]() {
      if (sx->requires_grad) {
        auto& gx = detail::ensure_grad(sx);
        convdetail::backward_input(so->grad.data(), sw->values.data(), gx.data(), is, so->shape, p);
      }
      if (sw->requires_grad) {
        auto& gw = detail::ensure_grad(sw);
        convdetail::backward_weight(so->grad.data(), sx->values.data(), gw.data(), is, so->shape, p);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class NormMode { Train, Eval };

template <typename T>
struct BatchNormStateT {
  TensorT<T> gamma;  // (1,C,1,1)
  TensorT<T> beta;   // (1,C,1,1)
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  NormMode mode = NormMode::Train;
  bool stats_initialized = false;

  explicit BatchNormStateT(int64_t channels)
      : gamma(TensorT<T>::full(Shape(1, channels, 1, 1), T(1), true)),
        beta(TensorT<T>::zeros(Shape(1, channels, 1, 1), true)),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  int64_t channels() const { return gamma.shape().c; }

  void init_running_stats(std::vector<T> mean, std::vector<T> var) {
    if (static_cast<int64_t>(mean.size()) != channels() ||
        static_cast<int64_t>(var.size()) != channels()) {
      throw std::invalid_argument("batch_norm: running stats length mismatch");
    }
    for (T v : var) {
      if (!(v > T(0))) throw std::invalid_argument("batch_norm: running_var must be positive");
    }
    running_mean = std::move(mean);
    running_var = std::move(var);
    stats_initialized = true;
  }
};

template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, BatchNormStateT<T>& state) {
  const Shape sh = x.shape();
  const int64_t C = state.channels();
  if (sh.c != C) {
    throw std::invalid_argument("batch_norm: input has " + std::to_string(sh.c) +
                                " channels, state has " + std::to_string(C));
  }
  const int64_t plane = sh.h * sh.w;
  const int64_t m = sh.n * plane;  // elements per channel
  const T* px = x.ptr();

  std::vector<T> out(sh.numel());
  std::vector<T> xhat(sh.numel());
  std::vector<T> invstd(C);
  const T* pg = state.gamma.ptr();
  const T* pb = state.beta.ptr();

  if (state.mode == NormMode::Train) {
    for (int64_t c = 0; c < C; ++c) {
      T sum = T(0);
      for (int64_t n = 0; n < sh.n; ++n) {
        const T* p = px + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(m);
      T sq = T(0);
      for (int64_t n = 0; n < sh.n; ++n) {
        const T* p = px + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          sq += d * d;
        }
      }
      const T var = sq / static_cast<T>(m);  // biased, also used for running stats
      const T is = T(1) / std::sqrt(var + state.epsilon);
      invstd[c] = is;
      for (int64_t n = 0; n < sh.n; ++n) {
        const T* p = px + (n * C + c) * plane;
        T* ph = xhat.data() + (n * C + c) * plane;
        T* po = out.data() + (n * C + c) * plane;
        const T gam = pg[c], bet = pb[c];
        for (int64_t i = 0; i < plane; ++i) {
          const T h = (p[i] - mu) * is;
          ph[i] = h;
          po[i] = gam * h + bet;
        }
      }
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      T rv = (T(1) - state.momentum) * state.running_var[c] + state.momentum * var;
      if (!(rv > T(0))) rv = state.epsilon;
      state.running_var[c] = rv;
    }
    state.stats_initialized = true;
  } else {
    if (!state.stats_initialized) {
      throw std::runtime_error(
          "batch_norm: eval mode requires initialized running statistics "
          "(train first or call init_running_stats)");
    }
    for (int64_t c = 0; c < C; ++c) {
      const T is = T(1) / std::sqrt(state.running_var[c] + state.epsilon);
      invstd[c] = is;
      const T mu = state.running_mean[c];
      const T gam = pg[c], bet = pb[c];
      for (int64_t n = 0; n < sh.n; ++n) {
        const T* p = px + (n * C + c) * plane;
        T* ph = xhat.data() + (n * C + c) * plane;
        T* po = out.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T h = (p[i] - mu) * is;
          ph[i] = h;
          po[i] = gam * h + bet;
        }
      }
    }
  }

  TensorT<T> result = TensorT<T>::from_vector(sh, std::move(out));
  const bool any_grad =
      x.requires_grad() || state.gamma.requires_grad() || state.beta.requires_grad();
  if (detail::should_record<T>(any_grad)) {
    auto sx = x.storage();
    auto sg = state.gamma.storage();
    auto sb = state.beta.storage();
    auto so = result.storage();
    auto saved_xhat = std::make_shared<std::vector<T>>(std::move(xhat));
    auto saved_invstd = std::make_shared<std::vector<T>>(std::move(invstd));
    const bool train = state.mode == NormMode::Train;
    GradTapeT<T>::active()->record(
        "batch_norm", {x, state.gamma, state.beta}, result, [=]() {
          const std::vector<T>& gy = so->grad;
          const std::vector<T>& hx = *saved_xhat;
          const int64_t N = sh.n;
          for (int64_t c = 0; c < C; ++c) {
            T sum_gy = T(0), sum_gy_h = T(0);
            for (int64_t n = 0; n < N; ++n) {
              const int64_t base = (n * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                sum_gy += gy[base + i];
                sum_gy_h += gy[base + i] * hx[base + i];
              }
            }
            if (sg->requires_grad) detail::ensure_grad(sg)[c] += sum_gy_h;
            if (sb->requires_grad) detail::ensure_grad(sb)[c] += sum_gy;
            if (sx->requires_grad) {
              auto& gx = detail::ensure_grad(sx);
              const T gam = sg->values[c];
              const T is = (*saved_invstd)[c];
              if (train) {
                const T mean_g = sum_gy / static_cast<T>(m);
                const T mean_gh = sum_gy_h / static_cast<T>(m);
                for (int64_t n = 0; n < N; ++n) {
                  const int64_t base = (n * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    gx[base + i] +=
                        gam * is * (gy[base + i] - mean_g - hx[base + i] * mean_gh);
                  }
                }
              } else {
                for (int64_t n = 0; n < N; ++n) {
                  const int64_t base = (n * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) gx[base + i] += gam * is * gy[base + i];
                }
              }
            }
          }
        });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class ActKind { ReLU, GELU };

inline const char* act_name(ActKind k) { return k == ActKind::ReLU ? "relu" : "gelu"; }

template <typename T>
TensorT<T> activation(ActKind kind, const TensorT<T>& x) {
  const int64_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.ptr();
  if (kind == ActKind::ReLU) {
    for (int64_t i = 0; i < n; ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
  } else {
    const T c = std::sqrt(T(2) / T(M_PI));
    for (int64_t i = 0; i < n; ++i) {
      const T v = px[i];
      const T u = c * (v + T(0.044715) * v * v * v);
      out[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
  }
  TensorT<T> result = TensorT<T>::from_vector(x.shape(), std::move(out));
  if (detail::should_record<T>(x.requires_grad())) {
    auto sx = x.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record(act_name(kind), {x}, result, [=]() {
      auto& gx = detail::ensure_grad(sx);
      const std::vector<T>& gy = so->grad;
      const std::vector<T>& vx = sx->values;
      if (kind == ActKind::ReLU) {
        // subgradient at 0 is 0
        for (size_t i = 0; i < gy.size(); ++i) gx[i] += vx[i] > T(0) ? gy[i] : T(0);
      } else {
        const T c = std::sqrt(T(2) / T(M_PI));
        for (size_t i = 0; i < gy.size(); ++i) {
          const T v = vx[i];
          const T u = c * (v + T(0.044715) * v * v * v);
          const T t = std::tanh(u);
          const T du = c * (T(1) + T(3) * T(0.044715) * v * v);
          gx[i] += gy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
        }
      }
    });
  }
  return result;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return activation(ActKind::ReLU, x);
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  return activation(ActKind::GELU, x);
}

// ---------------------------------------------------------------------------
// Pooling and the classifier head
// ---------------------------------------------------------------------------

struct PoolParams {
  int64_t kernel = 3;
  int64_t stride = 2;
  int64_t padding = 1;

  Shape out_shape(const Shape& in) const {
    if (padding >= kernel) throw std::invalid_argument("max_pool: padding must be < kernel");
    if (kernel > in.h + 2 * padding || kernel > in.w + 2 * padding) {
      throw std::invalid_argument("max_pool: window larger than padded input " + in.str());
    }
    const int64_t ho = (in.h + 2 * padding - kernel) / stride + 1;
    const int64_t wo = (in.w + 2 * padding - kernel) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("max_pool: non-positive output size");
    return Shape(in.n, in.c, ho, wo);
  }
};

template <typename T>
TensorT<T> max_pool2d(const TensorT<T>& x, PoolParams p = {}) {
  const Shape is = x.shape();
  const Shape os = p.out_shape(is);
  std::vector<T> out(os.numel());
  std::vector<int64_t> argmax(os.numel());
  const T* px = x.ptr();
  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t c = 0; c < is.c; ++c) {
      const T* plane = px + (n * is.c + c) * is.h * is.w;
      for (int64_t ho = 0; ho < os.h; ++ho) {
        for (int64_t wo = 0; wo < os.w; ++wo) {
          const int64_t h0 = ho * p.stride - p.padding;
          const int64_t w0 = wo * p.stride - p.padding;
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int64_t kh = 0; kh < p.kernel; ++kh) {
            const int64_t hi = h0 + kh;
            if (hi < 0 || hi >= is.h) continue;
            for (int64_t kw = 0; kw < p.kernel; ++kw) {
              const int64_t wi = w0 + kw;
              if (wi < 0 || wi >= is.w) continue;
              const T v = plane[hi * is.w + wi];
              if (v > best) {  // ties keep the first cell scanned
                best = v;
                best_idx = hi * is.w + wi;
              }
            }
          }
          const int64_t oi = ((n * os.c + c) * os.h + ho) * os.w + wo;
          out[oi] = best;
          argmax[oi] = (n * is.c + c) * is.h * is.w + best_idx;
        }
      }
    }
  }
  TensorT<T> result = TensorT<T>::from_vector(os, std::move(out));
  if (detail::should_record<T>(x.requires_grad())) {
    auto sx = x.storage();
    auto so = result.storage();
    auto saved = std::make_shared<std::vector<int64_t>>(std::move(argmax));
    GradTapeT<T>::active()->record("max_pool2d", {x}, result, [=]() {
      auto& gx = detail::ensure_grad(sx);
      const std::vector<T>& gy = so->grad;
      for (size_t i = 0; i < gy.size(); ++i) gx[(*saved)[i]] += gy[i];
    });
  }
  return result;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  const Shape is = x.shape();
  const int64_t plane = is.h * is.w;
  std::vector<T> out(is.n * is.c);
  const T* px = x.ptr();
  for (int64_t nc = 0; nc < is.n * is.c; ++nc) {
    T acc = T(0);
    const T* p = px + nc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    out[nc] = acc / static_cast<T>(plane);
  }
  TensorT<T> result = TensorT<T>::from_vector(Shape(is.n, is.c, 1, 1), std::move(out));
  if (detail::should_record<T>(x.requires_grad())) {
    auto sx = x.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("global_avg_pool", {x}, result, [=]() {
      auto& gx = detail::ensure_grad(sx);
      const std::vector<T>& gy = so->grad;
      const T inv = T(1) / static_cast<T>(plane);
      for (int64_t nc = 0; nc < is.n * is.c; ++nc) {
        const T g = gy[nc] * inv;
        T* p = gx.data() + nc * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] += g;
      }
    });
  }
  return result;
}

// Classifier head: x (N,C,1,1), weight (K,C,1,1), bias (1,K,1,1) -> (N,K,1,1).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  const Shape is = x.shape();
  if (is.h != 1 || is.w != 1) {
    throw std::invalid_argument("linear: input must be (N,C,1,1), got " + is.str());
  }
  const int64_t C = is.c;
  const int64_t K = w.shape().n;
  if (w.shape() != Shape(K, C, 1, 1) || b.shape() != Shape(1, K, 1, 1)) {
    throw std::invalid_argument("linear: weight/bias shape mismatch");
  }
  std::vector<T> out(is.n * K);
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t k = 0; k < K; ++k) {
      T acc = pb[k];
      const T* xr = px + n * C;
      const T* wr = pw + k * C;
      for (int64_t c = 0; c < C; ++c) acc += xr[c] * wr[c];
      out[n * K + k] = acc;
    }
  }
  TensorT<T> result = TensorT<T>::from_vector(Shape(is.n, K, 1, 1), std::move(out));
  if (detail::should_record<T>(x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    auto sx = x.storage();
    auto sw = w.storage();
    auto sb = b.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("linear", {x, w, b}, result, [=]() {
      const std::vector<T>& gy = so->grad;
      const int64_t N = is.n;
      if (sx->requires_grad) {
        auto& gx = detail::ensure_grad(sx);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t k = 0; k < K; ++k) {
            const T g = gy[n * K + k];
            const T* wr = sw->values.data() + k * C;
            T* xr = gx.data() + n * C;
            for (int64_t c = 0; c < C; ++c) xr[c] += g * wr[c];
          }
      }
      if (sw->requires_grad) {
        auto& gw = detail::ensure_grad(sw);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t k = 0; k < K; ++k) {
            const T g = gy[n * K + k];
            const T* xr = sx->values.data() + n * C;
            T* wr = gw.data() + k * C;
            for (int64_t c = 0; c < C; ++c) wr[c] += g * xr[c];
          }
      }
      if (sb->requires_grad) {
        auto& gb = detail::ensure_grad(sb);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t k = 0; k < K; ++k) gb[k] += gy[n * K + k];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Stochastic depth (drop path)
// ---------------------------------------------------------------------------

// Train mode zeroes the residual branch per sample with probability `rate`
// and rescales survivors by 1/(1-rate); eval mode is the identity.
template <typename T, typename Rng>
TensorT<T> stochastic_depth(const TensorT<T>& x, double rate, NormMode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("stochastic_depth: rate must be in [0,1), got " +
                                std::to_string(rate));
  }
  if (mode == NormMode::Eval || rate == 0.0) return x;
  const Shape is = x.shape();
  const int64_t per = is.c * is.h * is.w;
  std::bernoulli_distribution drop(rate);
  auto factors = std::make_shared<std::vector<T>>(is.n);
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (int64_t n = 0; n < is.n; ++n) (*factors)[n] = drop(rng) ? T(0) : keep_scale;
  std::vector<T> out(is.numel());
  const T* px = x.ptr();
  for (int64_t n = 0; n < is.n; ++n) {
    const T f = (*factors)[n];
    const T* p = px + n * per;
    T* q = out.data() + n * per;
    for (int64_t i = 0; i < per; ++i) q[i] = p[i] * f;
  }
  TensorT<T> result = TensorT<T>::from_vector(is, std::move(out));
  if (detail::should_record<T>(x.requires_grad())) {
    auto sx = x.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("stochastic_depth", {x}, result, [=]() {
      auto& gx = detail::ensure_grad(sx);
      const std::vector<T>& gy = so->grad;
      for (int64_t n = 0; n < is.n; ++n) {
        const T f = (*factors)[n];
        const T* g = gy.data() + n * per;
        T* p = gx.data() + n * per;
        for (int64_t i = 0; i < per; ++i) p[i] += g[i] * f;
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter-owning wrappers
// ---------------------------------------------------------------------------

// Centered uniform scaled by fan-in.
template <typename T, typename Rng>
TensorT<T> kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const T bound = std::sqrt(T(6) / static_cast<T>(fan_in));
  return TensorT<T>::rand_uniform(shape, -bound, bound, rng, true);
}

template <typename T>
struct Conv2d {
  ConvParams params;
  TensorT<T> weight;

  template <typename Rng>
  Conv2d(const ConvParams& p, Rng& rng)
      : params(p),
        weight(kaiming_uniform<T>(p.weight_shape(),
                                  (p.in_channels / p.groups) * p.kernel * p.kernel, rng)) {
    params.validate();
  }

  TensorT<T> operator()(const TensorT<T>& x) const { return conv2d(x, weight, params); }
};

template <typename T>
struct BatchNorm2d {
  BatchNormStateT<T> state;

  explicit BatchNorm2d(int64_t channels) : state(channels) {}

  TensorT<T> operator()(const TensorT<T>& x) { return batch_norm(x, state); }
};

template <typename T>
struct LinearLayer {
  TensorT<T> weight;  // (K,C,1,1)
  TensorT<T> bias;    // (1,K,1,1)

  template <typename Rng>
  LinearLayer(int64_t in_features, int64_t out_features, Rng& rng)
      : weight(kaiming_uniform<T>(Shape(out_features, in_features, 1, 1), in_features, rng)),
        bias(TensorT<T>::zeros(Shape(1, out_features, 1, 1), true)) {}

  TensorT<T> operator()(const TensorT<T>& x) const { return linear(x, weight, bias); }
};

}  // namespace robustcnn
