#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "robustcnn/shape.hpp"

namespace robustcnn {

template <typename T>
class GradTapeT;

template <typename T>
struct TensorStorageT {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  bool is_leaf = true;  // false for op outputs recorded on a tape
  std::vector<T> grad;  // empty until backward touches this node
};

// Dense rank-4 tensor, shared-handle semantics. Values are written at
// construction and by explicit in-place optimizer updates only.
template <typename T>
class TensorT {
 public:
  using Storage = TensorStorageT<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return TensorT(shape, std::vector<T>(shape.numel(), T(0)), requires_grad);
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    return TensorT(shape, std::vector<T>(shape.numel(), value), requires_grad);
  }

  static TensorT from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape.numel()) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape.str());
    }
    return TensorT(shape, std::move(values), requires_grad);
  }

  static TensorT zeros_like(const TensorT& other) { return zeros(other.shape()); }

  template <typename Rng>
  static TensorT rand_uniform(Shape shape, T lo, T hi, Rng& rng, bool requires_grad = false) {
    std::uniform_real_distribution<T> dist(lo, hi);
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = dist(rng);
    return TensorT(shape, std::move(v), requires_grad);
  }

  template <typename Rng>
  static TensorT rand_normal(Shape shape, T mean, T stddev, Rng& rng, bool requires_grad = false) {
    std::normal_distribution<T> dist(mean, stddev);
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = dist(rng);
    return TensorT(shape, std::move(v), requires_grad);
  }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int64_t numel() const { return check().shape.numel(); }

  const std::vector<T>& data() const { return check().values; }
  std::vector<T>& mutable_data() { return check().values; }
  const T* ptr() const { return check().values.data(); }
  T* mutable_ptr() { return check().values.data(); }

  T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return check().values[check().shape.index(n, c, h, w)];
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return check().values[check().shape.index(n, c, h, w)];
  }

  // Value of a (1,1,1,1) tensor.
  T item() const {
    if (!shape().is_scalar()) {
      throw std::invalid_argument("Tensor::item: shape " + shape().str() + " is not scalar");
    }
    return check().values[0];
  }

  bool requires_grad() const { return check().requires_grad; }
  void set_requires_grad(bool value) {
    if (!check().is_leaf) {
      throw std::invalid_argument("set_requires_grad: only leaf tensors may be toggled");
    }
    check().requires_grad = value;
  }
  bool is_leaf() const { return check().is_leaf; }

  bool has_grad() const { return !check().grad.empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor::grad: gradient not populated");
    return check().grad;
  }
  TensorT grad_tensor() const { return TensorT::from_vector(shape(), grad()); }
  void zero_grad() { check().grad.clear(); }

  std::shared_ptr<Storage> storage() const { return storage_; }
  bool same_storage(const TensorT& o) const { return storage_ == o.storage_; }

  // Deep copy of values; grad/tape state is not carried over.
  TensorT clone() const { return TensorT(shape(), data(), false); }

  friend class GradTapeT<T>;

 private:
  TensorT(Shape shape, std::vector<T> values, bool requires_grad)
      : storage_(std::make_shared<Storage>()) {
    storage_->shape = shape;
    storage_->values = std::move(values);
    storage_->requires_grad = requires_grad;
  }

  explicit TensorT(std::shared_ptr<Storage> s) : storage_(std::move(s)) {}

  Storage& check() const {
    if (!storage_) throw std::runtime_error("Tensor: use of default-constructed tensor");
    return *storage_;
  }

  std::shared_ptr<Storage> storage_;
};

// Append-only record of forward operations; parents always precede children.
// A tape is active while in scope; backward() consumes it.
template <typename T>
class GradTapeT {
 public:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorStorageT<T>>> parents;
    std::shared_ptr<TensorStorageT<T>> out;
    std::function<void()> backward;  // reads out->grad, accumulates into parents' grads
  };

  GradTapeT() : prev_(active_ref()) { active_ref() = this; }
  ~GradTapeT() { active_ref() = prev_; }
  GradTapeT(const GradTapeT&) = delete;
  GradTapeT& operator=(const GradTapeT&) = delete;

  static GradTapeT* active() { return active_ref(); }

  static GradTapeT* swap_active(GradTapeT* t) {
    GradTapeT* prev = active_ref();
    active_ref() = t;
    return prev;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void record(const char* op, std::vector<TensorT<T>> parents, TensorT<T>& out,
              std::function<void()> backward) {
    Node node;
    node.op = op;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.storage());
    out.storage()->requires_grad = true;
    out.storage()->is_leaf = false;
    node.out = out.storage();
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }

  // Reverse sweep from a scalar loss. Visits each node exactly once; grads
  // accumulate into every requires_grad leaf reachable from the loss.
  void backward(const TensorT<T>& loss) {
    if (!loss.shape().is_scalar()) {
      throw std::invalid_argument("backward: loss must have shape (1,1,1,1), got " +
                                  loss.shape().str());
    }
    if (nodes_.empty()) throw std::runtime_error("backward: tape is empty");
    if (consumed_) throw std::runtime_error("backward: tape already consumed");
    consumed_ = true;
    loss.storage()->grad.assign(1, T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // node does not influence the loss
      it->backward();
    }
  }

 private:
  static GradTapeT*& active_ref() {
    thread_local GradTapeT* active = nullptr;
    return active;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  GradTapeT* prev_;
};

// Suspends tape recording for the current thread while alive.
template <typename T>
class NoGradT {
 public:
  NoGradT() : prev_(GradTapeT<T>::swap_active(nullptr)) {}
  ~NoGradT() { GradTapeT<T>::swap_active(prev_); }
  NoGradT(const NoGradT&) = delete;
  NoGradT& operator=(const NoGradT&) = delete;

 private:
  GradTapeT<T>* prev_;
};

namespace detail {

template <typename T>
inline bool should_record(bool any_requires_grad) {
  return GradTapeT<T>::active() != nullptr && any_requires_grad;
}

template <typename T>
inline std::vector<T>& ensure_grad(const std::shared_ptr<TensorStorageT<T>>& s) {
  if (s->grad.empty()) s->grad.assign(s->shape.numel(), T(0));
  return s->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. b may match a's shape, be a plain scalar, or be a
// per-channel (1,C,1,1) tensor broadcast over N,H,W.
// ---------------------------------------------------------------------------

enum class BroadcastKind { Same, PerChannel };

template <typename T>
inline BroadcastKind broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return BroadcastKind::Same;
  if (b.is_per_channel() && b.c == a.c) return BroadcastKind::PerChannel;
  throw std::invalid_argument(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                              " are neither equal nor (1,C,1,1) broadcastable");
}

template <typename T, typename Fwd>
TensorT<T> binary_elementwise(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd,
                              T db_sign_or_factor, bool is_mul) {
  BroadcastKind kind = broadcast_kind<T>(a.shape(), b.shape(), name);
  const Shape sh = a.shape();
  const int64_t plane = sh.h * sh.w;
  std::vector<T> out(sh.numel());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  if (kind == BroadcastKind::Same) {
    for (int64_t i = 0; i < sh.numel(); ++i) out[i] = fwd(pa[i], pb[i]);
  } else {
    for (int64_t n = 0; n < sh.n; ++n)
      for (int64_t c = 0; c < sh.c; ++c) {
        const T bv = pb[c];
        const int64_t base = (n * sh.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) out[base + i] = fwd(pa[base + i], bv);
      }
  }
  TensorT<T> result = TensorT<T>::from_vector(sh, std::move(out));
  if (detail::should_record<T>(a.requires_grad() || b.requires_grad())) {
    auto sa = a.storage();
    auto sb = b.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record(name, {a, b}, result, [=]() {
      const std::vector<T>& gy = so->grad;
      if (sa->requires_grad) {
        auto& ga = detail::ensure_grad(sa);
        if (!is_mul) {
          for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        } else if (kind == BroadcastKind::Same) {
          for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * sb->values[i];
        } else {
          for (int64_t n = 0; n < sh.n; ++n)
            for (int64_t c = 0; c < sh.c; ++c) {
              const T bv = sb->values[c];
              const int64_t base = (n * sh.c + c) * plane;
              for (int64_t i = 0; i < plane; ++i) ga[base + i] += gy[base + i] * bv;
            }
        }
      }
      if (sb->requires_grad) {
        auto& gb = detail::ensure_grad(sb);
        if (kind == BroadcastKind::Same) {
          if (is_mul) {
            for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * sa->values[i];
          } else {
            for (size_t i = 0; i < gy.size(); ++i) gb[i] += db_sign_or_factor * gy[i];
          }
        } else {
          for (int64_t n = 0; n < sh.n; ++n)
            for (int64_t c = 0; c < sh.c; ++c) {
              const int64_t base = (n * sh.c + c) * plane;
              T acc = T(0);
              if (is_mul) {
                for (int64_t i = 0; i < plane; ++i) acc += gy[base + i] * sa->values[base + i];
              } else {
                for (int64_t i = 0; i < plane; ++i) acc += db_sign_or_factor * gy[base + i];
              }
              gb[c] += acc;
            }
        }
      }
    });
  }
  return result;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; }, T(1), false);
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, T(-1), false);
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, T(1), true);
}

// Scalar right-hand sides.
template <typename T>
TensorT<T> add(const TensorT<T>& a, T b) {
  std::vector<T> out(a.numel());
  const T* pa = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + b;
  TensorT<T> result = TensorT<T>::from_vector(a.shape(), std::move(out));
  if (detail::should_record<T>(a.requires_grad())) {
    auto sa = a.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("add_scalar", {a}, result, [=]() {
      auto& ga = detail::ensure_grad(sa);
      for (size_t i = 0; i < so->grad.size(); ++i) ga[i] += so->grad[i];
    });
  }
  return result;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, T b) {
  return add(a, -b);
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  std::vector<T> out(a.numel());
  const T* pa = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * factor;
  TensorT<T> result = TensorT<T>::from_vector(a.shape(), std::move(out));
  if (detail::should_record<T>(a.requires_grad())) {
    auto sa = a.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("scale", {a}, result, [=]() {
      auto& ga = detail::ensure_grad(sa);
      for (size_t i = 0; i < so->grad.size(); ++i) ga[i] += factor * so->grad[i];
    });
  }
  return result;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, T b) {
  return scale(a, b);
}

// Full reduction to a (1,1,1,1) scalar.
template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  T acc = T(0);
  const T* pa = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  TensorT<T> result = TensorT<T>::from_vector(Shape(1, 1, 1, 1), {acc});
  if (detail::should_record<T>(a.requires_grad())) {
    auto sa = a.storage();
    auto so = result.storage();
    GradTapeT<T>::active()->record("sum", {a}, result, [=]() {
      const T g = so->grad[0];
      auto& ga = detail::ensure_grad(sa);
      for (auto& v : ga) v += g;
    });
  }
  return result;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
bool all_finite(const TensorT<T>& a) {
  const T* p = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using GradTape = GradTapeT<float>;
using GradTapeD = GradTapeT<double>;

}  // namespace robustcnn
