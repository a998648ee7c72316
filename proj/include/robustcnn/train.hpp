#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "robustcnn/dataset.hpp"
#include "robustcnn/model.hpp"
#include "robustcnn/tensor.hpp"

namespace robustcnn {

struct TrainConfig {
  int64_t epochs = 50;
  int64_t batch_size = 32;
  double base_lr = 5e-4;
  double min_lr = 1e-6;
  int64_t warmup_epochs = 5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double mixup_alpha = 0.8;
  double cutmix_alpha = 1.0;
  double erase_prob = 0.25;
  double drop_path = 0.0;
  double label_smoothing = 0.1;
  uint64_t seed = 0;
  double early_stop_train_acc = -1.0;  // stop once train accuracy exceeds this; < 0 disables

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(base_lr > min_lr) || min_lr < 0.0) {
      throw std::invalid_argument("need base_lr > min_lr >= 0");
    }
    if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
    if (epochs > 0 && warmup_epochs >= epochs) {
      throw std::invalid_argument("warmup_epochs must be smaller than epochs");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("betas must lie in [0, 1)");
    }
    if (mixup_alpha < 0.0 || cutmix_alpha < 0.0) {
      throw std::invalid_argument("mixup/cutmix alpha must be >= 0");
    }
    if (erase_prob < 0.0 || erase_prob > 1.0) {
      throw std::invalid_argument("erase_prob must lie in [0, 1]");
    }
    if (drop_path < 0.0 || drop_path >= 1.0) {
      throw std::invalid_argument("drop_path must lie in [0, 1)");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
      throw std::invalid_argument("label_smoothing must lie in [0, 1)");
    }
    if (early_stop_train_acc > 1.0) {
      throw std::invalid_argument("early_stop_train_acc is a fraction in [0, 1]");
    }
  }
};

// Linear warmup to base_lr, then cosine decay to min_lr. Steps are 0-based;
// the endpoints are special-cased so the schedule anchors are exact.
inline double cosine_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) throw std::invalid_argument("total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("step outside [0, total]");
  const int64_t warmup =
      cfg.epochs > 0 ? total_steps * cfg.warmup_epochs / cfg.epochs : 0;
  if (step < warmup) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step == warmup) return cfg.base_lr;
  if (step == total_steps) return cfg.min_lr;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay
// ---------------------------------------------------------------------------

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamWStateT {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  int64_t step_count = 0;
};

using AdamWState = AdamWStateT<float>;

// p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p). Params with no gradient
// buffer are treated as zero-gradient (they still feel the decay).
template <typename T>
void adamw_step(std::vector<TensorT<T>>& params, AdamWStateT<T>& state, double lr,
                const OptimConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), T(0));
      state.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter list");
  }
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    TensorT<T>& p = params[i];
    if (state.m[i].size() != static_cast<size_t>(p.numel())) {
      throw std::invalid_argument("optimizer state shape mismatch at parameter " +
                                  std::to_string(i));
    }
    const T* g = p.has_grad() ? p.grad().data() : nullptr;
    T* w = p.mutable_data().data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g ? static_cast<double>(g[j]) : 0.0;
      if (!std::isfinite(gj)) {
        throw std::runtime_error("non-finite gradient in parameter " + std::to_string(i) +
                                 " at element " + std::to_string(j));
      }
      double mj = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * gj;
      double vj = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * gj * gj;
      state.m[i][j] = static_cast<T>(mj);
      state.v[i][j] = static_cast<T>(vj);
      const double step_dir = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.epsilon);
      w[j] = static_cast<T>(w[j] - lr * (step_dir + cfg.weight_decay * w[j]));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch augmentation
// ---------------------------------------------------------------------------

struct MixResult {
  std::vector<int64_t> perm;  // pairing partner per sample
  double lambda = 1.0;        // weight of the untouched sample
  bool used_cutmix = false;
};

// Deterministic halves, exposed for direct testing.
template <typename T>
void apply_mixup(TensorT<T>& x, const std::vector<int64_t>& perm, double lambda);
// Pastes the [y0, y0+rh) x [x0, x0+rw) window from the permuted batch; returns
// the realized lambda = 1 - covered area fraction.
template <typename T>
double apply_cutmix(TensorT<T>& x, const std::vector<int64_t>& perm, int64_t y0, int64_t x0,
                    int64_t rh, int64_t rw);

// Chooses mixup or cutmix with equal probability and applies it in place.
MixResult mixup_cutmix(Tensor& x, double mixup_alpha, double cutmix_alpha,
                       std::mt19937_64& rng);

// With probability prob per sample, overwrites one random rectangle (2-33% of
// the area, aspect ratio 0.3-3.3) with uniform noise.
void random_erasing(Tensor& x, double prob, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Dense (N, K, 1, 1) target distribution: one-hot blended with uniform mass.
template <typename T>
TensorT<T> smooth_targets(const std::vector<int64_t>& labels, int64_t num_classes,
                          double smoothing);

// Mean over the batch of -sum_k t_k log softmax(s)_k. Gradient reaches the
// logits only; targets are treated as constants.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const TensorT<T>& targets);

// (1-lambda) * CE(student, targets) + lambda * tau^2 * KL(p_teacher || p_student)
// with p = softmax(logits / tau), KL averaged over the batch. Gradients flow
// only through the student logits.
template <typename T>
TensorT<T> kd_loss(const TensorT<T>& student, const TensorT<T>& teacher,
                   const TensorT<T>& targets, double tau, double lambda);

double accuracy(const Tensor& logits, const std::vector<int64_t>& labels);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct DistillConfig {
  Model<float>* teacher = nullptr;  // evaluated frozen, in eval mode
  double temperature = 1.0;
  double weight = 0.5;  // lambda
};

struct EpochStats {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochStats> log;
  int64_t steps = 0;
};

std::string format_epoch_line(const EpochStats& s);

// Full loop: shuffle -> erase -> mixup/cutmix -> forward -> loss -> backward
// -> AdamW with the cosine schedule. Deterministic under cfg.seed. A non-finite
// loss aborts with the offending global step index.
TrainResult train(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                  const DistillConfig* distill = nullptr, const Dataset* val_data = nullptr,
                  std::ostream* log_stream = nullptr);

}  // namespace robustcnn
