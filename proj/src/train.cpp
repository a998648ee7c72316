#include "robustcnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace robustcnn {

// ---------------------------------------------------------------------------
// Batch augmentation
// ---------------------------------------------------------------------------

template <typename T>
void apply_mixup(TensorT<T>& x, const std::vector<int64_t>& perm, double lambda) {
  const Shape s = x.shape();
  if (static_cast<int64_t>(perm.size()) != s.n) {
    throw std::invalid_argument("mixup permutation size does not match the batch");
  }
  const std::vector<T> original(x.ptr(), x.ptr() + x.numel());
  T* px = x.mutable_data().data();
  const int64_t stride = s.c * s.h * s.w;
  const T lam = static_cast<T>(lambda);
  for (int64_t n = 0; n < s.n; ++n) {
    const T* other = original.data() + perm[n] * stride;
    T* mine = px + n * stride;
    for (int64_t i = 0; i < stride; ++i) {
      mine[i] = lam * mine[i] + (T(1) - lam) * other[i];
    }
  }
}

template <typename T>
double apply_cutmix(TensorT<T>& x, const std::vector<int64_t>& perm, int64_t y0, int64_t x0,
                    int64_t rh, int64_t rw) {
  const Shape s = x.shape();
  if (static_cast<int64_t>(perm.size()) != s.n) {
    throw std::invalid_argument("cutmix permutation size does not match the batch");
  }
  if (y0 < 0 || x0 < 0 || rh < 0 || rw < 0 || y0 + rh > s.h || x0 + rw > s.w) {
    throw std::invalid_argument("cutmix window outside the image");
  }
  const std::vector<T> original(x.ptr(), x.ptr() + x.numel());
  T* px = x.mutable_data().data();
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* src = original.data() + (perm[n] * s.c + c) * plane;
      T* dst = px + (n * s.c + c) * plane;
      for (int64_t y = y0; y < y0 + rh; ++y) {
        for (int64_t xx = x0; xx < x0 + rw; ++xx) dst[y * s.w + xx] = src[y * s.w + xx];
      }
    }
  }
  return 1.0 - static_cast<double>(rh * rw) / static_cast<double>(s.h * s.w);
}

namespace {

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

}  // namespace

MixResult mixup_cutmix(Tensor& x, double mixup_alpha, double cutmix_alpha,
                       std::mt19937_64& rng) {
  const Shape s = x.shape();
  MixResult result;
  result.perm.resize(s.n);
  std::iota(result.perm.begin(), result.perm.end(), 0);
  if (s.n < 2 || (mixup_alpha <= 0.0 && cutmix_alpha <= 0.0)) return result;

  std::shuffle(result.perm.begin(), result.perm.end(), rng);
  const bool both = mixup_alpha > 0.0 && cutmix_alpha > 0.0;
  const bool use_cutmix =
      both ? std::uniform_int_distribution<int>(0, 1)(rng) == 1 : cutmix_alpha > 0.0;

  if (!use_cutmix) {
    result.lambda = sample_beta(mixup_alpha, rng);
    apply_mixup(x, result.perm, result.lambda);
    return result;
  }

  result.used_cutmix = true;
  const double lam = sample_beta(cutmix_alpha, rng);
  const double cut = std::sqrt(1.0 - lam);
  const int64_t rh = std::min<int64_t>(s.h, std::llround(cut * static_cast<double>(s.h)));
  const int64_t rw = std::min<int64_t>(s.w, std::llround(cut * static_cast<double>(s.w)));
  // The window is placed fully inside the image so the realized lambda is the
  // exact area complement.
  std::uniform_int_distribution<int64_t> ypos(0, s.h - rh);
  std::uniform_int_distribution<int64_t> xpos(0, s.w - rw);
  const int64_t y0 = ypos(rng);
  const int64_t x0 = xpos(rng);
  result.lambda = apply_cutmix(x, result.perm, y0, x0, rh, rw);
  return result;
}

void random_erasing(Tensor& x, double prob, std::mt19937_64& rng) {
  if (prob < 0.0 || prob > 1.0) throw std::invalid_argument("erase probability outside [0, 1]");
  if (prob == 0.0) return;
  const Shape s = x.shape();
  std::bernoulli_distribution flip(prob);
  std::uniform_real_distribution<double> area_frac(0.02, 0.33);
  std::uniform_real_distribution<double> aspect(0.3, 3.3);
  std::uniform_real_distribution<float> fill(0.0f, 1.0f);
  float* px = x.mutable_data().data();
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    if (!flip(rng)) continue;
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double area = area_frac(rng) * static_cast<double>(plane);
      const double ratio = aspect(rng);
      const int64_t rh = std::max<int64_t>(1, std::llround(std::sqrt(area * ratio)));
      const int64_t rw = std::max<int64_t>(1, std::llround(std::sqrt(area / ratio)));
      if (rh > s.h || rw > s.w) continue;
      const int64_t y0 = std::uniform_int_distribution<int64_t>(0, s.h - rh)(rng);
      const int64_t x0 = std::uniform_int_distribution<int64_t>(0, s.w - rw)(rng);
      for (int64_t c = 0; c < s.c; ++c) {
        float* dst = px + (n * s.c + c) * plane;
        for (int64_t y = y0; y < y0 + rh; ++y) {
          for (int64_t xx = x0; xx < x0 + rw; ++xx) dst[y * s.w + xx] = fill(rng);
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> smooth_targets(const std::vector<int64_t>& labels, int64_t num_classes,
                          double smoothing) {
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("label smoothing outside [0, 1)");
  }
  const int64_t n = static_cast<int64_t>(labels.size());
  std::vector<T> t(n * num_classes, static_cast<T>(smoothing / num_classes));
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    t[i * num_classes + labels[i]] += static_cast<T>(1.0 - smoothing);
  }
  return TensorT<T>::from_vector(Shape(n, num_classes, 1, 1), std::move(t));
}

namespace {

// Row-wise softmax and log-sum-exp of (N, K, 1, 1) logits.
template <typename T>
void softmax_rows(const T* s, int64_t n, int64_t k, std::vector<T>& probs,
                  std::vector<T>& lse) {
  probs.resize(n * k);
  lse.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const T* row = s + i * k;
    T m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    T acc = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T e = std::exp(row[j] - m);
      probs[i * k + j] = e;
      acc += e;
    }
    lse[i] = m + std::log(acc);
    const T inv = T(1) / acc;
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] *= inv;
  }
}

template <typename T>
void check_logit_shapes(const TensorT<T>& logits, const TensorT<T>& targets) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) {
    throw std::invalid_argument("logits must have shape (N, K, 1, 1), got " + s.str());
  }
  if (targets.shape() != s) {
    throw std::invalid_argument("targets shape " + targets.shape().str() +
                                " does not match logits " + s.str());
  }
}

}  // namespace

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const TensorT<T>& targets) {
  check_logit_shapes(logits, targets);
  const int64_t n = logits.shape().n;
  const int64_t k = logits.shape().c;
  std::vector<T> probs, lse;
  softmax_rows(logits.ptr(), n, k, probs, lse);

  const T* s = logits.ptr();
  const T* t = targets.ptr();
  T loss = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T row = T(0);
    for (int64_t j = 0; j < k; ++j) row += t[i * k + j] * (lse[i] - s[i * k + j]);
    loss += row;
  }
  loss /= static_cast<T>(n);

  TensorT<T> result = TensorT<T>::from_vector(Shape(1, 1, 1, 1), {loss});
  if (detail::should_record<T>(logits.requires_grad())) {
    auto sl = logits.storage();
    auto st = targets.storage();
    auto so = result.storage();
    auto p = std::make_shared<std::vector<T>>(std::move(probs));
    GradTapeT<T>::active()->record("cross_entropy", {logits}, result, [=]() {
      auto& gs = detail::ensure_grad(sl);
      const T g = so->grad[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n * k; ++i) gs[i] += g * ((*p)[i] - st->values[i]);
    });
  }
  return result;
}

template <typename T>
TensorT<T> kd_loss(const TensorT<T>& student, const TensorT<T>& teacher,
                   const TensorT<T>& targets, double tau, double lambda) {
  check_logit_shapes(student, targets);
  if (teacher.shape() != student.shape()) {
    throw std::invalid_argument("teacher logits shape " + teacher.shape().str() +
                                " does not match student " + student.shape().str());
  }
  if (tau <= 0.0) throw std::invalid_argument("distillation temperature must be positive");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("kd weight outside [0, 1]");

  const int64_t n = student.shape().n;
  const int64_t k = student.shape().c;
  const T* s = student.ptr();
  const T* t = teacher.ptr();
  const T* tg = targets.ptr();

  // Hard-label part on the raw student logits.
  std::vector<T> probs, lse;
  softmax_rows(s, n, k, probs, lse);
  T ce = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T row = T(0);
    for (int64_t j = 0; j < k; ++j) row += tg[i * k + j] * (lse[i] - s[i * k + j]);
    ce += row;
  }
  ce /= static_cast<T>(n);

  // Soft part on temperature-scaled logits.
  std::vector<T> ss(n * k), ts(n * k);
  const T inv_tau = static_cast<T>(1.0 / tau);
  for (int64_t i = 0; i < n * k; ++i) {
    ss[i] = s[i] * inv_tau;
    ts[i] = t[i] * inv_tau;
  }
  std::vector<T> ps, pt, lse_s, lse_t;
  softmax_rows(ss.data(), n, k, ps, lse_s);
  softmax_rows(ts.data(), n, k, pt, lse_t);
  T kl = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T row = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T p = pt[i * k + j];
      if (p > T(0)) {
        // log p_t - log p_s via the stable log-sum-exp form.
        row += p * ((ts[i * k + j] - lse_t[i]) - (ss[i * k + j] - lse_s[i]));
      }
    }
    kl += row;
  }
  kl /= static_cast<T>(n);

  const T lam = static_cast<T>(lambda);
  const T loss = (T(1) - lam) * ce + lam * static_cast<T>(tau * tau) * kl;
  TensorT<T> result = TensorT<T>::from_vector(Shape(1, 1, 1, 1), {loss});

  if (detail::should_record<T>(student.requires_grad())) {
    auto sl = student.storage();
    auto stg = targets.storage();
    auto so = result.storage();
    auto hp = std::make_shared<std::vector<T>>(std::move(probs));
    auto sp = std::make_shared<std::vector<T>>(std::move(ps));
    auto tp = std::make_shared<std::vector<T>>(std::move(pt));
    const T tau_t = static_cast<T>(tau);
    GradTapeT<T>::active()->record("kd_loss", {student}, result, [=]() {
      auto& gs = detail::ensure_grad(sl);
      const T g = so->grad[0] / static_cast<T>(n);
      for (int64_t i = 0; i < n * k; ++i) {
        const T hard = (T(1) - lam) * ((*hp)[i] - stg->values[i]);
        const T soft = lam * tau_t * ((*sp)[i] - (*tp)[i]);
        gs[i] += g * (hard + soft);
      }
    });
  }
  return result;
}

double accuracy(const Tensor& logits, const std::vector<int64_t>& labels) {
  const Shape s = logits.shape();
  if (s.n != static_cast<int64_t>(labels.size())) {
    throw std::invalid_argument("label count does not match the batch");
  }
  const float* p = logits.ptr();
  int64_t correct = 0;
  for (int64_t i = 0; i < s.n; ++i) {
    const float* row = p + i * s.c;
    int64_t best = 0;
    for (int64_t j = 1; j < s.c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(s.n);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::string format_epoch_line(const EpochStats& s) {
  std::ostringstream out;
  out << s.epoch << "\t" << std::scientific << std::setprecision(3) << s.lr << "\t"
      << std::fixed << std::setprecision(4) << s.train_loss << "\t" << s.train_acc << "\t";
  if (std::isnan(s.val_acc)) {
    out << "-";
  } else {
    out << s.val_acc;
  }
  return out.str();
}

namespace {

double eval_accuracy(Model<float>& model, const Dataset& data, int64_t batch_size) {
  NoGradT<float> guard;
  int64_t correct = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t count = std::min(batch_size, data.size() - start);
    std::vector<int64_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tensor batch = load_batch(data, idx);
    Tensor logits = model.forward(batch);
    std::vector<int64_t> labels(data.labels.begin() + start,
                                data.labels.begin() + start + count);
    correct += std::llround(accuracy(logits, labels) * static_cast<double>(count));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

TrainResult train(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                  const DistillConfig* distill, const Dataset* val_data,
                  std::ostream* log_stream) {
  cfg.validate();
  if (data.num_classes > model.spec.num_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(data.num_classes) +
                                " classes but the model head has only " +
                                std::to_string(model.spec.num_classes));
  }
  if (distill) {
    if (!distill->teacher) throw std::invalid_argument("distillation needs a teacher model");
    if (distill->temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (distill->weight < 0.0 || distill->weight > 1.0) {
      throw std::invalid_argument("distillation weight outside [0, 1]");
    }
    distill->teacher->set_mode(NormMode::Eval);
  }

  for (auto& stage : model.stages) {
    for (auto& block : stage) block.spec.drop_path = cfg.drop_path;
  }

  std::vector<Tensor> params;
  model.visit_params([&](const std::string&, Tensor& t) { params.push_back(t); });
  AdamWState state;
  OptimConfig opt{cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};

  auto shuffle_rng = make_rng(cfg.seed, rng_stream::kShuffle);
  auto mix_rng = make_rng(cfg.seed, rng_stream::kMixup);
  auto erase_rng = make_rng(cfg.seed, rng_stream::kErasing);

  const int64_t n = data.size();
  const int64_t batch = std::min<int64_t>(cfg.batch_size, n);
  const int64_t steps_per_epoch = n / batch;
  const int64_t total_steps = cfg.epochs * steps_per_epoch;

  TrainResult result;
  if (cfg.epochs == 0) return result;

  if (log_stream) {
    std::vector<std::string> active;
    if (cfg.mixup_alpha > 0.0) active.push_back("mixup");
    if (cfg.cutmix_alpha > 0.0) active.push_back("cutmix");
    if (cfg.erase_prob > 0.0) active.push_back("random erasing");
    if (cfg.label_smoothing > 0.0) active.push_back("label smoothing");
    if (cfg.drop_path > 0.0) active.push_back("stochastic depth");
    std::string joined;
    for (const auto& a : active) joined += (joined.empty() ? "" : ", ") + a;
    *log_stream << "# training: " << n << " samples, " << steps_per_epoch
                << " steps/epoch, batch " << batch << ", seed " << cfg.seed << "\n"
                << "# augmentation: " << (joined.empty() ? "none" : joined)
                << " (RandAugment and repeated augmentation not implemented)\n"
                << "# epoch\tlr\ttrain_loss\ttrain_acc\tval_acc\n";
  }

  model.set_mode(NormMode::Train);
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    double last_lr = 0.0;

    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<int64_t> idx(order.begin() + s * batch, order.begin() + (s + 1) * batch);
      Tensor x = load_batch(data, idx);
      std::vector<int64_t> labels(batch);
      for (int64_t i = 0; i < batch; ++i) labels[i] = data.labels[idx[i]];

      if (cfg.erase_prob > 0.0) random_erasing(x, cfg.erase_prob, erase_rng);
      MixResult mix;
      if (cfg.mixup_alpha > 0.0 || cfg.cutmix_alpha > 0.0) {
        mix = mixup_cutmix(x, cfg.mixup_alpha, cfg.cutmix_alpha, mix_rng);
      }
      Tensor targets = smooth_targets<float>(labels, model.spec.num_classes,
                                             cfg.label_smoothing);
      if (mix.lambda < 1.0) {
        std::vector<int64_t> paired(batch);
        for (int64_t i = 0; i < batch; ++i) paired[i] = labels[mix.perm[i]];
        Tensor tb = smooth_targets<float>(paired, model.spec.num_classes, cfg.label_smoothing);
        targets = add(scale(targets, static_cast<float>(mix.lambda)),
                      scale(tb, static_cast<float>(1.0 - mix.lambda)));
      }

      const int64_t step_index = result.steps;
      double loss_value = 0.0;
      Tensor logits;
      {
        GradTape tape;
        logits = model.forward(x);
        Tensor loss;
        if (distill) {
          Tensor teacher_logits;
          {
            NoGradT<float> guard;
            teacher_logits = distill->teacher->forward(x);
          }
          loss = kd_loss(logits, teacher_logits, targets, distill->temperature,
                         distill->weight);
        } else {
          loss = cross_entropy(logits, targets);
        }
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("training diverged: non-finite loss at step " +
                                   std::to_string(step_index));
        }
        tape.backward(loss);
      }

      last_lr = cosine_lr(step_index, total_steps, cfg);
      adamw_step(params, state, last_lr, opt);
      for (auto& p : params) p.zero_grad();

      loss_sum += loss_value;
      acc_sum += accuracy(logits, labels);
      ++result.steps;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = last_lr;
    stats.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    stats.train_acc = acc_sum / static_cast<double>(steps_per_epoch);
    if (val_data) {
      model.set_mode(NormMode::Eval);
      stats.val_acc = eval_accuracy(model, *val_data, batch);
      model.set_mode(NormMode::Train);
    }
    result.log.push_back(stats);
    if (log_stream) *log_stream << format_epoch_line(stats) << "\n" << std::flush;

    if (cfg.early_stop_train_acc >= 0.0 && stats.train_acc > cfg.early_stop_train_acc) break;
  }
  return result;
}

template void apply_mixup<float>(TensorT<float>&, const std::vector<int64_t>&, double);
template void apply_mixup<double>(TensorT<double>&, const std::vector<int64_t>&, double);
template double apply_cutmix<float>(TensorT<float>&, const std::vector<int64_t>&, int64_t,
                                    int64_t, int64_t, int64_t);
template double apply_cutmix<double>(TensorT<double>&, const std::vector<int64_t>&, int64_t,
                                     int64_t, int64_t, int64_t);
template TensorT<float> smooth_targets<float>(const std::vector<int64_t>&, int64_t, double);
template TensorT<double> smooth_targets<double>(const std::vector<int64_t>&, int64_t, double);
template TensorT<float> cross_entropy<float>(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> cross_entropy<double>(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> kd_loss<float>(const TensorT<float>&, const TensorT<float>&,
                                       const TensorT<float>&, double, double);
template TensorT<double> kd_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                         const TensorT<double>&, double, double);

}  // namespace robustcnn
