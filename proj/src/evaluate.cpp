#include "robustcnn/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "robustcnn/tensor.hpp"
#include "robustcnn/rng.hpp"

namespace robustcnn {

namespace {

std::vector<int64_t> argmax_rows(const Tensor& logits) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) {
    throw std::invalid_argument("evaluate: logits must be (B, K, 1, 1), got " + s.str());
  }
  std::vector<int64_t> out(s.n);
  for (int64_t n = 0; n < s.n; ++n) {
    const float* row = logits.ptr() + n * s.c;
    out[n] = std::max_element(row, row + s.c) - row;  // ties resolve to the first class
  }
  return out;
}

// Top-1 error over the whole dataset for one corruption cell (or the clean
// set when `spec` is null). Per-image corruption seeds depend only on the
// image index, so results are independent of batch size and thread count.
double cell_error(const BatchPredictor& predict, const Dataset& data, int64_t batch_size,
                  const CorruptionSpec* spec, uint64_t seed) {
  const int64_t n = data.size();
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(start + batch_size, n);
    std::vector<int64_t> indices(end - start);
    for (int64_t i = start; i < end; ++i) indices[i - start] = i;

    Tensor batch;
    if (spec == nullptr) {
      batch = load_batch(data, indices);
    } else {
      std::vector<Tensor> images;
      images.reserve(indices.size());
      for (int64_t i : indices) {
        CorruptionSpec per_image = *spec;
        per_image.seed = split_seed(seed, static_cast<uint64_t>(i));
        images.push_back(corrupt(load_image(data, i), per_image));
      }
      const Shape is = images.front().shape();
      std::vector<float> stacked;
      stacked.reserve(images.size() * is.numel());
      for (const Tensor& img : images) {
        if (img.shape() != is) {
          throw std::runtime_error("evaluate: images disagree on shape: " + is.str() + " vs " +
                                   img.shape().str());
        }
        stacked.insert(stacked.end(), img.ptr(), img.ptr() + img.numel());
      }
      batch = Tensor::from_vector(Shape(static_cast<int64_t>(images.size()), is.c, is.h, is.w),
                                  std::move(stacked));
    }

    const std::vector<int64_t> pred = argmax_rows(predict(batch));
    for (size_t i = 0; i < indices.size(); ++i) {
      if (pred[i] == data.labels[indices[i]]) ++correct;
    }
  }
  return 100.0 * (1.0 - static_cast<double>(correct) / static_cast<double>(n));
}

BatchPredictor model_predictor(Model<float>& model) {
  model.set_mode(NormMode::Eval);
  return [&model](const Tensor& batch) {
    NoGradT<float> guard;
    return model.forward(batch);
  };
}

}  // namespace

double compute_mean_corruption_error(const std::vector<CorruptionResult>& entries) {
  if (entries.empty()) return 0.0;
  std::vector<CorruptionFamily> order;
  std::map<int64_t, std::pair<double, int64_t>> sums;  // family index -> (sum, count)
  for (const auto& e : entries) {
    const int64_t key = static_cast<int64_t>(e.family);
    if (!sums.count(key)) order.push_back(e.family);
    auto& slot = sums[key];
    slot.first += e.error;
    slot.second += 1;
  }
  double total = 0.0;
  for (CorruptionFamily f : order) {
    const auto& slot = sums.at(static_cast<int64_t>(f));
    total += slot.first / static_cast<double>(slot.second);
  }
  return total / static_cast<double>(order.size());
}

double evaluate_clean(const BatchPredictor& predict, const Dataset& data, int64_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size <= 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  return cell_error(predict, data, batch_size, nullptr, 0);
}

double evaluate_clean(Model<float>& model, const Dataset& data, int64_t batch_size) {
  return evaluate_clean(model_predictor(model), data, batch_size);
}

RobustnessReport evaluate(const BatchPredictor& predict, const Dataset& data,
                          const std::vector<CorruptionFamily>& families,
                          const EvalOptions& opts) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (opts.batch_size <= 0) throw std::invalid_argument("evaluate: batch_size must be positive");

  RobustnessReport report;
  report.clean_error = cell_error(predict, data, opts.batch_size, nullptr, 0);
  for (CorruptionFamily f : families) {
    for (int severity = 1; severity <= 5; ++severity) {
      report.entries.push_back({f, severity, 0.0});
    }
  }

  const int threads = std::max(1, opts.threads);
  if (threads == 1 || report.entries.size() < 2) {
    for (auto& e : report.entries) {
      CorruptionSpec spec{e.family, e.severity, 0};
      e.error = cell_error(predict, data, opts.batch_size, &spec, opts.corruption_seed);
    }
  } else {
    // Cells are independent and the model is read-only in eval mode; each
    // worker claims whole cells, so accumulation order is fixed per cell.
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (size_t i = next.fetch_add(1); i < report.entries.size(); i = next.fetch_add(1)) {
            auto& e = report.entries[i];
            CorruptionSpec spec{e.family, e.severity, 0};
            e.error = cell_error(predict, data, opts.batch_size, &spec, opts.corruption_seed);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  report.mean_corruption_error = compute_mean_corruption_error(report.entries);
  return report;
}

RobustnessReport evaluate(Model<float>& model, const Dataset& data,
                          const std::vector<CorruptionFamily>& families,
                          const EvalOptions& opts) {
  return evaluate(model_predictor(model), data, families, opts);
}

std::string format_robustness_report(const RobustnessReport& report, const std::string& format,
                                     const RobustnessReport* normalize_by) {
  // Per-family severity sums, first-appearance order.
  std::vector<CorruptionFamily> order;
  std::map<int64_t, std::vector<const CorruptionResult*>> by_family;
  for (const auto& e : report.entries) {
    const int64_t key = static_cast<int64_t>(e.family);
    if (!by_family.count(key)) order.push_back(e.family);
    by_family[key].push_back(&e);
  }

  auto baseline_sum = [&](CorruptionFamily f) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& e : normalize_by->entries) {
      if (e.family == f) {
        sum += e.error;
        ++count;
      }
    }
    if (count == 0) {
      throw std::invalid_argument(std::string("normalize: baseline report lacks family '") +
                                  corruption_family_name(f) + "'");
    }
    if (sum <= 0.0) {
      throw std::invalid_argument(std::string("normalize: baseline error sum for '") +
                                  corruption_family_name(f) + "' is zero");
    }
    return sum;
  };

  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  if (format == "tsv") {
    os << "clean\t-\t" << report.clean_error << "\n";
    for (const auto& e : report.entries) {
      os << corruption_family_name(e.family) << "\t" << e.severity << "\t" << e.error << "\n";
    }
    os << "mce\t-\t" << report.mean_corruption_error << "\n";
    if (normalize_by != nullptr) {
      double total = 0.0;
      for (CorruptionFamily f : order) {
        double sum = 0.0;
        for (const auto* e : by_family.at(static_cast<int64_t>(f))) sum += e->error;
        const double ce = 100.0 * sum / baseline_sum(f);
        total += ce;
        os << corruption_family_name(f) << "\tCE\t" << ce << "\n";
      }
      if (!order.empty()) {
        os << "normalized_mce\t-\t" << total / static_cast<double>(order.size()) << "\n";
      }
    }
    return os.str();
  }
  if (format != "text") {
    throw std::invalid_argument("format must be 'text' or 'tsv', got '" + format + "'");
  }

  os << "clean error: " << report.clean_error << "\n";
  double normalized_total = 0.0;
  for (CorruptionFamily f : order) {
    const auto& cells = by_family.at(static_cast<int64_t>(f));
    os << std::left << std::setw(16) << corruption_family_name(f) << std::right;
    double sum = 0.0;
    for (const auto* e : cells) {
      os << "  s" << e->severity << " " << std::setw(8) << e->error;
      sum += e->error;
    }
    os << "  mean " << std::setw(8) << sum / static_cast<double>(cells.size());
    if (normalize_by != nullptr) {
      const double ce = 100.0 * sum / baseline_sum(f);
      normalized_total += ce;
      os << "  CE " << std::setw(8) << ce;
    }
    os << "\n";
  }
  if (!report.entries.empty()) {
    os << "mean corruption error: " << report.mean_corruption_error << "\n";
    if (normalize_by != nullptr && !order.empty()) {
      os << "normalized mCE: " << normalized_total / static_cast<double>(order.size()) << "\n";
    }
  }
  return os.str();
}

RobustnessReport parse_robustness_report(const std::string& tsv_text) {
  RobustnessReport report;
  bool saw_clean = false;
  bool saw_mce = false;
  double stored_mce = 0.0;
  std::istringstream is(tsv_text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string family, severity, value;
    if (!std::getline(ls, family, '\t') || !std::getline(ls, severity, '\t') ||
        !std::getline(ls, value, '\t')) {
      throw std::invalid_argument("report line " + std::to_string(line_no) +
                                  ": expected family<TAB>severity<TAB>error");
    }
    if (severity == "CE" || family == "normalized_mce") continue;  // derived rows
    double parsed = 0.0;
    try {
      parsed = std::stod(value);
    } catch (const std::exception&) {
      throw std::invalid_argument("report line " + std::to_string(line_no) +
                                  ": bad error value '" + value + "'");
    }
    if (family == "clean") {
      report.clean_error = parsed;
      saw_clean = true;
    } else if (family == "mce") {
      stored_mce = parsed;
      saw_mce = true;
    } else {
      int sev = 0;
      try {
        sev = std::stoi(severity);
      } catch (const std::exception&) {
        throw std::invalid_argument("report line " + std::to_string(line_no) +
                                    ": bad severity '" + severity + "'");
      }
      report.entries.push_back({parse_corruption_family(family), sev, parsed});
    }
  }
  if (!saw_clean) throw std::invalid_argument("report: missing 'clean' row");
  report.mean_corruption_error = compute_mean_corruption_error(report.entries);
  if (saw_mce && std::abs(stored_mce - report.mean_corruption_error) > 1e-3) {
    throw std::invalid_argument("report: stored mce " + std::to_string(stored_mce) +
                                " disagrees with entries");
  }
  return report;
}

}  // namespace robustcnn
