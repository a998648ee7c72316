#include "robustcnn/flops.hpp"

#include <iomanip>
#include <sstream>

namespace robustcnn {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << s.c << "x" << s.h << "x" << s.w;
  return out.str();
}

}  // namespace

uint64_t layer_macs(const ConvParams& conv, const Shape& in) {
  conv.validate();
  (void)conv.out_shape(in);  // throws on invalid geometry
  return conv.macs(in);
}

uint64_t layer_macs(int64_t in_features, int64_t out_features) {
  if (in_features <= 0 || out_features <= 0) {
    throw std::invalid_argument("linear layer needs positive feature counts");
  }
  return static_cast<uint64_t>(in_features) * static_cast<uint64_t>(out_features);
}

FlopsReport count_flops(const ModelPlan& plan) {
  FlopsReport report;
  for (const auto& conv : plan.convs) {
    FlopsEntry e;
    e.path = conv.path;
    e.out_shape = conv.out_shape();
    e.param_count = conv.params.weight_shape().numel();
    e.macs = layer_macs(conv.params, conv.in_shape);
    report.total_macs += e.macs;
    report.entries.push_back(std::move(e));
  }
  {
    FlopsEntry e;
    e.path = plan.head.path;
    e.out_shape = Shape(1, plan.head.out_features, 1, 1);
    e.param_count = (plan.head.in_features + 1) * plan.head.out_features;  // weight + bias
    e.macs = layer_macs(plan.head.in_features, plan.head.out_features);
    report.total_macs += e.macs;
    report.entries.push_back(std::move(e));
  }
  for (const auto& ew : plan.elementwise) report.elementwise_ops += ew.ops;

  if (report.elementwise_ops * 100 > report.total_macs) {
    std::ostringstream note;
    note << "elementwise work (norm/act/pool/add), counted as zero by convention, "
         << "would add " << report.elementwise_ops << " ops ("
         << std::fixed << std::setprecision(1)
         << 100.0 * static_cast<double>(report.elementwise_ops) /
                static_cast<double>(report.total_macs)
         << "% of the MAC total)";
    report.note = note.str();
  }
  return report;
}

FlopsReport count_flops(const ModelSpec& spec) { return count_flops(build_plan(spec)); }

std::string format_report_text(const FlopsReport& report) {
  size_t path_width = 5;
  size_t shape_width = 5;
  for (const auto& e : report.entries) {
    path_width = std::max(path_width, e.path.size());
    shape_width = std::max(shape_width, shape_str(e.out_shape).size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(path_width)) << "layer" << "  "
      << std::setw(static_cast<int>(shape_width)) << "shape" << "  " << std::right
      << std::setw(14) << "macs" << "\n";
  for (const auto& e : report.entries) {
    out << std::left << std::setw(static_cast<int>(path_width)) << e.path << "  "
        << std::setw(static_cast<int>(shape_width)) << shape_str(e.out_shape) << "  "
        << std::right << std::setw(14) << e.macs << "\n";
  }
  out << std::left << std::setw(static_cast<int>(path_width)) << "total" << "  "
      << std::setw(static_cast<int>(shape_width)) << "-" << "  " << std::right
      << std::setw(14) << report.total_macs << "  ("
      << std::fixed << std::setprecision(2) << static_cast<double>(report.total_macs) / 1e9
      << "G)\n";
  if (!report.note.empty()) out << "note: " << report.note << "\n";
  return out.str();
}

std::string format_report_tsv(const FlopsReport& report) {
  std::ostringstream out;
  for (const auto& e : report.entries) {
    out << e.path << "\t" << shape_str(e.out_shape) << "\t" << e.macs << "\n";
  }
  out << "total\t-\t" << report.total_macs << "\n";
  return out.str();
}

}  // namespace robustcnn
