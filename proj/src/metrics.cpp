#include "meshref/metrics.hpp"

#include <cstdio>

namespace meshref {

namespace {

std::string format_report(const MetricsReport& r, const char* sep) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "valid_fraction=%.6f%srmse=%.6f%smae=%.6f%sl1_rel=%.6f%sl1_inv=%.6f%s"
                "delta1=%.6f%sacc_001=%.6f%sacc_005=%.6f%sacc_010=%.6f",
                r.valid_fraction, sep, r.rmse, sep, r.mae, sep, r.l1_rel, sep, r.l1_inv, sep,
                r.delta1, sep, r.acc_001, sep, r.acc_005, sep, r.acc_010);
  return buf;
}

}  // namespace

std::string MetricsReport::to_lines() const { return format_report(*this, "\n"); }
std::string MetricsReport::to_single_line() const { return format_report(*this, " "); }

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, double max_depth) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ValidationError("compute_metrics: dimensions differ");
  size_t set_count = 0, both = 0;
  double sum_sq = 0.0, sum_abs = 0.0, sum_rel = 0.0, sum_inv = 0.0;
  size_t n_delta = 0, n_001 = 0, n_005 = 0, n_010 = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid[i] || !(gt.values[i] <= max_depth)) continue;
    ++set_count;
    if (!pred.valid[i]) continue;
    ++both;
    const double p = pred.values[i];
    const double g = gt.values[i];
    const double d = p - g;
    sum_sq += d * d;
    sum_abs += std::abs(d);
    sum_rel += std::abs(d) / g;
    sum_inv += std::abs(1.0 / p - 1.0 / g);
    if (std::max(p / g, g / p) < 1.25) ++n_delta;
    if (std::abs(d) < 0.01) ++n_001;
    if (std::abs(d) < 0.05) ++n_005;
    if (std::abs(d) < 0.10) ++n_010;
  }
  if (set_count == 0) throw ValidationError("compute_metrics: empty evaluation set");
  MetricsReport r;
  r.valid_fraction = static_cast<double>(both) / set_count;
  if (both > 0) {
    r.rmse = std::sqrt(sum_sq / both);
    r.mae = sum_abs / both;
    r.l1_rel = sum_rel / both;
    r.l1_inv = sum_inv / both;
    r.delta1 = static_cast<double>(n_delta) / both;
    r.acc_001 = static_cast<double>(n_001) / both;
    r.acc_005 = static_cast<double>(n_005) / both;
    r.acc_010 = static_cast<double>(n_010) / both;
  }
  return r;
}

}  // namespace meshref
