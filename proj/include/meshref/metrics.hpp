#pragma once

#include "meshref/core.hpp"

#include <string>

namespace meshref {

// Depth-map evaluation. The evaluation set is every pixel with valid ground
// truth within max_depth; error statistics run over the prediction-valid
// subset, with completeness reported separately as valid_fraction.
struct MetricsReport {
  double valid_fraction = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double l1_rel = 0.0;
  double l1_inv = 0.0;
  double delta1 = 0.0;
  double acc_001 = 0.0;
  double acc_005 = 0.0;
  double acc_010 = 0.0;

  std::string to_lines() const;       // fixed key order, key=value per line
  std::string to_single_line() const; // same pairs, space separated
};

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, double max_depth = 7.0);

}  // namespace meshref
