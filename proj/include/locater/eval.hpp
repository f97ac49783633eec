#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "locater/mask.hpp"

namespace locater::eval {

struct MetricReport {
  double overall_iou = 0.0;  // pooled intersections / pooled unions
  double mean_iou = 0.0;     // average of per-sample IoU
  std::vector<std::pair<double, double>> precision_at;  // (threshold, P@K) for 0.5..0.9
  double map = 0.0;  // mean of P@K over 0.50:0.05:0.95
  int n_samples = 0;
};

// Intersection over union. Both masks empty counts as a correct rejection
// (IoU 1); exactly one empty scores 0.
double iou(const Mask& pred, const Mask& gt);

MetricReport evaluate(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

std::string format_report(const MetricReport& r);
void write_csv(const MetricReport& r, std::ostream& os);

}  // namespace locater::eval
