#include "locater/eval.hpp"

#include <cstdio>

namespace locater::eval {

double iou(const Mask& pred, const Mask& gt) {
  if (pred.w != gt.w || pred.h != gt.h)
    throw ShapeError("iou: mask shapes differ (" + std::to_string(pred.w) + "x" +
                     std::to_string(pred.h) + " vs " + std::to_string(gt.w) + "x" +
                     std::to_string(gt.h) + ")");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // both empty: correct rejection
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricReport evaluate(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw InputError("evaluate: need equally many predictions and ground truths (non-empty)");

  MetricReport r;
  r.n_samples = static_cast<int>(preds.size());
  int64_t total_inter = 0, total_union = 0;
  double iou_sum = 0.0;
  std::vector<double> ious(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    const Mask& p = preds[i];
    const Mask& g = gts[i];
    ious[i] = iou(p, g);
    iou_sum += ious[i];
    if (p.w != g.w || p.h != g.h) throw ShapeError("evaluate: mask shapes differ");
    for (size_t j = 0; j < p.v.size(); ++j) {
      const bool pb = p.v[j] != 0, gb = g.v[j] != 0;
      total_inter += (pb && gb) ? 1 : 0;
      total_union += (pb || gb) ? 1 : 0;
    }
  }
  r.overall_iou = total_union == 0 ? 1.0 : static_cast<double>(total_inter) / static_cast<double>(total_union);
  r.mean_iou = iou_sum / static_cast<double>(preds.size());

  auto precision_at = [&](double k) {
    int hits = 0;
    for (double v : ious)
      if (v > k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ious.size());
  };
  for (double k : {0.5, 0.6, 0.7, 0.8, 0.9}) r.precision_at.emplace_back(k, precision_at(k));
  double map_sum = 0.0;
  for (int i = 0; i < 10; ++i) map_sum += precision_at(0.50 + 0.05 * i);
  r.map = map_sum / 10.0;
  return r;
}

std::string format_report(const MetricReport& r) {
  char buf[128];
  std::string out;
  out += "metric            value\n";
  auto line = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%-16s %7.4f\n", name, v);
    out += buf;
  };
  line("overall-iou", r.overall_iou);
  line("mean-iou", r.mean_iou);
  for (const auto& [k, p] : r.precision_at) {
    std::snprintf(buf, sizeof(buf), "p@%.1f            %7.4f\n", k, p);
    out += buf;
  }
  line("map", r.map);
  std::snprintf(buf, sizeof(buf), "%-16s %7d\n", "samples", r.n_samples);
  out += buf;
  return out;
}

void write_csv(const MetricReport& r, std::ostream& os) {
  os << "metric,value\n";
  os << "overall_iou," << r.overall_iou << "\n";
  os << "mean_iou," << r.mean_iou << "\n";
  for (const auto& [k, p] : r.precision_at) {
    char name[32];
    std::snprintf(name, sizeof(name), "p@%.1f", k);
    os << name << "," << p << "\n";
  }
  os << "map," << r.map << "\n";
  os << "samples," << r.n_samples << "\n";
}

}  // namespace locater::eval
