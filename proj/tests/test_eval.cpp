#include <doctest.h>

#include <sstream>

#include "locater/eval.hpp"
#include "locater/rng.hpp"

using namespace locater;
using namespace locater::eval;

namespace {

Mask random_mask(int w, int h, Rng& rng, double density) {
  Mask m(w, h);
  for (auto& b : m.v) b = rng.uniform() < density ? 1 : 0;
  return m;
}

// independent loop-based metric oracle
MetricReport oracle_evaluate(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
  MetricReport r;
  r.n_samples = static_cast<int>(preds.size());
  long long ti = 0, tu = 0;
  std::vector<double> ious;
  for (size_t s = 0; s < preds.size(); ++s) {
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < preds[s].v.size(); ++i) {
      if (preds[s].v[i] && gts[s].v[i]) ++inter;
      if (preds[s].v[i] || gts[s].v[i]) ++uni;
    }
    ti += inter;
    tu += uni;
    ious.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / uni);
  }
  r.overall_iou = tu == 0 ? 1.0 : static_cast<double>(ti) / tu;
  for (double v : ious) r.mean_iou += v;
  r.mean_iou /= static_cast<double>(ious.size());
  for (int k = 0; k < 10; ++k) {
    const double thr = 0.5 + 0.05 * k;
    int hits = 0;
    for (double v : ious)
      if (v > thr) ++hits;
    r.map += static_cast<double>(hits) / static_cast<double>(ious.size()) / 10.0;
  }
  for (double thr : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    int hits = 0;
    for (double v : ious)
      if (v > thr) ++hits;
    r.precision_at.emplace_back(thr, static_cast<double>(hits) / static_cast<double>(ious.size()));
  }
  return r;
}

}  // namespace

TEST_CASE("iou handles the canonical cases") {
  Mask a(2, 2), b(2, 2);
  SUBCASE("identical non-empty masks score 1") {
    a.at(0, 0) = a.at(1, 1) = 1;
    b = a;
    CHECK(iou(a, b) == 1.0);
  }
  SUBCASE("disjoint non-empty masks score 0") {
    a.at(0, 0) = 1;
    b.at(1, 1) = 1;
    CHECK(iou(a, b) == 0.0);
  }
  SUBCASE("half overlap on the 2x2 case gives one third") {
    // pred = {(0,0),(0,1)}, gt = {(0,1),(1,1)}: intersection 1, union 3
    a.at(0, 0) = a.at(0, 1) = 1;
    b.at(0, 1) = b.at(1, 1) = 1;
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("both empty is a correct rejection") { CHECK(iou(a, b) == 1.0); }
  SUBCASE("one empty scores zero") {
    a.at(0, 0) = 1;
    CHECK(iou(a, b) == 0.0);
    CHECK(iou(b, a) == 0.0);
  }
  SUBCASE("shape mismatch is an error") {
    Mask c(3, 2);
    CHECK_THROWS_AS(iou(a, c), ShapeError);
  }
}

TEST_CASE("evaluate degenerate cases") {
  Rng rng(3);
  SUBCASE("single sample: overall equals mean") {
    std::vector<Mask> p = {random_mask(8, 8, rng, 0.4)};
    std::vector<Mask> g = {random_mask(8, 8, rng, 0.4)};
    const MetricReport r = evaluate(p, g);
    CHECK(r.overall_iou == doctest::Approx(r.mean_iou));
  }
  SUBCASE("two samples with IoU one and zero average to a half") {
    Mask full(4, 4), gt1(4, 4), empty(4, 4), gt2(4, 4);
    for (int i = 0; i < 4; ++i) {
      full.at(i, 0) = 1;
      gt1.at(i, 0) = 1;
      empty.at(i, 1) = 1;  // disjoint from gt2
      gt2.at(i, 2) = 1;
    }
    const MetricReport r = evaluate({full, empty}, {gt1, gt2});
    CHECK(r.mean_iou == doctest::Approx(0.5));
  }
  SUBCASE("empty input is rejected") {
    std::vector<Mask> none;
    CHECK_THROWS_AS(evaluate(none, none), InputError);
  }
}

TEST_CASE("evaluate matches the loop-based oracle on random masks") {
  Rng rng(17);
  std::vector<Mask> preds, gts;
  for (int i = 0; i < 100; ++i) {
    const double density = rng.uniform(0.05, 0.6);
    preds.push_back(random_mask(12, 10, rng, density));
    // correlated gt so IoUs spread over the thresholds
    Mask g = preds.back();
    for (auto& b : g.v)
      if (rng.uniform() < 0.2) b ^= 1;
    gts.push_back(g);
  }
  const MetricReport a = evaluate(preds, gts);
  const MetricReport b = oracle_evaluate(preds, gts);
  CHECK(std::abs(a.overall_iou - b.overall_iou) < 1e-12);
  CHECK(std::abs(a.mean_iou - b.mean_iou) < 1e-12);
  CHECK(std::abs(a.map - b.map) < 1e-12);
  REQUIRE(a.precision_at.size() == b.precision_at.size());
  for (size_t i = 0; i < a.precision_at.size(); ++i)
    CHECK(std::abs(a.precision_at[i].second - b.precision_at[i].second) < 1e-12);
}

TEST_CASE("precision is monotone non-increasing and bounds mAP") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Mask> preds, gts;
    for (int i = 0; i < 20; ++i) {
      preds.push_back(random_mask(9, 9, rng, rng.uniform(0.1, 0.7)));
      Mask g = preds.back();
      for (auto& b : g.v)
        if (rng.uniform() < rng.uniform(0.0, 0.3)) b ^= 1;
      gts.push_back(g);
    }
    const MetricReport r = evaluate(preds, gts);
    for (size_t i = 1; i < r.precision_at.size(); ++i)
      CHECK(r.precision_at[i].second <= r.precision_at[i - 1].second);
    CHECK(r.map <= r.precision_at[0].second + 1e-12);
    for (const auto& [k, p] : r.precision_at) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("metrics are invariant under sample reordering") {
  Rng rng(29);
  std::vector<Mask> preds, gts;
  for (int i = 0; i < 15; ++i) {
    preds.push_back(random_mask(7, 7, rng, 0.3));
    gts.push_back(random_mask(7, 7, rng, 0.3));
  }
  const MetricReport a = evaluate(preds, gts);
  std::vector<Mask> rp, rg;
  for (int i = 14; i >= 0; --i) {
    rp.push_back(preds[static_cast<size_t>(i)]);
    rg.push_back(gts[static_cast<size_t>(i)]);
  }
  const MetricReport b = evaluate(rp, rg);
  CHECK(a.overall_iou == doctest::Approx(b.overall_iou).epsilon(1e-15));
  CHECK(a.mean_iou == doctest::Approx(b.mean_iou).epsilon(1e-15));
}

TEST_CASE("csv report carries one metric per row") {
  Rng rng(31);
  std::vector<Mask> p = {random_mask(6, 6, rng, 0.5)};
  const MetricReport r = evaluate(p, p);
  std::ostringstream os;
  write_csv(r, os);
  const std::string s = os.str();
  CHECK(s.rfind("metric,value\n", 0) == 0);
  CHECK(s.find("overall_iou,1") != std::string::npos);
  CHECK(s.find("map,") != std::string::npos);
  CHECK(format_report(r).find("mean-iou") != std::string::npos);
}
