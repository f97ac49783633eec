#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "locater/decoder.hpp"
#include "locater/rng.hpp"

using namespace locater;

namespace {

Tensor randt(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.normal(0.0, scale);
  return t;
}

ParamTree decoder_tree(int d, uint64_t seed) {
  ParamTree tree;
  Rng rng(seed);
  init_decoder(tree, "dec", d, rng);
  return tree;
}

}  // namespace

TEST_CASE("summaries are average pools") {
  Rng rng(3);
  ad::Tape t(nullptr, false);
  SUBCASE("identical rows collapse to that row") {
    Tensor v({4, 3});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) v(i, j) = 0.7 * (j + 1);
    Summaries s = summarize(t, t.leaf(v), t.leaf(randt({2, 3}, rng)), t.leaf(randt({2, 3}, rng)));
    for (int j = 0; j < 3; ++j) CHECK(s.v->val(0, j) == doctest::Approx(0.7 * (j + 1)));
  }
  SUBCASE("two-row mean") {
    const Tensor v({2, 2}, {1.0, 3.0, 5.0, 7.0});
    Summaries s = summarize(t, t.leaf(v), t.leaf(Tensor({1, 2})), t.leaf(Tensor({1, 2})));
    CHECK(s.v->val(0, 0) == doctest::Approx(3.0));
    CHECK(s.v->val(0, 1) == doctest::Approx(5.0));
  }
  SUBCASE("pooling is linear in its input") {
    const Tensor v = randt({5, 4}, rng);
    Tensor v2 = v;
    for (auto& x : v2.vec()) x *= 2.5;
    Summaries a = summarize(t, t.leaf(v), t.leaf(Tensor({1, 4})), t.leaf(Tensor({1, 4})));
    Summaries b = summarize(t, t.leaf(v2), t.leaf(Tensor({1, 4})), t.leaf(Tensor({1, 4})));
    for (int j = 0; j < 4; ++j)
      CHECK(b.v->val(0, j) == doctest::Approx(2.5 * a.v->val(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("query embedding puts all mass on a single real word") {
  ParamTree tree = decoder_tree(4, 5);
  Rng rng(7);
  ad::Tape t(&tree, false);
  const Tensor e = randt({6, 4}, rng);
  std::vector<uint8_t> mask = {1, 0, 0, 0, 0, 0};
  Summaries s;
  s.v = t.leaf(randt({1, 4}, rng));
  s.mem_g = t.leaf(randt({1, 4}, rng));
  s.mem_l = t.leaf(randt({1, 4}, rng));
  QueryVector q = query_embed(t, t.leaf(e), mask, s, "dec");
  CHECK(q.word_attn->val(0, 0) == doctest::Approx(1.0));
  for (int w = 1; w < 6; ++w) CHECK(q.word_attn->val(0, w) == 0.0);
  for (int j = 0; j < 4; ++j) CHECK(q.q->val(0, j) == doctest::Approx(e(0, j)).epsilon(1e-12));
}

TEST_CASE("query vector stays in the convex hull of the real words") {
  ParamTree tree = decoder_tree(6, 11);
  Rng rng(13);
  ad::Tape t(&tree, false);
  const Tensor e = randt({8, 6}, rng);
  std::vector<uint8_t> mask = {1, 1, 1, 1, 0, 0, 0, 0};
  Summaries s;
  s.v = t.leaf(randt({1, 6}, rng));
  s.mem_g = t.leaf(randt({1, 6}, rng));
  s.mem_l = t.leaf(randt({1, 6}, rng));
  QueryVector q = query_embed(t, t.leaf(e), mask, s, "dec");
  double attn_sum = 0;
  for (int w = 0; w < 8; ++w) {
    const double a = q.word_attn->val(0, w);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    if (w >= 4) CHECK(a == 0.0);
    attn_sum += a;
  }
  CHECK(attn_sum == doctest::Approx(1.0).epsilon(1e-9));
  for (int j = 0; j < 6; ++j) {
    double lo = 1e18, hi = -1e18;
    for (int w = 0; w < 4; ++w) {
      lo = std::min(lo, e(w, j));
      hi = std::max(hi, e(w, j));
    }
    CHECK(q.q->val(0, j) >= lo - 1e-12);
    CHECK(q.q->val(0, j) <= hi + 1e-12);
  }
}

TEST_CASE("query embedding matches a scalar transcription on two words") {
  ParamTree tree = decoder_tree(2, 17);
  tree.at("dec.w1") = Tensor({6, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9, 0.2, -0.1, 0.3});
  tree.at("dec.w2") = Tensor({2, 2}, {0.5, -0.4, 0.3, 0.8});
  const Tensor e({2, 2}, {1.0, 0.5, -0.3, 0.7});
  const Tensor vbar({1, 2}, {0.2, -0.6});
  const Tensor gbar({1, 2}, {0.4, 0.1});
  const Tensor lbar({1, 2}, {-0.5, 0.9});

  ad::Tape t(&tree, false);
  Summaries s;
  s.v = t.leaf(vbar);
  s.mem_g = t.leaf(gbar);
  s.mem_l = t.leaf(lbar);
  QueryVector q = query_embed(t, t.leaf(e), {1, 1}, s, "dec");

  // scalar oracle
  const Tensor& w1 = tree.at("dec.w1");
  const Tensor& w2 = tree.at("dec.w2");
  const double ctx[6] = {vbar(0, 0), vbar(0, 1), gbar(0, 0), gbar(0, 1), lbar(0, 0), lbar(0, 1)};
  double u[2] = {0, 0};
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 6; ++k) u[j] += ctx[k] * w1(k, j);
  double logits[2];
  for (int w = 0; w < 2; ++w) {
    double r0 = e(w, 0) * w2(0, 0) + e(w, 1) * w2(1, 0);
    double r1 = e(w, 0) * w2(0, 1) + e(w, 1) * w2(1, 1);
    logits[w] = u[0] * r0 + u[1] * r1;
  }
  const double mx = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
  CHECK(q.word_attn->val(0, 0) == doctest::Approx(a0).epsilon(1e-10));
  CHECK(q.word_attn->val(0, 1) == doctest::Approx(a1).epsilon(1e-10));
  for (int j = 0; j < 2; ++j)
    CHECK(q.q->val(0, j) == doctest::Approx(a0 * e(0, j) + a1 * e(1, j)).epsilon(1e-10));
}

TEST_CASE("query embedding rejects all-pad text") {
  ParamTree tree = decoder_tree(4, 19);
  Rng rng(23);
  ad::Tape t(&tree, false);
  Summaries s;
  s.v = t.leaf(randt({1, 4}, rng));
  s.mem_g = t.leaf(randt({1, 4}, rng));
  s.mem_l = t.leaf(randt({1, 4}, rng));
  CHECK_THROWS_AS(query_embed(t, t.leaf(randt({3, 4}, rng)), {0, 0, 0}, s, "dec"), InputError);
}

TEST_CASE("mask decoding is a sigmoid of the product distance") {
  Rng rng(29);
  ad::Tape t(nullptr, false);
  SUBCASE("orthogonal patch scores exactly one half") {
    const Tensor g({2, 2}, {1.0, 0.0, 0.3, 0.4});
    QueryVector q;
    q.q = t.leaf(Tensor({1, 2}, {0.0, 5.0}));
    ad::Var out = decode_mask(t, t.leaf(g), q);
    CHECK(out->val(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("positive scaling of the query preserves the score ordering") {
    const Tensor g = randt({6, 4}, rng);
    const Tensor qv = randt({1, 4}, rng);
    QueryVector q1, q2;
    q1.q = t.leaf(qv);
    Tensor scaled = qv;
    for (auto& v : scaled.vec()) v *= 3.7;
    q2.q = t.leaf(scaled);
    const Tensor s1 = decode_mask(t, t.leaf(g), q1)->val;
    const Tensor s2 = decode_mask(t, t.leaf(g), q2)->val;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        CHECK((s1(i, 0) < s1(j, 0)) == (s2(i, 0) < s2(j, 0)));
  }
  SUBCASE("values match the scalar sigmoid oracle") {
    const Tensor g({3, 2}, {0.5, -0.2, 1.5, 0.8, -0.9, 0.3});
    QueryVector q;
    q.q = t.leaf(Tensor({1, 2}, {0.6, -1.1}));
    ad::Var out = decode_mask(t, t.leaf(g), q);
    for (int i = 0; i < 3; ++i) {
      const double z = g(i, 0) * 0.6 + g(i, 1) * -1.1;
      CHECK(out->val(i, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-10));
    }
  }
}

TEST_CASE("bilinear upsampling obeys the textbook formulas") {
  ad::Tape t(nullptr, false);
  SUBCASE("constants stay constant") {
    ad::Var out = upsample(t, t.leaf(Tensor::full({1, 4}, 0.42)), 2, 2, 7, 5);
    for (double v : out->val.vec()) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
  }
  SUBCASE("2x2 grid to 4x4 with corner alignment") {
    // corners map exactly; interior uses thirds
    const Tensor grid({1, 4}, {0.0, 0.3, 0.6, 0.9});  // g(0,0)=0, g(0,1)=.3, g(1,0)=.6, g(1,1)=.9
    ad::Var out = upsample(t, t.leaf(grid), 2, 2, 4, 4);
    auto expect = [&](int x, int y) {
      const double fx = x / 3.0, fy = y / 3.0;
      return (1 - fx) * (1 - fy) * 0.0 + fx * (1 - fy) * 0.6 + (1 - fx) * fy * 0.3 + fx * fy * 0.9;
    };
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y) CHECK(out->val(x, y) == doctest::Approx(expect(x, y)).epsilon(1e-12));
  }
  SUBCASE("outputs are bounded by the input range") {
    Rng rng(31);
    Tensor grid({1, 16});
    for (auto& v : grid.vec()) v = rng.uniform();
    double lo = 1e18, hi = -1e18;
    for (double v : grid.vec()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    ad::Var out = upsample(t, t.leaf(grid), 4, 4, 13, 9);
    for (double v : out->val.vec()) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
  }
}

TEST_CASE("auxiliary readout emits probabilities") {
  ParamTree tree = decoder_tree(8, 37);
  Rng rng(41);
  ad::Tape t(&tree, false);
  ad::Var out = aux_readout(t, t.leaf(randt({10, 8}, rng, 2.0)), "dec");
  CHECK(out->val.rows() == 10);
  for (double v : out->val.vec()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  SUBCASE("zero weights give exactly one half") {
    for (auto& [k, p] : tree.params())
      if (k.rfind("dec.aux", 0) == 0)
        for (auto& v : p.vec()) v = 0.0;
    ad::Tape t2(&tree, false);
    ad::Var half = aux_readout(t2, t2.leaf(randt({4, 8}, rng)), "dec");
    for (double v : half->val.vec()) CHECK(v == doctest::Approx(0.5));
  }
}

TEST_CASE("frame loss composes main and auxiliary cross entropies") {
  Rng rng(43);
  Tensor gt({4, 4});
  for (auto& v : gt.vec()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Tensor pred({4, 4});
  for (auto& v : pred.vec()) v = 0.1 + 0.8 * rng.uniform();
  Tensor aux1({4, 4}), aux2({4, 4});
  for (auto& v : aux1.vec()) v = 0.1 + 0.8 * rng.uniform();
  for (auto& v : aux2.vec()) v = 0.1 + 0.8 * rng.uniform();

  ad::Tape t(nullptr, false);
  auto bce_ref = [&](const Tensor& p) {
    double l = 0;
    for (size_t i = 0; i < p.vec().size(); ++i) {
      const double pc = std::clamp(p.vec()[i], 1e-7, 1.0 - 1e-7);
      l += -(gt.vec()[i] * std::log(pc) + (1 - gt.vec()[i]) * std::log(1 - pc));
    }
    return l / static_cast<double>(p.size());
  };
  SUBCASE("lambda zero reduces to the main term") {
    ad::Var l = frame_loss(t, t.leaf(pred), {t.leaf(aux1), t.leaf(aux2)}, gt, 0.0);
    CHECK(l->val.vec()[0] == doctest::Approx(bce_ref(pred)).epsilon(1e-12));
  }
  SUBCASE("default weighting adds lambda times the auxiliary sum") {
    ad::Var l = frame_loss(t, t.leaf(pred), {t.leaf(aux1), t.leaf(aux2)}, gt, 0.4);
    CHECK(l->val.vec()[0] ==
          doctest::Approx(bce_ref(pred) + 0.4 * (bce_ref(aux1) + bce_ref(aux2))).epsilon(1e-12));
  }
  SUBCASE("perfect clamped predictions give a vanishing loss") {
    Tensor perfect({4, 4});
    for (size_t i = 0; i < perfect.vec().size(); ++i)
      perfect.vec()[i] = gt.vec()[i] > 0.5 ? 1.0 - 1e-7 : 1e-7;
    ad::Var l = frame_loss(t, t.leaf(perfect), {}, gt, 0.4);
    CHECK(l->val.vec()[0] < 1e-5);
    CHECK(l->val.vec()[0] >= 0.0);
  }
  SUBCASE("negative lambda is rejected") {
    CHECK_THROWS_AS(frame_loss(t, t.leaf(pred), {}, gt, -0.1), PreconditionError);
  }
}

TEST_CASE("loss decreases when a pixel moves toward the ground truth") {
  Tensor gt({2, 2}, {1.0, 0.0, 1.0, 0.0});
  Tensor pred({2, 2}, {0.6, 0.4, 0.7, 0.2});
  ad::Tape t(nullptr, false);
  const double before = frame_loss(t, t.leaf(pred), {}, gt, 0.0)->val.vec()[0];
  pred.vec()[0] = 0.8;  // closer to its label
  const double after = frame_loss(t, t.leaf(pred), {}, gt, 0.0)->val.vec()[0];
  CHECK(after < before);
}
