#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "locater/kernels.hpp"
#include "locater/numerics.hpp"
#include "locater/rng.hpp"

using namespace locater;

namespace {

Tensor randt(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("attention with one key returns that value row") {
  Rng rng(3);
  const Tensor q = randt({4, 5}, rng);
  const Tensor k = randt({1, 5}, rng);
  const Tensor v = randt({1, 7}, rng);
  const Tensor out = attention(q, k, v);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 7; ++j) CHECK(out(i, j) == doctest::Approx(v(0, j)).epsilon(1e-12));
}

TEST_CASE("attention over identical keys averages the values") {
  Rng rng(5);
  Tensor k({6, 3});
  const Tensor krow = randt({1, 3}, rng);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) k(i, j) = krow(0, j);
  const Tensor q = randt({2, 3}, rng);
  const Tensor v = randt({6, 4}, rng);
  const Tensor out = attention(q, k, v);
  for (int j = 0; j < 4; ++j) {
    double mean = 0;
    for (int i = 0; i < 6; ++i) mean += v(i, j);
    mean /= 6;
    CHECK(out(0, j) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out(1, j) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("attention matches the scalar softmax oracle on the 2-key case") {
  // Q=[[1,0]], K=[[1,0],[0,1]], V=[[1,0],[0,1]]: scores are (1/sqrt(2), 0)
  const Tensor q({1, 2}, {1, 0});
  const Tensor k({2, 2}, {1, 0, 0, 1});
  const Tensor v({2, 2}, {1, 0, 0, 1});
  // independent scalar arithmetic
  const double s0 = 1.0 / std::sqrt(2.0), s1 = 0.0;
  const double e0 = std::exp(s0), e1 = std::exp(s1);
  const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  const Tensor out = attention(q, k, v);
  CHECK(out(0, 0) == doctest::Approx(p0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("attention rejects bad inputs") {
  Rng rng(7);
  const Tensor q = randt({2, 3}, rng);
  const Tensor k = randt({4, 2}, rng);  // width mismatch
  const Tensor v = randt({4, 3}, rng);
  CHECK_THROWS_AS(attention(q, k, v), ShapeError);
  Tensor bad = randt({4, 3}, rng);
  bad.vec()[0] = std::numeric_limits<double>::quiet_NaN();
  const Tensor k2 = randt({4, 3}, rng);
  CHECK_THROWS_AS(attention(q, k2, bad), NumericError);
}

TEST_CASE("attention is invariant under joint permutation of keys and values") {
  Rng rng(11);
  const Tensor q = randt({3, 4}, rng);
  const Tensor k = randt({6, 4}, rng);
  const Tensor v = randt({6, 5}, rng);
  const Tensor base = attention(q, k, v);
  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  Tensor kp({6, 4}), vp({6, 5});
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) kp(i, j) = k(perm[static_cast<size_t>(i)], j);
    for (int j = 0; j < 5; ++j) vp(i, j) = v(perm[static_cast<size_t>(i)], j);
  }
  const Tensor permuted = attention(q, kp, vp);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) CHECK(std::abs(base(i, j) - permuted(i, j)) <= 1e-12);
}

TEST_CASE("encoder block keeps the input shape") {
  Rng rng(13);
  ParamTree tree;
  init_encoder_block(tree, "blk", 16, rng);
  for (int n : {1, 5}) {
    ad::Tape t(&tree, false);
    ad::Var x = t.leaf(randt({n, 16}, rng));
    ad::Var y = encoder_block(t, x, "blk", 4);
    CHECK(y->val.rows() == n);
    CHECK(y->val.cols() == 16);
  }
}

TEST_CASE("encoder block rejects indivisible head counts") {
  Rng rng(17);
  ParamTree tree;
  init_encoder_block(tree, "blk", 6, rng);
  ad::Tape t(&tree, false);
  ad::Var x = t.leaf(randt({2, 6}, rng));
  CHECK_THROWS_AS(encoder_block(t, x, "blk", 4), ConfigError);
}

TEST_CASE("single-head encoder block matches a manual composition of the equations") {
  Rng rng(19);
  const int n = 3, d = 4;
  ParamTree tree;
  init_encoder_block(tree, "blk", d, rng);
  const Tensor x = randt({n, d}, rng);

  ad::Tape t(&tree, false);
  ad::Var y = encoder_block(t, t.leaf(x), "blk", 1);

  // manual composition: MSA via the attention primitive, then LN/MLP
  auto lin = [&](const Tensor& in, const std::string& wkey, const std::string& bkey) {
    const Tensor& w = tree.at(wkey);
    const Tensor& b = tree.at(bkey);
    Tensor out({in.rows(), w.cols()});
    for (int i = 0; i < in.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) {
        double s = b(0, j);
        for (int k = 0; k < in.cols(); ++k) s += in(i, k) * w(k, j);
        out(i, j) = s;
      }
    return out;
  };
  auto ln = [&](const Tensor& in, const std::string& gk, const std::string& bk) {
    const Tensor& g = tree.at(gk);
    const Tensor& b = tree.at(bk);
    Tensor out({in.rows(), in.cols()});
    for (int i = 0; i < in.rows(); ++i) {
      double mean = 0, var = 0;
      for (int j = 0; j < in.cols(); ++j) mean += in(i, j);
      mean /= in.cols();
      for (int j = 0; j < in.cols(); ++j) var += (in(i, j) - mean) * (in(i, j) - mean);
      var /= in.cols();
      for (int j = 0; j < in.cols(); ++j)
        out(i, j) = g(0, j) * (in(i, j) - mean) / std::sqrt(var + kLayerNormEps) + b(0, j);
    }
    return out;
  };
  const Tensor msa = lin(attention(lin(x, "blk.msa.wq", "blk.msa.bq"), lin(x, "blk.msa.wk", "blk.msa.bk"),
                                   lin(x, "blk.msa.wv", "blk.msa.bv")),
                         "blk.msa.wo", "blk.msa.bo");
  Tensor x1({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x1(i, j) = x(i, j) + msa(i, j);
  x1 = ln(x1, "blk.ln1.g", "blk.ln1.b");
  Tensor hid = lin(x1, "blk.mlp.w1", "blk.mlp.b1");
  for (auto& v : hid.vec()) v = kernels::gelu_scalar(v);
  const Tensor mlp = lin(hid, "blk.mlp.w2", "blk.mlp.b2");
  Tensor expected({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) expected(i, j) = x1(i, j) + mlp(i, j);
  expected = ln(expected, "blk.ln2.g", "blk.ln2.b");

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) CHECK(y->val(i, j) == doctest::Approx(expected(i, j)).epsilon(1e-10));
}

TEST_CASE("layernorm maps constant rows to the affine bias") {
  ad::Tape t(nullptr, false);
  ad::Var x = t.leaf(Tensor::full({2, 8}, 3.25));
  ad::Var g = t.leaf(Tensor::full({1, 8}, 1.0));
  ad::Var b = t.leaf(Tensor({1, 8}));
  ad::Var y = ad::layernorm(t, x, g, b, kLayerNormEps);
  for (double v : y->val.vec()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("encoder block stays finite for large inputs") {
  Rng rng(23);
  ParamTree tree;
  init_encoder_block(tree, "blk", 8, rng);
  ad::Tape t(&tree, false);
  Tensor x = randt({5, 8}, rng);
  for (auto& v : x.vec()) v = std::clamp(v * 500.0, -1e3, 1e3);
  ad::Var y = encoder_block(t, t.leaf(x), "blk", 2);
  CHECK(y->val.all_finite());
}

TEST_CASE("grad_check: quadratic loss is exact to first order") {
  ParamTree tree;
  Rng rng(29);
  tree.add("p", randt({3, 3}, rng));
  auto loss_fn = [&](bool record) {
    double l = 0;
    const Tensor& p = tree.at("p");
    for (double v : p.vec()) l += 0.5 * v * v;
    if (record) {
      Tensor& g = tree.grad("p");
      for (size_t i = 0; i < g.vec().size(); ++i) g.vec()[i] += p.vec()[i];
    }
    return l;
  };
  CHECK(grad_check(tree, loss_fn, 1e-5, {9, 1}) < 1e-9);
}

TEST_CASE("grad_check rejects a zero step") {
  ParamTree tree;
  tree.add("p", Tensor({1}, {1.0}));
  auto loss_fn = [&](bool) { return 0.0; };
  CHECK_THROWS_AS(grad_check(tree, loss_fn, 0.0), PreconditionError);
}

TEST_CASE("grad_check detects non-deterministic losses") {
  ParamTree tree;
  tree.add("p", Tensor({1}, {1.0}));
  int calls = 0;
  auto loss_fn = [&](bool) { return static_cast<double>(++calls); };
  CHECK_THROWS_AS(grad_check(tree, loss_fn, 1e-5), DeterminismError);
}
