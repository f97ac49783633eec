#include "locater/numerics.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "locater/kernels.hpp"

namespace locater {

namespace {

void validate_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw ShapeError("attention: Q, K, V must be 2-d");
  if (q.cols() != k.cols())
    throw ShapeError("attention: Q/K width mismatch " + q.shape_str() + " vs " + k.shape_str());
  if (k.rows() != v.rows())
    throw ShapeError("attention: K/V row mismatch " + k.shape_str() + " vs " + v.shape_str());
  if (k.rows() < 1) throw PreconditionError("attention: need at least one key row");
  if (!q.all_finite() || !k.all_finite() || !v.all_finite())
    throw NumericError("attention: non-finite input");
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& key_mask) {
  validate_attention(q, k, v);
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != k.rows())
    throw ShapeError("attention: key mask length mismatch");
  Tensor out({q.rows(), v.cols()});
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  kernels::attention(q.data(), k.data(), v.data(), out.data(), q.rows(), k.rows(), q.cols(),
                     v.cols(), scale, key_mask.empty() ? nullptr : key_mask.data());
  if (!out.all_finite()) throw NumericError("attention: non-finite output");
  return out;
}

ad::Var attention(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v,
                  const std::vector<uint8_t>& key_mask) {
  validate_attention(q->val, k->val, v->val);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q->val.cols()));
  ad::Var scores = ad::scale(t, ad::matmul_nt(t, q, k), scale);
  ad::Var probs = ad::softmax_rows(t, scores, key_mask);
  return ad::matmul(t, probs, v);
}

void init_encoder_block(ParamTree& tree, const std::string& prefix, int d, Rng& rng) {
  auto randn = [&](std::vector<int> shape, double std) {
    Tensor w(std::move(shape));
    for (auto& x : w.vec()) x = rng.normal(0.0, std);
    return w;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* name : {"wq", "wk", "wv", "wo"})
    tree.add(prefix + ".msa." + name, randn({d, d}, s));
  for (const char* name : {"bq", "bk", "bv", "bo"})
    tree.add(prefix + ".msa." + name, Tensor({1, d}));
  tree.add(prefix + ".ln1.g", Tensor::full({1, d}, 1.0));
  tree.add(prefix + ".ln1.b", Tensor({1, d}));
  tree.add(prefix + ".ln2.g", Tensor::full({1, d}, 1.0));
  tree.add(prefix + ".ln2.b", Tensor({1, d}));
  tree.add(prefix + ".mlp.w1", randn({d, 4 * d}, s));
  tree.add(prefix + ".mlp.b1", Tensor({1, 4 * d}));
  tree.add(prefix + ".mlp.w2", randn({4 * d, d}, 0.5 / std::sqrt(static_cast<double>(d))));
  tree.add(prefix + ".mlp.b2", Tensor({1, d}));
}

ad::Var encoder_block(ad::Tape& t, ad::Var x, const std::string& prefix, int heads,
                      const std::vector<uint8_t>& key_mask) {
  const int d = x->val.cols();
  if (heads < 1 || d % heads != 0)
    throw ConfigError("encoder block: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const int dh = d / heads;

  auto linear = [&](ad::Var in, const char* w, const char* b) {
    return ad::add_rowvec(t, ad::matmul(t, in, t.param(prefix + ".msa." + w)),
                          t.param(prefix + ".msa." + b));
  };
  ad::Var q = linear(x, "wq", "bq");
  ad::Var k = linear(x, "wk", "bk");
  ad::Var v = linear(x, "wv", "bv");

  std::vector<ad::Var> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(t, q, h * dh, (h + 1) * dh);
    ad::Var kh = ad::slice_cols(t, k, h * dh, (h + 1) * dh);
    ad::Var vh = ad::slice_cols(t, v, h * dh, (h + 1) * dh);
    head_outs.push_back(attention(t, qh, kh, vh, key_mask));
  }
  ad::Var msa = ad::concat_cols(t, head_outs);
  msa = ad::add_rowvec(t, ad::matmul(t, msa, t.param(prefix + ".msa.wo")),
                       t.param(prefix + ".msa.bo"));

  ad::Var x1 = ad::layernorm(t, ad::add(t, x, msa), t.param(prefix + ".ln1.g"),
                             t.param(prefix + ".ln1.b"), kLayerNormEps);

  ad::Var hmid = ad::gelu(
      t, ad::add_rowvec(t, ad::matmul(t, x1, t.param(prefix + ".mlp.w1")),
                        t.param(prefix + ".mlp.b1")));
  ad::Var mlp = ad::add_rowvec(t, ad::matmul(t, hmid, t.param(prefix + ".mlp.w2")),
                               t.param(prefix + ".mlp.b2"));
  return ad::layernorm(t, ad::add(t, x1, mlp), t.param(prefix + ".ln2.g"),
                       t.param(prefix + ".ln2.b"), kLayerNormEps);
}

double grad_check(ParamTree& params, const std::function<double(bool)>& loss_fn, double step,
                  GradCheckOptions opts) {
  if (step == 0.0) throw PreconditionError("grad_check: step must be non-zero");

  const double l0 = loss_fn(false);
  const double l1 = loss_fn(false);
  if (std::memcmp(&l0, &l1, sizeof(double)) != 0)
    throw DeterminismError("grad_check: loss is not deterministic across identical calls");

  params.zero_grads();
  loss_fn(true);

  Rng rng(opts.seed);
  double max_rel = 0.0;
  for (auto& [key, tensor] : params.params()) {
    const Tensor& g = params.grad(key);
    const int64_t n = tensor.size();
    const int samples = static_cast<int>(std::min<int64_t>(opts.samples_per_tensor, n));
    for (int s = 0; s < samples; ++s) {
      const int64_t idx = samples == n ? s : static_cast<int64_t>(rng.next_u64() % n);
      double& slot = tensor.vec()[static_cast<size_t>(idx)];
      const double orig = slot;
      slot = orig + step;
      const double lp = loss_fn(false);
      slot = orig - step;
      const double lm = loss_fn(false);
      slot = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = g.vec()[static_cast<size_t>(idx)];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace locater
