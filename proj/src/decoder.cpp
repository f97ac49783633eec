#include "locater/decoder.hpp"

#include <cmath>

namespace locater {

void init_decoder(ParamTree& tree, const std::string& prefix, int d, Rng& rng) {
  if (d % 2 != 0) throw ConfigError("decoder: width must be even for the aux MLP");
  auto randn = [&](std::vector<int> shape, double std) {
    Tensor w(std::move(shape));
    for (auto& x : w.vec()) x = rng.normal(0.0, std);
    return w;
  };
  tree.add(prefix + ".w1", randn({3 * d, d}, 1.0 / std::sqrt(3.0 * d)));
  tree.add(prefix + ".w2", randn({d, d}, 1.0 / std::sqrt(static_cast<double>(d))));
  tree.add(prefix + ".aux.w1", randn({d, d / 2}, 1.0 / std::sqrt(static_cast<double>(d))));
  tree.add(prefix + ".aux.b1", Tensor({1, d / 2}));
  tree.add(prefix + ".aux.w2", randn({d / 2, 1}, 1.0 / std::sqrt(d / 2.0)));
  tree.add(prefix + ".aux.b2", Tensor({1, 1}));
}

Summaries summarize(ad::Tape& t, ad::Var v, ad::Var global_cells, ad::Var local_cells) {
  Summaries s;
  s.v = ad::mean_rows(t, v);
  s.mem_g = ad::mean_rows(t, global_cells);
  s.mem_l = ad::mean_rows(t, local_cells);
  return s;
}

QueryVector query_embed(ad::Tape& t, ad::Var text_tokens, const std::vector<uint8_t>& pad_mask,
                        const Summaries& s, const std::string& prefix) {
  bool any_real = false;
  for (uint8_t m : pad_mask) any_real = any_real || m;
  if (!any_real) throw InputError("query_embed: expression has no real words");
  ad::Var ctx = ad::concat_cols(t, {s.v, s.mem_g, s.mem_l});          // [1 x 3D]
  ad::Var lhs = ad::matmul(t, ctx, t.param(prefix + ".w1"));          // [1 x D]
  ad::Var rhs = ad::matmul(t, text_tokens, t.param(prefix + ".w2"));  // [N_w x D]
  ad::Var logits = ad::matmul_nt(t, lhs, rhs);                        // [1 x N_w]
  QueryVector out;
  out.word_attn = ad::softmax_rows(t, logits, pad_mask);
  out.q = ad::matmul(t, out.word_attn, text_tokens);
  return out;
}

ad::Var decode_mask(ad::Tape& t, ad::Var g, const QueryVector& q) {
  if (g->val.cols() != q.q->val.cols())
    throw ShapeError("decode_mask: width mismatch " + g->val.shape_str() + " vs " +
                     q.q->val.shape_str());
  return ad::sigmoid(t, ad::matmul_nt(t, g, q.q));  // [N_v x 1]
}

ad::Var upsample(ad::Tape& t, ad::Var patch_probs, int grid_w, int grid_h, int w, int h) {
  return ad::bilinear_upsample(t, patch_probs, grid_w, grid_h, w, h);
}

ad::Var aux_readout(ad::Tape& t, ad::Var tap, const std::string& prefix) {
  ad::Var h = ad::gelu(t, ad::add_rowvec(t, ad::matmul(t, tap, t.param(prefix + ".aux.w1")),
                                         t.param(prefix + ".aux.b1")));
  ad::Var z = ad::add_rowvec(t, ad::matmul(t, h, t.param(prefix + ".aux.w2")),
                             t.param(prefix + ".aux.b2"));
  return ad::sigmoid(t, z);
}

ad::Var frame_loss(ad::Tape& t, ad::Var final_pixels, const std::vector<ad::Var>& aux_pixels,
                   const Tensor& gt, double lambda) {
  if (lambda < 0.0) throw PreconditionError("frame_loss: lambda must be non-negative");
  ad::Var loss = ad::bce(t, final_pixels, gt, kBceClamp);
  if (lambda > 0.0 && !aux_pixels.empty()) {
    std::vector<ad::Var> aux_terms;
    aux_terms.reserve(aux_pixels.size());
    for (ad::Var a : aux_pixels) aux_terms.push_back(ad::bce(t, a, gt, kBceClamp));
    loss = ad::add(t, loss, ad::scale(t, ad::sum_scalars(t, aux_terms), lambda));
  }
  return loss;
}

}  // namespace locater
