#include "locater/memory.hpp"

#include <cmath>

#include "locater/numerics.hpp"

namespace locater {

void init_memory(ParamTree& tree, const std::string& prefix, int d, int n_g, int n_l, Rng& rng) {
  if (d % 2 != 0) throw ConfigError("memory: width must be even for the mask FCN");
  auto randn = [&](std::vector<int> shape, double std) {
    Tensor w(std::move(shape));
    for (auto& x : w.vec()) x = rng.normal(0.0, std);
    return w;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  tree.add(prefix + ".global.wc", randn({d, 2 * d}, s / std::sqrt(2.0)));
  tree.add(prefix + ".global.wo", randn({d, d}, s));
  tree.add(prefix + ".global.init", randn({n_g, d}, 0.5));
  tree.add(prefix + ".local.wc", randn({d, 3 * d}, s / std::sqrt(3.0)));
  tree.add(prefix + ".local.wo", randn({d, d}, s));
  tree.add(prefix + ".local.init", randn({n_l, d}, 0.5));
  // mask FCN: 1 -> D/2 -> D channels, 3x3 kernels
  tree.add(prefix + ".fcn.w1", randn({d / 2, 1, 3, 3}, 1.0 / 3.0));
  tree.add(prefix + ".fcn.b1", Tensor({d / 2}));
  tree.add(prefix + ".fcn.w2", randn({d, d / 2, 3, 3}, 1.0 / (3.0 * std::sqrt(static_cast<double>(d / 2)))));
  tree.add(prefix + ".fcn.b2", Tensor({d}));
}

ad::Var gated_write(ad::Tape& t, ad::Var candidate_in, ad::Var cells, const std::string& prefix,
                    double gate_logit_bias) {
  const int n_v = candidate_in->val.rows();
  // candidate: c_p = W_c [candidate_in_p, AP(cells)]
  ad::Var pooled = ad::mean_rows(t, cells);
  ad::Var cat = ad::concat_cols(t, {candidate_in, ad::repeat_rows(t, pooled, n_v)});
  ad::Var cand = ad::matmul_nt(t, cat, t.param(prefix + ".wc"));  // [N_v x D]
  // gates: o_{n,p} = sigma(c_p^T W_o m_n)
  ad::Var logits = ad::matmul_nt(t, ad::matmul(t, cand, t.param(prefix + ".wo")), cells);
  if (gate_logit_bias != 0.0) logits = ad::add_scalar(t, logits, gate_logit_bias);
  ad::Var gates = ad::sigmoid(t, logits);  // [N_v x N_g]
  // m_n <- AP_p( o_{n,p} c_p + (1 - o_{n,p}) m_n )
  //      = (O^T C) / N_v + (1 - mean_p o_{n,p}) m_n
  ad::Var from_cand = ad::scale(t, ad::matmul_tn(t, gates, cand), 1.0 / n_v);
  ad::Var keep = ad::add_scalar(t, ad::scale(t, ad::mean_rows(t, gates), -1.0), 1.0);
  return ad::add(t, from_cand, ad::row_scale(t, cells, keep));
}

ad::Var global_write(ad::Tape& t, ad::Var v, ad::Var cells, const MemoryParams& p) {
  if (v->val.cols() != cells->val.cols())
    throw ShapeError("global_write: width mismatch " + v->val.shape_str() + " vs " +
                     cells->val.shape_str());
  return gated_write(t, v, cells, p.prefix + ".global", p.gate_logit_bias);
}

ad::Var build_global_cells(ad::Tape& t, int n_frames, int interval,
                           const std::function<ad::Var(int)>& feature_fn, const MemoryParams& p) {
  if (n_frames < 1) throw InputError("build_global_memory: empty video");
  if (interval < 1) throw PreconditionError("build_global_memory: interval must be >= 1");
  ad::Var cells = t.param(p.prefix + ".global.init");
  for (int f = 0; f < n_frames; f += interval) cells = global_write(t, feature_fn(f), cells, p);
  return cells;
}

GlobalMemory build_global_memory(ad::Tape& t, int n_frames, int interval,
                                 const std::function<ad::Var(int)>& feature_fn,
                                 const MemoryParams& p) {
  GlobalMemory mem;
  mem.cells = build_global_cells(t, n_frames, interval, feature_fn, p)->val;
  return mem;
}

namespace {

// [C x Gw x Gh] feature map -> [N_v x C] token matrix, p = gx * gh + gy.
ad::Var chw_to_tokens(ad::Tape& t, ad::Var a) {
  const int c = a->val.dim(0), gw = a->val.dim(1), gh = a->val.dim(2);
  ad::Var n = t.alloc();
  n->val = Tensor({gw * gh, c});
  const double* src = a->val.data();
  double* dst = n->val.data();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < gw; ++i)
      for (int j = 0; j < gh; ++j)
        dst[static_cast<size_t>(i * gh + j) * c + ch] = src[(static_cast<size_t>(ch) * gw + i) * gh + j];
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, c, gw, gh](ad::Node& self) {
      double* ga = a->grad_slot().data();
      const double* g = self.grad.data();
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < gw; ++i)
          for (int j = 0; j < gh; ++j)
            ga[(static_cast<size_t>(ch) * gw + i) * gh + j] +=
                g[static_cast<size_t>(i * gh + j) * c + ch];
    };
  }
  return n;
}

}  // namespace

ad::Var mask_embed(ad::Tape& t, ad::Var mask_probs, int grid_w, int grid_h,
                   const std::string& prefix) {
  if (mask_probs->val.size() != static_cast<int64_t>(grid_w) * grid_h)
    throw ShapeError("mask_embed: probability count does not match grid");
  for (double v : mask_probs->val.vec())
    if (v < 0.0 || v > 1.0) throw InputError("mask_embed: probabilities must lie in [0,1]");
  ad::Var grid = ad::reshape(t, mask_probs, {1, grid_w, grid_h});
  ad::Var h = ad::gelu(t, ad::conv3x3(t, grid, t.param(prefix + ".fcn.w1"), t.param(prefix + ".fcn.b1")));
  ad::Var out = ad::conv3x3(t, h, t.param(prefix + ".fcn.w2"), t.param(prefix + ".fcn.b2"));
  return chw_to_tokens(t, out);
}

ad::Var local_write_cells(ad::Tape& t, ad::Var v_prev, ad::Var mask_prev_probs, ad::Var cells,
                          int grid_w, int grid_h, const MemoryParams& p) {
  ad::Var s = mask_embed(t, mask_prev_probs, grid_w, grid_h, p.prefix);
  ad::Var cat = ad::concat_cols(t, {v_prev, s});
  return gated_write(t, cat, cells, p.prefix + ".local", p.gate_logit_bias);
}

LocalMemory local_write(ad::Tape& t, ad::Var v_prev, ad::Var mask_prev_probs,
                        const LocalMemory& mem, int input_frame_index, int grid_w, int grid_h,
                        const MemoryParams& p) {
  if (mem.frame_index != input_frame_index)
    throw SequenceError("local_write: memory is at frame " + std::to_string(mem.frame_index) +
                        " but inputs are from frame " + std::to_string(input_frame_index));
  ad::Var cells = t.leaf(mem.cells, false);
  LocalMemory out;
  out.cells = local_write_cells(t, v_prev, mask_prev_probs, cells, grid_w, grid_h, p)->val;
  out.frame_index = mem.frame_index + 1;
  return out;
}

ad::Var memory_read(ad::Tape& t, ad::Var v, ad::Var global_cells, ad::Var local_cells) {
  ad::Var cg = attention(t, v, global_cells, global_cells);
  ad::Var cl = attention(t, v, local_cells, local_cells);
  return ad::add(t, ad::add(t, v, cg), cl);
}

}  // namespace locater
