#pragma once

#include <functional>
#include <string>

#include "locater/autodiff.hpp"
#include "locater/rng.hpp"

namespace locater {

// Fixed-capacity memories. Global cells are built once per video and stay
// immutable; local cells are rewritten frame by frame in strict order.
struct GlobalMemory {
  Tensor cells;  // [N_g x D]
};

struct LocalMemory {
  Tensor cells;  // [N_l x D]
  int frame_index = 0;  // index t of the state M^l_t
};

struct MemoryParams {
  std::string prefix = "mem";
  // Test hook: added to every gate logit before the sigmoid. Large negative
  // values close all gates, large positive values open them.
  double gate_logit_bias = 0.0;
};

// Gated write shared by both controllers: a candidate per patch, a sigmoid
// gate per (cell, patch) pair and an average-pooled convex blend.
// `candidate_in` is [N_v x (width*D)]; wc maps it (plus pooled cells) to D.
ad::Var gated_write(ad::Tape& t, ad::Var candidate_in, ad::Var cells, const std::string& prefix,
                    double gate_logit_bias);

// Global controller: candidate input is the frame feature itself.
ad::Var global_write(ad::Tape& t, ad::Var v, ad::Var cells, const MemoryParams& p);

// Builds the global memory by writing evenly sampled frames (t' = 0,
// interval, 2*interval, ...) in temporal order, starting from the learnable
// init cells. `feature_fn` returns the language-enhanced feature of frame t.
// Graph-level form plus a convenience wrapper that freezes the cells.
ad::Var build_global_cells(ad::Tape& t, int n_frames, int interval,
                           const std::function<ad::Var(int)>& feature_fn, const MemoryParams& p);
GlobalMemory build_global_memory(ad::Tape& t, int n_frames, int interval,
                                 const std::function<ad::Var(int)>& feature_fn,
                                 const MemoryParams& p);

// Mask embedding: patch probabilities -> grid -> two 3x3 convolutions ->
// per-patch D-vectors.
ad::Var mask_embed(ad::Tape& t, ad::Var mask_probs, int grid_w, int grid_h,
                   const std::string& prefix);

// Local controller: candidate input is [V_{t-1,p}, s_{t-1,p}]. Graph-level
// form so training can keep the recurrence differentiable.
ad::Var local_write_cells(ad::Tape& t, ad::Var v_prev, ad::Var mask_prev_probs, ad::Var cells,
                          int grid_w, int grid_h, const MemoryParams& p);

// Stateful wrapper: checks the inputs belong to frame mem.frame_index and
// advances the index by exactly one.
LocalMemory local_write(ad::Tape& t, ad::Var v_prev, ad::Var mask_prev_probs,
                        const LocalMemory& mem, int input_frame_index, int grid_w, int grid_h,
                        const MemoryParams& p);

// Attention read: G_t = V_t + ATT(V_t, M^g, M^g) + ATT(V_t, M^l, M^l).
ad::Var memory_read(ad::Tape& t, ad::Var v, ad::Var global_cells, ad::Var local_cells);

void init_memory(ParamTree& tree, const std::string& prefix, int d, int n_g, int n_l, Rng& rng);

}  // namespace locater
