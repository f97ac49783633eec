#pragma once

#include <string>
#include <vector>

#include "locater/decoder.hpp"
#include "locater/encoders.hpp"
#include "locater/memory.hpp"

namespace locater {

struct ModelConfig {
  int d = 32;
  int k_modules = 3;
  int heads = 4;
  int patch = 8;  // O, pixels per patch side
  int n_w = 12;   // fixed expression length
  int frame_w = 64, frame_h = 64, channels = 3;
  double n_g_mult = 1.5, n_l_mult = 2.0;  // memory capacity as multiples of N_v
  int interval = 10;                      // global memory frame sampling stride
  int vocab_size = 0;
  double gate_logit_bias = 0.0;  // test hook, see MemoryParams

  int base_grid_w() const { return frame_w / patch; }
  int base_grid_h() const { return frame_h / patch; }
  int n_v() const { return base_grid_w() * base_grid_h(); }
  int n_g() const { return static_cast<int>(n_g_mult * n_v() + 0.5); }
  int n_l() const { return static_cast<int>(n_l_mult * n_v() + 0.5); }
  bool use_memory() const { return n_g() > 0 && n_l() > 0; }

  void validate() const;
};

// Per-frame outputs of the full pipeline, as graph nodes.
struct FrameOutput {
  ad::Var v = nullptr;            // language-enhanced feature [N_v x D]
  ad::Var patch_probs = nullptr;  // [N_v x 1]
  ad::Var pixel_probs = nullptr;  // [W x H]
  std::vector<ad::Var> aux_pixel;  // K auxiliary grids, upsampled
  ad::Var word_attn = nullptr;     // [1 x N_w]
  int grid_w = 0, grid_h = 0;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  void init(Rng& rng);                       // create and initialize all parameters
  void load_params(const ParamTree& other);  // strict key/shape match

  const ModelConfig& config() const { return cfg_; }
  ParamTree& params() { return tree_; }
  const ParamTree& params() const { return tree_; }
  MemoryParams memory_params() const { return {"mem", cfg_.gate_logit_bias}; }

  ad::Tape make_tape(bool grad) { return ad::Tape(&tree_, grad); }

  TextEmbedding text(ad::Tape& t, const std::vector<int>& token_ids) const;
  FusionOutput frame_features(ad::Tape& t, const Tensor& frame, const TextEmbedding& txt) const;

  // Global memory cells over evenly sampled frames, as a graph node so
  // training can differentiate through construction.
  ad::Var build_global_cells(ad::Tape& t, const std::vector<Tensor>& frames,
                             const TextEmbedding& txt) const;

  // read -> summarize -> query -> decode -> upsample (+ aux readouts).
  // Pass null memory cells to run the memory-disabled variant (G_t = V_t,
  // zero memory summaries).
  FrameOutput frame_step(ad::Tape& t, const Tensor& frame, const TextEmbedding& txt,
                         ad::Var global_cells, ad::Var local_cells) const;

 private:
  ModelConfig cfg_;
  ParamTree tree_;
};

}  // namespace locater
