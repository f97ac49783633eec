#pragma once

#include <string>
#include <vector>

#include "locater/autodiff.hpp"
#include "locater/mask.hpp"
#include "locater/rng.hpp"

namespace locater {

// Final per-frame segmentation: patch grid, upsampled pixel probabilities,
// binarized mask and the auxiliary deep-supervision grids.
struct SegmentationResult {
  Tensor patch_probs;  // [N_v]
  Tensor pixel_probs;  // [W x H]
  Mask binary;         // pixel_probs > threshold
  std::vector<Tensor> aux_probs;  // K patch grids
};

struct Summaries {
  ad::Var v = nullptr;        // AP of V_t, [1 x D]
  ad::Var mem_g = nullptr;    // AP of global cells
  ad::Var mem_l = nullptr;    // AP of local cells
};

struct QueryVector {
  ad::Var q = nullptr;          // [1 x D]
  ad::Var word_attn = nullptr;  // [1 x N_w], zero on padded slots
};

// Average-pooled context summaries at the three temporal scales.
Summaries summarize(ad::Tape& t, ad::Var v, ad::Var global_cells, ad::Var local_cells);

// Visual-context-guided word attention and the convex query vector.
QueryVector query_embed(ad::Tape& t, ad::Var text_tokens, const std::vector<uint8_t>& pad_mask,
                        const Summaries& s, const std::string& prefix);

// Product-distance readout: sigmoid(G_t q^T), [N_v x 1].
ad::Var decode_mask(ad::Tape& t, ad::Var g, const QueryVector& q);

// Patch probabilities viewed as a (gw x gh) grid, bilinearly upsampled to
// pixel resolution (corner-aligned).
ad::Var upsample(ad::Tape& t, ad::Var patch_probs, int grid_w, int grid_h, int w, int h);

// Shared auxiliary readout over a fusion tap: MLP + sigmoid, [N_v x 1].
ad::Var aux_readout(ad::Tape& t, ad::Var tap, const std::string& prefix);

// Eq-style frame loss: BCE(final, gt) + lambda * sum_k BCE(aux_k, gt).
// Auxiliary grids must already be at gt resolution.
ad::Var frame_loss(ad::Tape& t, ad::Var final_pixels, const std::vector<ad::Var>& aux_pixels,
                   const Tensor& gt, double lambda);

constexpr double kBceClamp = 1e-7;

void init_decoder(ParamTree& tree, const std::string& prefix, int d, Rng& rng);

}  // namespace locater
