#pragma once

#include <functional>
#include <string>

#include "locater/autodiff.hpp"
#include "locater/rng.hpp"
#include "locater/tensor.hpp"

namespace locater {

// Single-head attention, softmax(Q K^T / sqrt(Dk)) V. The Tensor overload is
// the plain math primitive; the tape overload participates in backprop.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& key_mask = {});
ad::Var attention(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v,
                  const std::vector<uint8_t>& key_mask = {});

// Pre-norm-free transformer encoder block: Y = LN(X' + MLP(X')) with
// X' = LN(X + MSA(X)). Parameters live under `prefix` in the tape's tree.
ad::Var encoder_block(ad::Tape& t, ad::Var x, const std::string& prefix, int heads,
                      const std::vector<uint8_t>& key_mask = {});

// Creates the block's parameters (MSA projections, MLP, two layer norms).
void init_encoder_block(ParamTree& tree, const std::string& prefix, int d, Rng& rng);

constexpr double kLayerNormEps = 1e-5;

struct GradCheckOptions {
  int samples_per_tensor = 6;
  uint64_t seed = 0x5eed;
};

// Central-difference gradient oracle. `loss_fn(record)` evaluates the loss on
// the current parameters; with record=true it must also accumulate analytic
// gradients into the tree. Returns the max relative error over a sampled
// subset of parameters.
double grad_check(ParamTree& params, const std::function<double(bool record_grads)>& loss_fn,
                  double step, GradCheckOptions opts = {});

}  // namespace locater
