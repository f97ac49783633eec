#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "locater/params.hpp"
#include "locater/tensor.hpp"

namespace locater::ad {

// Minimal reverse-mode tape. Nodes are appended in evaluation order, so the
// reverse of the creation order is a valid topological order for backprop.
// A tape owns every node it creates; Var is a non-owning handle.

struct Node {
  Tensor val;
  Tensor grad;  // allocated lazily, same shape as val
  bool requires_grad = false;
  std::function<void(Node&)> backfn;  // accumulates into parents' grads

  Tensor& grad_slot() {
    if (grad.empty() && !val.empty()) grad = Tensor(val.shape());
    return grad;
  }
};

using Var = Node*;

class Tape {
 public:
  explicit Tape(ParamTree* tree = nullptr, bool grad_enabled = true, bool finite_checks = true)
      : tree_(tree), grad_enabled_(grad_enabled), finite_checks_(finite_checks) {}

  bool grad_enabled() const { return grad_enabled_; }
  bool finite_checks() const { return finite_checks_; }
  ParamTree* tree() const { return tree_; }

  Var leaf(Tensor v, bool requires_grad = false) {
    Var n = alloc();
    n->val = std::move(v);
    n->requires_grad = requires_grad && grad_enabled_;
    return n;
  }

  // Leaf backed by a named parameter; repeated lookups return the same node
  // so gradients accumulate in one place before being flushed to the tree.
  Var param(const std::string& key);

  // Runs backprop from a scalar node and adds parameter gradients into the
  // tree's gradient map.
  void backward(Var loss);

  Var alloc() {
    nodes_.push_back(std::make_unique<Node>());
    return nodes_.back().get();
  }

  void check(Var n, const char* op) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<std::string, Var> param_nodes_;
  ParamTree* tree_;
  bool grad_enabled_;
  bool finite_checks_;
};

// ---- ops ----------------------------------------------------------------
// Shapes follow matrix conventions: 2-d [rows x cols] unless noted.

Var add(Tape& t, Var a, Var b);                       // same shape
Var sub(Tape& t, Var a, Var b);                       // same shape
Var mul(Tape& t, Var a, Var b);                       // elementwise, same shape
Var scale(Tape& t, Var a, double c);                  // c * a
Var add_scalar(Tape& t, Var a, double c);             // a + c
Var add_rowvec(Tape& t, Var m, Var v);                // m[N x D] + broadcast v[1 x D]
Var matmul(Tape& t, Var a, Var b);                    // [M x K] * [K x N]
Var matmul_nt(Tape& t, Var a, Var b);                 // [M x K] * [N x K]^T
Var matmul_tn(Tape& t, Var a, Var b);                 // [K x M]^T * [K x N]
Var concat_rows(Tape& t, const std::vector<Var>& xs);
Var concat_cols(Tape& t, const std::vector<Var>& xs);
Var slice_rows(Tape& t, Var a, int r0, int r1);       // rows [r0, r1)
Var slice_cols(Tape& t, Var a, int c0, int c1);       // cols [c0, c1)
Var repeat_rows(Tape& t, Var v, int n);               // v[1 x D] -> [n x D]
Var mean_rows(Tape& t, Var a);                        // [N x D] -> [1 x D] average pool
Var row_scale(Tape& t, Var m, Var w);                 // m[N x D] rows scaled by w[1 x N]
Var gather_rows(Tape& t, Var table, const std::vector<int>& ids);
Var sigmoid(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a, const std::vector<uint8_t>& key_mask = {});
Var layernorm(Tape& t, Var x, Var gain, Var bias, double eps);
// grid: [Cin x Gw x Gh], weight: [Cout x Cin x 3 x 3], bias: [Cout]; zero pad.
Var conv3x3(Tape& t, Var grid, Var weight, Var bias);
// probs [N_v] viewed as (Gw x Gh) grid -> [W x H], corner-aligned bilinear.
Var bilinear_upsample(Tape& t, Var probs, int gw, int gh, int w, int h);
// mean binary cross entropy against 0/1 targets, probabilities clamped.
Var bce(Tape& t, Var pred, const Tensor& target, double clamp = 1e-7);
Var detach(Tape& t, Var a);  // value copy, gradient barrier
Var reshape(Tape& t, Var a, std::vector<int> shape);

// Sum of scalar nodes, averaged if mean=true.
Var sum_scalars(Tape& t, const std::vector<Var>& xs, bool mean = false);

}  // namespace locater::ad
