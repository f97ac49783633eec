#include "locater/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "locater/kernels.hpp"

namespace locater::ad {

namespace {

bool any_grad(std::initializer_list<Var> ps) {
  for (Var p : ps)
    if (p && p->requires_grad) return true;
  return false;
}

void require_2d(Var a, const char* op) {
  if (a->val.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + a->val.shape_str());
}

}  // namespace

Var Tape::param(const std::string& key) {
  if (!tree_) throw ConfigError("tape: no parameter tree bound");
  auto it = param_nodes_.find(key);
  if (it != param_nodes_.end()) return it->second;
  Var n = leaf(tree_->at(key), /*requires_grad=*/true);
  param_nodes_.emplace(key, n);
  return n;
}

void Tape::check(Var n, const char* op) const {
  if (finite_checks_ && !n->val.all_finite())
    throw NumericError(std::string(op) + ": non-finite value in output");
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw PreconditionError("backward: tape has gradients disabled");
  if (loss->val.size() != 1) throw ShapeError("backward: loss must be scalar");
  loss->grad_slot().vec()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.backfn || n.grad.empty()) continue;
    n.backfn(n);
  }
  if (tree_) {
    for (auto& [key, node] : param_nodes_) {
      if (node->grad.empty()) continue;
      Tensor& g = tree_->grad(key);
      const auto& src = node->grad.vec();
      auto& dst = g.vec();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

// ---- elementwise ----------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  require_same_shape(a->val, b->val, "add");
  Var n = t.alloc();
  n->val = a->val;
  const auto& bv = b->val.vec();
  auto& nv = n->val.vec();
  for (size_t i = 0; i < nv.size(); ++i) nv[i] += bv[i];
  t.check(n, "add");
  if (t.grad_enabled() && any_grad({a, b})) {
    n->requires_grad = true;
    n->backfn = [a, b](Node& self) {
      const auto& g = self.grad.vec();
      if (a->requires_grad) {
        auto& ga = a->grad_slot().vec();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b->requires_grad) {
        auto& gb = b->grad_slot().vec();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return n;
}

Var sub(Tape& t, Var a, Var b) { return add(t, a, scale(t, b, -1.0)); }

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(a->val, b->val, "mul");
  Var n = t.alloc();
  n->val = a->val;
  const auto& bv = b->val.vec();
  auto& nv = n->val.vec();
  for (size_t i = 0; i < nv.size(); ++i) nv[i] *= bv[i];
  t.check(n, "mul");
  if (t.grad_enabled() && any_grad({a, b})) {
    n->requires_grad = true;
    n->backfn = [a, b](Node& self) {
      const auto& g = self.grad.vec();
      if (a->requires_grad) {
        auto& ga = a->grad_slot().vec();
        const auto& bv2 = b->val.vec();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b->requires_grad) {
        auto& gb = b->grad_slot().vec();
        const auto& av = a->val.vec();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    };
  }
  return n;
}

Var scale(Tape& t, Var a, double c) {
  Var n = t.alloc();
  n->val = a->val;
  for (auto& v : n->val.vec()) v *= c;
  t.check(n, "scale");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, c](Node& self) {
      auto& ga = a->grad_slot().vec();
      const auto& g = self.grad.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
  }
  return n;
}

Var add_scalar(Tape& t, Var a, double c) {
  Var n = t.alloc();
  n->val = a->val;
  for (auto& v : n->val.vec()) v += c;
  t.check(n, "add_scalar");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a](Node& self) {
      auto& ga = a->grad_slot().vec();
      const auto& g = self.grad.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return n;
}

Var add_rowvec(Tape& t, Var m, Var v) {
  require_2d(m, "add_rowvec");
  if (v->val.ndim() != 2 || v->val.rows() != 1 || v->val.cols() != m->val.cols())
    throw ShapeError("add_rowvec: vector shape " + v->val.shape_str() + " vs matrix " + m->val.shape_str());
  Var n = t.alloc();
  n->val = m->val;
  const int R = m->val.rows(), C = m->val.cols();
  const double* vv = v->val.data();
  double* nv = n->val.data();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) nv[static_cast<size_t>(i) * C + j] += vv[j];
  t.check(n, "add_rowvec");
  if (t.grad_enabled() && any_grad({m, v})) {
    n->requires_grad = true;
    n->backfn = [m, v, R, C](Node& self) {
      const double* g = self.grad.data();
      if (m->requires_grad) {
        auto& gm = m->grad_slot().vec();
        for (size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
      }
      if (v->requires_grad) {
        double* gv = v->grad_slot().data();
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j) gv[j] += g[static_cast<size_t>(i) * C + j];
      }
    };
  }
  return n;
}

// ---- matmul ---------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int M = a->val.rows(), K = a->val.cols(), N = b->val.cols();
  if (b->val.rows() != K)
    throw ShapeError("matmul: inner dims " + a->val.shape_str() + " vs " + b->val.shape_str());
  Var n = t.alloc();
  n->val = Tensor({M, N});
  kernels::matmul_nn(a->val.data(), b->val.data(), n->val.data(), M, K, N);
  t.check(n, "matmul");
  if (t.grad_enabled() && any_grad({a, b})) {
    n->requires_grad = true;
    n->backfn = [a, b, M, K, N](Node& self) {
      const double* g = self.grad.data();
      if (a->requires_grad)
        kernels::matmul_nt(g, b->val.data(), a->grad_slot().data(), M, N, K, true);
      if (b->requires_grad)
        kernels::matmul_tn(a->val.data(), g, b->grad_slot().data(), K, M, N, true);
    };
  }
  return n;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int M = a->val.rows(), K = a->val.cols(), N = b->val.rows();
  if (b->val.cols() != K)
    throw ShapeError("matmul_nt: inner dims " + a->val.shape_str() + " vs " + b->val.shape_str());
  Var n = t.alloc();
  n->val = Tensor({M, N});
  kernels::matmul_nt(a->val.data(), b->val.data(), n->val.data(), M, K, N);
  t.check(n, "matmul_nt");
  if (t.grad_enabled() && any_grad({a, b})) {
    n->requires_grad = true;
    n->backfn = [a, b, M, K, N](Node& self) {
      const double* g = self.grad.data();
      if (a->requires_grad)
        kernels::matmul_nn(g, b->val.data(), a->grad_slot().data(), M, N, K, true);
      if (b->requires_grad)
        kernels::matmul_tn(g, a->val.data(), b->grad_slot().data(), N, M, K, true);
    };
  }
  return n;
}

Var matmul_tn(Tape& t, Var a, Var b) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  const int K = a->val.rows(), M = a->val.cols(), N = b->val.cols();
  if (b->val.rows() != K)
    throw ShapeError("matmul_tn: inner dims " + a->val.shape_str() + " vs " + b->val.shape_str());
  Var n = t.alloc();
  n->val = Tensor({M, N});
  kernels::matmul_tn(a->val.data(), b->val.data(), n->val.data(), M, K, N);
  t.check(n, "matmul_tn");
  if (t.grad_enabled() && any_grad({a, b})) {
    n->requires_grad = true;
    n->backfn = [a, b, M, K, N](Node& self) {
      const double* g = self.grad.data();
      if (a->requires_grad)  // dA[K x M] = B[K x N] * g[M x N]^T
        kernels::matmul_nt(b->val.data(), g, a->grad_slot().data(), K, N, M, true);
      if (b->requires_grad)  // dB[K x N] = A[K x M] * g[M x N]
        kernels::matmul_nn(a->val.data(), g, b->grad_slot().data(), K, M, N, true);
    };
  }
  return n;
}

// ---- layout ops -----------------------------------------------------------

Var concat_rows(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw PreconditionError("concat_rows: empty list");
  const int C = xs[0]->val.cols();
  int R = 0;
  for (Var x : xs) {
    require_2d(x, "concat_rows");
    if (x->val.cols() != C) throw ShapeError("concat_rows: column mismatch");
    R += x->val.rows();
  }
  Var n = t.alloc();
  n->val = Tensor({R, C});
  int r = 0;
  for (Var x : xs) {
    std::copy(x->val.vec().begin(), x->val.vec().end(), n->val.vec().begin() + static_cast<size_t>(r) * C);
    r += x->val.rows();
  }
  bool rg = false;
  for (Var x : xs) rg = rg || x->requires_grad;
  if (t.grad_enabled() && rg) {
    n->requires_grad = true;
    auto parts = xs;
    n->backfn = [parts, C](Node& self) {
      const double* g = self.grad.data();
      int r0 = 0;
      for (Var x : parts) {
        const int nr = x->val.rows();
        if (x->requires_grad) {
          auto& gx = x->grad_slot().vec();
          const double* src = g + static_cast<size_t>(r0) * C;
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
        }
        r0 += nr;
      }
    };
  }
  return n;
}

Var concat_cols(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw PreconditionError("concat_cols: empty list");
  const int R = xs[0]->val.rows();
  int C = 0;
  for (Var x : xs) {
    require_2d(x, "concat_cols");
    if (x->val.rows() != R) throw ShapeError("concat_cols: row mismatch");
    C += x->val.cols();
  }
  Var n = t.alloc();
  n->val = Tensor({R, C});
  int c = 0;
  for (Var x : xs) {
    const int xc = x->val.cols();
    for (int i = 0; i < R; ++i)
      std::copy(x->val.data() + static_cast<size_t>(i) * xc, x->val.data() + static_cast<size_t>(i + 1) * xc,
                n->val.data() + static_cast<size_t>(i) * C + c);
    c += xc;
  }
  bool rg = false;
  for (Var x : xs) rg = rg || x->requires_grad;
  if (t.grad_enabled() && rg) {
    n->requires_grad = true;
    auto parts = xs;
    n->backfn = [parts, R, C](Node& self) {
      const double* g = self.grad.data();
      int c0 = 0;
      for (Var x : parts) {
        const int xc = x->val.cols();
        if (x->requires_grad) {
          double* gx = x->grad_slot().data();
          for (int i = 0; i < R; ++i)
            for (int j = 0; j < xc; ++j)
              gx[static_cast<size_t>(i) * xc + j] += g[static_cast<size_t>(i) * C + c0 + j];
        }
        c0 += xc;
      }
    };
  }
  return n;
}

Var slice_rows(Tape& t, Var a, int r0, int r1) {
  require_2d(a, "slice_rows");
  const int R = a->val.rows(), C = a->val.cols();
  if (r0 < 0 || r1 > R || r0 >= r1) throw ShapeError("slice_rows: bad range");
  Var n = t.alloc();
  n->val = Tensor({r1 - r0, C});
  std::copy(a->val.data() + static_cast<size_t>(r0) * C, a->val.data() + static_cast<size_t>(r1) * C,
            n->val.data());
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, r0, C](Node& self) {
      double* ga = a->grad_slot().data();
      const auto& g = self.grad.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(r0) * C + i] += g[i];
    };
  }
  return n;
}

Var slice_cols(Tape& t, Var a, int c0, int c1) {
  require_2d(a, "slice_cols");
  const int R = a->val.rows(), C = a->val.cols();
  if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_cols: bad range");
  const int W = c1 - c0;
  Var n = t.alloc();
  n->val = Tensor({R, W});
  for (int i = 0; i < R; ++i)
    std::copy(a->val.data() + static_cast<size_t>(i) * C + c0, a->val.data() + static_cast<size_t>(i) * C + c1,
              n->val.data() + static_cast<size_t>(i) * W);
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, c0, C, W, R](Node& self) {
      double* ga = a->grad_slot().data();
      const double* g = self.grad.data();
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < W; ++j) ga[static_cast<size_t>(i) * C + c0 + j] += g[static_cast<size_t>(i) * W + j];
    };
  }
  return n;
}

Var repeat_rows(Tape& t, Var v, int n_rows) {
  if (v->val.ndim() != 2 || v->val.rows() != 1) throw ShapeError("repeat_rows: expected [1 x D]");
  const int C = v->val.cols();
  Var n = t.alloc();
  n->val = Tensor({n_rows, C});
  for (int i = 0; i < n_rows; ++i)
    std::copy(v->val.data(), v->val.data() + C, n->val.data() + static_cast<size_t>(i) * C);
  if (t.grad_enabled() && v->requires_grad) {
    n->requires_grad = true;
    n->backfn = [v, n_rows, C](Node& self) {
      double* gv = v->grad_slot().data();
      const double* g = self.grad.data();
      for (int i = 0; i < n_rows; ++i)
        for (int j = 0; j < C; ++j) gv[j] += g[static_cast<size_t>(i) * C + j];
    };
  }
  return n;
}

Var mean_rows(Tape& t, Var a) {
  require_2d(a, "mean_rows");
  const int R = a->val.rows(), C = a->val.cols();
  Var n = t.alloc();
  n->val = Tensor({1, C});
  double* nv = n->val.data();
  const double* av = a->val.data();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) nv[j] += av[static_cast<size_t>(i) * C + j];
  for (int j = 0; j < C; ++j) nv[j] /= R;
  t.check(n, "mean_rows");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, R, C](Node& self) {
      double* ga = a->grad_slot().data();
      const double* g = self.grad.data();
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) ga[static_cast<size_t>(i) * C + j] += g[j] / R;
    };
  }
  return n;
}

Var row_scale(Tape& t, Var m, Var w) {
  require_2d(m, "row_scale");
  if (w->val.ndim() != 2 || w->val.rows() != 1 || w->val.cols() != m->val.rows())
    throw ShapeError("row_scale: weight shape " + w->val.shape_str() + " vs matrix " + m->val.shape_str());
  const int R = m->val.rows(), C = m->val.cols();
  Var n = t.alloc();
  n->val = m->val;
  const double* wv = w->val.data();
  for (int i = 0; i < R; ++i) {
    double* row = n->val.data() + static_cast<size_t>(i) * C;
    for (int j = 0; j < C; ++j) row[j] *= wv[i];
  }
  t.check(n, "row_scale");
  if (t.grad_enabled() && any_grad({m, w})) {
    n->requires_grad = true;
    n->backfn = [m, w, R, C](Node& self) {
      const double* g = self.grad.data();
      const double* wv2 = w->val.data();
      if (m->requires_grad) {
        double* gm = m->grad_slot().data();
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j)
            gm[static_cast<size_t>(i) * C + j] += g[static_cast<size_t>(i) * C + j] * wv2[i];
      }
      if (w->requires_grad) {
        double* gw = w->grad_slot().data();
        const double* mv = m->val.data();
        for (int i = 0; i < R; ++i) {
          double s = 0.0;
          for (int j = 0; j < C; ++j)
            s += g[static_cast<size_t>(i) * C + j] * mv[static_cast<size_t>(i) * C + j];
          gw[i] += s;
        }
      }
    };
  }
  return n;
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& ids) {
  require_2d(table, "gather_rows");
  const int R = table->val.rows(), C = table->val.cols();
  for (int id : ids)
    if (id < 0 || id >= R) throw VocabError("gather_rows: id " + std::to_string(id) + " out of range");
  Var n = t.alloc();
  n->val = Tensor({static_cast<int>(ids.size()), C});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(table->val.data() + static_cast<size_t>(ids[i]) * C,
              table->val.data() + static_cast<size_t>(ids[i] + 1) * C, n->val.data() + i * C);
  if (t.grad_enabled() && table->requires_grad) {
    n->requires_grad = true;
    n->backfn = [table, ids, C](Node& self) {
      double* gt = table->grad_slot().data();
      const double* g = self.grad.data();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < C; ++j) gt[static_cast<size_t>(ids[i]) * C + j] += g[i * C + j];
    };
  }
  return n;
}

// ---- nonlinearities ---------------------------------------------------------

Var sigmoid(Tape& t, Var a) {
  Var n = t.alloc();
  n->val = a->val;
  auto& v = n->val.vec();
  kernels::sigmoid(a->val.data(), v.data(), static_cast<int64_t>(v.size()));
  t.check(n, "sigmoid");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a](Node& self) {
      auto& ga = a->grad_slot().vec();
      const auto& g = self.grad.vec();
      const auto& y = self.val.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
  }
  return n;
}

Var gelu(Tape& t, Var a) {
  Var n = t.alloc();
  n->val = a->val;
  auto& v = n->val.vec();
  kernels::gelu(a->val.data(), v.data(), static_cast<int64_t>(v.size()));
  t.check(n, "gelu");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a](Node& self) {
      auto& ga = a->grad_slot().vec();
      const auto& g = self.grad.vec();
      const auto& x = a->val.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kernels::gelu_grad_scalar(x[i]);
    };
  }
  return n;
}

Var softmax_rows(Tape& t, Var a, const std::vector<uint8_t>& key_mask) {
  require_2d(a, "softmax_rows");
  const int R = a->val.rows(), C = a->val.cols();
  if (!key_mask.empty()) {
    if (static_cast<int>(key_mask.size()) != C) throw ShapeError("softmax_rows: mask length mismatch");
    bool any = false;
    for (uint8_t m : key_mask) any = any || m;
    if (!any) throw InputError("softmax_rows: all keys masked out");
  }
  Var n = t.alloc();
  n->val = a->val;
  kernels::softmax_rows(n->val.data(), R, C, key_mask.empty() ? nullptr : key_mask.data());
  t.check(n, "softmax_rows");
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a, R, C](Node& self) {
      double* ga = a->grad_slot().data();
      const double* g = self.grad.data();
      const double* y = self.val.data();
      for (int i = 0; i < R; ++i) {
        const double* gi = g + static_cast<size_t>(i) * C;
        const double* yi = y + static_cast<size_t>(i) * C;
        double dot = 0.0;
        for (int j = 0; j < C; ++j) dot += gi[j] * yi[j];
        double* gai = ga + static_cast<size_t>(i) * C;
        for (int j = 0; j < C; ++j) gai[j] += yi[j] * (gi[j] - dot);
      }
    };
  }
  return n;
}

Var layernorm(Tape& t, Var x, Var gain, Var bias, double eps) {
  require_2d(x, "layernorm");
  const int R = x->val.rows(), C = x->val.cols();
  if (gain->val.size() != C || bias->val.size() != C) throw ShapeError("layernorm: affine size mismatch");
  Var n = t.alloc();
  n->val = Tensor({R, C});
  // keep normalized activations and inverse stddev for the backward pass
  auto xhat = std::make_shared<Tensor>(Tensor({R, C}));
  auto inv_std = std::make_shared<std::vector<double>>(R);
  const double* xv = x->val.data();
  const double* gv = gain->val.data();
  const double* bv = bias->val.data();
  double* nv = n->val.data();
  double* hv = xhat->data();
  for (int i = 0; i < R; ++i) {
    const double* xi = xv + static_cast<size_t>(i) * C;
    double mean = 0.0;
    for (int j = 0; j < C; ++j) mean += xi[j];
    mean /= C;
    double var = 0.0;
    for (int j = 0; j < C; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= C;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (int j = 0; j < C; ++j) {
      const double h = (xi[j] - mean) * inv;
      hv[static_cast<size_t>(i) * C + j] = h;
      nv[static_cast<size_t>(i) * C + j] = gv[j] * h + bv[j];
    }
  }
  t.check(n, "layernorm");
  if (t.grad_enabled() && any_grad({x, gain, bias})) {
    n->requires_grad = true;
    n->backfn = [x, gain, bias, xhat, inv_std, R, C](Node& self) {
      const double* g = self.grad.data();
      const double* hv2 = xhat->data();
      const double* gv2 = gain->val.data();
      if (gain->requires_grad) {
        double* gg = gain->grad_slot().data();
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j)
            gg[j] += g[static_cast<size_t>(i) * C + j] * hv2[static_cast<size_t>(i) * C + j];
      }
      if (bias->requires_grad) {
        double* gb = bias->grad_slot().data();
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < C; ++j) gb[j] += g[static_cast<size_t>(i) * C + j];
      }
      if (x->requires_grad) {
        double* gx = x->grad_slot().data();
        for (int i = 0; i < R; ++i) {
          const double* gi = g + static_cast<size_t>(i) * C;
          const double* hi = hv2 + static_cast<size_t>(i) * C;
          double mean_dh = 0.0, mean_dhh = 0.0;
          for (int j = 0; j < C; ++j) {
            const double dh = gi[j] * gv2[j];
            mean_dh += dh;
            mean_dhh += dh * hi[j];
          }
          mean_dh /= C;
          mean_dhh /= C;
          const double inv = (*inv_std)[i];
          double* gxi = gx + static_cast<size_t>(i) * C;
          for (int j = 0; j < C; ++j) {
            const double dh = gi[j] * gv2[j];
            gxi[j] += inv * (dh - mean_dh - hi[j] * mean_dhh);
          }
        }
      }
    };
  }
  return n;
}

// ---- structured ops ---------------------------------------------------------

Var conv3x3(Tape& t, Var grid, Var weight, Var bias) {
  if (grid->val.ndim() != 3) throw ShapeError("conv3x3: grid must be [C x Gw x Gh]");
  if (weight->val.ndim() != 4 || weight->val.dim(2) != 3 || weight->val.dim(3) != 3)
    throw ShapeError("conv3x3: weight must be [Cout x Cin x 3 x 3]");
  const int Cin = grid->val.dim(0), Gw = grid->val.dim(1), Gh = grid->val.dim(2);
  const int Cout = weight->val.dim(0);
  if (weight->val.dim(1) != Cin) throw ShapeError("conv3x3: channel mismatch");
  if (bias->val.size() != Cout) throw ShapeError("conv3x3: bias size mismatch");
  Var n = t.alloc();
  n->val = Tensor({Cout, Gw, Gh});
  flops::add(static_cast<long long>(Cout) * Cin * Gw * Gh * 9);
  const double* xv = grid->val.data();
  const double* wv = weight->val.data();
  const double* bv = bias->val.data();
  double* yv = n->val.data();
  auto xat = [&](int c, int i, int j) -> double {
    if (i < 0 || i >= Gw || j < 0 || j >= Gh) return 0.0;
    return xv[(static_cast<size_t>(c) * Gw + i) * Gh + j];
  };
  for (int co = 0; co < Cout; ++co)
    for (int i = 0; i < Gw; ++i)
      for (int j = 0; j < Gh; ++j) {
        double s = bv[co];
        for (int ci = 0; ci < Cin; ++ci)
          for (int di = 0; di < 3; ++di)
            for (int dj = 0; dj < 3; ++dj)
              s += wv[((static_cast<size_t>(co) * Cin + ci) * 3 + di) * 3 + dj] *
                   xat(ci, i + di - 1, j + dj - 1);
        yv[(static_cast<size_t>(co) * Gw + i) * Gh + j] = s;
      }
  t.check(n, "conv3x3");
  if (t.grad_enabled() && any_grad({grid, weight, bias})) {
    n->requires_grad = true;
    n->backfn = [grid, weight, bias, Cin, Cout, Gw, Gh](Node& self) {
      const double* g = self.grad.data();
      const double* xv2 = grid->val.data();
      const double* wv2 = weight->val.data();
      auto gat = [&](int c, int i, int j) -> double {
        if (i < 0 || i >= Gw || j < 0 || j >= Gh) return 0.0;
        return g[(static_cast<size_t>(c) * Gw + i) * Gh + j];
      };
      if (bias->requires_grad) {
        double* gb = bias->grad_slot().data();
        for (int co = 0; co < Cout; ++co)
          for (int i = 0; i < Gw; ++i)
            for (int j = 0; j < Gh; ++j) gb[co] += g[(static_cast<size_t>(co) * Gw + i) * Gh + j];
      }
      if (weight->requires_grad) {
        double* gw = weight->grad_slot().data();
        for (int co = 0; co < Cout; ++co)
          for (int ci = 0; ci < Cin; ++ci)
            for (int di = 0; di < 3; ++di)
              for (int dj = 0; dj < 3; ++dj) {
                double s = 0.0;
                for (int i = 0; i < Gw; ++i)
                  for (int j = 0; j < Gh; ++j) {
                    const int xi = i + di - 1, xj = j + dj - 1;
                    if (xi < 0 || xi >= Gw || xj < 0 || xj >= Gh) continue;
                    s += g[(static_cast<size_t>(co) * Gw + i) * Gh + j] *
                         xv2[(static_cast<size_t>(ci) * Gw + xi) * Gh + xj];
                  }
                gw[((static_cast<size_t>(co) * Cin + ci) * 3 + di) * 3 + dj] += s;
              }
      }
      if (grid->requires_grad) {
        double* gx = grid->grad_slot().data();
        for (int ci = 0; ci < Cin; ++ci)
          for (int i = 0; i < Gw; ++i)
            for (int j = 0; j < Gh; ++j) {
              double s = 0.0;
              for (int co = 0; co < Cout; ++co)
                for (int di = 0; di < 3; ++di)
                  for (int dj = 0; dj < 3; ++dj)
                    s += wv2[((static_cast<size_t>(co) * Cin + ci) * 3 + di) * 3 + dj] *
                         gat(co, i - (di - 1), j - (dj - 1));
              gx[(static_cast<size_t>(ci) * Gw + i) * Gh + j] += s;
            }
      }
    };
  }
  return n;
}

Var bilinear_upsample(Tape& t, Var probs, int gw, int gh, int w, int h) {
  if (probs->val.size() != static_cast<int64_t>(gw) * gh)
    throw ShapeError("bilinear_upsample: grid element count mismatch");
  if (w < 1 || h < 1) throw ShapeError("bilinear_upsample: bad output dims");
  Var n = t.alloc();
  n->val = Tensor({w, h});
  const double* gvals = probs->val.data();
  double* out = n->val.data();
  // corner-aligned sampling: output corners map exactly onto grid corners
  const double sx = (w > 1 && gw > 1) ? static_cast<double>(gw - 1) / (w - 1) : 0.0;
  const double sy = (h > 1 && gh > 1) ? static_cast<double>(gh - 1) / (h - 1) : 0.0;
  flops::add(static_cast<long long>(w) * h * 4);
  for (int x = 0; x < w; ++x) {
    const double fx = x * sx;
    int ix0 = static_cast<int>(fx);
    if (ix0 > gw - 2) ix0 = gw > 1 ? gw - 2 : 0;
    const int ix1 = gw > 1 ? ix0 + 1 : 0;
    const double ax = fx - ix0;
    for (int y = 0; y < h; ++y) {
      const double fy = y * sy;
      int iy0 = static_cast<int>(fy);
      if (iy0 > gh - 2) iy0 = gh > 1 ? gh - 2 : 0;
      const int iy1 = gh > 1 ? iy0 + 1 : 0;
      const double ay = fy - iy0;
      out[static_cast<size_t>(x) * h + y] =
          (1 - ax) * (1 - ay) * gvals[static_cast<size_t>(ix0) * gh + iy0] +
          ax * (1 - ay) * gvals[static_cast<size_t>(ix1) * gh + iy0] +
          (1 - ax) * ay * gvals[static_cast<size_t>(ix0) * gh + iy1] +
          ax * ay * gvals[static_cast<size_t>(ix1) * gh + iy1];
    }
  }
  t.check(n, "bilinear_upsample");
  if (t.grad_enabled() && probs->requires_grad) {
    n->requires_grad = true;
    n->backfn = [probs, gw, gh, w, h, sx, sy](Node& self) {
      double* gp = probs->grad_slot().data();
      const double* g = self.grad.data();
      for (int x = 0; x < w; ++x) {
        const double fx = x * sx;
        int ix0 = static_cast<int>(fx);
        if (ix0 > gw - 2) ix0 = gw > 1 ? gw - 2 : 0;
        const int ix1 = gw > 1 ? ix0 + 1 : 0;
        const double ax = fx - ix0;
        for (int y = 0; y < h; ++y) {
          const double fy = y * sy;
          int iy0 = static_cast<int>(fy);
          if (iy0 > gh - 2) iy0 = gh > 1 ? gh - 2 : 0;
          const int iy1 = gh > 1 ? iy0 + 1 : 0;
          const double ay = fy - iy0;
          const double gv = g[static_cast<size_t>(x) * h + y];
          gp[static_cast<size_t>(ix0) * gh + iy0] += (1 - ax) * (1 - ay) * gv;
          gp[static_cast<size_t>(ix1) * gh + iy0] += ax * (1 - ay) * gv;
          gp[static_cast<size_t>(ix0) * gh + iy1] += (1 - ax) * ay * gv;
          gp[static_cast<size_t>(ix1) * gh + iy1] += ax * ay * gv;
        }
      }
    };
  }
  return n;
}

Var bce(Tape& t, Var pred, const Tensor& target, double clamp) {
  if (!pred->val.same_shape(target)) throw ShapeError("bce: prediction/target shape mismatch");
  const auto& p = pred->val.vec();
  const auto& y = target.vec();
  const double lo = clamp, hi = 1.0 - clamp;
  double loss = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pc = std::min(std::max(p[i], lo), hi);
    loss += -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
  }
  loss /= static_cast<double>(p.size());
  Var n = t.alloc();
  n->val = Tensor({1}, {loss});
  t.check(n, "bce");
  if (t.grad_enabled() && pred->requires_grad) {
    n->requires_grad = true;
    Tensor tgt = target;
    n->backfn = [pred, tgt = std::move(tgt), lo, hi](Node& self) {
      const double g = self.grad.vec()[0];
      auto& gp = pred->grad_slot().vec();
      const auto& p2 = pred->val.vec();
      const auto& y2 = tgt.vec();
      const double invn = 1.0 / static_cast<double>(p2.size());
      for (size_t i = 0; i < p2.size(); ++i) {
        if (p2[i] <= lo || p2[i] >= hi) continue;  // clamped region: flat
        gp[i] += g * invn * (p2[i] - y2[i]) / (p2[i] * (1.0 - p2[i]));
      }
    };
  }
  return n;
}

Var detach(Tape& t, Var a) { return t.leaf(a->val, false); }

Var reshape(Tape& t, Var a, std::vector<int> shape) {
  Var n = t.alloc();
  n->val = a->val.reshaped(shape);
  if (t.grad_enabled() && a->requires_grad) {
    n->requires_grad = true;
    n->backfn = [a](Node& self) {
      auto& ga = a->grad_slot().vec();
      const auto& g = self.grad.vec();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return n;
}

Var sum_scalars(Tape& t, const std::vector<Var>& xs, bool mean) {
  if (xs.empty()) throw PreconditionError("sum_scalars: empty list");
  double s = 0.0;
  for (Var x : xs) {
    if (x->val.size() != 1) throw ShapeError("sum_scalars: non-scalar input");
    s += x->val.vec()[0];
  }
  const double f = mean ? 1.0 / static_cast<double>(xs.size()) : 1.0;
  Var n = t.alloc();
  n->val = Tensor({1}, {s * f});
  t.check(n, "sum_scalars");
  bool rg = false;
  for (Var x : xs) rg = rg || x->requires_grad;
  if (t.grad_enabled() && rg) {
    n->requires_grad = true;
    auto parts = xs;
    n->backfn = [parts, f](Node& self) {
      const double g = self.grad.vec()[0] * f;
      for (Var x : parts)
        if (x->requires_grad) x->grad_slot().vec()[0] += g;
    };
  }
  return n;
}

}  // namespace locater::ad
