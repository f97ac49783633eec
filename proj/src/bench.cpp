#include "locater/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "locater/kernels.hpp"
#include "locater/rng.hpp"

namespace locater::bench {

namespace {

using clk = std::chrono::steady_clock;

double clock_granularity_ms() {
  double best = 1e9;
  for (int i = 0; i < 64; ++i) {
    const auto a = clk::now();
    auto b = clk::now();
    while (b == a) b = clk::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
  }
  return best;
}

std::vector<float> randu(int64_t n, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

double trimmed_mean(std::vector<double> v, double trim) {
  std::sort(v.begin(), v.end());
  const int drop = static_cast<int>(std::floor(v.size() * trim));
  double s = 0.0;
  int n = 0;
  for (int i = drop; i < static_cast<int>(v.size()) - drop; ++i) {
    s += v[static_cast<size_t>(i)];
    ++n;
  }
  return s / std::max(1, n);
}

void validate(const BenchConfig& cfg, const std::vector<int>& frames_list) {
  if (cfg.trials < 3) throw PreconditionError("bench: need at least 3 trials");
  if (cfg.tokens_per_frame < 1 || cfg.dim < 1) throw ConfigError("bench: bad shape");
  if (cfg.heads < 1 || cfg.dim % cfg.heads != 0)
    throw ConfigError("bench: dim not divisible by heads");
  if (frames_list.empty()) throw PreconditionError("bench: empty frames list");
  for (int n : frames_list)
    if (n < 1) throw PreconditionError("bench: frame counts must be positive");
}

// Shared transformer-block weights in float32.
struct BlockWeights {
  int d;
  std::vector<float> wq, wk, wv, wo, w1, w2, g1, b1, g2, b2;
  BlockWeights(int dim, Rng& rng) : d(dim) {
    const float s = 1.0f / std::sqrt(static_cast<float>(dim));
    wq = randu(static_cast<int64_t>(dim) * dim, rng, -s, s);
    wk = randu(static_cast<int64_t>(dim) * dim, rng, -s, s);
    wv = randu(static_cast<int64_t>(dim) * dim, rng, -s, s);
    wo = randu(static_cast<int64_t>(dim) * dim, rng, -s, s);
    w1 = randu(static_cast<int64_t>(dim) * dim * 4, rng, -s, s);
    w2 = randu(static_cast<int64_t>(dim) * dim * 4, rng, -s, s);
    g1.assign(static_cast<size_t>(dim), 1.0f);
    b1.assign(static_cast<size_t>(dim), 0.0f);
    g2.assign(static_cast<size_t>(dim), 1.0f);
    b2.assign(static_cast<size_t>(dim), 0.0f);
  }
};

// Forward pass of one encoder block over n tokens; scratch reused per call.
struct BlockRun {
  int d, heads;
  std::vector<float> q, k, v, att, proj, x1, hid, out;
  std::vector<float> qh, kh, vh, oh;

  BlockRun(int dim, int nheads) : d(dim), heads(nheads) {}

  void run(const std::vector<float>& x, int n, const BlockWeights& w) {
    const int dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    auto ensure = [n](std::vector<float>& buf, int64_t cols) {
      buf.resize(static_cast<size_t>(n) * cols);
    };
    ensure(q, d);
    ensure(k, d);
    ensure(v, d);
    ensure(att, d);
    ensure(proj, d);
    ensure(x1, d);
    ensure(hid, 4 * static_cast<int64_t>(d));
    ensure(out, d);
    ensure(qh, dh);
    ensure(kh, dh);
    ensure(vh, dh);
    ensure(oh, dh);

    kernels::matmul_nn(x.data(), w.wq.data(), q.data(), n, d, d);
    kernels::matmul_nn(x.data(), w.wk.data(), k.data(), n, d, d);
    kernels::matmul_nn(x.data(), w.wv.data(), v.data(), n, d, d);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < n; ++i) {
        const size_t src = static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh;
        const size_t dst = static_cast<size_t>(i) * dh;
        std::copy(q.begin() + src, q.begin() + src + dh, qh.begin() + dst);
        std::copy(k.begin() + src, k.begin() + src + dh, kh.begin() + dst);
        std::copy(v.begin() + src, v.begin() + src + dh, vh.begin() + dst);
      }
      kernels::attention(qh.data(), kh.data(), vh.data(), oh.data(), n, n, dh, dh, scale);
      for (int i = 0; i < n; ++i)
        std::copy(oh.begin() + static_cast<size_t>(i) * dh,
                  oh.begin() + static_cast<size_t>(i + 1) * dh,
                  att.begin() + static_cast<size_t>(i) * d + static_cast<size_t>(h) * dh);
    }
    kernels::matmul_nn(att.data(), w.wo.data(), proj.data(), n, d, d);
    for (size_t i = 0; i < proj.size(); ++i) proj[i] += x[i];
    kernels::layernorm_rows(proj.data(), w.g1.data(), w.b1.data(), x1.data(), n, d, 1e-5f);
    kernels::matmul_nn(x1.data(), w.w1.data(), hid.data(), n, d, 4 * d);
    kernels::gelu(hid.data(), hid.data(), static_cast<int64_t>(hid.size()));
    kernels::matmul_nn(hid.data(), w.w2.data(), out.data(), n, 4 * d, d);
    for (size_t i = 0; i < out.size(); ++i) out[i] += x1[i];
    kernels::layernorm_rows(out.data(), w.g2.data(), w.b2.data(), out.data(), n, d, 1e-5f);
  }
};

// Interleaves rounds across lengths; returns per-length timed samples (ms per
// run, warmup rounds dropped).
template <class RunFn>
std::vector<std::vector<double>> run_protocol(const std::vector<int>& frames_list,
                                              const BenchConfig& cfg, RunFn&& run_one) {
  const double tick = clock_granularity_ms();
  std::vector<std::vector<double>> samples(frames_list.size());
  for (int round = 0; round < cfg.warmup + cfg.trials; ++round) {
    for (size_t li = 0; li < frames_list.size(); ++li) {
      const auto t0 = clk::now();
      run_one(frames_list[li]);
      const auto t1 = clk::now();
      const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      if (round >= cfg.warmup) {
        if (ms < 1000.0 * tick)
          throw CalibrationError("bench: workload too small for timer resolution (" +
                                 std::to_string(ms) + " ms vs tick " + std::to_string(tick) + ")");
        samples[li].push_back(ms);
      }
    }
  }
  return samples;
}

}  // namespace

std::vector<BenchRow> bench_full(const std::vector<int>& frames_list, const BenchConfig& cfg) {
  validate(cfg, frames_list);
  Rng rng(cfg.seed);
  BlockWeights weights(cfg.dim, rng);
  BlockRun block(cfg.dim, cfg.heads);

  // token inputs generated once per length
  std::vector<std::vector<float>> inputs;
  for (int n : frames_list)
    inputs.push_back(randu(static_cast<int64_t>(n) * cfg.tokens_per_frame * cfg.dim, rng));

  auto run_one = [&](int n_frames) {
    size_t li = 0;
    while (frames_list[li] != n_frames) ++li;
    block.run(inputs[li], n_frames * cfg.tokens_per_frame, weights);
  };
  auto samples = run_protocol(frames_list, cfg, run_one);

  std::vector<BenchRow> rows;
  for (size_t li = 0; li < frames_list.size(); ++li) {
    BenchRow r;
    r.variant = "full";
    r.n_frames = frames_list[li];
    r.ms_per_frame = trimmed_mean(samples[li], cfg.trim) / frames_list[li];
    r.peak_context_vectors = static_cast<long long>(frames_list[li]) * cfg.tokens_per_frame;
    rows.push_back(r);
  }
  return rows;
}

std::vector<BenchRow> bench_memory(const std::vector<int>& frames_list, const BenchConfig& cfg) {
  validate(cfg, frames_list);
  const int t_tokens = cfg.tokens_per_frame;
  const int d = cfg.dim;
  const int n_g = static_cast<int>(1.5 * t_tokens + 0.5);
  const int n_l = 2 * t_tokens;
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t_tokens))));
  if (grid * grid != t_tokens)
    throw ConfigError("bench: tokens per frame must be square for the mask grid");

  Rng rng(cfg.seed);
  const float s = 1.0f / std::sqrt(static_cast<float>(d));
  auto wc = randu(static_cast<int64_t>(d) * 3 * d, rng, -s, s);
  auto wo = randu(static_cast<int64_t>(d) * d, rng, -s, s);
  auto fcn1 = randu(static_cast<int64_t>(d / 2) * 9, rng, -s, s);
  auto fcn2 = randu(static_cast<int64_t>(d) * (d / 2) * 9, rng, -s, s);
  auto mg = randu(static_cast<int64_t>(n_g) * d, rng);
  auto ml0 = randu(static_cast<int64_t>(n_l) * d, rng);
  auto v_feat = randu(static_cast<int64_t>(t_tokens) * d, rng);
  auto mask_prev = randu(t_tokens, rng, 0.0f, 1.0f);

  std::vector<float> ml = ml0;
  std::vector<float> semb(static_cast<size_t>(t_tokens) * d);
  std::vector<float> hidden(static_cast<size_t>(t_tokens) * (d / 2));
  std::vector<float> cat(static_cast<size_t>(t_tokens) * 3 * d);
  std::vector<float> cand(static_cast<size_t>(t_tokens) * d);
  std::vector<float> gate_in(static_cast<size_t>(t_tokens) * d);
  std::vector<float> gates(static_cast<size_t>(t_tokens) * n_l);
  std::vector<float> newcells(static_cast<size_t>(n_l) * d);
  std::vector<float> ctx(static_cast<size_t>(t_tokens) * d);
  std::vector<float> out(static_cast<size_t>(t_tokens) * d);

  auto conv3x3f = [&](const float* in, int cin, const float* w, float* o, int cout) {
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
          float acc = 0.0f;
          for (int ci = 0; ci < cin; ++ci)
            for (int di = 0; di < 3; ++di)
              for (int dj = 0; dj < 3; ++dj) {
                const int x = i + di - 1, y = j + dj - 1;
                if (x < 0 || x >= grid || y < 0 || y >= grid) continue;
                acc += w[((co * cin + ci) * 3 + di) * 3 + dj] * in[(ci * grid + x) * grid + y];
              }
          o[(co * grid + i) * grid + j] = acc;
        }
  };

  auto frame_step = [&]() {
    // mask embedding over the previous prediction
    conv3x3f(mask_prev.data(), 1, fcn1.data(), hidden.data(), d / 2);
    kernels::gelu(hidden.data(), hidden.data(), static_cast<int64_t>(hidden.size()));
    conv3x3f(hidden.data(), d / 2, fcn2.data(), semb.data(), d);
    // candidate input [V_p, s_p, AP(cells)]
    std::vector<float> pooled(static_cast<size_t>(d), 0.0f);
    for (int nl = 0; nl < n_l; ++nl)
      for (int j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] += ml[static_cast<size_t>(nl) * d + j];
    for (int j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] /= n_l;
    for (int p = 0; p < t_tokens; ++p) {
      float* row = cat.data() + static_cast<size_t>(p) * 3 * d;
      std::copy(v_feat.begin() + static_cast<size_t>(p) * d,
                v_feat.begin() + static_cast<size_t>(p + 1) * d, row);
      // token-major mask feature layout mirrors chw order per channel
      for (int j = 0; j < d; ++j) row[d + j] = semb[(static_cast<size_t>(j) * t_tokens) + p];
      std::copy(pooled.begin(), pooled.end(), row + 2 * d);
    }
    kernels::matmul_nt(cat.data(), wc.data(), cand.data(), t_tokens, 3 * d, d);
    kernels::matmul_nn(cand.data(), wo.data(), gate_in.data(), t_tokens, d, d);
    kernels::matmul_nt(gate_in.data(), ml.data(), gates.data(), t_tokens, d, n_l);
    kernels::sigmoid(gates.data(), gates.data(), static_cast<int64_t>(gates.size()));
    kernels::matmul_tn(gates.data(), cand.data(), newcells.data(), n_l, t_tokens, d);
    for (int nl = 0; nl < n_l; ++nl) {
      float keep = 0.0f;
      for (int p = 0; p < t_tokens; ++p) keep += gates[static_cast<size_t>(p) * n_l + nl];
      keep = 1.0f - keep / t_tokens;
      for (int j = 0; j < d; ++j) {
        const size_t idx = static_cast<size_t>(nl) * d + j;
        ml[idx] = newcells[idx] / t_tokens + keep * ml[idx];
      }
    }
    // attention read against both memories
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    kernels::attention(v_feat.data(), mg.data(), mg.data(), ctx.data(), t_tokens, n_g, d, d, scale);
    for (size_t i = 0; i < out.size(); ++i) out[i] = v_feat[i] + ctx[i];
    kernels::attention(v_feat.data(), ml.data(), ml.data(), ctx.data(), t_tokens, n_l, d, d, scale);
    for (size_t i = 0; i < out.size(); ++i) out[i] += ctx[i];
  };

  auto run_one = [&](int n_frames) {
    ml = ml0;
    for (int f = 0; f < n_frames; ++f) frame_step();
  };
  auto samples = run_protocol(frames_list, cfg, run_one);

  std::vector<BenchRow> rows;
  for (size_t li = 0; li < frames_list.size(); ++li) {
    BenchRow r;
    r.variant = "memory";
    r.n_frames = frames_list[li];
    r.ms_per_frame = trimmed_mean(samples[li], cfg.trim) / frames_list[li];
    r.peak_context_vectors = n_g + n_l;
    rows.push_back(r);
  }
  return rows;
}

void write_csv(const std::vector<BenchRow>& rows, std::ostream& os) {
  os << "variant,n_frames,ms_per_frame,peak_context_vectors\n";
  for (const auto& r : rows)
    os << r.variant << "," << r.n_frames << "," << r.ms_per_frame << ","
       << r.peak_context_vectors << "\n";
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("fit_line: need >= 2 points");
  const int n = static_cast<int>(x.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += x[static_cast<size_t>(i)];
    my += y[static_cast<size_t>(i)];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[static_cast<size_t>(i)] - mx) * (x[static_cast<size_t>(i)] - mx);
    sxy += (x[static_cast<size_t>(i)] - mx) * (y[static_cast<size_t>(i)] - my);
  }
  LineFit f;
  f.n = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (int i = 0; i < n; ++i) {
    const double e = y[static_cast<size_t>(i)] - (f.intercept + f.slope * x[static_cast<size_t>(i)]);
    sse += e * e;
  }
  if (n > 2) f.slope_stderr = std::sqrt(sse / (n - 2) / sxx);
  return f;
}

double slope_ci95(const LineFit& fit) {
  // two-sided t critical values for df = n - 2
  static const double tcrit[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228};
  const int df = fit.n - 2;
  if (df < 1) throw PreconditionError("slope_ci95: not enough points");
  const double t = df <= 10 ? tcrit[df - 1] : 2.0;
  return t * fit.slope_stderr;
}

double ms_per_frame_of(const std::vector<BenchRow>& rows, int n_frames) {
  for (const auto& r : rows)
    if (r.n_frames == n_frames) return r.ms_per_frame;
  throw InputError("bench: no row for " + std::to_string(n_frames) + " frames");
}

}  // namespace locater::bench
