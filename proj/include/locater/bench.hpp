#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "locater/errors.hpp"

namespace locater::bench {

// Benchmarks run in float32 (precision is irrelevant to timing) against the
// same kernel templates the library uses. One benchmark runs at a time;
// rounds are interleaved across video lengths so clock drift cannot bias the
// per-length means.
struct BenchConfig {
  int tokens_per_frame = 256;
  int dim = 768;
  int heads = 4;
  int trials = 10;
  int warmup = 5;
  double trim = 0.2;  // fraction trimmed from each end before averaging
  uint64_t seed = 1234;
};

struct BenchRow {
  std::string variant;  // "full" or "memory"
  int n_frames = 0;
  double ms_per_frame = 0.0;
  long long peak_context_vectors = 0;
};

// One transformer encoder block over all n_frames * tokens_per_frame tokens
// flattened together: the quadratic baseline.
std::vector<BenchRow> bench_full(const std::vector<int>& frames_list, const BenchConfig& cfg);

// Per-frame mask embed + local write + attention read against fixed
// N_g = 1.5 T and N_l = 2 T cells: the constant-cost pipeline.
std::vector<BenchRow> bench_memory(const std::vector<int>& frames_list, const BenchConfig& cfg);

void write_csv(const std::vector<BenchRow>& rows, std::ostream& os);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  int n = 0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// 95% confidence interval half-width for the slope (two-sided t, df = n-2).
double slope_ci95(const LineFit& fit);

double ms_per_frame_of(const std::vector<BenchRow>& rows, int n_frames);

}  // namespace locater::bench
