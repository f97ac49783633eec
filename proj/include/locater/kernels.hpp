#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "locater/errors.hpp"

// Data-parallel inner kernels. Parallel versions live in locater::kernels and
// split work across OpenMP threads by output row; each output element is still
// produced by one fixed sequential loop, so results are reproducible run to
// run. locater::serial holds naive single-threaded mirrors kept as the
// reference for tests and for the kernel benchmark.

namespace locater::flops {

// Instrumented multiply-accumulate counter. Enabled explicitly by tests that
// assert per-frame work bounds; off by default so kernels stay cheap.
inline std::atomic<long long>& counter() {
  static std::atomic<long long> c{0};
  return c;
}
inline bool& enabled() {
  static bool e = false;
  return e;
}
inline void add(long long n) {
  if (enabled()) counter().fetch_add(n, std::memory_order_relaxed);
}
inline void reset() { counter().store(0); }
inline long long count() { return counter().load(); }

}  // namespace locater::flops

namespace locater::kernels {

constexpr long long kParGrain = 16384;  // below this many MACs, threads don't pay off

// C[M x N] = A[M x K] * B[K x N]  (optionally accumulating into C)
template <class T>
void matmul_nn(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  flops::add(static_cast<long long>(M) * K * N);
  const long long work = static_cast<long long>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParGrain)
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<size_t>(i) * K;
    T* c = C + static_cast<size_t>(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = T(0);
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M x N] = A[M x K] * B[N x K]^T : rows of A dotted with rows of B.
// Four-lane accumulators give ILP without changing results between runs.
template <class T>
void matmul_nt(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  flops::add(static_cast<long long>(M) * K * N);
  const long long work = static_cast<long long>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParGrain)
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<size_t>(i) * K;
    T* c = C + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<size_t>(j) * K;
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      T s = (s0 + s1) + (s2 + s3);
      for (; k < K; ++k) s += a[k] * b[k];
      c[j] = accumulate ? c[j] + s : s;
    }
  }
}

// C[M x N] = A[K x M]^T * B[K x N]
template <class T>
void matmul_tn(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  flops::add(static_cast<long long>(M) * K * N);
  const long long work = static_cast<long long>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParGrain)
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<size_t>(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = T(0);
    for (int k = 0; k < K; ++k) {
      const T av = A[static_cast<size_t>(k) * M + i];
      const T* b = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// Row-wise softmax with max subtraction. `key_mask` (length N, nullable)
// marks columns allowed to receive mass; masked columns come out exactly 0.
template <class T>
void softmax_rows(T* X, int M, int N, const uint8_t* key_mask = nullptr) {
  flops::add(static_cast<long long>(M) * N * 3);
#pragma omp parallel for schedule(static) if (static_cast<long long>(M) * N > kParGrain)
  for (int i = 0; i < M; ++i) {
    T* x = X + static_cast<size_t>(i) * N;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < N; ++j)
      if (!key_mask || key_mask[j])
        if (x[j] > mx) mx = x[j];
    T sum = T(0);
    for (int j = 0; j < N; ++j) {
      if (key_mask && !key_mask[j]) {
        x[j] = T(0);
        continue;
      }
      x[j] = std::exp(x[j] - mx);
      sum += x[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < N; ++j) x[j] *= inv;
  }
}

// O[Nq x Dv] = softmax(scale * Q K^T) V, streamed one query row at a time so
// no Nq x Nv score matrix is ever materialized. Scratch is per-thread.
template <class T>
void attention(const T* Q, const T* K, const T* V, T* O, int Nq, int Nv, int Dk, int Dv,
               T scale, const uint8_t* key_mask = nullptr) {
  flops::add(static_cast<long long>(Nq) * Nv * (Dk + Dv + 3));
  const long long work = static_cast<long long>(Nq) * Nv * (Dk + Dv);
#pragma omp parallel if (work > kParGrain)
  {
    std::vector<T> score(static_cast<size_t>(Nv));
#pragma omp for schedule(static)
    for (int i = 0; i < Nq; ++i) {
      const T* q = Q + static_cast<size_t>(i) * Dk;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < Nv; ++j) {
        if (key_mask && !key_mask[j]) continue;
        const T* k = K + static_cast<size_t>(j) * Dk;
        T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
        int d = 0;
        for (; d + 4 <= Dk; d += 4) {
          s0 += q[d] * k[d];
          s1 += q[d + 1] * k[d + 1];
          s2 += q[d + 2] * k[d + 2];
          s3 += q[d + 3] * k[d + 3];
        }
        T s = (s0 + s1) + (s2 + s3);
        for (; d < Dk; ++d) s += q[d] * k[d];
        s *= scale;
        score[j] = s;
        if (s > mx) mx = s;
      }
      T sum = T(0);
      for (int j = 0; j < Nv; ++j) {
        if (key_mask && !key_mask[j]) {
          score[j] = T(0);
          continue;
        }
        score[j] = std::exp(score[j] - mx);
        sum += score[j];
      }
      const T inv = T(1) / sum;
      T* o = O + static_cast<size_t>(i) * Dv;
      for (int d = 0; d < Dv; ++d) o[d] = T(0);
      for (int j = 0; j < Nv; ++j) {
        const T p = score[j] * inv;
        if (p == T(0)) continue;
        const T* v = V + static_cast<size_t>(j) * Dv;
        for (int d = 0; d < Dv; ++d) o[d] += p * v[d];
      }
    }
  }
}

template <class T>
inline T gelu_scalar(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_scalar(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
void gelu(const T* X, T* Y, int64_t n) {
  flops::add(n);
#pragma omp parallel for schedule(static) if (n > kParGrain)
  for (int64_t i = 0; i < n; ++i) Y[i] = gelu_scalar(X[i]);
}

template <class T>
void sigmoid(const T* X, T* Y, int64_t n) {
  flops::add(n);
#pragma omp parallel for schedule(static) if (n > kParGrain)
  for (int64_t i = 0; i < n; ++i) Y[i] = T(1) / (T(1) + std::exp(-X[i]));
}

// Row-wise layer norm, y = g * (x - mean) / sqrt(var + eps) + b.
template <class T>
void layernorm_rows(const T* X, const T* gain, const T* bias, T* Y, int M, int N, T eps) {
  flops::add(static_cast<long long>(M) * N * 4);
#pragma omp parallel for schedule(static) if (static_cast<long long>(M) * N > kParGrain)
  for (int i = 0; i < M; ++i) {
    const T* x = X + static_cast<size_t>(i) * N;
    T* y = Y + static_cast<size_t>(i) * N;
    T mean = T(0);
    for (int j = 0; j < N; ++j) mean += x[j];
    mean /= T(N);
    T var = T(0);
    for (int j = 0; j < N; ++j) {
      const T d = x[j] - mean;
      var += d * d;
    }
    var /= T(N);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < N; ++j) y[j] = gain[j] * ((x[j] - mean) * inv) + bias[j];
  }
}

}  // namespace locater::kernels

namespace locater::serial {

// Naive single-threaded references. Deliberately the simplest possible loops;
// tests compare these against locater::kernels and the kernel benchmark
// measures the gap.

template <class T>
void matmul_nn(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s = T(0);
      for (int k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
      C[i * N + j] = accumulate ? C[i * N + j] + s : s;
    }
}

template <class T>
void matmul_nt(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s = T(0);
      for (int k = 0; k < K; ++k) s += A[i * K + k] * B[j * K + k];
      C[i * N + j] = accumulate ? C[i * N + j] + s : s;
    }
}

template <class T>
void matmul_tn(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate = false) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s = T(0);
      for (int k = 0; k < K; ++k) s += A[k * M + i] * B[k * N + j];
      C[i * N + j] = accumulate ? C[i * N + j] + s : s;
    }
}

template <class T>
void softmax_rows(T* X, int M, int N, const uint8_t* key_mask = nullptr) {
  for (int i = 0; i < M; ++i) {
    T* x = X + static_cast<size_t>(i) * N;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < N; ++j)
      if ((!key_mask || key_mask[j]) && x[j] > mx) mx = x[j];
    T sum = T(0);
    for (int j = 0; j < N; ++j) {
      if (key_mask && !key_mask[j]) {
        x[j] = T(0);
        continue;
      }
      x[j] = std::exp(x[j] - mx);
      sum += x[j];
    }
    for (int j = 0; j < N; ++j) x[j] /= sum;
  }
}

template <class T>
void attention(const T* Q, const T* K, const T* V, T* O, int Nq, int Nv, int Dk, int Dv,
               T scale, const uint8_t* key_mask = nullptr) {
  std::vector<T> score(static_cast<size_t>(Nq) * Nv);
  for (int i = 0; i < Nq; ++i)
    for (int j = 0; j < Nv; ++j) {
      T s = T(0);
      for (int d = 0; d < Dk; ++d) s += Q[i * Dk + d] * K[j * Dk + d];
      score[static_cast<size_t>(i) * Nv + j] = s * scale;
    }
  softmax_rows(score.data(), Nq, Nv, key_mask);
  for (int i = 0; i < Nq; ++i)
    for (int d = 0; d < Dv; ++d) {
      T s = T(0);
      for (int j = 0; j < Nv; ++j) s += score[static_cast<size_t>(i) * Nv + j] * V[j * Dv + d];
      O[i * Dv + d] = s;
    }
}

}  // namespace locater::serial
