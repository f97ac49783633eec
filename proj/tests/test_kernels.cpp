#include <doctest.h>

#include <vector>

#include "locater/kernels.hpp"
#include "locater/rng.hpp"

using namespace locater;

namespace {

std::vector<double> randv(int64_t n, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel matmul variants match the serial reference") {
  Rng rng(7);
  for (auto [m, k, n] : {std::tuple{3, 5, 4}, std::tuple{17, 33, 9}, std::tuple{64, 32, 64}}) {
    auto a = randv(static_cast<int64_t>(m) * k, rng);
    auto b_nn = randv(static_cast<int64_t>(k) * n, rng);
    auto b_nt = randv(static_cast<int64_t>(n) * k, rng);
    auto a_tn = randv(static_cast<int64_t>(k) * m, rng);
    std::vector<double> c1(static_cast<size_t>(m) * n), c2(static_cast<size_t>(m) * n);

    kernels::matmul_nn(a.data(), b_nn.data(), c1.data(), m, k, n);
    serial::matmul_nn(a.data(), b_nn.data(), c2.data(), m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-11);

    kernels::matmul_nt(a.data(), b_nt.data(), c1.data(), m, k, n);
    serial::matmul_nt(a.data(), b_nt.data(), c2.data(), m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-11);

    kernels::matmul_tn(a_tn.data(), b_nn.data(), c1.data(), m, k, n);
    serial::matmul_tn(a_tn.data(), b_nn.data(), c2.data(), m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-11);
  }
}

TEST_CASE("matmul accumulate adds onto existing output") {
  Rng rng(3);
  const int m = 4, k = 6, n = 5;
  auto a = randv(m * k, rng);
  auto b = randv(k * n, rng);
  std::vector<double> base = randv(m * n, rng);
  std::vector<double> c = base;
  kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n, true);
  std::vector<double> prod(static_cast<size_t>(m) * n);
  serial::matmul_nn(a.data(), b.data(), prod.data(), m, k, n);
  for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(base[i] + prod[i]).epsilon(1e-12));
}

TEST_CASE("streamed attention matches the serial two-pass reference") {
  Rng rng(11);
  const int nq = 9, nv = 13, dk = 8, dv = 6;
  auto q = randv(nq * dk, rng);
  auto k = randv(nv * dk, rng);
  auto v = randv(nv * dv, rng);
  std::vector<double> o1(static_cast<size_t>(nq) * dv), o2(static_cast<size_t>(nq) * dv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  kernels::attention(q.data(), k.data(), v.data(), o1.data(), nq, nv, dk, dv, scale);
  serial::attention(q.data(), k.data(), v.data(), o2.data(), nq, nv, dk, dv, scale);
  CHECK(max_abs_diff(o1, o2) < 1e-12);

  // masked keys receive no mass in either implementation
  std::vector<uint8_t> mask(nv, 1);
  mask[0] = mask[5] = 0;
  kernels::attention(q.data(), k.data(), v.data(), o1.data(), nq, nv, dk, dv, scale, mask.data());
  serial::attention(q.data(), k.data(), v.data(), o2.data(), nq, nv, dk, dv, scale, mask.data());
  CHECK(max_abs_diff(o1, o2) < 1e-12);
}

TEST_CASE("softmax rows sum to one and respect the key mask") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = rng.uniform_int(1, 8), n = rng.uniform_int(1, 12);
    auto x = randv(static_cast<int64_t>(m) * n, rng);
    for (auto& v : x) v *= 50.0;  // spread logits; max-subtraction keeps this stable
    kernels::softmax_rows(x.data(), m, n);
    for (int i = 0; i < m; ++i) {
      double s = 0;
      for (int j = 0; j < n; ++j) s += x[static_cast<size_t>(i) * n + j];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("flop counter accumulates only while enabled") {
  Rng rng(1);
  const int m = 8, k = 8, n = 8;
  auto a = randv(m * k, rng);
  auto b = randv(k * n, rng);
  std::vector<double> c(static_cast<size_t>(m) * n);
  flops::enabled() = false;
  flops::reset();
  kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
  CHECK(flops::count() == 0);
  flops::enabled() = true;
  flops::reset();
  kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
  CHECK(flops::count() == static_cast<long long>(m) * k * n);
  flops::enabled() = false;
}

TEST_CASE("attention flop model is quadratic in token count") {
  // the attention-matrix work at 100 vs 15 frames of equal-size token groups
  // scales by (100/15)^2 on the quadratic term
  const int t_tokens = 4, dk = 8, dv = 8;
  Rng rng(2);
  auto count_for = [&](int frames) {
    const int n = frames * t_tokens;
    auto q = randv(static_cast<int64_t>(n) * dk, rng);
    auto v = randv(static_cast<int64_t>(n) * dv, rng);
    std::vector<double> o(static_cast<size_t>(n) * dv);
    flops::enabled() = true;
    flops::reset();
    kernels::attention(q.data(), q.data(), v.data(), o.data(), n, n, dk, dv, 1.0);
    const long long c = flops::count();
    flops::enabled() = false;
    return static_cast<double>(c);
  };
  const double ratio = count_for(100) / count_for(15);
  CHECK(ratio == doctest::Approx((100.0 * 100.0) / (15.0 * 15.0)).epsilon(1e-12));
}
