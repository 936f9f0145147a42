#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "imagine/kernels.hpp"

using namespace imagine;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

// Textbook triple loop, kept independent of the kernel code.
double naive_entry(const std::vector<double>& a, const std::vector<double>& b, std::size_t i, std::size_t j,
                   std::size_t k, std::size_t n) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
  return s;
}

}  // namespace

TEST_CASE("serial and parallel matmul kernels agree bit for bit") {
  std::mt19937_64 gen(11);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {64, 75, 128}, {200, 128, 27}}) {
    const auto a = random_values(m * k, gen);
    const auto b = random_values(k * n, gen);
    std::vector<double> cs(m * n), cp(m * n);
    kernels::serial::matmul_nn(a, b, cs, m, k, n);
    kernels::parallel::matmul_nn(a, b, cp, m, k, n);
    CHECK(cs == cp);
    for (std::size_t i = 0; i < m; i += std::max<std::size_t>(1, m / 7))
      for (std::size_t j = 0; j < n; j += std::max<std::size_t>(1, n / 5))
        CHECK(cs[i * n + j] == doctest::Approx(naive_entry(a, b, i, j, k, n)).epsilon(1e-12));

    // a * b^T where b is stored transposed, and a^T * b with a stored transposed.
    std::vector<double> bt(n * k), at(k * m);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];

    std::vector<double> nt_s(m * n), nt_p(m * n), tn_s(m * n), tn_p(m * n);
    kernels::serial::matmul_nt(a, bt, nt_s, m, k, n);
    kernels::parallel::matmul_nt(a, bt, nt_p, m, k, n);
    kernels::serial::matmul_tn(at, b, tn_s, m, k, n);
    kernels::parallel::matmul_tn(at, b, tn_p, m, k, n);
    CHECK(nt_s == nt_p);
    CHECK(tn_s == tn_p);
    for (std::size_t i = 0; i < m * n; ++i) {
      CHECK(nt_s[i] == doctest::Approx(cs[i]).epsilon(1e-12));
      CHECK(tn_s[i] == doctest::Approx(cs[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("tanh kernels agree") {
  std::mt19937_64 gen(3);
  const auto x = random_values(100000, gen);
  std::vector<double> ys(x.size()), yp(x.size());
  kernels::serial::tanh_forward(x, ys);
  kernels::parallel::tanh_forward(x, yp);
  CHECK(ys == yp);
  CHECK(ys[17] == std::tanh(x[17]));
}
