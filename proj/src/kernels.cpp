#include "imagine/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imagine::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;

// Columns are produced in blocks held in registers across the whole k loop;
// each output still sums its terms in ascending p order.
constexpr std::size_t kBlock = 8;

inline void row_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  std::size_t j0 = 0;
  for (; j0 + kBlock <= n; j0 += kBlock) {
    double acc[kBlock] = {};
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n + j0;
      for (std::size_t q = 0; q < kBlock; ++q) acc[q] += av * bp[q];
    }
    for (std::size_t q = 0; q < kBlock; ++q) ci[j0 + q] = acc[q];
  }
  for (std::size_t j = j0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * n + j];
    ci[j] = s;
  }
}

inline void row_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t k, std::size_t n) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  // Four outputs at a time give independent dependency chains.
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    const double* b2 = b1 + k;
    const double* b3 = b2 + k;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      s0 += av * b0[p];
      s1 += av * b1[p];
      s2 += av * b2[p];
      s3 += av * b3[p];
    }
    ci[j] = s0;
    ci[j + 1] = s1;
    ci[j + 2] = s2;
    ci[j + 3] = s3;
  }
  for (; j < n; ++j) {
    const double* bj = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
    ci[j] = s;
  }
}

// Rows of a^T b restricted to p in [p0, p1), added onto the current c row.
// Walking p in chunks keeps the touched rows of b cache resident while every
// output row is visited.
constexpr std::size_t kChunk = 64;

inline void row_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t m, std::size_t p0, std::size_t p1, std::size_t n) {
  double* ci = c + i * n;
  std::size_t j0 = 0;
  for (; j0 + kBlock <= n; j0 += kBlock) {
    double acc[kBlock];
    for (std::size_t q = 0; q < kBlock; ++q) acc[q] = ci[j0 + q];
    for (std::size_t p = p0; p < p1; ++p) {
      const double av = a[p * m + i];
      const double* bp = b + p * n + j0;
      for (std::size_t q = 0; q < kBlock; ++q) acc[q] += av * bp[q];
    }
    for (std::size_t q = 0; q < kBlock; ++q) ci[j0 + q] = acc[q];
  }
  for (std::size_t j = j0; j < n; ++j) {
    double s = ci[j];
    for (std::size_t p = p0; p < p1; ++p) s += a[p * m + i] * b[p * n + j];
    ci[j] = s;
  }
}

}  // namespace

namespace serial {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) row_nn(a.data(), b.data(), c.data(), i, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) row_nt(a.data(), b.data(), c.data(), i, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t p0 = 0; p0 < k; p0 += kChunk)
    for (std::size_t i = 0; i < m; ++i) row_tn(a.data(), b.data(), c.data(), i, m, p0, std::min(k, p0 + kChunk), n);
}

void tanh_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
}

}  // namespace serial

namespace parallel {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i) row_nn(pa, pb, pc, static_cast<std::size_t>(i), k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i) row_nt(pa, pb, pc, static_cast<std::size_t>(i), k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
  std::fill(c.begin(), c.end(), 0.0);
#pragma omp parallel if (m * k * n >= kParallelWork)
  for (std::size_t p0 = 0; p0 < k; p0 += kChunk) {
    const std::size_t p1 = std::min(k, p0 + kChunk);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) row_tn(pa, pb, pc, static_cast<std::size_t>(i), m, p0, p1, n);
  }
}

void tanh_forward(std::span<const double> x, std::span<double> y) {
  const long len = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelWork)
  for (long i = 0; i < len; ++i) y[static_cast<std::size_t>(i)] = std::tanh(x[static_cast<std::size_t>(i)]);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace imagine::kernels
