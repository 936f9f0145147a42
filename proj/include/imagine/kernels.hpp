#pragma once

// Dense inner loops used by the autodiff primitives.
//
// Each kernel exists twice: a serial reference in `kernels::serial` and an
// OpenMP row-parallel version in `kernels::parallel`. Both accumulate every
// output element over the reduction index in the same order, so they agree
// bit-for-bit; tests/test_kernels.cpp holds them to that.

#include <cstddef>
#include <span>

namespace imagine::kernels {

namespace serial {

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
// c[m,n] = a[k,m]^T * b[k,n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
// Row-wise tanh.
void tanh_forward(std::span<const double> x, std::span<double> y);

}  // namespace serial

namespace parallel {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void tanh_forward(std::span<const double> x, std::span<double> y);

}  // namespace parallel

/// Number of threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace imagine::kernels
