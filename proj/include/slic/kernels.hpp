#pragma once

#include <cstddef>
#include <span>

// Dense row-major matrix kernels used by the autodiff ops.
//
// The top-level functions split work across OpenMP threads by output row,
// so every output element is reduced in the same order regardless of the
// thread count. The `serial` namespace holds the plain triple-loop reference
// the tests and the benchmark compare against.
namespace slic::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);

// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);

// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate = false);

}  // namespace serial
}  // namespace slic::kernels
