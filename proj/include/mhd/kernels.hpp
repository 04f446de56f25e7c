#pragma once

#include "mhd/tensor.hpp"

#include <span>

// Dense compute kernels. Every kernel exists twice: a serial reference and an
// OpenMP version that partitions work by output row. Each output element is
// reduced in the same sequential order in both, so the two are bit-identical.
namespace mhd::kernels {

enum class Backend { serial, parallel };

// Process-wide backend used by the nn layer. Defaults to parallel.
Backend default_backend();
void set_default_backend(Backend backend);

// out[M×N] = a[M×K] · b[K×N] + bias (bias broadcast over rows; may be empty).
void matmul(Backend backend, const Matrix& a, const Matrix& b, std::span<const double> bias, Matrix& out);

// out[M×N] += a[K×M]ᵀ · b[K×N]
void matmul_tn_accumulate(Backend backend, const Matrix& a, const Matrix& b, Matrix& out);

// out[j] += Σ_i a(i, j)
void column_sums_accumulate(const Matrix& a, std::span<double> out);

// Row-wise numerically stable softmax.
void softmax_rows(Backend backend, const Matrix& logits, Matrix& probs);

namespace serial {
inline void matmul(const Matrix& a, const Matrix& b, std::span<const double> bias, Matrix& out) {
    kernels::matmul(Backend::serial, a, b, bias, out);
}
inline void matmul_tn_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    kernels::matmul_tn_accumulate(Backend::serial, a, b, out);
}
inline void softmax_rows(const Matrix& logits, Matrix& probs) {
    kernels::softmax_rows(Backend::serial, logits, probs);
}
}  // namespace serial

namespace parallel {
inline void matmul(const Matrix& a, const Matrix& b, std::span<const double> bias, Matrix& out) {
    kernels::matmul(Backend::parallel, a, b, bias, out);
}
inline void matmul_tn_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    kernels::matmul_tn_accumulate(Backend::parallel, a, b, out);
}
inline void softmax_rows(const Matrix& logits, Matrix& probs) {
    kernels::softmax_rows(Backend::parallel, logits, probs);
}
}  // namespace parallel

}  // namespace mhd::kernels
