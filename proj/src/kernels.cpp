#include "mhd/kernels.hpp"

#include "mhd/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace mhd::kernels {
namespace {

std::atomic<Backend> g_backend{Backend::parallel};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline void matmul_row(const Matrix& a, const Matrix& b, std::span<const double> bias, Matrix& out,
                       std::size_t i) {
    double* dst = out.data.data() + i * out.cols;
    const std::size_t n = out.cols;
    if (bias.empty())
        std::fill(dst, dst + n, 0.0);
    else
        std::copy(bias.begin(), bias.end(), dst);
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t j = 0; j < n; ++j) dst[j] += aik * brow[j];
    }
}

inline void matmul_tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t m) {
    double* dst = out.data.data() + m * out.cols;
    const std::size_t n = out.cols;
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double akm = a.data[k * a.cols + m];
        if (akm == 0.0) continue;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t j = 0; j < n; ++j) dst[j] += akm * brow[j];
    }
}

inline void softmax_row(const double* z, double* p, std::size_t d) {
    double mx = z[0];
    for (std::size_t k = 1; k < d; ++k) mx = std::max(mx, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        p[k] = std::exp(z[k] - mx);
        sum += p[k];
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < d; ++k) p[k] *= inv;
}

}  // namespace

Backend default_backend() { return g_backend.load(std::memory_order_relaxed); }
void set_default_backend(Backend backend) { g_backend.store(backend, std::memory_order_relaxed); }

void matmul(Backend backend, const Matrix& a, const Matrix& b, std::span<const double> bias, Matrix& out) {
    if (a.cols != b.rows) throw ConfigError("matmul: inner dimension mismatch");
    if (!bias.empty() && bias.size() != b.cols) throw ConfigError("matmul: bias length mismatch");
    if (out.rows != a.rows || out.cols != b.cols) out = Matrix(a.rows, b.cols);
    const auto rows = static_cast<std::ptrdiff_t>(a.rows);
    if (backend == Backend::serial) {
        for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, bias, out, static_cast<std::size_t>(i));
        return;
    }
    const bool big = a.rows * a.cols * b.cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, bias, out, static_cast<std::size_t>(i));
}

void matmul_tn_accumulate(Backend backend, const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows != b.rows) throw ConfigError("matmul_tn: inner dimension mismatch");
    if (out.rows != a.cols || out.cols != b.cols) throw ConfigError("matmul_tn: output shape mismatch");
    const auto rows = static_cast<std::ptrdiff_t>(out.rows);
    if (backend == Backend::serial) {
        for (std::ptrdiff_t m = 0; m < rows; ++m) matmul_tn_row(a, b, out, static_cast<std::size_t>(m));
        return;
    }
    const bool big = a.rows * a.cols * b.cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t m = 0; m < rows; ++m) matmul_tn_row(a, b, out, static_cast<std::size_t>(m));
}

void column_sums_accumulate(const Matrix& a, std::span<double> out) {
    if (out.size() != a.cols) throw ConfigError("column_sums: length mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* r = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) out[j] += r[j];
    }
}

void softmax_rows(Backend backend, const Matrix& logits, Matrix& probs) {
    if (logits.cols == 0) throw InputError("softmax: empty logit rows");
    if (probs.rows != logits.rows || probs.cols != logits.cols) probs = Matrix(logits.rows, logits.cols);
    const auto rows = static_cast<std::ptrdiff_t>(logits.rows);
    const std::size_t d = logits.cols;
    if (backend == Backend::serial) {
        for (std::ptrdiff_t i = 0; i < rows; ++i)
            softmax_row(logits.data.data() + i * d, probs.data.data() + i * d, d);
        return;
    }
    const bool big = logits.size() * 8 >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
        softmax_row(logits.data.data() + i * d, probs.data.data() + i * d, d);
}

}  // namespace mhd::kernels
