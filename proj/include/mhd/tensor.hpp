#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace mhd {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix transpose(const Matrix& m);

// Rows `indices` of `src`, in the given order.
Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices);

// Vertical concatenation; both operands must have the same column count.
Matrix vstack(const Matrix& top, const Matrix& bottom);

}  // namespace mhd
