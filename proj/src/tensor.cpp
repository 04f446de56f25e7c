#include "mhd/tensor.hpp"

#include "mhd/error.hpp"

#include <algorithm>

namespace mhd {

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    return t;
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), src.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.rows) throw InputError("gather_rows: row index out of range");
        auto from = src.row(indices[i]);
        std::copy(from.begin(), from.end(), out.row(i).begin());
    }
    return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    if (top.cols != bottom.cols) throw ConfigError("vstack: column count mismatch");
    Matrix out(top.rows + bottom.rows, top.cols);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(top.size()));
    return out;
}

}  // namespace mhd
