#include "handrawer/core/sparse.hpp"

#include <algorithm>

#include "handrawer/core/errors.hpp"
#include "handrawer/simd/kernels.hpp"

namespace handrawer {

SparseMatrix SparseMatrix::from_triplets(int rows, int cols, std::vector<Triplet> triplets) {
    for (const Triplet& t : triplets) {
        if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
            throw ValidationError("sparse triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                                  ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
        }
    }
    std::stable_sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    SparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const Triplet& t = triplets[i];
        if (!m.col_idx.empty() && i > 0 && triplets[i - 1].row == t.row && triplets[i - 1].col == t.col) {
            m.values.back() += t.value;
            continue;
        }
        m.col_idx.push_back(t.col);
        m.values.push_back(t.value);
        m.row_ptr[static_cast<std::size_t>(t.row) + 1] += 1;
    }
    for (int r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
    return m;
}

SparseMatrix SparseMatrix::identity(int n) {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t));
}

Tensor SparseMatrix::apply(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(0) != cols) {
        throw ValidationError("sparse apply: operand " + x.shape_str() + " incompatible with " +
                              std::to_string(rows) + "x" + std::to_string(cols));
    }
    const int d = x.dim(1);
    Tensor y({rows, d});
    const auto& k = simd::kernels();
    for (int r = 0; r < rows; ++r) {
        double* out = y.data() + static_cast<std::size_t>(r) * d;
        for (int p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
            k.axpy(static_cast<std::size_t>(d), values[p], x.data() + static_cast<std::size_t>(col_idx[p]) * d, out);
        }
    }
    return y;
}

void SparseMatrix::apply_transpose_accumulate(const Tensor& g, Tensor& x) const {
    const int d = g.dim(1);
    const auto& k = simd::kernels();
    for (int r = 0; r < rows; ++r) {
        const double* gr = g.data() + static_cast<std::size_t>(r) * d;
        for (int p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
            k.axpy(static_cast<std::size_t>(d), values[p], gr, x.data() + static_cast<std::size_t>(col_idx[p]) * d);
        }
    }
}

Tensor SparseMatrix::to_dense() const {
    Tensor t({rows, cols});
    for (int r = 0; r < rows; ++r) {
        for (int p = row_ptr[r]; p < row_ptr[r + 1]; ++p) t.at(r, col_idx[p]) += values[p];
    }
    return t;
}

double SparseMatrix::row_sum(int r) const {
    double s = 0.0;
    for (int p = row_ptr[r]; p < row_ptr[r + 1]; ++p) s += values[p];
    return s;
}

}  // namespace handrawer
