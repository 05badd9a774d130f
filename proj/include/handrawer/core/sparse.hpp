#pragma once

#include <vector>

#include "handrawer/core/tensor.hpp"

namespace handrawer {

// Fixed linear operator in CSR form. Used for graph adjacency, bilinear
// resampling, token pooling and vertex-group pooling.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr{0};
    std::vector<int> col_idx;
    std::vector<double> values;

    struct Triplet {
        int row;
        int col;
        double value;
    };

    // Duplicate (row, col) entries are summed; rows keep column order.
    static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> triplets);
    static SparseMatrix identity(int n);

    std::size_t nnz() const noexcept { return values.size(); }

    // Y[rows, d] = S * X[cols, d]
    Tensor apply(const Tensor& x) const;
    // X[cols, d] += S^T * G[rows, d]
    void apply_transpose_accumulate(const Tensor& g, Tensor& x) const;

    Tensor to_dense() const;
    double row_sum(int r) const;
};

}  // namespace handrawer
