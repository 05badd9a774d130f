#pragma once
// Tape-free reverse-mode differentiation over Tensor values.
//
// Each op returns a Var holding its value plus, when gradients are enabled
// and an input requires one, a closure that pushes the output gradient into
// its inputs. backward() walks the graph in reverse topological order and
// finally adds leaf gradients into their bound nn::Parameter.

#include <functional>
#include <memory>
#include <vector>

#include "handrawer/core/sparse.hpp"
#include "handrawer/core/tensor.hpp"

namespace handrawer::nn {
struct Parameter;
}

namespace handrawer::ag {

struct Node;

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    const std::vector<int>& shape() const { return value().shape(); }
    int dim(int i) const { return value().dim(i); }
    Node* node() const noexcept { return node_.get(); }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;
    nn::Parameter* param = nullptr;

    Tensor& grad_buffer();
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);
Var bind_parameter(nn::Parameter& p);

// Seeds d(root)/d(root) = scale; root must hold a single element.
void backward(const Var& root, double scale = 1.0);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
// a + b, except that exact-zero entries of b leave a's bits untouched.
Var add_residual(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);

// ---- reductions (scalar results, shape [1]) ----
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);
Var mse(const Var& a, const Var& b);
Var mean_abs_diff(const Var& a, const Var& b);

// ---- linear algebra on rank-2 values ----
Var matmul(const Var& a, const Var& b);      // [M,K] x [K,N]
Var matmul_nt(const Var& a, const Var& b);   // [M,K] x [N,K]^T
Var linear(const Var& x, const Var& w, const Var& b);  // x[L,in] w[in,out] + b[out]; b may be empty
Var add_row_bias(const Var& x, const Var& b);           // x[L,d] + b[d]
Var add_channel_bias(const Var& x, const Var& b);       // x[C,H,W] + b[C]

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var transpose2d(const Var& a);
Var concat_rows(const std::vector<Var>& parts);  // rank-2 along dim 0, or rank-3 along channels
Var concat_cols(const std::vector<Var>& parts);  // rank-2 along dim 1
Var slice_rows(const Var& a, int begin, int end);
// out[i] = a[index[i]]; gradients scatter-add back.
Var gather(const Var& a, std::vector<int> index, std::vector<int> out_shape);
Var sparse_apply(const SparseMatrix& s, const Var& x);  // S[R,C] x[C,d]

// ---- image ops on C x H x W ----
Var conv2d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps);
Var upsample_nearest2x(const Var& x);
Var avg_pool2x(const Var& x);

// ---- token ops on L x d ----
// gamma/beta may be empty for a parameter-free normalization.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var attention(const Var& q, const Var& k, const Var& v, int heads);

struct Region {
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    int height() const noexcept { return r1 - r0; }
    int width() const noexcept { return c1 - c0; }
    bool contains(int r, int c) const noexcept { return r >= r0 && r < r1 && c >= c0 && c < c1; }
};

// base[C,H,W] with delta[(r1-r0)*(c1-c0), C] (row-major cells) added inside
// the region; cells outside the region are copied bit-for-bit.
Var region_add(const Var& base, const Var& delta, const Region& region);

}  // namespace handrawer::ag
