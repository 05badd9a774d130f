#include "handrawer/core/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/nn.hpp"
#include "handrawer/simd/kernels.hpp"

namespace handrawer::ag {

namespace {

thread_local bool g_grad_enabled = true;

using simd::Trans;

void require(bool cond, const char* op, const std::string& detail) {
    if (!cond) throw ValidationError(std::string(op) + ": " + detail);
}

void require_same(const Var& a, const Var& b, const char* op) {
    require(a.value().shape() == b.value().shape(), op,
            "shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Var& p : parents) any = any || (p && p.requires_grad());
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(bw);
        }
    }
    return Var(std::move(node));
}

bool wants(const Var& v) { return v && v.requires_grad(); }

Tensor& gbuf(const Var& v) { return v.node()->grad_buffer(); }

}  // namespace

const Tensor& Var::value() const { return node_->value; }
const Tensor& Var::grad() const { return node_->grad; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Node::grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad && g_grad_enabled;
    return Var(std::move(node));
}

Var bind_parameter(nn::Parameter& p) {
    auto node = std::make_shared<Node>();
    node->value = p.value;
    node->requires_grad = p.trainable && g_grad_enabled;
    node->param = &p;
    return Var(std::move(node));
}

void backward(const Var& root, double scale) {
    require(root.value().size() == 1, "backward", "root must be a scalar, got " + root.value().shape_str());
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].node();
            if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += scale;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
    for (Node* n : order) {
        if (n->param && n->param->trainable && n->grad.size() == n->value.size()) {
            nn::Parameter& p = *n->param;
            if (p.grad.size() != p.value.size()) p.grad = Tensor(p.value.shape());
            p.grad += n->grad;
        }
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    out += b.value();
    return make(std::move(out), {a, b}, [](Node& self) {
        for (const Var& p : self.parents) {
            if (wants(p)) gbuf(p) += self.grad;
        }
    });
}

Var add_residual(const Var& a, const Var& b) {
    require_same(a, b, "add_residual");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (bv[i] != 0.0) out[i] += bv[i];
    }
    return make(std::move(out), {a, b}, [](Node& self) {
        for (const Var& p : self.parents) {
            if (wants(p)) gbuf(p) += self.grad;
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    simd::kernels().axpy(out.size(), -1.0, b.value().data(), out.data());
    return make(std::move(out), {a, b}, [](Node& self) {
        if (wants(self.parents[0])) gbuf(self.parents[0]) += self.grad;
        if (wants(self.parents[1])) {
            Tensor& g = gbuf(self.parents[1]);
            simd::kernels().axpy(g.size(), -1.0, self.grad.data(), g.data());
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(std::move(out), {a, b}, [](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (wants(a)) {
            Tensor& g = gbuf(a);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value()[i];
        }
        if (wants(b)) {
            Tensor& g = gbuf(b);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value()[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out *= s;
    return make(std::move(out), {a}, [s](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        simd::kernels().axpy(g.size(), s, self.grad.data(), g.data());
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.storage()) v += s;
    return make(std::move(out), {a}, [](Node& self) { gbuf(self.parents[0]) += self.grad; });
}

namespace {

template <class F, class D>
Var unary(const Var& a, F f, D df) {
    Tensor out = a.value();
    for (double& v : out.storage()) v = f(v);
    return make(std::move(out), {a}, [df](Node& self) {
        const Tensor& x = self.parents[0].value();
        Tensor& g = gbuf(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], self.value[i]);
    });
}

}  // namespace

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var gelu(const Var& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        });
}

Var relu(const Var& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return make(Tensor({1}, s), {a}, [](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        for (double& v : g.storage()) v += self.grad[0];
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return make(Tensor({1}, s / n), {a}, [n](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        const double d = self.grad[0] / n;
        for (double& v : g.storage()) v += d;
    });
}

Var sum_squares(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v * v;
    return make(Tensor({1}, s), {a}, [](Node& self) {
        const Tensor& x = self.parents[0].value();
        Tensor& g = gbuf(self.parents[0]);
        simd::kernels().axpy(g.size(), 2.0 * self.grad[0], x.data(), g.data());
    });
}

Var mse(const Var& a, const Var& b) {
    require_same(a, b, "mse");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return make(Tensor({1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
        const Tensor& av = self.parents[0].value();
        const Tensor& bv = self.parents[1].value();
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        for (int side = 0; side < 2; ++side) {
            const Var& p = self.parents[static_cast<std::size_t>(side)];
            if (!wants(p)) continue;
            Tensor& g = gbuf(p);
            const double sign = side == 0 ? c : -c;
            for (std::size_t i = 0; i < n; ++i) g[i] += sign * (av[i] - bv[i]);
        }
    });
}

Var mean_abs_diff(const Var& a, const Var& b) {
    require_same(a, b, "mean_abs_diff");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
    return make(Tensor({1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
        const Tensor& av = self.parents[0].value();
        const Tensor& bv = self.parents[1].value();
        const double c = self.grad[0] / static_cast<double>(n);
        for (int side = 0; side < 2; ++side) {
            const Var& p = self.parents[static_cast<std::size_t>(side)];
            if (!wants(p)) continue;
            Tensor& g = gbuf(p);
            const double sign = side == 0 ? c : -c;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = av[i] - bv[i];
                g[i] += d > 0.0 ? sign : (d < 0.0 ? -sign : 0.0);
            }
        }
    });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul",
            "incompatible " + A.shape_str() + " x " + B.shape_str());
    const int M = A.dim(0), K = A.dim(1), N = B.dim(1);
    Tensor out({M, N});
    simd::gemm(Trans::no, Trans::no, M, N, K, A.data(), B.data(), out.data(), false);
    return make(std::move(out), {a, b}, [M, N, K](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (wants(a)) simd::gemm(Trans::no, Trans::yes, M, K, N, self.grad.data(), b.value().data(), gbuf(a).data(), true);
        if (wants(b)) simd::gemm(Trans::yes, Trans::no, K, N, M, a.value().data(), self.grad.data(), gbuf(b).data(), true);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "matmul_nt",
            "incompatible " + A.shape_str() + " x " + B.shape_str() + "^T");
    const int M = A.dim(0), K = A.dim(1), N = B.dim(0);
    Tensor out({M, N});
    simd::gemm(Trans::no, Trans::yes, M, N, K, A.data(), B.data(), out.data(), false);
    return make(std::move(out), {a, b}, [M, N, K](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (wants(a)) simd::gemm(Trans::no, Trans::no, M, K, N, self.grad.data(), b.value().data(), gbuf(a).data(), true);
        if (wants(b)) simd::gemm(Trans::yes, Trans::no, N, K, M, self.grad.data(), a.value().data(), gbuf(b).data(), true);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require(X.rank() == 2 && W.rank() == 2 && X.dim(1) == W.dim(0), "linear",
            "input " + X.shape_str() + " incompatible with weight " + W.shape_str());
    const int L = X.dim(0), in = X.dim(1), out_w = W.dim(1);
    Tensor out({L, out_w});
    simd::gemm(Trans::no, Trans::no, L, out_w, in, X.data(), W.data(), out.data(), false);
    if (b) {
        require(b.value().size() == static_cast<std::size_t>(out_w), "linear", "bias size mismatch");
        for (int r = 0; r < L; ++r) {
            simd::kernels().axpy(static_cast<std::size_t>(out_w), 1.0, b.value().data(),
                                 out.data() + static_cast<std::size_t>(r) * out_w);
        }
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(out), std::move(parents), [L, in, out_w](Node& self) {
        const Var& x = self.parents[0];
        const Var& w = self.parents[1];
        if (wants(x)) simd::gemm(Trans::no, Trans::yes, L, in, out_w, self.grad.data(), w.value().data(), gbuf(x).data(), true);
        if (wants(w)) simd::gemm(Trans::yes, Trans::no, in, out_w, L, x.value().data(), self.grad.data(), gbuf(w).data(), true);
        if (self.parents.size() > 2 && wants(self.parents[2])) {
            Tensor& gb = gbuf(self.parents[2]);
            for (int r = 0; r < L; ++r) {
                simd::kernels().axpy(static_cast<std::size_t>(out_w), 1.0,
                                     self.grad.data() + static_cast<std::size_t>(r) * out_w, gb.data());
            }
        }
    });
}

Var add_row_bias(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    require(X.rank() == 2 && b.value().size() == static_cast<std::size_t>(X.dim(1)), "add_row_bias",
            X.shape_str() + " + " + b.value().shape_str());
    const int L = X.dim(0), d = X.dim(1);
    Tensor out = X;
    for (int r = 0; r < L; ++r) {
        simd::kernels().axpy(static_cast<std::size_t>(d), 1.0, b.value().data(), out.data() + static_cast<std::size_t>(r) * d);
    }
    return make(std::move(out), {x, b}, [L, d](Node& self) {
        if (wants(self.parents[0])) gbuf(self.parents[0]) += self.grad;
        if (wants(self.parents[1])) {
            Tensor& gb = gbuf(self.parents[1]);
            for (int r = 0; r < L; ++r) {
                simd::kernels().axpy(static_cast<std::size_t>(d), 1.0, self.grad.data() + static_cast<std::size_t>(r) * d, gb.data());
            }
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    require(X.rank() == 3 && b.value().size() == static_cast<std::size_t>(X.dim(0)), "add_channel_bias",
            X.shape_str() + " + " + b.value().shape_str());
    const int C = X.dim(0);
    const std::size_t hw = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
    Tensor out = X;
    for (int c = 0; c < C; ++c) {
        const double v = b.value()[static_cast<std::size_t>(c)];
        double* p = out.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) p[i] += v;
    }
    return make(std::move(out), {x, b}, [C, hw](Node& self) {
        if (wants(self.parents[0])) gbuf(self.parents[0]) += self.grad;
        if (wants(self.parents[1])) {
            Tensor& gb = gbuf(self.parents[1]);
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                const double* g = self.grad.data() + c * hw;
                for (std::size_t i = 0; i < hw; ++i) s += g[i];
                gb[static_cast<std::size_t>(c)] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make(std::move(out), {a}, [](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        simd::kernels().axpy(g.size(), 1.0, self.grad.data(), g.data());
    });
}

Var transpose2d(const Var& a) {
    const Tensor& A = a.value();
    require(A.rank() == 2, "transpose2d", "expected rank 2, got " + A.shape_str());
    const int R = A.dim(0), C = A.dim(1);
    Tensor out({C, R});
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) out.at(c, r) = A.at(r, c);
    }
    return make(std::move(out), {a}, [R, C](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        for (int r = 0; r < R; ++r) {
            for (int c = 0; c < C; ++c) g.at(r, c) += self.grad.at(c, r);
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows", "no inputs");
    const Tensor& first = parts.front().value();
    const int rank = first.rank();
    require(rank == 2 || rank == 3, "concat_rows", "expected rank 2 or 3");
    std::vector<int> shape = first.shape();
    shape[0] = 0;
    for (const Var& p : parts) {
        const Tensor& t = p.value();
        require(t.rank() == rank, "concat_rows", "rank mismatch");
        for (int i = 1; i < rank; ++i) {
            require(t.dim(i) == first.dim(i), "concat_rows", "trailing shape mismatch " + t.shape_str() + " vs " + first.shape_str());
        }
        shape[0] += t.dim(0);
    }
    Tensor out(shape);
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return make(std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (const Var& p : self.parents) {
            const std::size_t n = p.value().size();
            if (wants(p)) simd::kernels().axpy(n, 1.0, self.grad.data() + off, gbuf(p).data());
            off += n;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    const int L = parts.front().value().dim(0);
    int total = 0;
    for (const Var& p : parts) {
        require(p.value().rank() == 2 && p.value().dim(0) == L, "concat_cols",
                "row count mismatch " + p.value().shape_str());
        total += p.value().dim(1);
    }
    Tensor out({L, total});
    int col = 0;
    for (const Var& p : parts) {
        const int w = p.value().dim(1);
        for (int r = 0; r < L; ++r) {
            std::copy(p.value().data() + static_cast<std::size_t>(r) * w, p.value().data() + static_cast<std::size_t>(r + 1) * w,
                      out.data() + static_cast<std::size_t>(r) * total + col);
        }
        col += w;
    }
    return make(std::move(out), parts, [L, total](Node& self) {
        int col = 0;
        for (const Var& p : self.parents) {
            const int w = p.value().dim(1);
            if (wants(p)) {
                Tensor& g = gbuf(p);
                for (int r = 0; r < L; ++r) {
                    simd::kernels().axpy(static_cast<std::size_t>(w), 1.0,
                                         self.grad.data() + static_cast<std::size_t>(r) * total + col,
                                         g.data() + static_cast<std::size_t>(r) * w);
                }
            }
            col += w;
        }
    });
}

Var slice_rows(const Var& a, int begin, int end) {
    const Tensor& A = a.value();
    require(A.rank() == 2 && begin >= 0 && begin <= end && end <= A.dim(0), "slice_rows",
            "bad range for " + A.shape_str());
    const int d = A.dim(1);
    Tensor out({end - begin, d});
    std::copy(A.data() + static_cast<std::size_t>(begin) * d, A.data() + static_cast<std::size_t>(end) * d, out.data());
    return make(std::move(out), {a}, [begin, d](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        simd::kernels().axpy(self.grad.size(), 1.0, self.grad.data(), g.data() + static_cast<std::size_t>(begin) * d);
    });
}

Var gather(const Var& a, std::vector<int> index, std::vector<int> out_shape) {
    require(Tensor::count(out_shape) == index.size(), "gather", "index count does not match output shape");
    const std::size_t n = a.value().size();
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && static_cast<std::size_t>(index[i]) < n, "gather", "index out of range");
        out[i] = a.value()[static_cast<std::size_t>(index[i])];
    }
    return make(std::move(out), {a}, [idx = std::move(index)](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        for (std::size_t i = 0; i < idx.size(); ++i) g[static_cast<std::size_t>(idx[i])] += self.grad[i];
    });
}

Var sparse_apply(const SparseMatrix& s, const Var& x) {
    Tensor out = s.apply(x.value());
    return make(std::move(out), {x}, [&s](Node& self) { s.apply_transpose_accumulate(self.grad, gbuf(self.parents[0])); });
}

// ------------------------------------------------------------------ image ops

namespace {

struct ConvGeom {
    int C, H, W, k, stride, pad, Ho, Wo;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
    const std::size_t n = static_cast<std::size_t>(g.Ho) * g.Wo;
    for (int c = 0; c < g.C; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                double* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
                for (int oy = 0; oy < g.Ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * g.Wo;
                    if (iy < 0 || iy >= g.H) {
                        std::fill(dst, dst + g.Wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
                    for (int ox = 0; ox < g.Wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix < 0 || ix >= g.W) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const double* cols, const ConvGeom& g, double* x) {
    const std::size_t n = static_cast<std::size_t>(g.Ho) * g.Wo;
    for (int c = 0; c < g.C; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const double* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
                for (int oy = 0; oy < g.Ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    double* dst = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
                    const double* src = row + static_cast<std::size_t>(oy) * g.Wo;
                    for (int ox = 0; ox < g.Wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int kernel, int stride, int pad) {
    const Tensor& X = x.value();
    const Tensor& Wt = w.value();
    require(X.rank() == 3, "conv2d", "input must be C x H x W, got " + X.shape_str());
    ConvGeom g{X.dim(0), X.dim(1), X.dim(2), kernel, stride, pad, 0, 0};
    g.Ho = (g.H + 2 * pad - kernel) / stride + 1;
    g.Wo = (g.W + 2 * pad - kernel) / stride + 1;
    const int O = Wt.dim(0);
    const int K = g.C * kernel * kernel;
    require(Wt.rank() == 2 && Wt.dim(1) == K, "conv2d",
            "weight " + Wt.shape_str() + " does not match input channels " + std::to_string(g.C));
    require(g.Ho > 0 && g.Wo > 0, "conv2d", "empty output");
    const int N = g.Ho * g.Wo;
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * N);
    const bool pointwise = kernel == 1 && stride == 1 && pad == 0;
    const double* colp = X.data();
    if (!pointwise) {
        im2col(X.data(), g, cols->data());
        colp = cols->data();
    } else {
        cols.reset();
    }
    Tensor out({O, g.Ho, g.Wo});
    simd::gemm(Trans::no, Trans::no, O, N, K, Wt.data(), colp, out.data(), false);
    if (b) {
        for (int o = 0; o < O; ++o) {
            const double bv = b.value()[static_cast<std::size_t>(o)];
            double* p = out.data() + static_cast<std::size_t>(o) * N;
            for (int i = 0; i < N; ++i) p[i] += bv;
        }
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    if (!grad_enabled()) cols.reset();
    return make(std::move(out), std::move(parents), [g, O, K, N, cols](Node& self) {
        const Var& x = self.parents[0];
        const Var& w = self.parents[1];
        const double* colp = cols ? cols->data() : x.value().data();
        if (wants(w)) simd::gemm(Trans::no, Trans::yes, O, K, N, self.grad.data(), colp, gbuf(w).data(), true);
        if (self.parents.size() > 2 && wants(self.parents[2])) {
            Tensor& gb = gbuf(self.parents[2]);
            for (int o = 0; o < O; ++o) {
                double s = 0.0;
                const double* p = self.grad.data() + static_cast<std::size_t>(o) * N;
                for (int i = 0; i < N; ++i) s += p[i];
                gb[static_cast<std::size_t>(o)] += s;
            }
        }
        if (wants(x)) {
            if (!cols) {
                simd::gemm(Trans::yes, Trans::no, K, N, O, w.value().data(), self.grad.data(), gbuf(x).data(), true);
            } else {
                std::vector<double> dcols(static_cast<std::size_t>(K) * N);
                simd::gemm(Trans::yes, Trans::no, K, N, O, w.value().data(), self.grad.data(), dcols.data(), false);
                col2im_accumulate(dcols.data(), g, gbuf(x).data());
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    const Tensor& X = x.value();
    require(X.rank() == 3, "group_norm", "input must be C x H x W");
    const int C = X.dim(0);
    require(groups > 0 && C % groups == 0, "group_norm", "channels not divisible by groups");
    const std::size_t hw = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
    const int cpg = C / groups;
    const std::size_t n = hw * cpg;
    Tensor xhat(X.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(groups));
    Tensor out(X.shape());
    for (int gi = 0; gi < groups; ++gi) {
        const double* xp = X.data() + gi * n;
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += xp[i];
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (xp[i] - m) * (xp[i] - m);
        v /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(gi)] = is;
        double* hp = xhat.data() + gi * n;
        for (std::size_t i = 0; i < n; ++i) hp[i] = (xp[i] - m) * is;
    }
    for (int c = 0; c < C; ++c) {
        const double ga = gamma ? gamma.value()[static_cast<std::size_t>(c)] : 1.0;
        const double be = beta ? beta.value()[static_cast<std::size_t>(c)] : 0.0;
        const double* hp = xhat.data() + c * hw;
        double* op = out.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) op[i] = ga * hp[i] + be;
    }
    std::vector<Var> parents{x, gamma, beta};
    return make(std::move(out), std::move(parents),
                [xhat = std::move(xhat), inv_std = std::move(inv_std), C, groups, cpg, hw, n](Node& self) {
                    const Var& x = self.parents[0];
                    const Var& gamma = self.parents[1];
                    const Var& beta = self.parents[2];
                    const Tensor& G = self.grad;
                    for (int c = 0; c < C; ++c) {
                        const double* gp = G.data() + c * hw;
                        const double* hp = xhat.data() + c * hw;
                        if (wants(gamma)) {
                            double s = 0.0;
                            for (std::size_t i = 0; i < hw; ++i) s += gp[i] * hp[i];
                            gbuf(gamma)[static_cast<std::size_t>(c)] += s;
                        }
                        if (wants(beta)) {
                            double s = 0.0;
                            for (std::size_t i = 0; i < hw; ++i) s += gp[i];
                            gbuf(beta)[static_cast<std::size_t>(c)] += s;
                        }
                    }
                    if (!wants(x)) return;
                    Tensor& gx = gbuf(x);
                    std::vector<double> dxhat(n);
                    for (int gi = 0; gi < groups; ++gi) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const int c = gi * cpg + cc;
                            const double ga = gamma ? gamma.value()[static_cast<std::size_t>(c)] : 1.0;
                            const double* gp = G.data() + c * hw;
                            const double* hp = xhat.data() + c * hw;
                            double* dp = dxhat.data() + cc * hw;
                            for (std::size_t i = 0; i < hw; ++i) {
                                dp[i] = gp[i] * ga;
                                mean_d += dp[i];
                                mean_dx += dp[i] * hp[i];
                            }
                        }
                        mean_d /= static_cast<double>(n);
                        mean_dx /= static_cast<double>(n);
                        const double is = inv_std[static_cast<std::size_t>(gi)];
                        const double* hp = xhat.data() + gi * n;
                        double* out = gx.data() + gi * n;
                        for (std::size_t i = 0; i < n; ++i) out[i] += is * (dxhat[i] - mean_d - hp[i] * mean_dx);
                    }
                });
}

Var upsample_nearest2x(const Var& x) {
    const Tensor& X = x.value();
    require(X.rank() == 3, "upsample_nearest2x", "input must be C x H x W");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < 2 * H; ++y) {
            for (int xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = X.at(c, y / 2, xx / 2);
        }
    }
    return make(std::move(out), {x}, [C, H, W](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < 2 * H; ++y) {
                for (int xx = 0; xx < 2 * W; ++xx) g.at(c, y / 2, xx / 2) += self.grad.at(c, y, xx);
            }
        }
    });
}

Var avg_pool2x(const Var& x) {
    const Tensor& X = x.value();
    require(X.rank() == 3 && X.dim(1) % 2 == 0 && X.dim(2) % 2 == 0, "avg_pool2x", "needs even spatial dims");
    const int C = X.dim(0), H = X.dim(1) / 2, W = X.dim(2) / 2;
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                out.at(c, y, xx) = 0.25 * (X.at(c, 2 * y, 2 * xx) + X.at(c, 2 * y, 2 * xx + 1) +
                                           X.at(c, 2 * y + 1, 2 * xx) + X.at(c, 2 * y + 1, 2 * xx + 1));
            }
        }
    }
    return make(std::move(out), {x}, [C, H, W](Node& self) {
        Tensor& g = gbuf(self.parents[0]);
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < 2 * H; ++y) {
                for (int xx = 0; xx < 2 * W; ++xx) g.at(c, y, xx) += 0.25 * self.grad.at(c, y / 2, xx / 2);
            }
        }
    });
}

// ------------------------------------------------------------------ token ops

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& X = x.value();
    require(X.rank() == 2, "layer_norm", "input must be L x d");
    const int L = X.dim(0), d = X.dim(1);
    Tensor xhat(X.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(L));
    Tensor out(X.shape());
    for (int r = 0; r < L; ++r) {
        const double* xp = X.data() + static_cast<std::size_t>(r) * d;
        double m = 0.0;
        for (int i = 0; i < d; ++i) m += xp[i];
        m /= d;
        double v = 0.0;
        for (int i = 0; i < d; ++i) v += (xp[i] - m) * (xp[i] - m);
        v /= d;
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        double* hp = xhat.data() + static_cast<std::size_t>(r) * d;
        double* op = out.data() + static_cast<std::size_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            hp[i] = (xp[i] - m) * is;
            const double ga = gamma ? gamma.value()[static_cast<std::size_t>(i)] : 1.0;
            const double be = beta ? beta.value()[static_cast<std::size_t>(i)] : 0.0;
            op[i] = ga * hp[i] + be;
        }
    }
    return make(std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), inv_std = std::move(inv_std), L, d](Node& self) {
                    const Var& x = self.parents[0];
                    const Var& gamma = self.parents[1];
                    const Var& beta = self.parents[2];
                    std::vector<double> dh(static_cast<std::size_t>(d));
                    for (int r = 0; r < L; ++r) {
                        const double* gp = self.grad.data() + static_cast<std::size_t>(r) * d;
                        const double* hp = xhat.data() + static_cast<std::size_t>(r) * d;
                        if (wants(gamma)) {
                            Tensor& gg = gbuf(gamma);
                            for (int i = 0; i < d; ++i) gg[static_cast<std::size_t>(i)] += gp[i] * hp[i];
                        }
                        if (wants(beta)) {
                            Tensor& gb = gbuf(beta);
                            for (int i = 0; i < d; ++i) gb[static_cast<std::size_t>(i)] += gp[i];
                        }
                        if (!wants(x)) continue;
                        double md = 0.0, mdx = 0.0;
                        for (int i = 0; i < d; ++i) {
                            const double ga = gamma ? gamma.value()[static_cast<std::size_t>(i)] : 1.0;
                            dh[static_cast<std::size_t>(i)] = gp[i] * ga;
                            md += dh[static_cast<std::size_t>(i)];
                            mdx += dh[static_cast<std::size_t>(i)] * hp[i];
                        }
                        md /= d;
                        mdx /= d;
                        const double is = inv_std[static_cast<std::size_t>(r)];
                        double* gx = gbuf(x).data() + static_cast<std::size_t>(r) * d;
                        for (int i = 0; i < d; ++i) gx[i] += is * (dh[static_cast<std::size_t>(i)] - md - hp[i] * mdx);
                    }
                });
}

namespace {

void copy_head(const Tensor& src, int head, int dh, std::vector<double>& dst) {
    const int L = src.dim(0), d = src.dim(1);
    dst.resize(static_cast<std::size_t>(L) * dh);
    for (int r = 0; r < L; ++r) {
        std::copy(src.data() + static_cast<std::size_t>(r) * d + head * dh,
                  src.data() + static_cast<std::size_t>(r) * d + (head + 1) * dh, dst.data() + static_cast<std::size_t>(r) * dh);
    }
}

void add_head(const std::vector<double>& src, int head, int dh, Tensor& dst) {
    const int L = dst.dim(0), d = dst.dim(1);
    for (int r = 0; r < L; ++r) {
        double* p = dst.data() + static_cast<std::size_t>(r) * d + head * dh;
        const double* s = src.data() + static_cast<std::size_t>(r) * dh;
        for (int i = 0; i < dh; ++i) p[i] += s[i];
    }
}

}  // namespace

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    require(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2, "attention", "operands must be rank 2");
    require(Q.dim(1) == K.dim(1) && K.dim(0) == V.dim(0) && V.dim(1) == Q.dim(1), "attention",
            "width mismatch q" + Q.shape_str() + " k" + K.shape_str() + " v" + V.shape_str());
    const int Lq = Q.dim(0), Lk = K.dim(0), d = Q.dim(1);
    require(heads > 0 && d % heads == 0, "attention", "width not divisible by heads");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(heads) * Lq * Lk);
    Tensor out({Lq, d});
    std::vector<double> qh, kh, vh, oh(static_cast<std::size_t>(Lq) * dh);
    for (int h = 0; h < heads; ++h) {
        copy_head(Q, h, dh, qh);
        copy_head(K, h, dh, kh);
        copy_head(V, h, dh, vh);
        double* P = probs->data() + static_cast<std::size_t>(h) * Lq * Lk;
        simd::gemm(Trans::no, Trans::yes, Lq, Lk, dh, qh.data(), kh.data(), P, false);
        for (int r = 0; r < Lq; ++r) {
            double* row = P + static_cast<std::size_t>(r) * Lk;
            double mx = -1e300;
            for (int j = 0; j < Lk; ++j) {
                row[j] *= sc;
                mx = std::max(mx, row[j]);
            }
            double s = 0.0;
            for (int j = 0; j < Lk; ++j) {
                row[j] = std::exp(row[j] - mx);
                s += row[j];
            }
            for (int j = 0; j < Lk; ++j) row[j] /= s;
        }
        simd::gemm(Trans::no, Trans::no, Lq, dh, Lk, P, vh.data(), oh.data(), false);
        add_head(oh, h, dh, out);
    }
    return make(std::move(out), {q, k, v}, [probs, heads, Lq, Lk, dh, sc](Node& self) {
        const Var& q = self.parents[0];
        const Var& k = self.parents[1];
        const Var& v = self.parents[2];
        std::vector<double> qh, kh, vh, goh;
        std::vector<double> dP(static_cast<std::size_t>(Lq) * Lk);
        std::vector<double> tmp_q(static_cast<std::size_t>(Lq) * dh), tmp_k(static_cast<std::size_t>(Lk) * dh);
        for (int h = 0; h < heads; ++h) {
            const double* P = probs->data() + static_cast<std::size_t>(h) * Lq * Lk;
            copy_head(self.grad, h, dh, goh);
            copy_head(v.value(), h, dh, vh);
            if (wants(v)) {
                simd::gemm(Trans::yes, Trans::no, Lk, dh, Lq, P, goh.data(), tmp_k.data(), false);
                add_head(tmp_k, h, dh, gbuf(v));
            }
            if (!wants(q) && !wants(k)) continue;
            simd::gemm(Trans::no, Trans::yes, Lq, Lk, dh, goh.data(), vh.data(), dP.data(), false);
            for (int r = 0; r < Lq; ++r) {
                const double* pr = P + static_cast<std::size_t>(r) * Lk;
                double* dr = dP.data() + static_cast<std::size_t>(r) * Lk;
                double dotp = 0.0;
                for (int j = 0; j < Lk; ++j) dotp += dr[j] * pr[j];
                for (int j = 0; j < Lk; ++j) dr[j] = pr[j] * (dr[j] - dotp) * sc;
            }
            if (wants(q)) {
                copy_head(k.value(), h, dh, kh);
                simd::gemm(Trans::no, Trans::no, Lq, dh, Lk, dP.data(), kh.data(), tmp_q.data(), false);
                add_head(tmp_q, h, dh, gbuf(q));
            }
            if (wants(k)) {
                copy_head(q.value(), h, dh, qh);
                simd::gemm(Trans::yes, Trans::no, Lk, dh, Lq, dP.data(), qh.data(), tmp_k.data(), false);
                add_head(tmp_k, h, dh, gbuf(k));
            }
        }
    });
}

Var region_add(const Var& base, const Var& delta, const Region& region) {
    const Tensor& B = base.value();
    const Tensor& D = delta.value();
    require(B.rank() == 3, "region_add", "base must be C x H x W");
    const int C = B.dim(0), H = B.dim(1), W = B.dim(2);
    require(region.r0 >= 0 && region.r1 <= H && region.c0 >= 0 && region.c1 <= W && region.height() > 0 &&
                region.width() > 0,
            "region_add", "region outside the feature grid");
    require(D.rank() == 2 && D.dim(0) == region.height() * region.width() && D.dim(1) == C, "region_add",
            "delta " + D.shape_str() + " does not cover region with " + std::to_string(C) + " channels");
    Tensor out = B;
    const int rw = region.width();
    for (int r = region.r0; r < region.r1; ++r) {
        for (int c = region.c0; c < region.c1; ++c) {
            const double* dp = D.data() + (static_cast<std::size_t>(r - region.r0) * rw + (c - region.c0)) * C;
            for (int ch = 0; ch < C; ++ch) {
                if (dp[ch] != 0.0) out.at(ch, r, c) += dp[ch];
            }
        }
    }
    return make(std::move(out), {base, delta}, [region, C](Node& self) {
        if (wants(self.parents[0])) gbuf(self.parents[0]) += self.grad;
        if (!wants(self.parents[1])) return;
        Tensor& gd = gbuf(self.parents[1]);
        const int rw = region.width();
        for (int r = region.r0; r < region.r1; ++r) {
            for (int c = region.c0; c < region.c1; ++c) {
                double* dp = gd.data() + (static_cast<std::size_t>(r - region.r0) * rw + (c - region.c0)) * C;
                for (int ch = 0; ch < C; ++ch) dp[ch] += self.grad.at(ch, r, c);
            }
        }
    });
}

}  // namespace handrawer::ag
