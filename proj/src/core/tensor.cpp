#include "handrawer/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "handrawer/core/errors.hpp"
#include "handrawer/simd/kernels.hpp"

namespace handrawer {

std::size_t Tensor::count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ValidationError("negative dimension in shape " + handrawer::shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
        throw ValidationError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                              handrawer::shape_str(shape_));
    }
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) {
        throw ValidationError("cannot reshape " + shape_str() + " to " + handrawer::shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

std::string Tensor::shape_str() const { return handrawer::shape_str(shape_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.size() != size()) {
        throw ValidationError("shape mismatch in += : " + shape_str() + " vs " + other.shape_str());
    }
    simd::kernels().axpy(size(), 1.0, other.data(), data());
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ValidationError("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace handrawer
