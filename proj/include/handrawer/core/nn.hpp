#pragma once
// Named parameters and the small layer set the models are built from.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/tensor.hpp"

namespace handrawer::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

enum class InitKind { zeros, ones, normal };

struct Init {
    InitKind kind = InitKind::zeros;
    double stddev = 0.0;

    static Init zeros() { return {InitKind::zeros, 0.0}; }
    static Init ones() { return {InitKind::ones, 0.0}; }
    static Init normal(double stddev) { return {InitKind::normal, stddev}; }
    // He-normal for a layer with the given fan-in.
    static Init he(int fan_in);
};

// Owns every parameter of a model. Initial values are drawn from a stream
// keyed by (seed, name), so adding or removing a layer never changes the
// initial values of the others.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Parameter& add(const std::string& name, std::vector<int> shape, Init init, bool trainable = true);
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;
    Parameter* find(std::string_view name);
    bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

    // Sorted by name.
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<std::string> names() const;

    void zero_grad();
    void set_trainable_prefix(std::string_view prefix, bool trainable);
    std::size_t count(bool trainable_only = false) const;
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    std::map<std::string, std::unique_ptr<Parameter>, std::less<>> params_;
};

inline ag::Var var(Parameter& p) { return ag::bind_parameter(p); }
inline ag::Var var(Parameter* p) { return p ? ag::bind_parameter(*p) : ag::Var{}; }

struct Linear {
    Parameter* weight = nullptr;  // [in, out]
    Parameter* bias = nullptr;    // [out] or null
    int in = 0;
    int out = 0;

    static Linear make(ParameterStore& store, const std::string& name, int in, int out, bool bias = true,
                       bool zero_init = false);
    ag::Var operator()(const ag::Var& x) const;
};

struct Conv2d {
    Parameter* weight = nullptr;  // [out, in * k * k]
    Parameter* bias = nullptr;    // [out]
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    static Conv2d make(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride,
                       int pad, bool zero_init = false, double gain = 1.0);
    ag::Var operator()(const ag::Var& x) const;
};

struct GroupNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    int groups = 1;
    double eps = 1e-5;

    static GroupNorm make(ParameterStore& store, const std::string& name, int channels, int groups);
    ag::Var operator()(const ag::Var& x) const;
};

struct LayerNorm {
    Parameter* gamma = nullptr;  // null for the parameter-free variant
    Parameter* beta = nullptr;
    double eps = 1e-5;

    static LayerNorm make(ParameterStore& store, const std::string& name, int width);
    static LayerNorm plain(double eps);
    ag::Var operator()(const ag::Var& x) const;
};

struct MultiHeadAttention {
    Linear q, k, v, o;
    int heads = 1;

    static MultiHeadAttention make(ParameterStore& store, const std::string& name, int query_width, int kv_width,
                                   int inner_width, int heads, bool zero_out = false);
    ag::Var operator()(const ag::Var& query, const ag::Var& context) const;
};

// Fixed sinusoidal embedding of a diffusion step, width `dim`.
Tensor sinusoidal_embedding(double t, int dim);

}  // namespace handrawer::nn
