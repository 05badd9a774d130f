#include "handrawer/core/nn.hpp"

#include <cmath>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"

namespace handrawer::nn {

Init Init::he(int fan_in) { return normal(std::sqrt(2.0 / std::max(fan_in, 1))); }

Parameter& ParameterStore::add(const std::string& name, std::vector<int> shape, Init init, bool trainable) {
    if (params_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(std::move(shape));
    p->trainable = trainable;
    switch (init.kind) {
        case InitKind::zeros:
            break;
        case InitKind::ones:
            p->value.fill(1.0);
            break;
        case InitKind::normal: {
            CounterRng rng(seed_, {fnv1a64(name)});
            rng.fill_normal(p->value.values(), init.stddev);
            break;
        }
    }
    Parameter& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
}

Parameter& ParameterStore::get(std::string_view name) {
    Parameter* p = find(name);
    if (!p) throw ValidationError("unknown parameter '" + std::string(name) + "'");
    return *p;
}

const Parameter& ParameterStore::get(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
    return *it->second;
}

Parameter* ParameterStore::find(std::string_view name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& [_, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& [_, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& [_, p] : params_) p->grad = Tensor();
}

void ParameterStore::set_trainable_prefix(std::string_view prefix, bool trainable) {
    for (auto& [name, p] : params_) {
        if (name.compare(0, prefix.size(), prefix) == 0) p->trainable = trainable;
    }
}

std::size_t ParameterStore::count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) {
        if (!trainable_only || p->trainable) n += p->value.size();
    }
    return n;
}

Linear Linear::make(ParameterStore& store, const std::string& name, int in, int out, bool bias, bool zero_init) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = &store.add(name + ".weight", {in, out}, zero_init ? Init::zeros() : Init::normal(1.0 / std::sqrt(in)));
    if (bias) l.bias = &store.add(name + ".bias", {out}, Init::zeros());
    return l;
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, var(weight), var(bias)); }

Conv2d Conv2d::make(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad,
                    bool zero_init, double gain) {
    Conv2d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    const int fan_in = in * kernel * kernel;
    c.weight = &store.add(name + ".weight", {out, fan_in},
                          zero_init ? Init::zeros() : Init::normal(gain / std::sqrt(fan_in)));
    c.bias = &store.add(name + ".bias", {out}, Init::zeros());
    return c;
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
    if (x.dim(0) != in) {
        throw ValidationError("conv '" + weight->name + "' expects " + std::to_string(in) + " channels, got " +
                              std::to_string(x.dim(0)));
    }
    return ag::conv2d(x, var(weight), var(bias), kernel, stride, pad);
}

GroupNorm GroupNorm::make(ParameterStore& store, const std::string& name, int channels, int groups) {
    GroupNorm g;
    g.groups = groups;
    g.gamma = &store.add(name + ".gamma", {channels}, Init::ones());
    g.beta = &store.add(name + ".beta", {channels}, Init::zeros());
    return g;
}

ag::Var GroupNorm::operator()(const ag::Var& x) const {
    return ag::group_norm(x, var(gamma), var(beta), groups, eps);
}

LayerNorm LayerNorm::make(ParameterStore& store, const std::string& name, int width) {
    LayerNorm l;
    l.gamma = &store.add(name + ".gamma", {width}, Init::ones());
    l.beta = &store.add(name + ".beta", {width}, Init::zeros());
    return l;
}

LayerNorm LayerNorm::plain(double eps) {
    LayerNorm l;
    l.eps = eps;
    return l;
}

ag::Var LayerNorm::operator()(const ag::Var& x) const { return ag::layer_norm(x, var(gamma), var(beta), eps); }

MultiHeadAttention MultiHeadAttention::make(ParameterStore& store, const std::string& name, int query_width,
                                            int kv_width, int inner_width, int heads, bool zero_out) {
    if (heads <= 0 || inner_width % heads != 0) {
        throw ValidationError("attention '" + name + "': width " + std::to_string(inner_width) +
                              " not divisible by " + std::to_string(heads) + " heads");
    }
    MultiHeadAttention m;
    m.heads = heads;
    m.q = Linear::make(store, name + ".q", query_width, inner_width, false);
    m.k = Linear::make(store, name + ".k", kv_width, inner_width, false);
    m.v = Linear::make(store, name + ".v", kv_width, inner_width, false);
    m.o = Linear::make(store, name + ".o", inner_width, query_width, true, zero_out);
    return m;
}

ag::Var MultiHeadAttention::operator()(const ag::Var& query, const ag::Var& context) const {
    if (query.dim(1) != q.in || context.dim(1) != k.in) {
        throw ValidationError("attention '" + q.weight->name + "': width mismatch, query " +
                              query.value().shape_str() + " context " + context.value().shape_str());
    }
    return o(ag::attention(q(query), k(context), v(context), heads));
}

Tensor sinusoidal_embedding(double t, int dim) {
    Tensor out({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
        out[static_cast<std::size_t>(i)] = std::sin(t * freq);
        out[static_cast<std::size_t>(i + half)] = std::cos(t * freq);
    }
    return out;
}

}  // namespace handrawer::nn
