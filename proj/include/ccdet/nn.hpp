#pragma once

// Parameter registry and the small layer zoo (linear, layer-norm,
// multi-head attention) shared by the fusion front-ends and the backbone.
//
// Parameters live in a name-keyed ordered map so iteration, checkpoint
// layout, and optimizer state are all deterministic. Each parameter is
// initialized from its own RNG stream seeded by (model seed, name), so the
// values do not depend on construction order.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccdet/tensor.hpp"

namespace ccdet {

inline std::uint64_t param_seed(std::uint64_t model_seed, const std::string& name) {
    return splitmix64(model_seed ^ fnv1a64(name));
}

template <class T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Xavier-uniform init: U(-sqrt(6/(fan_in+fan_out)), +...).
    Tensor<T> xavier(const std::string& name, Shape shape, int fan_in, int fan_out) {
        RngStream rng(param_seed(seed_, name));
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        return add(name, Tensor<T>::uniform(std::move(shape), rng, -limit, limit));
    }

    Tensor<T> gaussian(const std::string& name, Shape shape, double stddev) {
        RngStream rng(param_seed(seed_, name));
        return add(name, Tensor<T>::randn(std::move(shape), rng, stddev));
    }

    Tensor<T> constant(const std::string& name, Shape shape, double value) {
        return add(name, Tensor<T>::full(std::move(shape), T(value)));
    }

    Tensor<T> add(const std::string& name, Tensor<T> t) {
        if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        params_.emplace(name, t);
        return t;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }

    const std::map<std::string, Tensor<T>>& all() const { return params_; }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

private:
    std::uint64_t seed_;
    std::map<std::string, Tensor<T>> params_;  // ordered => lexicographic iteration
};

// Affine map on the last axis: [..., in] -> [..., out].
template <class T>
struct Linear {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out]
    bool has_bias = true;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& prefix, int in, int out, bool bias = true)
        : has_bias(bias) {
        w = ps.xavier(prefix + ".weight", {in, out}, in, out);
        if (bias) b = ps.constant(prefix + ".bias", {out}, 0.0);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const Shape& s = x.shape();
        if (s.empty() || s.back() != w.shape()[0])
            throw DimensionError("linear expects last extent " + std::to_string(w.shape()[0]) + ", got " +
                                 shape_str(s));
        const int in = w.shape()[0], out = w.shape()[1];
        Shape flat{int(x.numel() / in), in};
        auto y = matmul(reshape(x, flat), w);
        if (has_bias) y = add(y, b);
        Shape outs = s;
        outs.back() = out;
        return reshape(y, outs);
    }
};

template <class T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore<T>& ps, const std::string& prefix, int dim) {
        gamma = ps.constant(prefix + ".gamma", {dim}, 1.0);
        beta = ps.constant(prefix + ".beta", {dim}, 0.0);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Multi-head attention over batched sequences.
//
// Shapes: q [B, L, q_dim], kv [B, L_kv, kv_dim] -> [B, L, out_dim]; the inner
// width splits across heads. An optional additive mask [B, L, L_kv] (or
// broadcastable, e.g. [nW, L, L]) is applied to the logits before softmax.
// Self- and cross-attention differ only in what is passed for kv. When
// record_attn is set, the post-softmax attention probabilities [B, h, L, L_kv]
// of the most recent call are kept (detached) for inspection.
template <class T>
struct MultiHeadAttention {
    int heads = 1;
    int inner = 0;
    Tensor<T> wq, wk, wv, wo;
    bool record_attn = false;
    mutable Tensor<T> last_attn;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& ps, const std::string& prefix, int q_dim, int kv_dim, int inner_dim,
                       int out_dim, int num_heads)
        : heads(num_heads), inner(inner_dim) {
        if (inner_dim % num_heads != 0)
            throw ConfigError("attention width " + std::to_string(inner_dim) + " not divisible by " +
                              std::to_string(num_heads) + " heads");
        wq = ps.xavier(prefix + ".wq", {q_dim, inner_dim}, q_dim, inner_dim);
        wk = ps.xavier(prefix + ".wk", {kv_dim, inner_dim}, kv_dim, inner_dim);
        wv = ps.xavier(prefix + ".wv", {kv_dim, inner_dim}, kv_dim, inner_dim);
        wo = ps.xavier(prefix + ".wo", {inner_dim, out_dim}, inner_dim, out_dim);
    }

    Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& kv, const Tensor<T>* mask = nullptr) const {
        if (q.rank() != 3 || kv.rank() != 3 || q.shape()[0] != kv.shape()[0])
            throw DimensionError("attention expects [B,L,dim] inputs with equal batch: " +
                                 shape_str(q.shape()) + " vs " + shape_str(kv.shape()));
        const int B = q.shape()[0], L = q.shape()[1], Lkv = kv.shape()[1];
        const int dh = inner / heads;

        auto split = [&](const Tensor<T>& x, int len) {
            // [B, len, inner] -> [B, h, len, dh]
            return transpose(reshape(x, {B, len, heads, dh}), 1, 2);
        };
        auto Q = split(linear(q, wq), L);
        auto K = split(linear(kv, wk), Lkv);
        auto V = split(linear(kv, wv), Lkv);

        auto logits = scale(matmul(Q, transpose(K, 2, 3)), 1.0 / std::sqrt(double(dh)));  // [B,h,L,Lkv]
        if (mask) {
            const Shape& ms = mask->shape();
            if (ms.size() != 3 || ms[1] != L || ms[2] != Lkv)
                throw DimensionError("attention mask must be [B,L,Lkv], got " + shape_str(ms));
            logits = add(logits, reshape(*mask, {ms[0], 1, L, Lkv}));
        }
        auto attn = softmax(logits, 3);
        if (record_attn) last_attn = attn.detach();

        auto ctx = transpose(matmul(attn, V), 1, 2);  // [B, L, h, dh]
        return linear(reshape(ctx, {B, L, inner}), wo);
    }

private:
    static Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
        const Shape& s = x.shape();
        const int in = w.shape()[0];
        auto y = matmul(reshape(x, {int(x.numel() / in), in}), w);
        Shape outs = s;
        outs.back() = w.shape()[1];
        return reshape(y, outs);
    }
};

}  // namespace ccdet
