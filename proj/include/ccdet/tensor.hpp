#pragma once

// Dense row-major tensors with reverse-mode gradients.
//
// Conventions used across the project:
//   * row-major storage, channels-last for spatial tensors ([H, W, C])
//   * float for training, double for finite-difference gradient checking
//     (the same op implementations are instantiated for both)
//   * scalars are rank-0 tensors (empty shape, one element)
//
// Every op builds the result value eagerly and, when gradients are enabled
// and some input requires them, records a closure that pulls the result's
// grad and accumulates into the parents' grads. backward() runs the closures
// in reverse topological order. Grads accumulate; callers zero them between
// optimizer steps.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <vector>

#include "ccdet/common.hpp"

namespace ccdet {

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

// RAII guard disabling tape recording (used for inference / perturbed
// re-evaluations inside the finite-difference checker).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backfn;

    std::int64_t numel() const { return shape_numel(shape); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    using Node = TensorNode<T>;
    std::shared_ptr<Node> n;

    Tensor() : n(std::make_shared<Node>()) { n->value.assign(1, T(0)); }
    explicit Tensor(std::shared_ptr<Node> node) : n(std::move(node)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor full(Shape shape, T v) {
        auto node = std::make_shared<Node>();
        node->value.assign(std::size_t(shape_numel(shape)), v);
        node->shape = std::move(shape);
        return Tensor(node);
    }

    static Tensor scalar(T v) { return full({}, v); }

    static Tensor from(Shape shape, std::vector<T> data) {
        if (std::int64_t(data.size()) != shape_numel(shape))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        return Tensor(node);
    }

    static Tensor uniform(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.n->value) v = T(rng.uniform(lo, hi));
        return t;
    }

    static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.n->value) v = T(rng.normal(mean, stddev));
        return t;
    }

    const Shape& shape() const { return n->shape; }
    int rank() const { return int(n->shape.size()); }
    std::int64_t numel() const { return n->numel(); }
    int extent(int axis) const { return n->shape[std::size_t(axis)]; }

    std::vector<T>& data() { return n->value; }
    const std::vector<T>& data() const { return n->value; }
    std::vector<T>& grad() { return n->grad; }
    const std::vector<T>& grad() const { return n->grad; }

    bool requires_grad() const { return n->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        n->requires_grad = b;
        return *this;
    }

    void zero_grad() {
        if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(n->shape));
        return n->value[0];
    }

    T at(std::initializer_list<int> idx) const {
        std::int64_t off = 0;
        std::size_t k = 0;
        for (int i : idx) off = off * n->shape[k] + i, ++k;
        return n->value[std::size_t(off)];
    }

    // Value copy detached from the graph.
    Tensor detach() const {
        auto node = std::make_shared<Node>();
        node->shape = n->shape;
        node->value = n->value;
        return Tensor(node);
    }

    bool all_finite() const {
        for (T v : n->value)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// op plumbing

namespace detail {

template <class T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                  std::function<void(TensorNode<T>&)> backfn) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool track = grad_mode();
    if (track) {
        bool any = false;
        for (auto& p : parents) any = any || p->requires_grad;
        track = any;
    }
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backfn = std::move(backfn);
    }
    return Tensor<T>(node);
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides; broadcast dims (extent 1 where out extent > 1, or missing
// leading dims) get stride 0.
inline std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::int64_t s = 1;
    for (int i = int(shape.size()) - 1; i >= 0; --i) {
        std::size_t oi = out.size() - shape.size() + std::size_t(i);
        st[oi] = (shape[std::size_t(i)] == 1 && out[oi] != 1) ? 0 : s;
        s *= shape[std::size_t(i)];
    }
    return st;
}

// Odometer walk over `out`; calls fn(out_flat, a_off, b_off).
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& fn) {
    const std::int64_t total = shape_numel(out);
    const int r = int(out.size());
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<int> idx(std::size_t(r), 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < total; ++i) {
        fn(i, oa, ob);
        for (int ax = r - 1; ax >= 0; --ax) {
            ++idx[std::size_t(ax)];
            oa += sa[std::size_t(ax)];
            ob += sb[std::size_t(ax)];
            if (idx[std::size_t(ax)] < out[std::size_t(ax)]) break;
            idx[std::size_t(ax)] = 0;
            oa -= sa[std::size_t(ax)] * out[std::size_t(ax)];
            ob -= sb[std::size_t(ax)] * out[std::size_t(ax)];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (numpy-style broadcasting)

namespace detail {

// FwdOp(a,b) -> out; BwdOp(a, b, gout) -> pair(ga_contrib, gb_contrib)
template <class T, class FwdOp, class BwdOp>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdOp fwd, BwdOp bwd) {
    Shape out = broadcast_shapes(a.shape(), b.shape());
    auto sa = broadcast_strides(a.shape(), out);
    auto sb = broadcast_strides(b.shape(), out);
    std::vector<T> value(std::size_t(shape_numel(out)));
    {
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        T* po = value.data();
        for_each_broadcast(out, sa, sb,
                           [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
    }
    auto pa = a.n;
    auto pb = b.n;
    return make_op<T>(
        out, std::move(value), {pa, pb}, [pa, pb, out, sa, sb, bwd](TensorNode<T>& self) {
            const bool ga = pa->requires_grad, gb = pb->requires_grad;
            if (ga) pa->ensure_grad();
            if (gb) pb->ensure_grad();
            const T* av = pa->value.data();
            const T* bv = pb->value.data();
            const T* g = self.grad.data();
            T* pga = ga ? pa->grad.data() : nullptr;
            T* pgb = gb ? pb->grad.data() : nullptr;
            for_each_broadcast(out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                auto [da, db] = bwd(av[ia], bv[ib], g[i]);
                if (pga) pga[ia] += da;
                if (pgb) pgb[ib] += db;
            });
        });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; },
        [](T, T, T g) { return std::pair<T, T>(g, g); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; },
        [](T, T, T g) { return std::pair<T, T>(g, -g); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; },
        [](T x, T y, T g) { return std::pair<T, T>(g * y, g * x); });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x / y; },
        [](T x, T y, T g) { return std::pair<T, T>(g / y, -g * x / (y * y)); });
}

// subgradient: ties route to the first operand
template <class T>
Tensor<T> emin(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x <= y ? x : y; },
        [](T x, T y, T g) { return x <= y ? std::pair<T, T>(g, T(0)) : std::pair<T, T>(T(0), g); });
}

template <class T>
Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T g) { return x >= y ? std::pair<T, T>(g, T(0)) : std::pair<T, T>(T(0), g); });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace detail {

template <class T, class FwdOp, class BwdOp>
Tensor<T> unary_op(const Tensor<T>& a, FwdOp fwd, BwdOp bwd) {
    std::vector<T> value(a.data().size());
    const T* pa = a.data().data();
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = fwd(pa[i]);
    auto pn = a.n;
    return make_op<T>(a.shape(), std::move(value), {pn}, [pn, bwd](TensorNode<T>& self) {
        pn->ensure_grad();
        const T* x = pn->value.data();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        T* gx = pn->grad.data();
        for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += bwd(x[i], y[i], g[i]);
    });
}

}  // namespace detail

template <class T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    return detail::unary_op(
        a, [c](T x) { return T(x * c); }, [c](T, T, T g) { return T(g * c); });
}

template <class T>
Tensor<T> add_const(const Tensor<T>& a, double c) {
    return detail::unary_op(
        a, [c](T x) { return T(x + c); }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> expo(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y, T g) { return g * y * (T(1) - y); });
}

// tanh approximation (closed-form gradient)
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c3 = 0.044715;
    return detail::unary_op(
        a,
        [](T x) {
            double xd = double(x);
            double u = k * (xd + c3 * xd * xd * xd);
            return T(0.5 * xd * (1.0 + std::tanh(u)));
        },
        [](T x, T, T g) {
            double xd = double(x);
            double u = k * (xd + c3 * xd * xd * xd);
            double t = std::tanh(u);
            double du = k * (1.0 + 3.0 * c3 * xd * xd);
            return T(double(g) * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du));
        });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& a, double lo) {
    return detail::unary_op(
        a, [lo](T x) { return x < T(lo) ? T(lo) : x; },
        [lo](T x, T, T g) { return x < T(lo) ? T(0) : g; });
}

// Numerically stable binary cross-entropy from logits; `target` carries no
// gradient. Elementwise output, reduce separately.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
    if (logits.shape() != target.shape())
        throw DimensionError("bce_with_logits shape mismatch: " + shape_str(logits.shape()) + " vs " +
                             shape_str(target.shape()));
    std::vector<T> value(logits.data().size());
    const T* x = logits.data().data();
    const T* z = target.data().data();
    for (std::size_t i = 0; i < value.size(); ++i) {
        double xd = double(x[i]);
        value[i] = T(std::max(xd, 0.0) - xd * double(z[i]) + std::log1p(std::exp(-std::abs(xd))));
    }
    auto pl = logits.n;
    auto pt = target.n;
    return detail::make_op<T>(logits.shape(), std::move(value), {pl, pt}, [pl, pt](TensorNode<T>& self) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const T* x = pl->value.data();
        const T* z = pt->value.data();
        const T* g = self.grad.data();
        T* gx = pl->grad.data();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-double(x[i])));
            gx[i] += T(double(g[i]) * (s - double(z[i])));
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

// Neumaier-compensated accumulation. Keeps large reductions (loss terms,
// softmax normalizers) at correctly-rounded accuracy, which the
// finite-difference harness relies on for functions whose true value is
// constant.
template <class T>
double compensated_sum(const T* v, std::int64_t n, std::int64_t stride = 1) {
    double acc = 0, comp = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = double(v[i * stride]);
        const double t = acc + x;
        comp += std::abs(acc) >= std::abs(x) ? (acc - t) + x : (x - t) + acc;
        acc = t;
    }
    return acc + comp;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    double acc = compensated_sum(a.data().data(), a.numel());
    auto pn = a.n;
    return detail::make_op<T>({}, {T(acc)}, {pn}, [pn](TensorNode<T>& self) {
        pn->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : pn->grad) v += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), 1.0 / double(a.numel()));
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    auto pn = a.n;
    return detail::make_op<T>(std::move(shape), a.data(), {pn}, [pn](TensorNode<T>& self) {
        pn->ensure_grad();
        const T* g = self.grad.data();
        T* gx = pn->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
    });
}

// Swap two axes (materialized copy).
template <class T>
Tensor<T> transpose(const Tensor<T>& a, int ax0, int ax1) {
    const int r = a.rank();
    if (ax0 < 0 || ax0 >= r || ax1 < 0 || ax1 >= r)
        throw DimensionError("transpose axes (" + std::to_string(ax0) + "," + std::to_string(ax1) +
                             ") out of range for " + shape_str(a.shape()));
    Shape out = a.shape();
    std::swap(out[std::size_t(ax0)], out[std::size_t(ax1)]);

    auto strides_of = [](const Shape& s) {
        std::vector<std::int64_t> st(s.size());
        std::int64_t acc = 1;
        for (int i = int(s.size()) - 1; i >= 0; --i) {
            st[std::size_t(i)] = acc;
            acc *= s[std::size_t(i)];
        }
        return st;
    };
    auto in_st = strides_of(a.shape());
    std::vector<std::int64_t> src_st(in_st);
    std::swap(src_st[std::size_t(ax0)], src_st[std::size_t(ax1)]);

    auto permute_copy = [src_st, out](const T* src, T* dst, bool accumulate) {
        const std::int64_t total = shape_numel(out);
        const int rr = int(out.size());
        std::vector<int> idx(std::size_t(rr), 0);
        std::int64_t off = 0;
        for (std::int64_t i = 0; i < total; ++i) {
            if (accumulate)
                dst[off] += src[i];
            else
                dst[i] = src[off];
            for (int ax = rr - 1; ax >= 0; --ax) {
                ++idx[std::size_t(ax)];
                off += src_st[std::size_t(ax)];
                if (idx[std::size_t(ax)] < out[std::size_t(ax)]) break;
                idx[std::size_t(ax)] = 0;
                off -= src_st[std::size_t(ax)] * out[std::size_t(ax)];
            }
        }
    };

    std::vector<T> value(std::size_t(shape_numel(out)));
    permute_copy(a.data().data(), value.data(), false);
    auto pn = a.n;
    return detail::make_op<T>(std::move(out), std::move(value), {pn},
                              [pn, permute_copy](TensorNode<T>& self) {
                                  pn->ensure_grad();
                                  permute_copy(self.grad.data(), pn->grad.data(), true);
                              });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw DimensionError("concat axis " + std::to_string(axis) + " out of range");
    Shape out = parts[0].shape();
    std::int64_t cat = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw DimensionError("concat rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && p.shape()[std::size_t(i)] != out[std::size_t(i)])
                throw DimensionError("concat shape mismatch: " + shape_str(out) + " vs " + shape_str(p.shape()));
        cat += p.shape()[std::size_t(axis)];
    }
    out[std::size_t(axis)] = int(cat);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out[std::size_t(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out[std::size_t(i)];

    std::vector<T> value(std::size_t(shape_numel(out)));
    std::int64_t row = cat * inner;
    std::int64_t off = 0;
    std::vector<std::int64_t> part_off(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) {
        part_off[p] = off;
        const std::int64_t chunk = parts[p].shape()[std::size_t(axis)] * inner;
        const T* src = parts[p].data().data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(value.data() + o * row + off, src + o * chunk, std::size_t(chunk) * sizeof(T));
        off += chunk;
    }

    std::vector<detail::NodePtr<T>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.n);
    auto pcopy = pnodes;
    return detail::make_op<T>(std::move(out), std::move(value), std::move(pnodes),
                              [pcopy, part_off, outer, row](TensorNode<T>& self) {
                                  const T* g = self.grad.data();
                                  for (std::size_t p = 0; p < pcopy.size(); ++p) {
                                      if (!pcopy[p]->requires_grad) continue;
                                      pcopy[p]->ensure_grad();
                                      const std::int64_t chunk = pcopy[p]->numel() / outer;
                                      T* gx = pcopy[p]->grad.data();
                                      for (std::int64_t o = 0; o < outer; ++o) {
                                          const T* gsrc = g + o * row + part_off[p];
                                          T* gdst = gx + o * chunk;
                                          for (std::int64_t i = 0; i < chunk; ++i) gdst[i] += gsrc[i];
                                      }
                                  }
                              });
}

// Contiguous range [start, stop) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int stop) {
    const int r = a.rank();
    if (axis < 0 || axis >= r) throw DimensionError("slice axis " + std::to_string(axis) + " out of range");
    const int extent = a.shape()[std::size_t(axis)];
    if (start < 0 || stop > extent || start >= stop)
        throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(stop) +
                             ") invalid for extent " + std::to_string(extent));
    Shape out = a.shape();
    out[std::size_t(axis)] = stop - start;

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out[std::size_t(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out[std::size_t(i)];
    const std::int64_t in_row = std::int64_t(extent) * inner;
    const std::int64_t out_row = std::int64_t(stop - start) * inner;
    const std::int64_t skip = std::int64_t(start) * inner;

    std::vector<T> value(std::size_t(outer * out_row));
    const T* src = a.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(value.data() + o * out_row, src + o * in_row + skip, std::size_t(out_row) * sizeof(T));

    auto pn = a.n;
    return detail::make_op<T>(std::move(out), std::move(value), {pn},
                              [pn, outer, in_row, out_row, skip](TensorNode<T>& self) {
                                  pn->ensure_grad();
                                  const T* g = self.grad.data();
                                  T* gx = pn->grad.data();
                                  for (std::int64_t o = 0; o < outer; ++o) {
                                      T* dst = gx + o * in_row + skip;
                                      const T* gsrc = g + o * out_row;
                                      for (std::int64_t i = 0; i < out_row; ++i) dst[i] += gsrc[i];
                                  }
                              });
}

// out[r, ...] = a[idx[r], ...]; backward scatter-adds (indices may repeat).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& idx) {
    if (a.rank() < 1) throw DimensionError("gather_rows on scalar");
    const int n0 = a.shape()[0];
    const std::int64_t row = a.numel() / n0;
    for (int i : idx)
        if (i < 0 || i >= n0) throw DimensionError("gather_rows index " + std::to_string(i) + " out of range");
    Shape out = a.shape();
    out[0] = int(idx.size());
    std::vector<T> value(std::size_t(row) * idx.size());
    const T* src = a.data().data();
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::memcpy(value.data() + std::int64_t(r) * row, src + std::int64_t(idx[r]) * row,
                    std::size_t(row) * sizeof(T));
    auto pn = a.n;
    return detail::make_op<T>(std::move(out), std::move(value), {pn}, [pn, idx, row](TensorNode<T>& self) {
        pn->ensure_grad();
        const T* g = self.grad.data();
        T* gx = pn->grad.data();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            T* dst = gx + std::int64_t(idx[r]) * row;
            const T* gsrc = g + std::int64_t(r) * row;
            for (std::int64_t i = 0; i < row; ++i) dst[i] += gsrc[i];
        }
    });
}

// Cyclic roll of a [H, W, C] tensor: out[i, j] = x[(i - dy) mod H, (j - dx) mod W].
template <class T>
Tensor<T> roll2d(const Tensor<T>& a, int dy, int dx) {
    if (a.rank() != 3) throw DimensionError("roll2d expects [H,W,C], got " + shape_str(a.shape()));
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
    std::vector<T> value(a.data().size());
    const T* src = a.data().data();
    for (int i = 0; i < h; ++i) {
        const int si = wrap(i - dy, h);
        for (int j = 0; j < w; ++j) {
            const int sj = wrap(j - dx, w);
            std::memcpy(value.data() + (std::int64_t(i) * w + j) * c,
                        src + (std::int64_t(si) * w + sj) * c, std::size_t(c) * sizeof(T));
        }
    }
    auto pn = a.n;
    return detail::make_op<T>(a.shape(), std::move(value), {pn}, [pn, h, w, c, dy, dx, wrap](TensorNode<T>& self) {
        pn->ensure_grad();
        const T* g = self.grad.data();
        T* gx = pn->grad.data();
        for (int i = 0; i < h; ++i) {
            const int si = wrap(i - dy, h);
            for (int j = 0; j < w; ++j) {
                const int sj = wrap(j - dx, w);
                T* dst = gx + (std::int64_t(si) * w + sj) * c;
                const T* gsrc = g + (std::int64_t(i) * w + j) * c;
                for (int k = 0; k < c; ++k) dst[k] += gsrc[k];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// matmul (batched, broadcastable leading extents)

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul operands must have rank >= 2: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const int m = as[as.size() - 2], k = as[as.size() - 1];
    const int kb = bs[bs.size() - 2], nn = bs[bs.size() - 1];
    if (k != kb)
        throw DimensionError("matmul inner extents disagree: " + shape_str(as) + " vs " + shape_str(bs));

    Shape batch_a(as.begin(), as.end() - 2), batch_b(bs.begin(), bs.end() - 2);
    Shape batch = detail::broadcast_shapes(batch_a, batch_b);
    auto sa = detail::broadcast_strides(batch_a, batch);
    auto sb = detail::broadcast_strides(batch_b, batch);
    // batch strides count matrices, convert to element offsets
    const std::int64_t mat_a = std::int64_t(m) * k, mat_b = std::int64_t(k) * nn, mat_o = std::int64_t(m) * nn;
    for (auto& s : sa) s *= mat_a;
    for (auto& s : sb) s *= mat_b;

    Shape out = batch;
    out.push_back(m);
    out.push_back(nn);
    const std::int64_t nbatch = shape_numel(batch);
    std::vector<T> value(std::size_t(nbatch * mat_o), T(0));

    auto kernel_fwd = [m, k, nn](const T* A, const T* B, T* C) {
        for (int i = 0; i < m; ++i) {
            T* crow = C + std::int64_t(i) * nn;
            const T* arow = A + std::int64_t(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                const T* brow = B + std::int64_t(kk) * nn;
                for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
            }
        }
    };

    {
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        T* po = value.data();
        detail::for_each_broadcast(batch, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            kernel_fwd(pa + ia, pb + ib, po + i * mat_o);
        });
    }

    auto pa = a.n;
    auto pb = b.n;
    return detail::make_op<T>(
        std::move(out), std::move(value), {pa, pb},
        [pa, pb, batch, sa, sb, m, k, nn, mat_o](TensorNode<T>& self) {
            const bool need_a = pa->requires_grad, need_b = pb->requires_grad;
            if (need_a) pa->ensure_grad();
            if (need_b) pb->ensure_grad();
            const T* av = pa->value.data();
            const T* bv = pb->value.data();
            const T* g = self.grad.data();
            T* ga = need_a ? pa->grad.data() : nullptr;
            T* gb = need_b ? pb->grad.data() : nullptr;
            detail::for_each_broadcast(batch, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                const T* G = g + i * mat_o;
                if (ga) {  // dA[i,k] += sum_j G[i,j] * B[k,j]
                    const T* B = bv + ib;
                    T* dA = ga + ia;
                    for (int ii = 0; ii < m; ++ii) {
                        const T* grow = G + std::int64_t(ii) * nn;
                        T* darow = dA + std::int64_t(ii) * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const T* brow = B + std::int64_t(kk) * nn;
                            T acc = T(0);
                            for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                            darow[kk] += acc;
                        }
                    }
                }
                if (gb) {  // dB[k,j] += sum_i A[i,k] * G[i,j]
                    const T* A = av + ia;
                    T* dB = gb + ib;
                    for (int ii = 0; ii < m; ++ii) {
                        const T* arow = A + std::int64_t(ii) * k;
                        const T* grow = G + std::int64_t(ii) * nn;
                        for (int kk = 0; kk < k; ++kk) {
                            const T aval = arow[kk];
                            T* dbrow = dB + std::int64_t(kk) * nn;
                            for (int j = 0; j < nn; ++j) dbrow[j] += aval * grow[j];
                        }
                    }
                }
            });
        });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / conv2x2

// Softmax along `axis` with per-slice max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int r = x.rank();
    if (axis < 0 || axis >= r)
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const int d = x.shape()[std::size_t(axis)];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[std::size_t(i)];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[std::size_t(i)];

    std::vector<T> value(x.data().size());
    const T* src = x.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * d * inner + in;
            T mx = src[base];
            for (int i = 1; i < d; ++i) mx = std::max(mx, src[base + std::int64_t(i) * inner]);
            // extended-precision normalizer keeps each slice's sum within one
            // ulp of 1, which the finite-difference harness depends on
            long double denom = 0;
            for (int i = 0; i < d; ++i) {
                const std::int64_t idx = base + std::int64_t(i) * inner;
                value[std::size_t(idx)] = std::exp(src[idx] - mx);
                denom += value[std::size_t(idx)];
            }
            for (int i = 0; i < d; ++i) {
                const std::int64_t idx = base + std::int64_t(i) * inner;
                value[std::size_t(idx)] = T(value[std::size_t(idx)] / denom);
            }
        }
    }

    auto pn = x.n;
    return detail::make_op<T>(x.shape(), std::move(value), {pn},
                              [pn, outer, inner, d](TensorNode<T>& self) {
                                  pn->ensure_grad();
                                  const T* y = self.value.data();
                                  const T* g = self.grad.data();
                                  T* gx = pn->grad.data();
                                  for (std::int64_t o = 0; o < outer; ++o) {
                                      for (std::int64_t in = 0; in < inner; ++in) {
                                          const std::int64_t base = o * d * inner + in;
                                          double dot = 0, comp = 0;
                                          for (int i = 0; i < d; ++i) {
                                              const std::int64_t idx = base + std::int64_t(i) * inner;
                                              const double x = double(g[idx]) * double(y[idx]);
                                              const double t = dot + x;
                                              comp += std::abs(dot) >= std::abs(x) ? (dot - t) + x : (x - t) + dot;
                                              dot = t;
                                          }
                                          dot += comp;
                                          for (int i = 0; i < d; ++i) {
                                              const std::int64_t idx = base + std::int64_t(i) * inner;
                                              gx[idx] += y[idx] * (g[idx] - T(dot));
                                          }
                                      }
                                  }
                              });
}

// Normalizes the last axis to mean 0 / variance 1, then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
    if (x.rank() < 1) throw DimensionError("layer_norm on scalar");
    const int d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layer_norm gamma/beta must have extent " + std::to_string(d));
    if (eps <= 0) throw ContractError("layer_norm eps must be positive");
    const std::int64_t rows = x.numel() / d;

    std::vector<T> value(x.data().size());
    std::vector<T> xhat(x.data().size());   // saved for backward
    std::vector<T> inv_sd(std::size_t(rows), T(0));
    {
        const T* src = x.data().data();
        const T* gm = gamma.data().data();
        const T* bt = beta.data().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = src + r * d;
            double mu = 0;
            for (int i = 0; i < d; ++i) mu += double(row[i]);
            mu /= d;
            double var = 0;
            for (int i = 0; i < d; ++i) {
                double t = double(row[i]) - mu;
                var += t * t;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_sd[std::size_t(r)] = T(inv);
            for (int i = 0; i < d; ++i) {
                const T xh = T((double(row[i]) - mu) * inv);
                xhat[std::size_t(r * d + i)] = xh;
                value[std::size_t(r * d + i)] = xh * gm[i] + bt[i];
            }
        }
    }

    auto px = x.n;
    auto pg = gamma.n;
    auto pb = beta.n;
    return detail::make_op<T>(
        x.shape(), std::move(value), {px, pg, pb},
        [px, pg, pb, rows, d, xh = std::move(xhat), isd = std::move(inv_sd)](TensorNode<T>& self) {
            const T* g = self.grad.data();
            const T* gm = pg->value.data();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* grow = g + r * d;
                const T* xrow = xh.data() + r * d;
                if (pg->requires_grad || pb->requires_grad) {
                    for (int i = 0; i < d; ++i) {
                        if (pg->requires_grad) pg->grad[std::size_t(i)] += grow[i] * xrow[i];
                        if (pb->requires_grad) pb->grad[std::size_t(i)] += grow[i];
                    }
                }
                if (px->requires_grad) {
                    double mean_gy = 0, mean_gyx = 0;
                    for (int i = 0; i < d; ++i) {
                        const double gy = double(grow[i]) * double(gm[i]);
                        mean_gy += gy;
                        mean_gyx += gy * double(xrow[i]);
                    }
                    mean_gy /= d;
                    mean_gyx /= d;
                    T* gx = px->grad.data() + r * d;
                    const double inv = double(isd[std::size_t(r)]);
                    for (int i = 0; i < d; ++i) {
                        const double gy = double(grow[i]) * double(gm[i]);
                        gx[i] += T((gy - mean_gy - double(xrow[i]) * mean_gyx) * inv);
                    }
                }
            }
        });
}

// 2x2 convolution, stride 1, zero-padded one row at the bottom and one column
// at the right so the spatial extent is preserved.
//   x [H, W, Cin], kernel [2, 2, Cin, Cout], bias [Cout] -> [H, W, Cout]
template <class T>
Tensor<T> conv2x2(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (x.rank() != 3) throw DimensionError("conv2x2 input must be [H,W,C], got " + shape_str(x.shape()));
    if (kernel.rank() != 4 || kernel.shape()[0] != 2 || kernel.shape()[1] != 2)
        throw DimensionError("conv2x2 kernel must be [2,2,Cin,Cout], got " + shape_str(kernel.shape()));
    const int h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
    const int cout = kernel.shape()[3];
    if (kernel.shape()[2] != cin)
        throw DimensionError("conv2x2 channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                             shape_str(kernel.shape()));
    if (bias.numel() != cout) throw DimensionError("conv2x2 bias must have extent " + std::to_string(cout));

    std::vector<T> value(std::size_t(h) * w * cout);
    {
        const T* px = x.data().data();
        const T* pk = kernel.data().data();
        const T* pb = bias.data().data();
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                T* out = value.data() + (std::int64_t(i) * w + j) * cout;
                for (int co = 0; co < cout; ++co) out[co] = pb[co];
                for (int di = 0; di < 2; ++di) {
                    if (i + di >= h) continue;
                    for (int dj = 0; dj < 2; ++dj) {
                        if (j + dj >= w) continue;
                        const T* in = px + (std::int64_t(i + di) * w + (j + dj)) * cin;
                        const T* kk = pk + ((std::int64_t(di) * 2 + dj) * cin) * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const T v = in[ci];
                            const T* krow = kk + std::int64_t(ci) * cout;
                            for (int co = 0; co < cout; ++co) out[co] += v * krow[co];
                        }
                    }
                }
            }
        }
    }

    auto px = x.n;
    auto pk = kernel.n;
    auto pb = bias.n;
    return detail::make_op<T>(
        {h, w, cout}, std::move(value), {px, pk, pb}, [px, pk, pb, h, w, cin, cout](TensorNode<T>& self) {
            const bool nx = px->requires_grad, nk = pk->requires_grad, nb = pb->requires_grad;
            if (nx) px->ensure_grad();
            if (nk) pk->ensure_grad();
            if (nb) pb->ensure_grad();
            const T* g = self.grad.data();
            const T* xv = px->value.data();
            const T* kv = pk->value.data();
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    const T* grow = g + (std::int64_t(i) * w + j) * cout;
                    if (nb)
                        for (int co = 0; co < cout; ++co) pb->grad[std::size_t(co)] += grow[co];
                    for (int di = 0; di < 2; ++di) {
                        if (i + di >= h) continue;
                        for (int dj = 0; dj < 2; ++dj) {
                            if (j + dj >= w) continue;
                            const std::int64_t in_off = (std::int64_t(i + di) * w + (j + dj)) * cin;
                            const std::int64_t k_off = (std::int64_t(di) * 2 + dj) * cin * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                const T* krow = kv + k_off + std::int64_t(ci) * cout;
                                double acc = 0;
                                if (nx) {
                                    for (int co = 0; co < cout; ++co) acc += double(grow[co]) * double(krow[co]);
                                    px->grad[std::size_t(in_off + ci)] += T(acc);
                                }
                                if (nk) {
                                    const T v = xv[in_off + ci];
                                    T* kg = pk->grad.data() + k_off + std::int64_t(ci) * cout;
                                    for (int co = 0; co < cout; ++co) kg[co] += v * grow[co];
                                }
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// backward

template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1 || loss.rank() != 0)
        throw ContractError("backward expects a scalar loss, got shape " + shape_str(loss.shape()));

    // iterative DFS topological order over grad-requiring nodes
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    struct Frame {
        TensorNode<T>* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (loss.n->requires_grad) stack.push_back({loss.n.get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent == 0 && seen.count(f.node)) {
            stack.pop_back();
            continue;
        }
        if (f.next_parent < f.node->parents.size()) {
            TensorNode<T>* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
        } else {
            seen.insert(f.node);
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.n->ensure_grad();
    loss.n->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backfn) {
            node->ensure_grad();
            node->backfn(*node);
        }
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking (run with T = double)

// Central differences against the analytic gradient of f(inputs) (scalar).
// Returns max over all input elements of |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|).
template <class T>
double finite_diff_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                         std::vector<Tensor<T>> inputs, double eps = 1e-5) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<T> out = f(inputs);
    if (out.numel() != 1 || out.rank() != 0)
        throw ContractError("finite_diff_check expects a scalar-valued function, got shape " +
                            shape_str(out.shape()));
    backward(out);

    double worst = 0;
    NoGradGuard ng;
    for (auto& t : inputs) {
        t.n->ensure_grad();
        for (std::size_t i = 0; i < t.data().size(); ++i) {
            const T keep = t.data()[i];
            t.data()[i] = keep + T(eps);
            const double fp = double(f(inputs).item());
            t.data()[i] = keep - T(eps);
            const double fm = double(f(inputs).item());
            t.data()[i] = keep;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = double(t.grad()[i]);
            const double rel = std::abs(analytic - numeric) /
                               std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace ccdet
