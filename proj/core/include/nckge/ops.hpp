#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nckge/rng.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

using IdArray = std::vector<int32_t>;
using Offsets = std::vector<int64_t>;

// Mask roles for batched loss/score ops. Ignored candidates take part in
// neither a loss nor its score normalization.
enum MaskValue : int8_t { kMaskNeg = 0, kMaskPos = 1, kMaskIgnore = 2 };
using Mask = std::vector<int8_t>;

namespace detail {

inline void axis_slices(const Shape& shape, int axis, int64_t& outer, int64_t& len, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    len = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

inline void check_axis(const Shape& shape, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
}

/// C[M x N] += opA[M x K] * opB[K x N]; trans flags describe the physical
/// layout of A and B relative to the logical operand.
template <class S>
void mm_acc(S* c, const S* a, const S* b, int64_t m, int64_t n, int64_t k,
            bool trans_a, bool trans_b, int workers) {
    auto a_at = [=](int64_t i, int64_t p) { return trans_a ? a[p * m + i] : a[i * k + p]; };
    if (!trans_b) {
        parallel_for(workers, m, [=](int64_t begin, int64_t end) {
            for (int64_t i = begin; i < end; ++i) {
                S* crow = c + i * n;
                for (int64_t p = 0; p < k; ++p) {
                    const S av = a_at(i, p);
                    if (av == S(0)) continue;
                    const S* brow = b + p * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        });
    } else {
        parallel_for(workers, m, [=](int64_t begin, int64_t end) {
            for (int64_t i = begin; i < end; ++i) {
                S* crow = c + i * n;
                for (int64_t j = 0; j < n; ++j) {
                    const S* brow = b + j * k;
                    S acc = S(0);
                    for (int64_t p = 0; p < k; ++p) acc += a_at(i, p) * brow[p];
                    crow[j] += acc;
                }
            }
        });
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> out(a.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    g.check_finite("add", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out]() mutable {
            const S* go = out.grad();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < out.numel(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < out.numel(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sub(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    g.check_finite("sub", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out]() mutable {
            const S* go = out.grad();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < out.numel(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < out.numel(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> mul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    g.check_finite("mul", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out]() mutable {
            const S* go = out.grad();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < out.numel(); ++i) ga[i] += go[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < out.numel(); ++i) gb[i] += go[i] * a.data()[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> scale(Graph<S>& g, const Tensor<S>& a, S c) {
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * c;
    g.check_finite("scale", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, c]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t i = 0; i < out.numel(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

template <class S>
Tensor<S> relu(Graph<S>& g, const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
    g.check_finite("relu", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t i = 0; i < out.numel(); ++i)
                if (a.data()[i] > S(0)) ga[i] += go[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> abs_op(Graph<S>& g, const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::abs(a.data()[i]);
    g.check_finite("abs", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t i = 0; i < out.numel(); ++i) {
                const S x = a.data()[i];
                if (x > S(0)) ga[i] += go[i];
                else if (x < S(0)) ga[i] -= go[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sum(Graph<S>& g, const Tensor<S>& a) {
    S acc = S(0);
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    Tensor<S> out = Tensor<S>::scalar_tensor(acc);
    g.check_finite("sum", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out]() mutable {
            const S go = out.grad()[0];
            S* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += go;
        });
    }
    return out;
}

template <class S>
Tensor<S> mean(Graph<S>& g, const Tensor<S>& a) {
    return scale(g, sum(g, a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// matrix / structure
// ---------------------------------------------------------------------------

/// 2-D matrix product; trans flags interpret the stored operand as transposed.
template <class S>
Tensor<S> matmul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b,
                 bool trans_a = false, bool trans_b = false) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t m = trans_a ? a.dim(1) : a.dim(0);
    const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
    const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
    const int64_t n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
    Tensor<S> out(Shape{m, n});
    const int workers = g.workers();
    detail::mm_acc(out.data(), a.data(), b.data(), m, n, ka, trans_a, trans_b, workers);
    g.check_finite("matmul", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out, m, n, k = ka, trans_a, trans_b, workers]() mutable {
            const S* go = out.grad();
            if (a.requires_grad()) {
                if (!trans_a)  // dA[m x k] = dC * opB^T
                    detail::mm_acc(a.grad(), go, b.data(), m, k, n, false, !trans_b, workers);
                else  // dA stored [k x m] = opB * dC^T
                    detail::mm_acc(a.grad(), b.data(), go, k, m, n, trans_b, true, workers);
            }
            if (b.requires_grad()) {
                if (!trans_b)  // dB[k x n] = opA^T * dC
                    detail::mm_acc(b.grad(), a.data(), go, k, n, m, !trans_a, false, workers);
                else  // dB stored [n x k] = dC^T * opA
                    detail::mm_acc(b.grad(), go, a.data(), n, k, m, true, trans_a, workers);
            }
        });
    }
    return out;
}

/// Row-broadcast bias add: [N x D] + [D].
template <class S>
Tensor<S> add_bias(Graph<S>& g, const Tensor<S>& m, const Tensor<S>& bias) {
    if (m.rank() != 2 || bias.rank() != 1 || m.dim(1) != bias.dim(0))
        throw ShapeError("add_bias: incompatible shapes " + shape_str(m.shape()) + " and " +
                         shape_str(bias.shape()));
    Tensor<S> out(m.shape());
    const int64_t rows = m.dim(0), cols = m.dim(1);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.data()[r * cols + c] = m.data()[r * cols + c] + bias.data()[c];
    g.check_finite("add_bias", out);
    if (g.wants_grad(m, bias)) {
        out.set_requires_grad(true);
        g.record(out, [m, bias, out, rows, cols]() mutable {
            const S* go = out.grad();
            if (m.requires_grad()) {
                S* gm = m.grad();
                for (int64_t i = 0; i < rows * cols; ++i) gm[i] += go[i];
            }
            if (bias.requires_grad()) {
                S* gb = bias.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) gb[c] += go[r * cols + c];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> reshape(Graph<S>& g, const Tensor<S>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor<S> out = Tensor<S>::from(std::move(shape), a.values());
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> concat(Graph<S>& g, const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& p0 = parts.front().shape();
    detail::check_axis(p0, axis, "concat");
    Shape out_shape = p0;
    out_shape[static_cast<size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(p0.size()))
            throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < p.rank(); ++i)
            if (i != axis && p.dim(i) != p0[static_cast<size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(p0));
        out_shape[static_cast<size_t>(axis)] += p.dim(axis);
    }
    Tensor<S> out(out_shape);
    int64_t outer, total_len, inner;
    detail::axis_slices(out_shape, axis, outer, total_len, inner);
    int64_t col = 0;
    bool any_grad = false;
    std::vector<int64_t> offsets_in_axis;
    for (const auto& p : parts) {
        offsets_in_axis.push_back(col);
        const int64_t len = p.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(p.data() + o * len * inner, len * inner,
                        out.data() + (o * total_len + col) * inner);
        col += len;
        any_grad = any_grad || p.requires_grad();
    }
    g.check_finite("concat", out);
    if (g.grad_enabled() && any_grad) {
        out.set_requires_grad(true);
        g.record(out, [parts, out, offsets_in_axis, outer, total_len, inner, axis]() mutable {
            const S* go = out.grad();
            for (size_t pi = 0; pi < parts.size(); ++pi) {
                auto& p = parts[pi];
                if (!p.requires_grad()) continue;
                const int64_t len = p.dim(axis);
                S* gp = p.grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const S* src = go + (o * total_len + offsets_in_axis[pi]) * inner;
                    S* dst = gp + o * len * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

/// Column slice of a rank-2 tensor.
template <class S>
Tensor<S> slice_cols(Graph<S>& g, const Tensor<S>& a, int64_t start, int64_t len) {
    if (a.rank() != 2) throw ShapeError("slice_cols: expects rank-2, got " + shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    if (start < 0 || len <= 0 || start + len > cols)
        throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + shape_str(a.shape()));
    Tensor<S> out(Shape{rows, len});
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(a.data() + r * cols + start, len, out.data() + r * len);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, start, len, rows, cols]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < len; ++c) ga[r * cols + start + c] += go[r * len + c];
        });
    }
    return out;
}

/// Row gather from a [N x D] table; backward scatter-adds into the table.
template <class S>
Tensor<S> gather_rows(Graph<S>& g, const Tensor<S>& table, const IdArray& ids) {
    if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank-2");
    const int64_t n = table.dim(0), d = table.dim(1);
    for (int32_t id : ids)
        if (id < 0 || id >= n)
            throw ShapeError("gather_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(n) + " rows");
    Tensor<S> out(Shape{static_cast<int64_t>(ids.size()), d});
    for (size_t e = 0; e < ids.size(); ++e)
        std::copy_n(table.data() + static_cast<int64_t>(ids[e]) * d, d,
                    out.data() + static_cast<int64_t>(e) * d);
    if (g.wants_grad(table)) {
        out.set_requires_grad(true);
        g.record(out, [table, out, ids, d]() mutable {
            const S* go = out.grad();
            S* gt = table.grad();
            for (size_t e = 0; e < ids.size(); ++e) {
                S* dst = gt + static_cast<int64_t>(ids[e]) * d;
                const S* src = go + static_cast<int64_t>(e) * d;
                for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// neural-net ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(Graph<S>& g, const Tensor<S>& a, int axis) {
    detail::check_axis(a.shape(), axis, "softmax");
    int64_t outer, len, inner;
    detail::axis_slices(a.shape(), axis, outer, len, inner);
    Tensor<S> out(a.shape());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const auto at = [&](int64_t l) { return (o * len + l) * inner + in; };
            S mx = a.data()[at(0)];
            for (int64_t l = 1; l < len; ++l) mx = std::max(mx, a.data()[at(l)]);
            S denom = S(0);
            for (int64_t l = 0; l < len; ++l) {
                const S e = std::exp(a.data()[at(l)] - mx);
                out.data()[at(l)] = e;
                denom += e;
            }
            for (int64_t l = 0; l < len; ++l) out.data()[at(l)] /= denom;
        }
    }
    g.check_finite("softmax", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, outer, len, inner]() mutable {
            const S* go = out.grad();
            const S* y = out.data();
            S* ga = a.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const auto at = [&](int64_t l) { return (o * len + l) * inner + in; };
                    S dot = S(0);
                    for (int64_t l = 0; l < len; ++l) dot += go[at(l)] * y[at(l)];
                    for (int64_t l = 0; l < len; ++l) ga[at(l)] += y[at(l)] * (go[at(l)] - dot);
                }
        });
    }
    return out;
}

/// Normalizes each slice along `axis` to mean 0, population variance 1.
template <class S>
Tensor<S> layer_norm(Graph<S>& g, const Tensor<S>& a, int axis, S eps = S(1e-5)) {
    detail::check_axis(a.shape(), axis, "layer_norm");
    int64_t outer, len, inner;
    detail::axis_slices(a.shape(), axis, outer, len, inner);
    if (len < 2)
        throw ShapeError("layer_norm: axis extent must be >= 2, got " + shape_str(a.shape()));
    Tensor<S> out(a.shape());
    std::vector<S> inv_std(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const auto at = [&](int64_t l) { return (o * len + l) * inner + in; };
            S mu = S(0);
            for (int64_t l = 0; l < len; ++l) mu += a.data()[at(l)];
            mu /= static_cast<S>(len);
            S var = S(0);
            for (int64_t l = 0; l < len; ++l) {
                const S dv = a.data()[at(l)] - mu;
                var += dv * dv;
            }
            var /= static_cast<S>(len);
            const S is = S(1) / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(o * inner + in)] = is;
            for (int64_t l = 0; l < len; ++l) out.data()[at(l)] = (a.data()[at(l)] - mu) * is;
        }
    g.check_finite("layer_norm", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, inv_std, outer, len, inner]() mutable {
            const S* go = out.grad();
            const S* y = out.data();
            S* ga = a.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const auto at = [&](int64_t l) { return (o * len + l) * inner + in; };
                    const S is = inv_std[static_cast<size_t>(o * inner + in)];
                    S gmean = S(0), gydot = S(0);
                    for (int64_t l = 0; l < len; ++l) {
                        gmean += go[at(l)];
                        gydot += go[at(l)] * y[at(l)];
                    }
                    gmean /= static_cast<S>(len);
                    gydot /= static_cast<S>(len);
                    for (int64_t l = 0; l < len; ++l)
                        ga[at(l)] += is * (go[at(l)] - gmean - y[at(l)] * gydot);
                }
        });
    }
    return out;
}

/// Row-wise layer norm over the candidates a mask does not ignore; ignored
/// positions emit 0 and receive no gradient.
template <class S>
Tensor<S> masked_layer_norm(Graph<S>& g, const Tensor<S>& a, const Mask& mask, S eps = S(1e-5)) {
    if (a.rank() != 2) throw ShapeError("masked_layer_norm: expects rank-2 scores");
    const int64_t rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int64_t>(mask.size()) != rows * cols)
        throw ShapeError("masked_layer_norm: mask size mismatch");
    Tensor<S> out(a.shape());
    std::vector<S> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        int64_t n = 0;
        S mu = S(0);
        for (int64_t c = 0; c < cols; ++c)
            if (mask[static_cast<size_t>(r * cols + c)] != kMaskIgnore) {
                mu += a.data()[r * cols + c];
                ++n;
            }
        if (n < 2)
            throw ShapeError("masked_layer_norm: row " + std::to_string(r) +
                             " has fewer than 2 live candidates");
        mu /= static_cast<S>(n);
        S var = S(0);
        for (int64_t c = 0; c < cols; ++c)
            if (mask[static_cast<size_t>(r * cols + c)] != kMaskIgnore) {
                const S dv = a.data()[r * cols + c] - mu;
                var += dv * dv;
            }
        var /= static_cast<S>(n);
        const S is = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < cols; ++c)
            out.data()[r * cols + c] = mask[static_cast<size_t>(r * cols + c)] == kMaskIgnore
                                           ? S(0)
                                           : (a.data()[r * cols + c] - mu) * is;
    }
    g.check_finite("masked_layer_norm", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, mask, inv_std, rows, cols]() mutable {
            const S* go = out.grad();
            const S* y = out.data();
            S* ga = a.grad();
            for (int64_t r = 0; r < rows; ++r) {
                int64_t n = 0;
                S gmean = S(0), gydot = S(0);
                for (int64_t c = 0; c < cols; ++c)
                    if (mask[static_cast<size_t>(r * cols + c)] != kMaskIgnore) {
                        gmean += go[r * cols + c];
                        gydot += go[r * cols + c] * y[r * cols + c];
                        ++n;
                    }
                gmean /= static_cast<S>(n);
                gydot /= static_cast<S>(n);
                const S is = inv_std[static_cast<size_t>(r)];
                for (int64_t c = 0; c < cols; ++c)
                    if (mask[static_cast<size_t>(r * cols + c)] != kMaskIgnore)
                        ga[r * cols + c] +=
                            is * (go[r * cols + c] - gmean - y[r * cols + c] * gydot);
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> dropout(Graph<S>& g, const Tensor<S>& a, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ShapeError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return a;
    Tensor<S> out(a.shape());
    auto keep = std::make_shared<std::vector<S>>(static_cast<size_t>(a.numel()));
    const S inv = S(1.0 / (1.0 - p));
    for (int64_t i = 0; i < a.numel(); ++i) {
        const S f = rng.uniform01() < p ? S(0) : inv;
        (*keep)[static_cast<size_t>(i)] = f;
        out.data()[i] = a.data()[i] * f;
    }
    g.check_finite("dropout", out);
    if (g.wants_grad(a)) {
        out.set_requires_grad(true);
        g.record(out, [a, out, keep]() mutable {
            const S* go = out.grad();
            S* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * (*keep)[static_cast<size_t>(i)];
        });
    }
    return out;
}

/// Circular correlation out[k] = sum_i a[i] * b[(i+k) mod d]; rank-1 vectors
/// or rank-2 row-wise batches.
template <class S>
Tensor<S> circ_correlate(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("circ_correlate: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.rank() != 1 && a.rank() != 2)
        throw ShapeError("circ_correlate: expects rank-1 or rank-2, got " + shape_str(a.shape()));
    const int64_t rows = a.rank() == 2 ? a.dim(0) : 1;
    const int64_t d = a.rank() == 2 ? a.dim(1) : a.dim(0);
    Tensor<S> out(a.shape());
    parallel_for(g.workers(), rows, [&](int64_t begin, int64_t end) {
        for (int64_t r = begin; r < end; ++r) {
            const S* ar = a.data() + r * d;
            const S* br = b.data() + r * d;
            S* orow = out.data() + r * d;
            for (int64_t k = 0; k < d; ++k) {
                S acc = S(0);
                for (int64_t i = 0; i < d; ++i) {
                    int64_t j = i + k;
                    if (j >= d) j -= d;
                    acc += ar[i] * br[j];
                }
                orow[k] = acc;
            }
        }
    });
    g.check_finite("circ_correlate", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out, rows, d]() mutable {
            const S* go = out.grad();
            S* ga = a.requires_grad() ? a.grad() : nullptr;
            S* gb = b.requires_grad() ? b.grad() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const S* ar = a.data() + r * d;
                const S* br = b.data() + r * d;
                const S* gr = go + r * d;
                for (int64_t k = 0; k < d; ++k) {
                    const S gk = gr[k];
                    if (gk == S(0)) continue;
                    for (int64_t i = 0; i < d; ++i) {
                        int64_t j = i + k;
                        if (j >= d) j -= d;
                        if (ga) ga[r * d + i] += gk * br[j];
                        if (gb) gb[r * d + j] += gk * ar[i];
                    }
                }
            }
        });
    }
    return out;
}

/// Valid (no padding, stride 1) 2-D cross-correlation. Input is
/// [cin x h x w] or [batch x cin x h x w]; filters [cout x cin x kh x kw];
/// optional per-channel bias.
template <class S>
Tensor<S> conv2d(Graph<S>& g, const Tensor<S>& input, const Tensor<S>& filters,
                 const Tensor<S>& bias = Tensor<S>()) {
    if (input.rank() != 3 && input.rank() != 4)
        throw ShapeError("conv2d: input must be rank-3 or rank-4, got " + shape_str(input.shape()));
    if (filters.rank() != 4)
        throw ShapeError("conv2d: filters must be rank-4, got " + shape_str(filters.shape()));
    const bool batched = input.rank() == 4;
    const int64_t nb = batched ? input.dim(0) : 1;
    const int64_t cin = input.dim(batched ? 1 : 0);
    const int64_t h = input.dim(batched ? 2 : 1);
    const int64_t w = input.dim(batched ? 3 : 2);
    const int64_t cout = filters.dim(0);
    const int64_t kh = filters.dim(2), kw = filters.dim(3);
    if (filters.dim(1) != cin)
        throw ShapeError("conv2d: filter channels " + shape_str(filters.shape()) +
                         " do not match input " + shape_str(input.shape()));
    if (kh > h || kw > w)
        throw ShapeError("conv2d: filter " + shape_str(filters.shape()) + " larger than input " +
                         shape_str(input.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv2d: bias must be [cout]");
    const int64_t oh = h - kh + 1, ow = w - kw + 1;
    Shape out_shape = batched ? Shape{nb, cout, oh, ow} : Shape{cout, oh, ow};
    Tensor<S> out(out_shape);

    const S* in = input.data();
    const S* f = filters.data();
    parallel_for(g.workers(), nb, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b)
            for (int64_t co = 0; co < cout; ++co) {
                S* orow = out.data() + ((b * cout + co) * oh) * ow;
                const S bval = bias.defined() ? bias.data()[co] : S(0);
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t x = 0; x < ow; ++x) {
                        S acc = bval;
                        for (int64_t ci = 0; ci < cin; ++ci)
                            for (int64_t ky = 0; ky < kh; ++ky) {
                                const S* irow = in + ((b * cin + ci) * h + y + ky) * w + x;
                                const S* frow = f + ((co * cin + ci) * kh + ky) * kw;
                                for (int64_t kx = 0; kx < kw; ++kx) acc += irow[kx] * frow[kx];
                            }
                        orow[y * ow + x] = acc;
                    }
            }
    });
    g.check_finite("conv2d", out);
    const bool bias_grad = bias.defined() && bias.requires_grad();
    if (g.grad_enabled() && (input.requires_grad() || filters.requires_grad() || bias_grad)) {
        out.set_requires_grad(true);
        g.record(out, [input, filters, bias, out, nb, cin, h, w, cout, kh, kw, oh, ow,
                       workers = g.workers()]() mutable {
            const S* go = out.grad();
            if (input.requires_grad()) {
                S* gi = input.grad();
                const S* f = filters.data();
                parallel_for(workers, nb, [&](int64_t b0, int64_t b1) {
                    for (int64_t b = b0; b < b1; ++b)
                        for (int64_t co = 0; co < cout; ++co)
                            for (int64_t y = 0; y < oh; ++y)
                                for (int64_t x = 0; x < ow; ++x) {
                                    const S gv = go[((b * cout + co) * oh + y) * ow + x];
                                    if (gv == S(0)) continue;
                                    for (int64_t ci = 0; ci < cin; ++ci)
                                        for (int64_t ky = 0; ky < kh; ++ky) {
                                            S* irow = gi + ((b * cin + ci) * h + y + ky) * w + x;
                                            const S* frow = f + ((co * cin + ci) * kh + ky) * kw;
                                            for (int64_t kx = 0; kx < kw; ++kx)
                                                irow[kx] += gv * frow[kx];
                                        }
                                }
                });
            }
            if (filters.requires_grad()) {
                S* gf = filters.grad();
                const S* in = input.data();
                parallel_for(workers, cout, [&](int64_t c0, int64_t c1) {
                    for (int64_t co = c0; co < c1; ++co)
                        for (int64_t b = 0; b < nb; ++b)
                            for (int64_t y = 0; y < oh; ++y)
                                for (int64_t x = 0; x < ow; ++x) {
                                    const S gv = go[((b * cout + co) * oh + y) * ow + x];
                                    if (gv == S(0)) continue;
                                    for (int64_t ci = 0; ci < cin; ++ci)
                                        for (int64_t ky = 0; ky < kh; ++ky) {
                                            const S* irow = in + ((b * cin + ci) * h + y + ky) * w + x;
                                            S* frow = gf + ((co * cin + ci) * kh + ky) * kw;
                                            for (int64_t kx = 0; kx < kw; ++kx)
                                                frow[kx] += gv * irow[kx];
                                        }
                                }
                });
            }
            if (bias.defined() && bias.requires_grad()) {
                S* gb = bias.grad();
                for (int64_t b = 0; b < nb; ++b)
                    for (int64_t co = 0; co < cout; ++co) {
                        S acc = S(0);
                        const S* gr = go + ((b * cout + co) * oh) * ow;
                        for (int64_t i = 0; i < oh * ow; ++i) acc += gr[i];
                        gb[co] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// graph / segment ops
// ---------------------------------------------------------------------------

/// Per-row relation-specific linear map: out[e] = W[rel[e]] * x[e] (+ b[rel[e]]).
/// weights is [R x dout x din]; one tape node covers the whole edge batch.
template <class S>
Tensor<S> relation_linear(Graph<S>& g, const Tensor<S>& x, const IdArray& rel_ids,
                          const Tensor<S>& weights, const Tensor<S>& bias = Tensor<S>()) {
    if (x.rank() != 2 || weights.rank() != 3)
        throw ShapeError("relation_linear: expects x [E x din], weights [R x dout x din]");
    const int64_t e_count = x.dim(0), din = x.dim(1);
    const int64_t r_count = weights.dim(0), dout = weights.dim(1);
    if (weights.dim(2) != din)
        throw ShapeError("relation_linear: weight input dim " + shape_str(weights.shape()) +
                         " vs x " + shape_str(x.shape()));
    if (static_cast<int64_t>(rel_ids.size()) != e_count)
        throw ShapeError("relation_linear: rel_ids size mismatch");
    for (int32_t r : rel_ids)
        if (r < 0 || r >= r_count)
            throw ShapeError("relation_linear: relation id " + std::to_string(r) + " outside [0," +
                             std::to_string(r_count) + ")");
    if (bias.defined() && (bias.rank() != 2 || bias.dim(0) != r_count || bias.dim(1) != dout))
        throw ShapeError("relation_linear: bias must be [R x dout]");
    Tensor<S> out(Shape{e_count, dout});
    parallel_for(g.workers(), e_count, [&](int64_t b0, int64_t b1) {
        for (int64_t e = b0; e < b1; ++e) {
            const S* xe = x.data() + e * din;
            const S* we = weights.data() + static_cast<int64_t>(rel_ids[static_cast<size_t>(e)]) * dout * din;
            const S* be = bias.defined()
                              ? bias.data() + static_cast<int64_t>(rel_ids[static_cast<size_t>(e)]) * dout
                              : nullptr;
            S* oe = out.data() + e * dout;
            for (int64_t i = 0; i < dout; ++i) {
                const S* wrow = we + i * din;
                S acc = be ? be[i] : S(0);
                for (int64_t j = 0; j < din; ++j) acc += wrow[j] * xe[j];
                oe[i] = acc;
            }
        }
    });
    g.check_finite("relation_linear", out);
    const bool bias_grad = bias.defined() && bias.requires_grad();
    if (g.grad_enabled() && (x.requires_grad() || weights.requires_grad() || bias_grad)) {
        out.set_requires_grad(true);
        g.record(out, [x, weights, bias, out, rel_ids, e_count, din, dout,
                       workers = g.workers()]() mutable {
            const S* go = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                parallel_for(workers, e_count, [&](int64_t b0, int64_t b1) {
                    for (int64_t e = b0; e < b1; ++e) {
                        const S* we =
                            weights.data() +
                            static_cast<int64_t>(rel_ids[static_cast<size_t>(e)]) * dout * din;
                        const S* ge = go + e * dout;
                        S* gxe = gx + e * din;
                        for (int64_t i = 0; i < dout; ++i) {
                            const S gv = ge[i];
                            if (gv == S(0)) continue;
                            const S* wrow = we + i * din;
                            for (int64_t j = 0; j < din; ++j) gxe[j] += gv * wrow[j];
                        }
                    }
                });
            }
            if (weights.requires_grad()) {
                S* gw = weights.grad();
                for (int64_t e = 0; e < e_count; ++e) {
                    const S* xe = x.data() + e * din;
                    const S* ge = go + e * dout;
                    S* gwe = gw + static_cast<int64_t>(rel_ids[static_cast<size_t>(e)]) * dout * din;
                    for (int64_t i = 0; i < dout; ++i) {
                        const S gv = ge[i];
                        if (gv == S(0)) continue;
                        S* grow = gwe + i * din;
                        for (int64_t j = 0; j < din; ++j) grow[j] += gv * xe[j];
                    }
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                S* gb = bias.grad();
                for (int64_t e = 0; e < e_count; ++e) {
                    const S* ge = go + e * dout;
                    S* gbe = gb + static_cast<int64_t>(rel_ids[static_cast<size_t>(e)]) * dout;
                    for (int64_t i = 0; i < dout; ++i) gbe[i] += ge[i];
                }
            }
        });
    }
    return out;
}

/// Shared-basis variant: W[r] = sum_b coeff[r,b] * bases[b]. Keeps parameter
/// count flat when the relation vocabulary is large.
template <class S>
Tensor<S> relation_linear_basis(Graph<S>& g, const Tensor<S>& x, const IdArray& rel_ids,
                                const Tensor<S>& bases, const Tensor<S>& coeff,
                                const Tensor<S>& bias = Tensor<S>()) {
    if (bases.rank() != 3 || coeff.rank() != 2 || coeff.dim(1) != bases.dim(0))
        throw ShapeError("relation_linear_basis: expects bases [B x dout x din], coeff [R x B]");
    const int64_t nb = bases.dim(0), dout = bases.dim(1), din = bases.dim(2);
    const int64_t r_count = coeff.dim(0);
    // Materialized per-relation weights; W is a pure function of (bases, coeff)
    // so its gradient distributes onto both.
    Tensor<S> w(Shape{r_count, dout, din});
    detail::mm_acc(w.data(), coeff.data(), bases.data(), r_count, dout * din, nb, false, false,
                   g.workers());
    if (g.wants_grad(bases, coeff)) w.set_requires_grad(true);
    g.check_finite("relation_linear_basis", w);
    if (w.requires_grad()) {
        g.record(w, [bases, coeff, w, r_count, nb, dout, din, workers = 1]() mutable {
            const S* gw = w.grad();
            if (coeff.requires_grad())  // dcoeff[r,b] = <dW[r], bases[b]>
                detail::mm_acc(coeff.grad(), gw, bases.data(), r_count, nb, dout * din, false, true,
                               workers);
            if (bases.requires_grad())  // dbases[b] = sum_r coeff[r,b] * dW[r]
                detail::mm_acc(bases.grad(), coeff.data(), gw, nb, dout * din, r_count, true, false,
                               workers);
        });
    }
    return relation_linear(g, x, rel_ids, w, bias);
}

/// Softmax within contiguous segments of a rank-1 logit vector. offsets has
/// one extra trailing entry; segment s covers [offsets[s], offsets[s+1]).
template <class S>
Tensor<S> segment_softmax(Graph<S>& g, const Tensor<S>& logits, const Offsets& offsets) {
    if (logits.rank() != 1) throw ShapeError("segment_softmax: expects rank-1 logits");
    if (offsets.empty() || offsets.back() != logits.dim(0))
        throw ShapeError("segment_softmax: offsets do not cover logits");
    Tensor<S> out(logits.shape());
    const int64_t nseg = static_cast<int64_t>(offsets.size()) - 1;
    for (int64_t s = 0; s < nseg; ++s) {
        const int64_t b = offsets[static_cast<size_t>(s)], e = offsets[static_cast<size_t>(s) + 1];
        if (b == e) continue;
        S mx = logits.data()[b];
        for (int64_t i = b + 1; i < e; ++i) mx = std::max(mx, logits.data()[i]);
        S denom = S(0);
        for (int64_t i = b; i < e; ++i) {
            const S v = std::exp(logits.data()[i] - mx);
            out.data()[i] = v;
            denom += v;
        }
        for (int64_t i = b; i < e; ++i) out.data()[i] /= denom;
    }
    g.check_finite("segment_softmax", out);
    if (g.wants_grad(logits)) {
        out.set_requires_grad(true);
        g.record(out, [logits, out, offsets, nseg]() mutable {
            const S* go = out.grad();
            const S* y = out.data();
            S* ga = logits.grad();
            for (int64_t s = 0; s < nseg; ++s) {
                const int64_t b = offsets[static_cast<size_t>(s)],
                              e = offsets[static_cast<size_t>(s) + 1];
                S dot = S(0);
                for (int64_t i = b; i < e; ++i) dot += go[i] * y[i];
                for (int64_t i = b; i < e; ++i) ga[i] += y[i] * (go[i] - dot);
            }
        });
    }
    return out;
}

/// out[s] = sum over segment rows e of alpha[e] * rows[e,:].
template <class S>
Tensor<S> segment_weighted_sum(Graph<S>& g, const Tensor<S>& alpha, const Tensor<S>& rows,
                               const Offsets& offsets) {
    if (alpha.rank() != 1 || rows.rank() != 2 || alpha.dim(0) != rows.dim(0))
        throw ShapeError("segment_weighted_sum: expects alpha [E], rows [E x D]");
    if (offsets.empty() || offsets.back() != alpha.dim(0))
        throw ShapeError("segment_weighted_sum: offsets do not cover rows");
    const int64_t nseg = static_cast<int64_t>(offsets.size()) - 1;
    const int64_t d = rows.dim(1);
    Tensor<S> out(Shape{nseg, d});
    parallel_for(g.workers(), nseg, [&](int64_t s0, int64_t s1) {
        for (int64_t s = s0; s < s1; ++s) {
            S* orow = out.data() + s * d;
            for (int64_t e = offsets[static_cast<size_t>(s)]; e < offsets[static_cast<size_t>(s) + 1];
                 ++e) {
                const S a = alpha.data()[e];
                const S* rrow = rows.data() + e * d;
                for (int64_t c = 0; c < d; ++c) orow[c] += a * rrow[c];
            }
        }
    });
    g.check_finite("segment_weighted_sum", out);
    if (g.wants_grad(alpha, rows)) {
        out.set_requires_grad(true);
        g.record(out, [alpha, rows, out, offsets, nseg, d]() mutable {
            const S* go = out.grad();
            S* galpha = alpha.requires_grad() ? alpha.grad() : nullptr;
            S* grows = rows.requires_grad() ? rows.grad() : nullptr;
            for (int64_t s = 0; s < nseg; ++s) {
                const S* grow = go + s * d;
                for (int64_t e = offsets[static_cast<size_t>(s)];
                     e < offsets[static_cast<size_t>(s) + 1]; ++e) {
                    const S* rrow = rows.data() + e * d;
                    if (galpha) {
                        S acc = S(0);
                        for (int64_t c = 0; c < d; ++c) acc += grow[c] * rrow[c];
                        galpha[e] += acc;
                    }
                    if (grows) {
                        const S a = alpha.data()[e];
                        S* gr = grows + e * d;
                        for (int64_t c = 0; c < d; ++c) gr[c] += a * grow[c];
                    }
                }
            }
        });
    }
    return out;
}

/// Row-wise dot product of two [N x D] tensors -> [N].
template <class S>
Tensor<S> dot_rows(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape() || a.rank() != 2)
        throw ShapeError("dot_rows: expects matching rank-2 shapes, got " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int64_t n = a.dim(0), d = a.dim(1);
    Tensor<S> out(Shape{n});
    for (int64_t r = 0; r < n; ++r) {
        S acc = S(0);
        for (int64_t c = 0; c < d; ++c) acc += a.data()[r * d + c] * b.data()[r * d + c];
        out.data()[r] = acc;
    }
    g.check_finite("dot_rows", out);
    if (g.wants_grad(a, b)) {
        out.set_requires_grad(true);
        g.record(out, [a, b, out, n, d]() mutable {
            const S* go = out.grad();
            S* ga = a.requires_grad() ? a.grad() : nullptr;
            S* gb = b.requires_grad() ? b.grad() : nullptr;
            for (int64_t r = 0; r < n; ++r) {
                const S gv = go[r];
                if (gv == S(0)) continue;
                for (int64_t c = 0; c < d; ++c) {
                    if (ga) ga[r * d + c] += gv * b.data()[r * d + c];
                    if (gb) gb[r * d + c] += gv * a.data()[r * d + c];
                }
            }
        });
    }
    return out;
}

/// out[b,w] = q[b] . table[ids[b*W+w]]; candidate scoring against gathered rows.
template <class S>
Tensor<S> scores_vs_gathered(Graph<S>& g, const Tensor<S>& q, const Tensor<S>& table,
                             const IdArray& ids, int64_t width) {
    if (q.rank() != 2 || table.rank() != 2 || q.dim(1) != table.dim(1))
        throw ShapeError("scores_vs_gathered: expects q [B x D], table [N x D]");
    const int64_t bsz = q.dim(0), d = q.dim(1), n = table.dim(0);
    if (static_cast<int64_t>(ids.size()) != bsz * width)
        throw ShapeError("scores_vs_gathered: ids size mismatch");
    for (int32_t id : ids)
        if (id < 0 || id >= n) throw ShapeError("scores_vs_gathered: id outside table");
    Tensor<S> out(Shape{bsz, width});
    parallel_for(g.workers(), bsz, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b) {
            const S* qr = q.data() + b * d;
            for (int64_t wdx = 0; wdx < width; ++wdx) {
                const S* tr = table.data() + static_cast<int64_t>(ids[static_cast<size_t>(b * width + wdx)]) * d;
                S acc = S(0);
                for (int64_t c = 0; c < d; ++c) acc += qr[c] * tr[c];
                out.data()[b * width + wdx] = acc;
            }
        }
    });
    g.check_finite("scores_vs_gathered", out);
    if (g.wants_grad(q, table)) {
        out.set_requires_grad(true);
        g.record(out, [q, table, out, ids, bsz, width, d]() mutable {
            const S* go = out.grad();
            S* gq = q.requires_grad() ? q.grad() : nullptr;
            S* gt = table.requires_grad() ? table.grad() : nullptr;
            for (int64_t b = 0; b < bsz; ++b) {
                const S* qr = q.data() + b * d;
                for (int64_t wdx = 0; wdx < width; ++wdx) {
                    const S gv = go[b * width + wdx];
                    if (gv == S(0)) continue;
                    const int64_t row = static_cast<int64_t>(ids[static_cast<size_t>(b * width + wdx)]);
                    const S* tr = table.data() + row * d;
                    for (int64_t c = 0; c < d; ++c) {
                        if (gq) gq[b * d + c] += gv * tr[c];
                        if (gt) gt[row * d + c] += gv * qr[c];
                    }
                }
            }
        });
    }
    return out;
}

/// Negated p-norm distances: out[b,j] = -|| hr[b] - table[j] ||_p, p in {1,2}.
template <class S>
Tensor<S> transe_scores_all(Graph<S>& g, const Tensor<S>& hr, const Tensor<S>& table, int p) {
    if (p != 1 && p != 2) throw ShapeError("transe_scores_all: p must be 1 or 2");
    if (hr.rank() != 2 || table.rank() != 2 || hr.dim(1) != table.dim(1))
        throw ShapeError("transe_scores_all: expects hr [B x D], table [N x D]");
    const int64_t bsz = hr.dim(0), d = hr.dim(1), n = table.dim(0);
    Tensor<S> out(Shape{bsz, n});
    parallel_for(g.workers(), bsz, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b) {
            const S* hrow = hr.data() + b * d;
            for (int64_t j = 0; j < n; ++j) {
                const S* trow = table.data() + j * d;
                S acc = S(0);
                if (p == 1)
                    for (int64_t c = 0; c < d; ++c) acc += std::abs(hrow[c] - trow[c]);
                else {
                    for (int64_t c = 0; c < d; ++c) {
                        const S dv = hrow[c] - trow[c];
                        acc += dv * dv;
                    }
                    acc = std::sqrt(acc);
                }
                out.data()[b * n + j] = -acc;
            }
        }
    });
    g.check_finite("transe_scores_all", out);
    if (g.wants_grad(hr, table)) {
        out.set_requires_grad(true);
        g.record(out, [hr, table, out, bsz, d, n, p]() mutable {
            const S* go = out.grad();
            S* gh = hr.requires_grad() ? hr.grad() : nullptr;
            S* gt = table.requires_grad() ? table.grad() : nullptr;
            for (int64_t b = 0; b < bsz; ++b) {
                const S* hrow = hr.data() + b * d;
                for (int64_t j = 0; j < n; ++j) {
                    const S gv = go[b * n + j];
                    if (gv == S(0)) continue;
                    const S* trow = table.data() + j * d;
                    const S norm = -out.data()[b * n + j];
                    for (int64_t c = 0; c < d; ++c) {
                        const S dv = hrow[c] - trow[c];
                        S dd;
                        if (p == 1) dd = dv > S(0) ? S(1) : (dv < S(0) ? S(-1) : S(0));
                        else dd = norm > S(0) ? dv / norm : S(0);
                        // d(-norm)/dhr = -dd, d(-norm)/dtable = +dd
                        if (gh) gh[b * d + c] -= gv * dd;
                        if (gt) gt[j * d + c] += gv * dd;
                    }
                }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> transe_scores_gathered(Graph<S>& g, const Tensor<S>& hr, const Tensor<S>& table,
                                 const IdArray& ids, int64_t width, int p) {
    if (p != 1 && p != 2) throw ShapeError("transe_scores_gathered: p must be 1 or 2");
    const int64_t bsz = hr.dim(0), d = hr.dim(1);
    if (static_cast<int64_t>(ids.size()) != bsz * width)
        throw ShapeError("transe_scores_gathered: ids size mismatch");
    Tensor<S> rows = gather_rows(g, table, ids);  // [B*W x D]
    // hr repeated per candidate
    Tensor<S> hr_rep(Shape{bsz * width, d});
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t wdx = 0; wdx < width; ++wdx)
            std::copy_n(hr.data() + b * d, d, hr_rep.data() + (b * width + wdx) * d);
    if (g.wants_grad(hr)) {
        hr_rep.set_requires_grad(true);
        g.record(hr_rep, [hr, hr_rep, bsz, width, d]() mutable {
            const S* go = hr_rep.grad();
            S* gh = hr.grad();
            for (int64_t b = 0; b < bsz; ++b)
                for (int64_t wdx = 0; wdx < width; ++wdx)
                    for (int64_t c = 0; c < d; ++c) gh[b * d + c] += go[(b * width + wdx) * d + c];
        });
    }
    Tensor<S> diff = sub(g, hr_rep, rows);
    Tensor<S> dist;
    if (p == 1) {
        dist = dot_rows(g, abs_op(g, diff), Tensor<S>::full(Shape{bsz * width, d}, S(1)));
    } else {
        Tensor<S> sq = mul(g, diff, diff);
        Tensor<S> ssum = dot_rows(g, sq, Tensor<S>::full(Shape{bsz * width, d}, S(1)));
        // sqrt via custom node
        Tensor<S> root(Shape{bsz * width});
        for (int64_t i = 0; i < bsz * width; ++i) root.data()[i] = std::sqrt(ssum.data()[i]);
        g.check_finite("sqrt", root);
        if (g.wants_grad(ssum)) {
            root.set_requires_grad(true);
            g.record(root, [ssum, root]() mutable {
                const S* go = root.grad();
                S* gs = ssum.grad();
                for (int64_t i = 0; i < root.numel(); ++i)
                    if (root.data()[i] > S(0)) gs[i] += go[i] / (S(2) * root.data()[i]);
            });
        }
        dist = root;
    }
    return reshape(g, scale(g, dist, S(-1)), Shape{bsz, width});
}

}  // namespace nckge
