#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace latentdyn::diff {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.dims != b.dims)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.dims) + " vs " +
                         shape_string(b.dims));
}

inline void require_axis(const char* op, const Tensor& a, std::size_t axis) {
    if (axis >= a.rank())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.dims));
}

/// Split dims around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Dims& dims, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    return {outer, dims[axis], inner};
}

/// Element-wise op with derivative expressed through input x and output y.
template <class F, class DF>
Var unary(Var a, const char* op, F f, DF df) {
    const Tensor& x = a.value();
    Tensor out(x.dims, std::vector<double>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, df](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            const auto& xv = t.value(ai).data;
            const auto& yv = t.value(self).data;
            if (auto* ga = t.accumulate(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(xv[i], yv[i]);
        },
        op);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dims[1] != B.dims[0])
        throw ShapeError("matmul: shape mismatch " + shape_string(A.dims) + " x " + shape_string(B.dims));
    const auto m = A.dims[0], k = A.dims[1], n = B.dims[1];
    Tensor out = Tensor::zeros({m, n});
    detail::MutMap(out.data.data(), m, n).noalias() =
        detail::ConstMap(A.data.data(), m, k) * detail::ConstMap(B.data.data(), k, n);
    return a.tape->record(
        std::move(out), {a.id, b.id},
        [ai = a.id, bi = b.id, m, k, n](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            detail::ConstMap G(g.data(), m, n);
            if (auto* ga = t.accumulate(ai))
                detail::MutMap(ga->data(), m, k).noalias() +=
                    G * detail::ConstMap(t.value(bi).data.data(), k, n).transpose();
            if (auto* gb = t.accumulate(bi))
                detail::MutMap(gb->data(), k, n).noalias() +=
                    detail::ConstMap(t.value(ai).data.data(), m, k).transpose() * G;
        },
        "matmul");
}

/// Adds a length-n bias vector to every row of an m x n matrix.
inline Var add_bias(Var a, Var bias) {
    detail::require_same_tape(a, bias);
    const Tensor& A = a.value();
    const Tensor& b = bias.value();
    if (A.rank() != 2 || b.size() != A.dims[1])
        throw ShapeError("add_bias: bias " + shape_string(b.dims) + " does not match " + shape_string(A.dims));
    Tensor out = A;
    const auto m = A.dims[0], n = A.dims[1];
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] += b.data[c];
    return a.tape->record(
        std::move(out), {a.id, bias.id},
        [ai = a.id, bi = bias.id, m, n](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            if (auto* gb = t.accumulate(bi))
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) (*gb)[c] += g[r * n + c];
        },
        "add_bias");
}

/// x W + b, with W stored [in x out].
inline Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

// ---------------------------------------------------------------------------
// Element-wise binary ops (no broadcasting)

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b);
    detail::require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
    return a.tape->record(
        std::move(out), {a.id, b.id},
        [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            for (auto id : {ai, bi})
                if (auto* gx = t.accumulate(id))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        },
        "add");
}

inline Var sub(Var a, Var b) {
    detail::require_same_tape(a, b);
    detail::require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
    return a.tape->record(
        std::move(out), {a.id, b.id},
        [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            if (auto* gb = t.accumulate(bi))
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        },
        "sub");
}

inline Var mul(Var a, Var b) {
    detail::require_same_tape(a, b);
    detail::require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
    return a.tape->record(
        std::move(out), {a.id, b.id},
        [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            const auto& av = t.value(ai).data;
            const auto& bvv = t.value(bi).data;
            if (auto* ga = t.accumulate(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bvv[i];
            if (auto* gb = t.accumulate(bi))
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        },
        "mul");
}

// ---------------------------------------------------------------------------
// Element-wise unary ops

inline Var scale(Var a, double c) {
    return detail::unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
    return detail::unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

/// ELU with alpha = 1.
inline Var elu(Var a) {
    return detail::unary(
        a, "elu", [](double x) { return x > 0 ? x : std::expm1(x); },
        [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

inline Var tanh_act(Var a) {
    return detail::unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp_op(Var a) {
    return detail::unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(Var a) {
    return detail::unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Clamp to [lo, hi]; gradient passes only where lo <= x <= hi.
inline Var clamp(Var a, double lo, double hi) {
    return detail::unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(Var a, Dims dims) {
    const Tensor& x = a.value();
    if (product(dims) != x.size())
        throw ShapeError("reshape: cannot view " + shape_string(x.dims) + " as " + shape_string(dims));
    Tensor out(std::move(dims), x.data);
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        },
        "reshape");
}

/// out.dims[i] = in.dims[axes[i]].
inline Var permute(Var a, const std::vector<std::size_t>& axes) {
    const Tensor& x = a.value();
    const auto r = x.rank();
    if (axes.size() != r) throw ShapeError("permute: need " + std::to_string(r) + " axes");
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axis list for " + shape_string(x.dims));
        seen[ax] = true;
    }
    Dims in_strides(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * x.dims[i + 1];
    Dims out_dims(r);
    for (std::size_t i = 0; i < r; ++i) out_dims[i] = x.dims[axes[i]];
    // source offset for each output element
    std::vector<std::size_t> src(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < x.size(); ++o) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
        src[o] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_dims[i]) break;
            idx[i] = 0;
        }
    }
    Tensor out = Tensor::zeros(out_dims);
    for (std::size_t o = 0; o < src.size(); ++o) out.data[o] = x.data[src[o]];
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, src = std::move(src)](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t o = 0; o < g.size(); ++o) (*ga)[src[o]] += g[o];
        },
        "permute");
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape* tape = parts.front().tape;
    const Tensor& first = parts.front().value();
    detail::require_axis("concat", first, axis);
    Dims out_dims = first.dims;
    out_dims[axis] = 0;
    for (const auto& p : parts) {
        if (p.tape != tape) throw std::invalid_argument("concat: operands on different tapes");
        const Tensor& v = p.value();
        if (v.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < v.rank(); ++i)
            if (i != axis && v.dims[i] != first.dims[i])
                throw ShapeError("concat: shape mismatch " + shape_string(first.dims) + " vs " +
                                 shape_string(v.dims) + " along axis " + std::to_string(axis));
        out_dims[axis] += v.dims[axis];
    }
    const auto split = detail::split_axis(out_dims, axis);
    Tensor out = Tensor::zeros(out_dims);
    std::vector<std::size_t> ids, offsets, widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        const auto w = v.dims[axis] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(v.data.begin() + o * w, w,
                        out.data.begin() + o * split.extent * split.inner + offset);
        ids.push_back(p.id);
        offsets.push_back(offset);
        widths.push_back(w);
        offset += w;
    }
    const std::size_t row = split.extent * split.inner;
    return tape->record(
        std::move(out), ids,
        [ids, offsets, widths, outer = split.outer, row](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            for (std::size_t k = 0; k < ids.size(); ++k)
                if (auto* gx = t.accumulate(ids[k]))
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < widths[k]; ++i)
                            (*gx)[o * widths[k] + i] += g[o * row + offsets[k] + i];
        },
        "concat");
}

/// Contiguous slice [start, start + len) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor& x = a.value();
    detail::require_axis("slice", x, axis);
    if (len == 0 || start + len > x.dims[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_string(x.dims));
    const auto split = detail::split_axis(x.dims, axis);
    Dims out_dims = x.dims;
    out_dims[axis] = len;
    Tensor out = Tensor::zeros(out_dims);
    const auto w = len * split.inner;
    const auto row = split.extent * split.inner;
    const auto off = start * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(x.data.begin() + o * row + off, w, out.data.begin() + o * w);
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, outer = split.outer, w, row, off](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < w; ++i) (*ga)[o * row + off + i] += g[o * w + i];
        },
        "slice");
}

/// Zero-pad `axis` up to `new_len`; padded positions receive no gradient.
inline Var pad(Var a, std::size_t axis, std::size_t new_len) {
    const Tensor& x = a.value();
    detail::require_axis("pad", x, axis);
    if (new_len < x.dims[axis])
        throw ShapeError("pad: target length " + std::to_string(new_len) + " smaller than axis " +
                         std::to_string(axis) + " of " + shape_string(x.dims));
    const auto split = detail::split_axis(x.dims, axis);
    Dims out_dims = x.dims;
    out_dims[axis] = new_len;
    Tensor out = Tensor::zeros(out_dims);
    const auto w = split.extent * split.inner;
    const auto row = new_len * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(x.data.begin() + o * w, w, out.data.begin() + o * row);
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, outer = split.outer, w, row](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < w; ++i) (*ga)[o * w + i] += g[o * row + i];
        },
        "pad");
}

enum class Reduction { sum, mean };

/// Reduce over `axis`, removing it (a rank-1 input reduces to shape [1]).
inline Var reduce(Var a, Reduction kind, std::size_t axis) {
    const Tensor& x = a.value();
    detail::require_axis("reduce", x, axis);
    const auto split = detail::split_axis(x.dims, axis);
    Dims out_dims;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_dims.push_back(x.dims[i]);
    if (out_dims.empty()) out_dims.push_back(1);
    const double w = kind == Reduction::mean ? 1.0 / static_cast<double>(split.extent) : 1.0;
    Tensor out = Tensor::zeros(out_dims);
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t e = 0; e < split.extent; ++e)
            for (std::size_t i = 0; i < split.inner; ++i)
                out.data[o * split.inner + i] += w * x.data[(o * split.extent + e) * split.inner + i];
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, split, w](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* ga = t.accumulate(ai))
                for (std::size_t o = 0; o < split.outer; ++o)
                    for (std::size_t e = 0; e < split.extent; ++e)
                        for (std::size_t i = 0; i < split.inner; ++i)
                            (*ga)[(o * split.extent + e) * split.inner + i] += w * g[o * split.inner + i];
        },
        "reduce");
}

inline Var reduce_sum(Var a, std::size_t axis) { return reduce(a, Reduction::sum, axis); }
inline Var reduce_mean(Var a, std::size_t axis) { return reduce(a, Reduction::mean, axis); }

inline Var sum_all(Var a) { return reduce_sum(reshape(a, {a.value().size()}), 0); }

/// Column gather on a rows x n matrix: out[r, i] = a[r, index[i]], or 0 where
/// index[i] < 0. Gradients scatter-add back; zero positions receive none.
inline Var gather_cols(Var a, std::span<const long> index) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ShapeError("gather_cols: expects a matrix, got " + shape_string(x.dims));
    const auto rows = x.dims[0], n = x.dims[1], len = index.size();
    if (len == 0) throw ShapeError("gather_cols: empty index");
    for (long i : index)
        if (i >= static_cast<long>(n))
            throw ShapeError("gather_cols: index " + std::to_string(i) + " out of range for " +
                             shape_string(x.dims));
    std::vector<long> idx(index.begin(), index.end());
    Tensor out = Tensor::zeros({rows, len});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < len; ++i)
            if (idx[i] >= 0) out.data[r * len + i] = x.data[r * n + static_cast<std::size_t>(idx[i])];
    return a.tape->record(
        std::move(out), {a.id},
        [ai = a.id, idx = std::move(idx), rows, n](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            const auto len = idx.size();
            if (auto* ga = t.accumulate(ai))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < len; ++i)
                        if (idx[i] >= 0) (*ga)[r * n + static_cast<std::size_t>(idx[i])] += g[r * len + i];
        },
        "gather_cols");
}

// ---------------------------------------------------------------------------
// Sampling

/// mu + exp(log_sigma) * eps with eps ~ N(0, 1) from `rng`. eps is a constant.
inline Var reparam_sample(Var mu, Var log_sigma, SeededRng& rng) {
    detail::require_same_tape(mu, log_sigma);
    detail::require_same_shape("reparam_sample", mu.value(), log_sigma.value());
    const Tensor& m = mu.value();
    const Tensor& ls = log_sigma.value();
    std::vector<double> eps(m.size());
    for (auto& e : eps) e = rng.normal();
    Tensor out(m.dims, std::vector<double>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] + std::exp(ls.data[i]) * eps[i];
    return mu.tape->record(
        std::move(out), {mu.id, log_sigma.id},
        [mi = mu.id, li = log_sigma.id, eps = std::move(eps)](Tape& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            if (auto* gm = t.accumulate(mi))
                for (std::size_t i = 0; i < g.size(); ++i) (*gm)[i] += g[i];
            if (auto* gl = t.accumulate(li)) {
                const auto& lv = t.value(li).data;
                for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += g[i] * std::exp(lv[i]) * eps[i];
            }
        },
        "reparam_sample");
}

} // namespace latentdyn::diff
