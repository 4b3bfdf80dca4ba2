#pragma once

// Differentiable operations over Tensor<T>.  Every op computes its forward
// value eagerly and, when autograd is active, records a node whose closure
// accumulates exact analytic gradients into its parents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xgpt/rng.hpp"
#include "xgpt/tensor.hpp"

namespace xgpt {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    " tensor, got " + shape_str(t.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    record_op(out, {a, b}, [](Node<T>& n) {
        const auto& og = n.out->grad;
        for (int p = 0; p < 2; ++p) {
            auto& parent = n.parents[p];
            if (!parent.requires_grad()) continue;
            auto& g = parent.grad();
            for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    record_op(out, {a, b}, [](Node<T>& n) {
        const auto& og = n.out->grad;
        auto& a = n.parents[0];
        auto& b = n.parents[1];
        if (a.requires_grad()) {
            auto& g = a.grad();
            const auto& bv = b.values();
            for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto& g = b.grad();
            const auto& av = a.values();
            for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * av[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    const T cc = static_cast<T>(c);
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * cc;
    record_op(out, {x}, [cc](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * cc;
    });
    return out;
}

// x [R x C] plus a length-C vector added to every row.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::require_rank(x, 2, "add_rowvec");
    if (v.rank() != 1 || v.extent(0) != x.extent(1)) {
        throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) +
                                    " does not match matrix " + shape_str(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    const auto& vv = v.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] + vv[c];
    record_op(out, {x, v}, [rows, cols](Node<T>& n) {
        const auto& og = n.out->grad;
        auto& x = n.parents[0];
        auto& v = n.parents[1];
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
        if (v.requires_grad()) {
            auto& g = v.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += og[r * cols + c];
        }
    });
    return out;
}

// x [R x C] plus a length-R vector added down every column.
template <typename T>
Tensor<T> add_colvec(const Tensor<T>& x, const Tensor<T>& u) {
    detail::require_rank(x, 2, "add_colvec");
    if (u.rank() != 1 || u.extent(0) != x.extent(0)) {
        throw std::invalid_argument("add_colvec: vector " + shape_str(u.shape()) +
                                    " does not match matrix " + shape_str(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    const auto& uv = u.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] + uv[r];
    record_op(out, {x, u}, [rows, cols](Node<T>& n) {
        const auto& og = n.out->grad;
        auto& x = n.parents[0];
        auto& u = n.parents[1];
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
        if (u.requires_grad()) {
            auto& g = u.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[r] += og[r * cols + c];
        }
    });
    return out;
}

// x [R x C] with every row scaled elementwise by a length-C vector.
template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::require_rank(x, 2, "mul_rowvec");
    if (v.rank() != 1 || v.extent(0) != x.extent(1)) {
        throw std::invalid_argument("mul_rowvec: vector " + shape_str(v.shape()) +
                                    " does not match matrix " + shape_str(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    const auto& vv = v.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] * vv[c];
    record_op(out, {x, v}, [rows, cols](Node<T>& n) {
        const auto& og = n.out->grad;
        auto& x = n.parents[0];
        auto& v = n.parents[1];
        if (x.requires_grad()) {
            auto& g = x.grad();
            const auto& vv = v.values();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += og[r * cols + c] * vv[c];
        }
        if (v.requires_grad()) {
            auto& g = v.grad();
            const auto& xv = x.values();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += og[r * cols + c] * xv[r * cols + c];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros({1});
    const auto& xv = x.values();
    T acc = T(0);
    for (T v : xv) acc += v;
    out.values()[0] = acc;
    record_op(out, {x}, [](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const T og = n.out->grad[0];
        auto& g = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += og;
    });
    return out;
}

// --------------------------------------------------------------- linear algebra

// Rank-2 [m x k] * [k x n], or batched rank-3 [B x m x k] * [B x k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() == 2 && b.rank() == 2) {
        if (a.extent(1) != b.extent(0)) {
            throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
        }
    } else if (a.rank() == 3 && b.rank() == 3) {
        if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) {
            throw std::invalid_argument("matmul: batched operands disagree, " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
        }
    } else {
        throw std::invalid_argument("matmul: expects two rank-2 or two rank-3 tensors, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const bool batched = a.rank() == 3;
    const std::size_t batch = batched ? a.extent(0) : 1;
    const std::size_t m = a.extent(batched ? 1 : 0);
    const std::size_t k = a.extent(batched ? 2 : 1);
    const std::size_t n = b.extent(batched ? 2 : 1);

    Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    {
        const T* av = a.values().data();
        const T* bv = b.values().data();
        T* ov = out.values().data();
        for (std::size_t bt = 0; bt < batch; ++bt) {
            const T* A = av + bt * m * k;
            const T* B = bv + bt * k * n;
            T* C = ov + bt * m * n;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T aik = A[i * k + kk];
                    if (aik == T(0)) continue;
                    const T* brow = B + kk * n;
                    T* crow = C + i * n;
                    for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
                }
            }
        }
    }
    record_op(out, {a, b}, [batch, m, k, n](Node<T>& n_) {
        const T* og = n_.out->grad.data();
        auto& a = n_.parents[0];
        auto& b = n_.parents[1];
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            const T* bv = b.values().data();
            for (std::size_t bt = 0; bt < batch; ++bt) {
                const T* G = og + bt * m * n;
                const T* B = bv + bt * k * n;
                T* GA = ga + bt * m * k;
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        T acc = T(0);
                        const T* grow = G + i * n;
                        const T* brow = B + kk * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        GA[i * k + kk] += acc;
                    }
            }
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            const T* av = a.values().data();
            for (std::size_t bt = 0; bt < batch; ++bt) {
                const T* G = og + bt * m * n;
                const T* A = av + bt * m * k;
                T* GB = gb + bt * k * n;
                // dB = A^T * dC
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T aik = A[i * k + kk];
                        if (aik == T(0)) continue;
                        const T* grow = G + i * n;
                        T* brow = GB + kk * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
                    }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    detail::require_rank(x, 2, "transpose");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros({cols, rows});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ov[c * rows + r] = xv[r * cols + c];
    record_op(out, {x}, [rows, cols](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += og[c * rows + r];
    });
    return out;
}

// ----------------------------------------------------------------- reshaping

// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: needs at least one tensor");
    if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1 for rank-2 tensors");
    for (const auto& p : parts) detail::require_rank(p, 2, "concat");
    const std::size_t other = axis == 0 ? 1 : 0;
    const std::size_t fixed = parts[0].extent(other);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.extent(other) != fixed) {
            throw std::invalid_argument("concat: mismatched extents " + shape_str(parts[0].shape()) +
                                        " vs " + shape_str(p.shape()));
        }
        total += p.extent(axis);
    }
    Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    auto& ov = out.values();
    if (axis == 0) {
        std::size_t row = 0;
        for (const auto& p : parts) {
            std::copy(p.values().begin(), p.values().end(), ov.begin() + row * fixed);
            row += p.extent(0);
        }
    } else {
        const std::size_t rows = fixed;
        std::size_t col = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p.extent(1);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(p.values().begin() + r * pc, p.values().begin() + (r + 1) * pc,
                          ov.begin() + r * total + col);
            col += pc;
        }
    }
    std::vector<Tensor<T>> parents(parts.begin(), parts.end());
    record_op(out, std::move(parents), [axis, fixed, total](Node<T>& n) {
        const auto& og = n.out->grad;
        if (axis == 0) {
            std::size_t row = 0;
            for (auto& p : n.parents) {
                const std::size_t pr = p.extent(0);
                if (p.requires_grad()) {
                    auto& g = p.grad();
                    for (std::size_t i = 0; i < pr * fixed; ++i) g[i] += og[row * fixed + i];
                }
                row += pr;
            }
        } else {
            std::size_t col = 0;
            for (auto& p : n.parents) {
                const std::size_t pc = p.extent(1);
                if (p.requires_grad()) {
                    auto& g = p.grad();
                    for (std::size_t r = 0; r < fixed; ++r)
                        for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += og[r * total + col + c];
                }
                col += pc;
            }
        }
    });
    return out;
}

// Same data, new extents; gradient passes straight through.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_size(new_shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    }
    Tensor<T> out = Tensor<T>::from_values(std::move(new_shape), x.values());
    record_op(out, {x}, [](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
    });
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_rank(x, 2, "slice_rows");
    if (start + len > x.extent(0)) {
        throw std::out_of_range("slice_rows: rows [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") exceed " + shape_str(x.shape()));
    }
    const std::size_t cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros({len, cols});
    std::copy(x.values().begin() + start * cols, x.values().begin() + (start + len) * cols,
              out.values().begin());
    record_op(out, {x}, [start, len, cols](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t i = 0; i < len * cols; ++i) g[start * cols + i] += og[i];
    });
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_rank(x, 2, "slice_cols");
    if (start + len > x.extent(1)) {
        throw std::out_of_range("slice_cols: columns [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") exceed " + shape_str(x.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    Tensor<T> out = Tensor<T>::zeros({rows, len});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(xv.begin() + r * cols + start, xv.begin() + r * cols + start + len,
                  ov.begin() + r * len);
    record_op(out, {x}, [start, len, rows, cols](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < len; ++c) g[r * cols + start + c] += og[r * len + c];
    });
    return out;
}

// -------------------------------------------------------------- nonlinearities

// Numerically stabilized softmax along `axis`; every slice sums to one.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(x.shape()));
    }
    const Shape& shape = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t len = shape[axis];

    Tensor<T> out = Tensor<T>::zeros(shape);
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = xv[base];
            for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
            T total = T(0);
            for (std::size_t k = 0; k < len; ++k) {
                const T e = std::exp(xv[base + k * inner] - mx);
                ov[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < len; ++k) ov[base + k * inner] /= total;
        }
    }
    record_op(out, {x}, [outer, inner, len](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        const auto& y = n.out->values;
        auto& g = x.grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = T(0);
                for (std::size_t k = 0; k < len; ++k) dot += og[base + k * inner] * y[base + k * inner];
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t idx = base + k * inner;
                    g[idx] += y[idx] * (og[idx] - dot);
                }
            }
        }
    });
    return out;
}

// Row-wise softmax over a rank-2 tensor restricted to `allowed` entries.
// Disallowed entries produce exactly zero weight and receive zero gradient,
// which keeps causal and padding masking bit-exact.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const std::vector<std::uint8_t>& allowed) {
    detail::require_rank(x, 2, "masked_softmax_rows");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (allowed.size() != rows * cols) {
        throw std::invalid_argument("masked_softmax_rows: mask size " + std::to_string(allowed.size()) +
                                    " does not match " + shape_str(x.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        T mx = T(0);
        bool any = false;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!allowed[r * cols + c]) continue;
            const T v = xv[r * cols + c];
            mx = any ? std::max(mx, v) : v;
            any = true;
        }
        if (!any) {
            throw std::invalid_argument("masked_softmax_rows: row " + std::to_string(r) +
                                        " has no allowed entries");
        }
        T total = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            if (!allowed[r * cols + c]) continue;
            const T e = std::exp(xv[r * cols + c] - mx);
            ov[r * cols + c] = e;
            total += e;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (allowed[r * cols + c]) ov[r * cols + c] /= total;
        }
    }
    record_op(out, {x}, [rows, cols, allowed](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        const auto& y = n.out->values;
        auto& g = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < cols; ++c) {
                if (allowed[r * cols + c]) dot += og[r * cols + c] * y[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t idx = r * cols + c;
                if (allowed[idx]) g[idx] += y[idx] * (og[idx] - dot);
            }
        }
    });
    return out;
}

// Layer normalization over the last axis with learned gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = 1e-5) {
    if (x.rank() == 0) throw std::invalid_argument("layer_norm: scalar input not supported");
    const std::size_t cols = x.extent(x.rank() - 1);
    if (gain.rank() != 1 || gain.extent(0) != cols || bias.rank() != 1 || bias.extent(0) != cols) {
        throw std::invalid_argument("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                                    shape_str(bias.shape()) + " do not match input " +
                                    shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / cols;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(rows);
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        T mean = T(0);
        for (std::size_t c = 0; c < cols; ++c) mean += xv[r * cols + c];
        mean /= static_cast<T>(cols);
        T var = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            const T d = xv[r * cols + c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(cols);
        const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            const T h = (xv[r * cols + c] - mean) * is;
            xhat[r * cols + c] = h;
            ov[r * cols + c] = gv[c] * h + bv[c];
        }
    }
    record_op(out, {x, gain, bias},
              [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const auto& og = n.out->grad;
        auto& x = n.parents[0];
        auto& gain = n.parents[1];
        auto& bias = n.parents[2];
        const auto& gv = gain.values();
        if (gain.requires_grad()) {
            auto& gg = gain.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gg[c] += og[r * cols + c] * xhat[r * cols + c];
        }
        if (bias.requires_grad()) {
            auto& gb = bias.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gb[c] += og[r * cols + c];
        }
        if (x.requires_grad()) {
            auto& gx = x.grad();
            const T inv_cols = T(1) / static_cast<T>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                T sum_dh = T(0), sum_dh_h = T(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    const T dh = og[r * cols + c] * gv[c];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[r * cols + c];
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    const T dh = og[r * cols + c] * gv[c];
                    gx[r * cols + c] += inv_std[r] * (dh - inv_cols * sum_dh -
                                                      xhat[r * cols + c] * inv_cols * sum_dh_h);
                }
            }
        }
    });
    return out;
}

// Exact Gaussian-CDF form: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        ov[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    record_op(out, {x}, [inv_sqrt2](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        const auto& xv = x.values();
        auto& g = x.grad();
        const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
        for (std::size_t i = 0; i < og.size(); ++i) {
            const T v = xv[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            g[i] += og[i] * (cdf + v * pdf);
        }
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        ov[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
    }
    record_op(out, {x}, [](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        const auto& y = n.out->values;
        auto& g = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * y[i] * (T(1) - y[i]);
    });
    return out;
}

// ------------------------------------------------------------------- losses

// Weighted token-level negative log-likelihood:
//   sum_t w_t * (-log softmax(logits_t)[target_t]) / max(1, sum_t w_t).
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& targets,
                               const std::vector<T>& weights) {
    detail::require_rank(logits, 2, "cross_entropy_logits");
    const std::size_t steps = logits.extent(0), vocab = logits.extent(1);
    if (targets.size() != steps || weights.size() != steps) {
        throw std::invalid_argument("cross_entropy_logits: logits " + shape_str(logits.shape()) +
                                    " need " + std::to_string(steps) + " targets/weights, got " +
                                    std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
    }
    T weight_total = T(0);
    for (std::size_t t = 0; t < steps; ++t) {
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
            throw std::out_of_range("cross_entropy_logits: target " + std::to_string(targets[t]) +
                                    " at step " + std::to_string(t) + " outside vocabulary of " +
                                    std::to_string(vocab));
        }
        if (weights[t] < T(0)) {
            throw std::invalid_argument("cross_entropy_logits: negative weight at step " +
                                        std::to_string(t));
        }
        weight_total += weights[t];
    }
    const T denom = std::max(T(1), weight_total);

    std::vector<T> probs(steps * vocab);
    const auto& lv = logits.values();
    T loss = T(0);
    for (std::size_t t = 0; t < steps; ++t) {
        const T* row = lv.data() + t * vocab;
        T mx = row[0];
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
        T total = T(0);
        for (std::size_t v = 0; v < vocab; ++v) {
            const T e = std::exp(row[v] - mx);
            probs[t * vocab + v] = e;
            total += e;
        }
        for (std::size_t v = 0; v < vocab; ++v) probs[t * vocab + v] /= total;
        const T log_z = mx + std::log(total);
        loss += weights[t] * (log_z - row[static_cast<std::size_t>(targets[t])]);
    }
    Tensor<T> out = Tensor<T>::scalar(loss / denom);
    record_op(out, {logits},
              [steps, vocab, targets, weights, denom, probs = std::move(probs)](Node<T>& n) {
        auto& logits = n.parents[0];
        if (!logits.requires_grad()) return;
        const T og = n.out->grad[0];
        auto& g = logits.grad();
        for (std::size_t t = 0; t < steps; ++t) {
            const T w = og * weights[t] / denom;
            if (w == T(0)) continue;
            for (std::size_t v = 0; v < vocab; ++v) {
                g[t * vocab + v] += w * probs[t * vocab + v];
            }
            g[t * vocab + static_cast<std::size_t>(targets[t])] -= w;
        }
    });
    return out;
}

// Mean over the leading axis of squared L2 row distances:
//   (1/N) * sum_rows ||a_row - b_row||^2.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mse");
    if (a.rank() == 0 || a.extent(0) == 0) {
        throw std::invalid_argument("mse: leading axis must be non-empty, got " + shape_str(a.shape()));
    }
    const T inv_n = T(1) / static_cast<T>(a.extent(0));
    const auto& av = a.values();
    const auto& bv = b.values();
    T acc = T(0);
    for (std::size_t i = 0; i < av.size(); ++i) {
        const T d = av[i] - bv[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc * inv_n);
    record_op(out, {a, b}, [inv_n](Node<T>& n) {
        const T og = n.out->grad[0];
        auto& a = n.parents[0];
        auto& b = n.parents[1];
        const auto& av = a.values();
        const auto& bv = b.values();
        const T c = T(2) * inv_n * og;
        if (a.requires_grad()) {
            auto& g = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (av[i] - bv[i]);
        }
        if (b.requires_grad()) {
            auto& g = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * (av[i] - bv[i]);
        }
    });
    return out;
}

// ------------------------------------------------------------------- lookup

// Gathers rows of `table` [V x h]; gradients scatter-add back into the table,
// so repeated ids accumulate.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    detail::require_rank(table, 2, "embedding");
    const std::size_t vocab = table.extent(0), width = table.extent(1);
    Tensor<T> out = Tensor<T>::zeros({ids.size(), width});
    const auto& tv = table.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " at row " +
                                    std::to_string(i) + " outside table " + shape_str(table.shape()));
        }
        std::copy(tv.begin() + ids[i] * width, tv.begin() + (ids[i] + 1) * width,
                  ov.begin() + i * width);
    }
    record_op(out, {table}, [ids, width](Node<T>& n) {
        auto& table = n.parents[0];
        if (!table.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = table.grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t c = 0; c < width; ++c)
                g[static_cast<std::size_t>(ids[i]) * width + c] += og[i * width + c];
    });
    return out;
}

// --------------------------------------------------------------- regularizers

// Inverted dropout: kept entries are scaled by 1/(1-rate) so expectations
// match between train and eval.  Identity when not training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, RngStream* rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    if (!rng) throw std::invalid_argument("dropout: training mode requires an RNG stream");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng->next_double() < rate ? T(0) : keep_scale;
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
    record_op(out, {x}, [mask = std::move(mask)](Node<T>& n) {
        auto& x = n.parents[0];
        if (!x.requires_grad()) return;
        const auto& og = n.out->grad;
        auto& g = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * mask[i];
    });
    return out;
}

// ------------------------------------------------------------------ helpers

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_rowvec(matmul(x, w), b);
}

} // namespace xgpt
