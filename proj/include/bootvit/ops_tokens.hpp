#pragma once

#include <cmath>
#include <cstring>

#include "bootvit/ops_core.hpp"
#include "bootvit/tensor.hpp"

// Ops over batched token matrices. A token matrix holds a batch of B samples
// stacked along the row axis, [B*n x d], where n is the per-sample token
// count. Every op here takes the per-sample row count explicitly and checks
// divisibility rather than carrying batch structure in the tensor type.

namespace bootvit {

// Prepend one learned row (e.g. a class token) to every block.
// x: [B*n x d], row: [d] -> [B*(n+1) x d]
template <typename T>
Tensor<T> block_prepend_row(const Tensor<T>& x, const Tensor<T>& row, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_prepend_row");
    const std::size_t d = x.dim(1);
    if (row.shape().size() != 1 || row.dim(0) != d)
        throw ShapeError("block_prepend_row: row " + shape_str(row.shape()) + " vs " + shape_str(x.shape()));
    auto n = detail::make_result<T>({b * (block_rows + 1), d}, {x.node(), row.node()});
    const T* px = x.data().data();
    const T* pr = row.data().data();
    for (std::size_t i = 0; i < b; ++i) {
        T* dst = n->value.data() + i * (block_rows + 1) * d;
        std::memcpy(dst, pr, sizeof(T) * d);
        std::memcpy(dst + d, px + i * block_rows * d, sizeof(T) * block_rows * d);
    }
    detail::finish_op(n, [b, block_rows, d](Node<T>& self) {
        const T* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            T* gx = self.inputs[0]->grad_ptr();
            for (std::size_t i = 0; i < b; ++i) {
                const T* src = g + (i * (block_rows + 1) + 1) * d;
                T* dst = gx + i * block_rows * d;
                for (std::size_t j = 0; j < block_rows * d; ++j) dst[j] += src[j];
            }
        }
        if (self.inputs[1]->requires_grad) {
            T* gr = self.inputs[1]->grad_ptr();
            for (std::size_t i = 0; i < b; ++i) {
                const T* src = g + i * (block_rows + 1) * d;
                for (std::size_t j = 0; j < d; ++j) gr[j] += src[j];
            }
        }
    });
    return Tensor<T>(n);
}

// Drop the first row of every block. x: [B*n x d] -> [B*(n-1) x d]
template <typename T>
Tensor<T> block_drop_first(const Tensor<T>& x, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_drop_first");
    if (block_rows < 2) throw ShapeError("block_drop_first: block of " + std::to_string(block_rows) + " rows");
    const std::size_t d = x.dim(1);
    auto n = detail::make_result<T>({b * (block_rows - 1), d}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t i = 0; i < b; ++i)
        std::memcpy(n->value.data() + i * (block_rows - 1) * d, px + (i * block_rows + 1) * d,
                    sizeof(T) * (block_rows - 1) * d);
    detail::finish_op(n, [b, block_rows, d](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < b; ++i) {
            const T* src = g + i * (block_rows - 1) * d;
            T* dst = gx + (i * block_rows + 1) * d;
            for (std::size_t j = 0; j < (block_rows - 1) * d; ++j) dst[j] += src[j];
        }
    });
    return Tensor<T>(n);
}

// Keep only the first row of every block. x: [B*n x d] -> [B x d]
template <typename T>
Tensor<T> block_take_first(const Tensor<T>& x, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_take_first");
    const std::size_t d = x.dim(1);
    auto n = detail::make_result<T>({b, d}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t i = 0; i < b; ++i)
        std::memcpy(n->value.data() + i * d, px + i * block_rows * d, sizeof(T) * d);
    detail::finish_op(n, [b, block_rows, d](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) gx[i * block_rows * d + j] += g[i * d + j];
    });
    return Tensor<T>(n);
}

// Add the same [n x d] matrix (e.g. a positional table) to every block.
template <typename T>
Tensor<T> block_broadcast_add(const Tensor<T>& x, const Tensor<T>& e, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_broadcast_add");
    const std::size_t d = x.dim(1);
    if (e.shape().size() != 2 || e.dim(0) != block_rows || e.dim(1) != d)
        throw ShapeError("block_broadcast_add: " + shape_str(e.shape()) + " vs block [" +
                         std::to_string(block_rows) + "x" + std::to_string(d) + "]");
    auto n = detail::make_result<T>(x.shape(), {x.node(), e.node()});
    const T* px = x.data().data();
    const T* pe = e.data().data();
    const std::size_t bl = block_rows * d;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < bl; ++j) n->value[i * bl + j] = px[i * bl + j] + pe[j];
    detail::finish_op(n, [b, bl](Node<T>& self) {
        const T* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            T* gx = self.inputs[0]->grad_ptr();
            for (std::size_t i = 0; i < b * bl; ++i) gx[i] += g[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* ge = self.inputs[1]->grad_ptr();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < bl; ++j) ge[j] += g[i * bl + j];
        }
    });
    return Tensor<T>(n);
}

// Per-block row mean (global average pooling over tokens). [B*n x d] -> [B x d]
template <typename T>
Tensor<T> block_mean_rows(const Tensor<T>& x, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_mean_rows");
    const std::size_t d = x.dim(1);
    auto n = detail::make_result<T>({b, d}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0;
            for (std::size_t r = 0; r < block_rows; ++r)
                acc += static_cast<double>(px[(i * block_rows + r) * d + c]);
            n->value[i * d + c] = static_cast<T>(acc / static_cast<double>(block_rows));
        }
    }
    detail::finish_op(n, [b, block_rows, d](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        const T inv = T(1) / static_cast<T>(block_rows);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t r = 0; r < block_rows; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    gx[(i * block_rows + r) * d + c] += g[i * d + c] * inv;
    });
    return Tensor<T>(n);
}

// Normalize each block by its own L2 norm over all block_rows*d entries,
// with a small constant in the denominator to keep the zero block finite.
template <typename T>
Tensor<T> block_l2_normalize(const Tensor<T>& x, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_l2_normalize");
    const std::size_t bl = block_rows * x.dim(1);
    auto n = detail::make_result<T>(x.shape(), {x.node()});
    const T* px = x.data().data();
    std::vector<T> norms(b);
    for (std::size_t i = 0; i < b; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < bl; ++j) {
            const double v = static_cast<double>(px[i * bl + j]);
            s += v * v;
        }
        norms[i] = static_cast<T>(std::sqrt(s));
        const T inv = T(1) / (norms[i] + static_cast<T>(1e-12));
        for (std::size_t j = 0; j < bl; ++j) n->value[i * bl + j] = px[i * bl + j] * inv;
    }
    detail::finish_op(n, [b, bl, norms = std::move(norms)](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        const T* v = self.inputs[0]->value.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < b; ++i) {
            const T r = norms[i];
            const T denom = r + static_cast<T>(1e-12);
            double dot = 0;
            for (std::size_t j = 0; j < bl; ++j)
                dot += static_cast<double>(g[i * bl + j]) * static_cast<double>(v[i * bl + j]);
            const T c = r > T(0) ? static_cast<T>(dot) / (r * denom * denom) : T(0);
            for (std::size_t j = 0; j < bl; ++j)
                gx[i * bl + j] += g[i * bl + j] / denom - c * v[i * bl + j];
        }
    });
    return Tensor<T>(n);
}

// Resample every block from block_rows to out_rows rows by linear
// interpolation along the row index, endpoints mapped to endpoints.
// With out_rows == 1 the first row is taken.
template <typename T>
Tensor<T> block_interp_rows(const Tensor<T>& x, std::size_t block_rows, std::size_t out_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "block_interp_rows");
    if (out_rows == 0) throw ShapeError("block_interp_rows: zero output rows");
    const std::size_t d = x.dim(1);
    // For each output row precompute the source pair and blend weight.
    std::vector<std::size_t> lo(out_rows);
    std::vector<T> w1(out_rows);
    for (std::size_t i = 0; i < out_rows; ++i) {
        double p = 0;
        if (out_rows > 1)
            p = static_cast<double>(i) * static_cast<double>(block_rows - 1) /
                static_cast<double>(out_rows - 1);
        std::size_t l = static_cast<std::size_t>(p);
        if (l >= block_rows - 1 && block_rows > 1) l = block_rows - 2;
        if (block_rows == 1) l = 0;
        lo[i] = l;
        w1[i] = block_rows > 1 ? static_cast<T>(p - static_cast<double>(l)) : T(0);
    }
    auto n = detail::make_result<T>({b * out_rows, d}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        const T* src = px + bi * block_rows * d;
        T* dst = n->value.data() + bi * out_rows * d;
        for (std::size_t i = 0; i < out_rows; ++i) {
            const T* r0 = src + lo[i] * d;
            const T* r1 = block_rows > 1 ? src + (lo[i] + 1) * d : r0;
            const T t = w1[i];
            for (std::size_t c = 0; c < d; ++c)
                dst[i * d + c] = (T(1) - t) * r0[c] + t * r1[c];
        }
    }
    detail::finish_op(n, [b, block_rows, out_rows, d, lo = std::move(lo), w1 = std::move(w1)](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t bi = 0; bi < b; ++bi) {
            const T* gsrc = g + bi * out_rows * d;
            T* gdst = gx + bi * block_rows * d;
            for (std::size_t i = 0; i < out_rows; ++i) {
                const T t = w1[i];
                T* r0 = gdst + lo[i] * d;
                T* r1 = block_rows > 1 ? gdst + (lo[i] + 1) * d : r0;
                for (std::size_t c = 0; c < d; ++c) {
                    r0[c] += (T(1) - t) * gsrc[i * d + c];
                    if (block_rows > 1 && t != T(0)) r1[c] += t * gsrc[i * d + c];
                }
            }
        }
    });
    return Tensor<T>(n);
}

}  // namespace bootvit
