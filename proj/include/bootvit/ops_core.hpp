#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "bootvit/tensor.hpp"

namespace bootvit {

namespace detail {

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rows of a batched token matrix come in per-sample blocks; validates the
// block size and returns how many blocks there are.
template <typename T>
inline std::size_t block_count(const Tensor<T>& x, std::size_t block_rows, const char* op) {
    if (x.shape().size() != 2 || block_rows == 0 || x.dim(0) % block_rows != 0)
        throw ShapeError(std::string(op) + ": " + shape_str(x.shape()) + " with block of " +
                         std::to_string(block_rows) + " rows");
    return x.dim(0) / block_rows;
}

// C[m x n] += or = A[m x k] * B[k x n]; the j loop vectorizes.
template <typename T>
inline void gemm_acc(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                     bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(T) * m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* Ai = A + i * k;
        T* Ci = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T a = Ai[p];
            if (a == T(0)) continue;
            const T* Bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
inline void gemm_tn_acc(const T* A, const T* B, T* C, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* Ap = A + p * m;
        const T* Bp = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T a = Ap[i];
            if (a == T(0)) continue;
            T* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// C[m x k] += A[m x n] * B[k x n]^T
template <typename T>
inline void gemm_nt_acc(const T* A, const T* B, T* C, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* Ai = A + i * n;
        T* Ci = C + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* Bp = B + p * n;
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) s += Ai[j] * Bp[j];
            Ci[p] += s;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::size_t len = n->numel();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* out = n->value.data();
    for (std::size_t i = 0; i < len; ++i) out[i] = pa[i] + pb[i];
    detail::finish_op(n, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t ln = self.numel();
        for (int s = 0; s < 2; ++s) {
            auto& in = self.inputs[s];
            if (!in->requires_grad) continue;
            T* gi = in->grad_ptr();
            for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i];
        }
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::size_t len = n->numel();
    for (std::size_t i = 0; i < len; ++i) n->value[i] = a.data()[i] - b.data()[i];
    detail::finish_op(n, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t ln = self.numel();
        if (self.inputs[0]->requires_grad) {
            T* gi = self.inputs[0]->grad_ptr();
            for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* gi = self.inputs[1]->grad_ptr();
            for (std::size_t i = 0; i < ln; ++i) gi[i] -= g[i];
        }
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::size_t len = n->numel();
    for (std::size_t i = 0; i < len; ++i) n->value[i] = a.data()[i] * b.data()[i];
    detail::finish_op(n, [](Node<T>& self) {
        const T* g = self.grad.data();
        const std::size_t ln = self.numel();
        const T* va = self.inputs[0]->value.data();
        const T* vb = self.inputs[1]->value.data();
        if (self.inputs[0]->requires_grad) {
            T* gi = self.inputs[0]->grad_ptr();
            for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i] * vb[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* gi = self.inputs[1]->grad_ptr();
            for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i] * va[i];
        }
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    const T sv = static_cast<T>(s);
    auto n = detail::make_result<T>(a.shape(), {a.node()});
    const std::size_t len = n->numel();
    for (std::size_t i = 0; i < len; ++i) n->value[i] = a.data()[i] * sv;
    detail::finish_op(n, [sv](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i] * sv;
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, -1.0);
}

// x[R x C] + bias[C], broadcast over rows
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.shape().size() != 2 || bias.shape().size() != 1 || x.dim(1) != bias.dim(0))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    auto n = detail::make_result<T>(x.shape(), {x.node(), bias.node()});
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const T* px = x.data().data();
    const T* pb = bias.data().data();
    T* out = n->value.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = px[r * cols + c] + pb[c];
    detail::finish_op(n, [rows, cols](Node<T>& self) {
        const T* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            T* gx = self.inputs[0]->grad_ptr();
            const std::size_t ln = rows * cols;
            for (std::size_t i = 0; i < ln; ++i) gx[i] += g[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
    });
    return Tensor<T>(n);
}

// Standard matrix product; backward is dA = dY*B^T, dB = A^T*dY.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    auto n = detail::make_result<T>({m, nn}, {a.node(), b.node()});
    detail::gemm_acc(a.data().data(), b.data().data(), n->value.data(), m, k, nn, false);
    detail::finish_op(n, [m, k, nn](Node<T>& self) {
        const T* g = self.grad.data();
        const T* va = self.inputs[0]->value.data();
        const T* vb = self.inputs[1]->value.data();
        if (self.inputs[0]->requires_grad)
            detail::gemm_nt_acc(g, vb, self.inputs[0]->grad_ptr(), m, nn, k);
        if (self.inputs[1]->requires_grad)
            detail::gemm_tn_acc(va, g, self.inputs[1]->grad_ptr(), m, k, nn);
    });
    return Tensor<T>(n);
}

// Linear layer: x[R x d_in] * w[d_in x d_out] + b[d_out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_row_bias(matmul(x, w), b);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.shape().size() != 2) throw ShapeError("transpose: expected 2-d, got " + shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    auto n = detail::make_result<T>({c, r}, {a.node()});
    const T* pa = a.data().data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[j * r + i] = pa[i * c + j];
    detail::finish_op(n, [r, c](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gi = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g[j * r + i];
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto n = detail::make_result<T>(std::move(shape), {a.node()});
    n->value = a.data();
    detail::finish_op(n, [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i) gi[i] += g[i];
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
    if (a.shape().size() != 2 || r1 > a.dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                         shape_str(a.shape()));
    const std::size_t c = a.dim(1);
    auto n = detail::make_result<T>({r1 - r0, c}, {a.node()});
    std::memcpy(n->value.data(), a.data().data() + r0 * c, sizeof(T) * (r1 - r0) * c);
    detail::finish_op(n, [r0, c](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i) gi[r0 * c + i] += g[i];
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    if (a.shape().size() != 2 || c1 > a.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                         shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
    auto n = detail::make_result<T>({r, w}, {a.node()});
    const T* pa = a.data().data();
    for (std::size_t i = 0; i < r; ++i)
        std::memcpy(n->value.data() + i * w, pa + i * c + c0, sizeof(T) * w);
    detail::finish_op(n, [r, c, c0, w](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gi = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gi[i * c + c0 + j] += g[i * w + j];
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
    auto n = detail::make_result<T>({ra + rb, c}, {a.node(), b.node()});
    std::memcpy(n->value.data(), a.data().data(), sizeof(T) * ra * c);
    std::memcpy(n->value.data() + ra * c, b.data().data(), sizeof(T) * rb * c);
    detail::finish_op(n, [ra, rb, c](Node<T>& self) {
        const T* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            T* gi = self.inputs[0]->grad_ptr();
            for (std::size_t i = 0; i < ra * c; ++i) gi[i] += g[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* gi = self.inputs[1]->grad_ptr();
            for (std::size_t i = 0; i < rb * c; ++i) gi[i] += g[ra * c + i];
        }
    });
    return Tensor<T>(n);
}

// Reductions accumulate in double regardless of T.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    auto n = detail::make_result<T>({1}, {a.node()});
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    n->value[0] = static_cast<T>(acc);
    detail::finish_op(n, [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T g = self.grad[0];
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.inputs[0]->numel();
        for (std::size_t i = 0; i < ln; ++i) gi[i] += g;
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    const std::size_t len = a.numel();
    auto n = detail::make_result<T>({1}, {a.node()});
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    n->value[0] = static_cast<T>(acc / static_cast<double>(len));
    detail::finish_op(n, [len](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T g = self.grad[0] / static_cast<T>(len);
        T* gi = self.inputs[0]->grad_ptr();
        for (std::size_t i = 0; i < len; ++i) gi[i] += g;
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    auto n = detail::make_result<T>(a.shape(), {a.node()});
    const std::size_t len = n->numel();
    for (std::size_t i = 0; i < len; ++i) n->value[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    detail::finish_op(n, [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        const T* v = self.inputs[0]->value.data();
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i)
            if (v[i] > T(0)) gi[i] += g[i];
    });
    return Tensor<T>(n);
}

// Exact (erf-based) GELU; backward uses Phi(x) + x*phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    auto n = detail::make_result<T>(a.shape(), {a.node()});
    const std::size_t len = n->numel();
    for (std::size_t i = 0; i < len; ++i) {
        const double x = static_cast<double>(a.data()[i]);
        n->value[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
    }
    detail::finish_op(n, [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        const T* v = self.inputs[0]->value.data();
        T* gi = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i) {
            const double x = static_cast<double>(v[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            gi[i] += g[i] * static_cast<T>(cdf + x * pdf);
        }
    });
    return Tensor<T>(n);
}

// Softmax along one axis, computed with max subtraction. Rejects non-finite
// input up front since inf would poison the row through inf-inf.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " of " + shape_str(s));
    for (T v : a.data())
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("softmax: non-finite input");
    std::size_t outer = 1, inner = 1;
    const std::size_t n_ax = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

    auto n = detail::make_result<T>(s, {a.node()});
    const T* pa = a.data().data();
    T* out = n->value.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n_ax * inner + in;
            double m = -HUGE_VAL;
            for (std::size_t j = 0; j < n_ax; ++j) m = std::max(m, static_cast<double>(pa[base + j * inner]));
            double denom = 0;
            for (std::size_t j = 0; j < n_ax; ++j) {
                const double e = std::exp(static_cast<double>(pa[base + j * inner]) - m);
                out[base + j * inner] = static_cast<T>(e);
                denom += e;
            }
            for (std::size_t j = 0; j < n_ax; ++j)
                out[base + j * inner] = static_cast<T>(static_cast<double>(out[base + j * inner]) / denom);
        }
    }
    detail::finish_op(n, [outer, inner, n_ax](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        const T* y = self.value.data();
        T* gi = self.inputs[0]->grad_ptr();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n_ax * inner + in;
                double dot = 0;
                for (std::size_t j = 0; j < n_ax; ++j)
                    dot += static_cast<double>(g[base + j * inner]) * static_cast<double>(y[base + j * inner]);
                for (std::size_t j = 0; j < n_ax; ++j) {
                    const std::size_t ix = base + j * inner;
                    gi[ix] += y[ix] * (g[ix] - static_cast<T>(dot));
                }
            }
        }
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    return softmax(a, a.shape().size() - 1);
}

}  // namespace bootvit
