#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

#include "bootvit/ops_core.hpp"
#include "bootvit/ops_nn.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

// One kernel offset realized as a constant n x n binary matrix with at most
// one entry per row. Rows whose source position falls outside the feature map
// (the zero-padding region) are simply absent.
struct SelectionMatrix {
    std::size_t n = 0;
    int di = 0, dj = 0;
    std::vector<std::pair<std::size_t, std::size_t>> entries;  // (row, col), value 1
    std::vector<std::ptrdiff_t> src;  // per row: source column, -1 when the row is empty

    std::size_t nnz() const { return entries.size(); }
};

struct BiasSet {
    std::vector<SelectionMatrix> matrices;
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t feat_h = 0, feat_w = 0;

    std::size_t n() const { return feat_h * feat_w; }
    std::size_t size() const { return matrices.size(); }
};

namespace detail {

inline SelectionMatrix make_selection(std::size_t fh, std::size_t fw, int di, int dj) {
    SelectionMatrix m;
    m.n = fh * fw;
    m.di = di;
    m.dj = dj;
    m.src.assign(m.n, -1);
    for (std::size_t y = 0; y < fh; ++y) {
        for (std::size_t x = 0; x < fw; ++x) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + di;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dj;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(fh) || sx < 0 ||
                sx >= static_cast<std::ptrdiff_t>(fw))
                continue;
            const std::size_t row = y * fw + x;
            const std::size_t col = static_cast<std::size_t>(sy) * fw + static_cast<std::size_t>(sx);
            m.entries.emplace_back(row, col);
            m.src[row] = static_cast<std::ptrdiff_t>(col);
        }
    }
    return m;
}

// Window offsets for a k-wide kernel: -(k-1)/2 .. k/2. Odd kernels center on
// zero; even kernels anchor at zero and extend one step positive.
inline BiasSet build_bias_set(std::size_t fh, std::size_t fw, std::size_t kh, std::size_t kw,
                              bool allow_even) {
    if (fh == 0 || fw == 0 || kh == 0 || kw == 0)
        throw ConfigError("selection matrices need a nonempty map and kernel");
    if (!allow_even && (kh % 2 == 0 || kw % 2 == 0))
        throw ConfigError("selection kernel dims must be odd, got " + std::to_string(kh) + "x" +
                          std::to_string(kw));
    BiasSet set;
    set.kernel_h = kh;
    set.kernel_w = kw;
    set.feat_h = fh;
    set.feat_w = fw;
    const int lo_i = -static_cast<int>((kh - 1) / 2), hi_i = static_cast<int>(kh / 2);
    const int lo_j = -static_cast<int>((kw - 1) / 2), hi_j = static_cast<int>(kw / 2);
    for (int di = lo_i; di <= hi_i; ++di)
        for (int dj = lo_j; dj <= hi_j; ++dj) set.matrices.push_back(make_selection(fh, fw, di, dj));
    return set;
}

}  // namespace detail

// Full bias set of a k_h x k_w convolution over an H_f x W_f map, matrices in
// row-major kernel order. Odd kernels only; even dims have no center and are
// rejected here.
inline BiasSet build_selection_matrices(std::size_t feat_h, std::size_t feat_w, std::size_t kernel_h,
                                        std::size_t kernel_w) {
    return detail::build_bias_set(feat_h, feat_w, kernel_h, kernel_w, false);
}

inline BiasSet build_selection_matrices(std::size_t feat_h, std::size_t feat_w, std::size_t kernel) {
    return build_selection_matrices(feat_h, feat_w, kernel, kernel);
}

// Deterministic center-first subset of H matrices. Offsets are ordered by
// taxicab distance from the center, then |di|, then di, then dj, which keeps
// the subset local and fully reproducible. With H = N' this is a reordering
// of the full set.
inline BiasSet select_generalized_biases(std::size_t heads, const BiasSet& full) {
    if (heads == 0 || heads > full.size())
        throw ConfigError("generalized bias subset of " + std::to_string(heads) + " from " +
                          std::to_string(full.size()) + " matrices");
    std::vector<std::size_t> order(full.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const SelectionMatrix& ma = full.matrices[a];
        const SelectionMatrix& mb = full.matrices[b];
        const auto key = [](const SelectionMatrix& m) {
            return std::make_tuple(std::abs(m.di) + std::abs(m.dj), std::abs(m.di), m.di, m.dj);
        };
        return key(ma) < key(mb);
    });
    BiasSet out;
    out.kernel_h = full.kernel_h;
    out.kernel_w = full.kernel_w;
    out.feat_h = full.feat_h;
    out.feat_w = full.feat_w;
    for (std::size_t h = 0; h < heads; ++h) out.matrices.push_back(full.matrices[order[h]]);
    return out;
}

// Window construction plus subset selection in one step. The window side is
// ceil(sqrt(H)), which is even for e.g. H=4; that is fine here since the
// subset rule, not a conv center, anchors the choice.
inline BiasSet generalized_bias_set(std::size_t feat_h, std::size_t feat_w, std::size_t heads) {
    const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(heads))));
    return select_generalized_biases(heads, detail::build_bias_set(feat_h, feat_w, side, side, true));
}

// Apply a selection matrix to a batched token matrix: out row r of each block
// is x row src[r] of the same block, or zero for absent rows. This is a
// gather, never a dense multiply; the backward pass scatters through the same
// index map.
template <typename T>
Tensor<T> sparse_select(const SelectionMatrix& phi, const Tensor<T>& x, std::size_t block_rows) {
    const std::size_t b = detail::block_count(x, block_rows, "sparse_select");
    if (block_rows != phi.n)
        throw ShapeError("sparse_select: matrix of " + std::to_string(phi.n) + " tokens on block of " +
                         std::to_string(block_rows));
    const std::size_t d = x.dim(1);
    auto n = detail::make_result<T>(x.shape(), {x.node()});
    const T* px = x.data().data();
    // Shared, immutable view of the index map for the closure.
    auto srcmap = std::make_shared<std::vector<std::ptrdiff_t>>(phi.src);
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < block_rows; ++r) {
            T* dst = n->value.data() + (bi * block_rows + r) * d;
            const std::ptrdiff_t s = (*srcmap)[r];
            if (s < 0)
                std::memset(dst, 0, sizeof(T) * d);
            else
                std::memcpy(dst, px + (bi * block_rows + static_cast<std::size_t>(s)) * d, sizeof(T) * d);
        }
    }
    detail::finish_op(n, [b, block_rows, d, srcmap](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t r = 0; r < block_rows; ++r) {
                const std::ptrdiff_t s = (*srcmap)[r];
                if (s < 0) continue;
                const T* gr = g + (bi * block_rows + r) * d;
                T* dst = gx + (bi * block_rows + static_cast<std::size_t>(s)) * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += gr[c];
            }
    });
    return Tensor<T>(n);
}

// Convolution in matrix form: Y = sum_i Phi_i X W_i, one weight per kernel
// offset. Works on batched token matrices; each block of biases.n() rows is
// one sample.
template <typename T>
Tensor<T> conv_matrix_form(const Tensor<T>& x, const BiasSet& biases, const std::vector<Tensor<T>>& w) {
    if (w.size() != biases.size())
        throw ConfigError("conv_matrix_form: " + std::to_string(w.size()) + " weights for " +
                          std::to_string(biases.size()) + " selection matrices");
    Tensor<T> y;
    for (std::size_t i = 0; i < w.size(); ++i) {
        Tensor<T> term = matmul(sparse_select(biases.matrices[i], x, biases.n()), w[i]);
        y = y.defined() ? add(y, term) : term;
    }
    return y;
}

// Generalized convolution: Y = sum_h Phi~_h X W_h^vo with one d x d weight
// per head. Identical math to conv_matrix_form; kept separate because the
// head weights may come from a shared store and the head count is usually
// below the full window size.
template <typename T>
Tensor<T> conv_generalized(const Tensor<T>& x, const BiasSet& biases, const std::vector<Tensor<T>>& w_vo) {
    if (w_vo.size() != biases.size())
        throw ConfigError("conv_generalized: " + std::to_string(w_vo.size()) + " head weights for " +
                          std::to_string(biases.size()) + " selection matrices");
    return conv_matrix_form(x, biases, w_vo);
}

template <typename T>
struct MhsaResult {
    Tensor<T> y;
    // Per head, row-stochastic attention for every block, flattened
    // [blocks][n][n]. Value copies; not part of the gradient graph.
    std::vector<std::shared_ptr<std::vector<T>>> attention;
    std::size_t block_rows = 0;
};

// Multi-head self-attention in functional form over per-head projections:
// Psi_h = softmax(X W_h^q (X W_h^k)^T / sqrt(d_k)), Y = sum_h Psi_h X W_h^v W_h^o.
// wq, wk, wv are [d x d_k] per head, wo is [d_k x d] per head.
template <typename T>
MhsaResult<T> mhsa_forward(const Tensor<T>& x, const std::vector<Tensor<T>>& wq,
                           const std::vector<Tensor<T>>& wk, const std::vector<Tensor<T>>& wv,
                           const std::vector<Tensor<T>>& wo, std::size_t block_rows) {
    const std::size_t heads = wq.size();
    if (heads == 0 || wk.size() != heads || wv.size() != heads || wo.size() != heads)
        throw ConfigError("mhsa_forward: mismatched head lists");
    const std::size_t dk = wq[0].dim(1);
    const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    MhsaResult<T> res;
    res.block_rows = block_rows;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> q = matmul(x, wq[h]);
        Tensor<T> k = matmul(x, wk[h]);
        Tensor<T> v = matmul(x, wv[h]);
        AttentionOut<T> att = attention_context(q, k, v, block_rows, att_scale);
        Tensor<T> term = matmul(att.context, wo[h]);
        res.y = res.y.defined() ? add(res.y, term) : term;
        res.attention.push_back(att.probs);
    }
    return res;
}

namespace detail {

// Dense y_err = sum_h (phi~_h - psi_h) X W_h^vo for a single block, plain
// value arithmetic in double.
template <typename T>
std::vector<double> discrepancy_matrix(const Tensor<T>& x,
                                       const std::vector<std::shared_ptr<std::vector<T>>>& attn,
                                       const BiasSet& biases, const std::vector<Tensor<T>>& w_vo) {
    if (attn.size() != biases.size() || w_vo.size() != biases.size())
        throw ConfigError("attention_discrepancy: " + std::to_string(attn.size()) + " attention / " +
                          std::to_string(w_vo.size()) + " weight entries for " +
                          std::to_string(biases.size()) + " selection matrices");
    const std::size_t n = biases.n();
    if (x.shape().size() != 2 || x.dim(0) != n)
        throw ShapeError("attention_discrepancy: " + shape_str(x.shape()) + " with " + std::to_string(n) +
                         " tokens");
    const std::size_t d = x.dim(1);
    std::vector<double> err(n * d, 0.0);
    std::vector<double> mix(d);
    for (std::size_t h = 0; h < biases.size(); ++h) {
        const SelectionMatrix& phi = biases.matrices[h];
        const std::vector<T>& psi = *attn[h];
        if (psi.size() != n * n) throw ShapeError("attention_discrepancy: attention is not n x n");
        const Tensor<T>& w = w_vo[h];
        if (w.shape().size() != 2 || w.dim(0) != d)
            throw ShapeError("attention_discrepancy: weight " + shape_str(w.shape()));
        const std::size_t dout = w.dim(1);
        if (dout != d) throw ShapeError("attention_discrepancy: weight " + shape_str(w.shape()));
        for (std::size_t r = 0; r < n; ++r) {
            // (phi_h - psi_h) row r applied to X.
            std::fill(mix.begin(), mix.end(), 0.0);
            if (phi.src[r] >= 0) {
                const T* xs = x.data().data() + static_cast<std::size_t>(phi.src[r]) * d;
                for (std::size_t c = 0; c < d; ++c) mix[c] += static_cast<double>(xs[c]);
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double p = static_cast<double>(psi[r * n + j]);
                if (p == 0.0) continue;
                const T* xj = x.data().data() + j * d;
                for (std::size_t c = 0; c < d; ++c) mix[c] -= p * static_cast<double>(xj[c]);
            }
            for (std::size_t co = 0; co < dout; ++co) {
                double acc = 0;
                for (std::size_t c = 0; c < d; ++c)
                    acc += mix[c] * static_cast<double>(w.data()[c * dout + co]);
                err[r * d + co] += acc;
            }
        }
    }
    return err;
}

}  // namespace detail

// The c-th token of y_err = sum_h (phi~_h - psi_h) X W_h^vo. Plain values;
// gradients never flow through this diagnostic.
template <typename T>
std::vector<T> attention_discrepancy(const Tensor<T>& x,
                                     const std::vector<std::shared_ptr<std::vector<T>>>& attn,
                                     const BiasSet& biases, const std::vector<Tensor<T>>& w_vo,
                                     std::size_t c) {
    const std::size_t n = biases.n();
    if (c >= n)
        throw ShapeError("attention_discrepancy: token " + std::to_string(c) + " of " + std::to_string(n));
    std::vector<double> err = detail::discrepancy_matrix(x, attn, biases, w_vo);
    const std::size_t d = x.dim(1);
    std::vector<T> row(d);
    for (std::size_t i = 0; i < d; ++i) row[i] = static_cast<T>(err[c * d + i]);
    return row;
}

// Frobenius norm of the full y_err matrix, for per-layer reporting.
template <typename T>
double attention_discrepancy_norm(const Tensor<T>& x,
                                  const std::vector<std::shared_ptr<std::vector<T>>>& attn,
                                  const BiasSet& biases, const std::vector<Tensor<T>>& w_vo) {
    std::vector<double> err = detail::discrepancy_matrix(x, attn, biases, w_vo);
    double acc = 0;
    for (double v : err) acc += v * v;
    return std::sqrt(acc);
}

// Plain-text sparse triplet dump, one `row col value` line per entry.
inline void write_triplets(std::ostream& os, const SelectionMatrix& m) {
    for (const auto& [r, c] : m.entries) os << r << " " << c << " 1\n";
}

template <typename T>
void write_triplets(std::ostream& os, const std::vector<T>& dense, std::size_t rows, std::size_t cols) {
    if (dense.size() != rows * cols) throw ShapeError("write_triplets: dense buffer size mismatch");
    std::ostringstream fmt;
    fmt << std::setprecision(9);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = static_cast<double>(dense[r * cols + c]);
            if (v == 0.0) continue;
            fmt.str("");
            fmt << r << " " << c << " " << v << "\n";
            os << fmt.str();
        }
}

}  // namespace bootvit
