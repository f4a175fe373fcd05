#pragma once

#include <cmath>
#include <cstring>
#include <memory>

#include "bootvit/ops_core.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

inline constexpr double kLayerNormEps = 1e-6;

// Row-wise layer norm over the last axis of a 2-d tensor, with learned gain
// and bias of width d.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    if (x.shape().size() != 2) throw ShapeError("layer_norm: expected 2-d, got " + shape_str(x.shape()));
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: params " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " vs width " + std::to_string(d));
    auto n = detail::make_result<T>(x.shape(), {x.node(), gain.node(), bias.node()});
    const T* px = x.data().data();
    const T* pg = gain.data().data();
    const T* pb = bias.data().data();
    // Keep xhat and 1/std for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(rows * d);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = px + r * d;
        double mu = 0;
        for (std::size_t c = 0; c < d; ++c) mu += static_cast<double>(xi[c]);
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = static_cast<double>(xi[c]) - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        (*rstd)[r] = static_cast<T>(rs);
        for (std::size_t c = 0; c < d; ++c) {
            const T h = static_cast<T>((static_cast<double>(xi[c]) - mu) * rs);
            (*xhat)[r * d + c] = h;
            n->value[r * d + c] = h * pg[c] + pb[c];
        }
    }
    detail::finish_op(n, [rows, d, xhat, rstd](Node<T>& self) {
        const T* g = self.grad.data();
        const T* pg = self.inputs[1]->value.data();
        if (self.inputs[0]->requires_grad) {
            T* gx = self.inputs[0]->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gi = g + r * d;
                const T* h = xhat->data() + r * d;
                double s1 = 0, s2 = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = static_cast<double>(gi[c]) * static_cast<double>(pg[c]);
                    s1 += dh;
                    s2 += dh * static_cast<double>(h[c]);
                }
                s1 /= static_cast<double>(d);
                s2 /= static_cast<double>(d);
                const double rs = static_cast<double>((*rstd)[r]);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = static_cast<double>(gi[c]) * static_cast<double>(pg[c]);
                    gx[r * d + c] += static_cast<T>(rs * (dh - s1 - static_cast<double>(h[c]) * s2));
                }
            }
        }
        if (self.inputs[1]->requires_grad) {
            T* gg = self.inputs[1]->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * (*xhat)[r * d + c];
        }
        if (self.inputs[2]->requires_grad) {
            T* gb = self.inputs[2]->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
    });
    return Tensor<T>(n);
}

// Direct 2-d convolution. x: [B, Cin, H, W], w: [kh, kw, Cin/groups, Cout],
// zero padding, integral stride. Only used in the small stem layers, so the
// plain five-deep loop is fine.
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad,
                        std::size_t groups = 1) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw ShapeError("conv2d_direct: " + shape_str(x.shape()) + " with " + shape_str(w.shape()));
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t kh = w.dim(0), kw = w.dim(1), Cout = w.dim(3);
    if (groups == 0 || Cin % groups != 0 || Cout % groups != 0 || w.dim(2) != Cin / groups)
        throw ShapeError("conv2d_direct: " + std::to_string(groups) + " groups over " +
                         shape_str(x.shape()) + " with " + shape_str(w.shape()));
    if (stride == 0 || H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError("conv2d_direct: kernel " + shape_str(w.shape()) + " does not fit " +
                         shape_str(x.shape()));
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    const std::size_t cg_in = Cin / groups, cg_out = Cout / groups;

    auto n = detail::make_result<T>({B, Cout, Ho, Wo}, {x.node(), w.node()});
    const T* px = x.data().data();
    const T* pw = w.data().data();
    T* out = n->value.data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            const std::size_t g0 = (oc / cg_out) * cg_in;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = 0;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            for (std::size_t ic = 0; ic < cg_in; ++ic) {
                                acc += static_cast<double>(
                                           px[((b * Cin + g0 + ic) * H + iy) * W + ix]) *
                                       static_cast<double>(pw[((ky * kw + kx) * cg_in + ic) * Cout + oc]);
                            }
                        }
                    }
                    out[((b * Cout + oc) * Ho + oy) * Wo + ox] = static_cast<T>(acc);
                }
            }
        }
    }
    detail::finish_op(n, [B, Cin, H, W, kh, kw, Cout, Ho, Wo, stride, pad, cg_in, cg_out](Node<T>& self) {
        const T* g = self.grad.data();
        const T* px = self.inputs[0]->value.data();
        const T* pw = self.inputs[1]->value.data();
        T* gx = self.inputs[0]->requires_grad ? self.inputs[0]->grad_ptr() : nullptr;
        T* gw = self.inputs[1]->requires_grad ? self.inputs[1]->grad_ptr() : nullptr;
        if (!gx && !gw) return;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oc = 0; oc < Cout; ++oc) {
                const std::size_t g0 = (oc / cg_out) * cg_in;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const T go = g[((b * Cout + oc) * Ho + oy) * Wo + ox];
                        if (go == T(0)) continue;
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                for (std::size_t ic = 0; ic < cg_in; ++ic) {
                                    const std::size_t xi = ((b * Cin + g0 + ic) * H + iy) * W + ix;
                                    const std::size_t wi = ((ky * kw + kx) * cg_in + ic) * Cout + oc;
                                    if (gx) gx[xi] += go * pw[wi];
                                    if (gw) gw[wi] += go * px[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return Tensor<T>(n);
}

// x[B,C,H,W] + bias[C]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.shape().size() != 4 || bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto n = detail::make_result<T>(x.shape(), {x.node(), bias.node()});
    const T* px = x.data().data();
    const T* pb = bias.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < hw; ++i)
                n->value[(b * C + c) * hw + i] = px[(b * C + c) * hw + i] + pb[c];
    detail::finish_op(n, [B, C, hw](Node<T>& self) {
        const T* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            T* gx = self.inputs[0]->grad_ptr();
            const std::size_t ln = B * C * hw;
            for (std::size_t i = 0; i < ln; ++i) gx[i] += g[i];
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < hw; ++i) gb[c] += g[(b * C + c) * hw + i];
        }
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    if (x.shape().size() != 4 || k == 0 || stride == 0 || x.dim(2) < k || x.dim(3) < k)
        throw ShapeError("maxpool2d: " + std::to_string(k) + "x" + std::to_string(k) + " over " +
                         shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    auto n = detail::make_result<T>({B, C, Ho, Wo}, {x.node()});
    auto argmax = std::make_shared<std::vector<std::size_t>>(B * C * Ho * Wo);
    const T* px = x.data().data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* plane = px + bc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = (oy * stride) * W + ox * stride;
                T bv = plane[best];
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t ix = (oy * stride + ky) * W + ox * stride + kx;
                        if (plane[ix] > bv) {
                            bv = plane[ix];
                            best = ix;
                        }
                    }
                const std::size_t oi = bc * Ho * Wo + oy * Wo + ox;
                n->value[oi] = bv;
                (*argmax)[oi] = bc * H * W + best;
            }
        }
    }
    detail::finish_op(n, [argmax](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        const std::size_t ln = self.numel();
        for (std::size_t i = 0; i < ln; ++i) gx[(*argmax)[i]] += g[i];
    });
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    if (x.shape().size() != 4 || k == 0 || stride == 0 || x.dim(2) < k || x.dim(3) < k)
        throw ShapeError("avgpool2d: " + std::to_string(k) + "x" + std::to_string(k) + " over " +
                         shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    auto n = detail::make_result<T>({B, C, Ho, Wo}, {x.node()});
    const T* px = x.data().data();
    const T inv = T(1) / static_cast<T>(k * k);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* plane = px + bc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                double acc = 0;
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        acc += static_cast<double>(plane[(oy * stride + ky) * W + ox * stride + kx]);
                n->value[bc * Ho * Wo + oy * Wo + ox] = static_cast<T>(acc) * inv;
            }
    }
    detail::finish_op(n, [B, C, H, W, Ho, Wo, k, stride, inv](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const T go = g[bc * Ho * Wo + oy * Wo + ox] * inv;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            gx[bc * H * W + (oy * stride + ky) * W + ox * stride + kx] += go;
                }
    });
    return Tensor<T>(n);
}

// [B,C,H,W] -> token matrix [B*H*W x C], tokens in row-major spatial order.
template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& x) {
    if (x.shape().size() != 4) throw ShapeError("chw_to_tokens: " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto n = detail::make_result<T>({B * hw, C}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < hw; ++i)
                n->value[(b * hw + i) * C + c] = px[(b * C + c) * hw + i];
    detail::finish_op(n, [B, C, hw](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < hw; ++i)
                    gx[(b * C + c) * hw + i] += g[(b * hw + i) * C + c];
    });
    return Tensor<T>(n);
}

// Inverse of chw_to_tokens. x: [B*H*W x C] -> [B, C, H, W]
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& x, std::size_t H, std::size_t W) {
    if (x.shape().size() != 2 || H * W == 0 || x.dim(0) % (H * W) != 0)
        throw ShapeError("tokens_to_chw: " + shape_str(x.shape()) + " to " + std::to_string(H) + "x" +
                         std::to_string(W));
    const std::size_t hw = H * W, B = x.dim(0) / hw, C = x.dim(1);
    auto n = detail::make_result<T>({B, C, H, W}, {x.node()});
    const T* px = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < hw; ++i)
                n->value[(b * C + c) * hw + i] = px[(b * hw + i) * C + c];
    detail::finish_op(n, [B, C, hw](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < hw; ++i)
                    gx[(b * hw + i) * C + c] += g[(b * C + c) * hw + i];
    });
    return Tensor<T>(n);
}

// Mix token rows with a fixed row matrix: out row i of each block is
// sum_j probs[i*n+j] * v row j of the same block. Differentiable in v only;
// probs is a plain constant (e.g. a one-hot selection pattern or an exported
// attention map replayed).
template <typename T>
Tensor<T> apply_attention(const std::vector<T>& probs, const Tensor<T>& v, std::size_t block_rows) {
    const std::size_t b = detail::block_count(v, block_rows, "apply_attention");
    if (probs.size() != block_rows * block_rows)
        throw ShapeError("apply_attention: " + std::to_string(probs.size()) + " weights for blocks of " +
                         std::to_string(block_rows));
    const std::size_t d = v.dim(1);
    auto n = detail::make_result<T>(v.shape(), {v.node()});
    const T* pv = v.data().data();
    auto pr = std::make_shared<std::vector<T>>(probs);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t i = 0; i < block_rows; ++i) {
            T* out = n->value.data() + (bi * block_rows + i) * d;
            std::memset(out, 0, sizeof(T) * d);
            for (std::size_t j = 0; j < block_rows; ++j) {
                const T p = (*pr)[i * block_rows + j];
                if (p == T(0)) continue;
                const T* src = pv + (bi * block_rows + j) * d;
                for (std::size_t c = 0; c < d; ++c) out[c] += p * src[c];
            }
        }
    detail::finish_op(n, [b, block_rows, d, pr](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T* g = self.grad.data();
        T* gv = self.inputs[0]->grad_ptr();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t i = 0; i < block_rows; ++i)
                for (std::size_t j = 0; j < block_rows; ++j) {
                    const T p = (*pr)[i * block_rows + j];
                    if (p == T(0)) continue;
                    const T* gr = g + (bi * block_rows + i) * d;
                    T* dst = gv + (bi * block_rows + j) * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += p * gr[c];
                }
    });
    return Tensor<T>(n);
}

template <typename T>
struct AttentionOut {
    Tensor<T> context;
    // Row-stochastic attention weights, one n x n matrix per block, flattened
    // as [blocks][n][n]. Plain values, kept for inspection and for the
    // discrepancy measure; gradients do not flow through this copy.
    std::shared_ptr<std::vector<T>> probs;
    std::size_t block_rows = 0;
};

// Fused scaled dot-product attention for one head over a batched token
// matrix. q, k: [B*n x dk], v: [B*n x dv]; each block of n rows attends only
// within itself. Output is [B*n x dv].
template <typename T>
AttentionOut<T> attention_context(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  std::size_t block_rows, T att_scale) {
    const std::size_t b = detail::block_count(q, block_rows, "attention_context");
    if (k.shape() != q.shape()) throw ShapeError("attention_context: k " + shape_str(k.shape()));
    if (v.shape().size() != 2 || v.dim(0) != q.dim(0))
        throw ShapeError("attention_context: v " + shape_str(v.shape()));
    const std::size_t dk = q.dim(1), dv = v.dim(1), nn = block_rows;

    auto n = detail::make_result<T>({b * nn, dv}, {q.node(), k.node(), v.node()});
    auto probs = std::make_shared<std::vector<T>>(b * nn * nn);
    const T* pq = q.data().data();
    const T* pk = k.data().data();
    const T* pv = v.data().data();
    std::vector<double> row(nn);
    for (std::size_t bi = 0; bi < b; ++bi) {
        const T* Q = pq + bi * nn * dk;
        const T* K = pk + bi * nn * dk;
        const T* V = pv + bi * nn * dv;
        T* P = probs->data() + bi * nn * nn;
        for (std::size_t i = 0; i < nn; ++i) {
            double m = -HUGE_VAL;
            for (std::size_t j = 0; j < nn; ++j) {
                double s = 0;
                for (std::size_t c = 0; c < dk; ++c)
                    s += static_cast<double>(Q[i * dk + c]) * static_cast<double>(K[j * dk + c]);
                s *= static_cast<double>(att_scale);
                if (!std::isfinite(s)) throw NumericError("attention_context: non-finite score");
                row[j] = s;
                m = std::max(m, s);
            }
            double denom = 0;
            for (std::size_t j = 0; j < nn; ++j) {
                row[j] = std::exp(row[j] - m);
                denom += row[j];
            }
            T* out = n->value.data() + (bi * nn + i) * dv;
            std::memset(out, 0, sizeof(T) * dv);
            for (std::size_t j = 0; j < nn; ++j) {
                const T p = static_cast<T>(row[j] / denom);
                P[i * nn + j] = p;
                for (std::size_t c = 0; c < dv; ++c) out[c] += p * V[j * dv + c];
            }
        }
    }
    detail::finish_op(n, [b, nn, dk, dv, att_scale, probs](Node<T>& self) {
        const T* g = self.grad.data();
        const T* pq = self.inputs[0]->value.data();
        const T* pk = self.inputs[1]->value.data();
        const T* pv = self.inputs[2]->value.data();
        T* gq = self.inputs[0]->requires_grad ? self.inputs[0]->grad_ptr() : nullptr;
        T* gk = self.inputs[1]->requires_grad ? self.inputs[1]->grad_ptr() : nullptr;
        T* gv = self.inputs[2]->requires_grad ? self.inputs[2]->grad_ptr() : nullptr;
        std::vector<T> dP(nn), dS(nn);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const T* Q = pq + bi * nn * dk;
            const T* K = pk + bi * nn * dk;
            const T* V = pv + bi * nn * dv;
            const T* P = probs->data() + bi * nn * nn;
            const T* G = g + bi * nn * dv;
            for (std::size_t i = 0; i < nn; ++i) {
                if (gv) {
                    for (std::size_t j = 0; j < nn; ++j) {
                        const T p = P[i * nn + j];
                        for (std::size_t c = 0; c < dv; ++c)
                            gv[(bi * nn + j) * dv + c] += p * G[i * dv + c];
                    }
                }
                if (!gq && !gk) continue;
                double dot = 0;
                for (std::size_t j = 0; j < nn; ++j) {
                    double s = 0;
                    for (std::size_t c = 0; c < dv; ++c)
                        s += static_cast<double>(G[i * dv + c]) * static_cast<double>(V[j * dv + c]);
                    dP[j] = static_cast<T>(s);
                    dot += s * static_cast<double>(P[i * nn + j]);
                }
                for (std::size_t j = 0; j < nn; ++j)
                    dS[j] = P[i * nn + j] * (dP[j] - static_cast<T>(dot)) * att_scale;
                for (std::size_t j = 0; j < nn; ++j) {
                    const T ds = dS[j];
                    if (ds == T(0)) continue;
                    for (std::size_t c = 0; c < dk; ++c) {
                        if (gq) gq[(bi * nn + i) * dk + c] += ds * K[j * dk + c];
                        if (gk) gk[(bi * nn + j) * dk + c] += ds * Q[i * dk + c];
                    }
                }
            }
        }
    });
    AttentionOut<T> out{Tensor<T>(n), probs, block_rows};
    return out;
}

}  // namespace bootvit
