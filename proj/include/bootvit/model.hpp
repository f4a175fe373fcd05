#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bootvit/bias.hpp"
#include "bootvit/ops_core.hpp"
#include "bootvit/ops_nn.hpp"
#include "bootvit/ops_tokens.hpp"
#include "bootvit/rng.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

enum class AgentVariant { base, res_like };

struct ArchConfig {
    std::size_t layers = 4;    // m
    std::size_t hidden = 72;   // d
    std::size_t heads = 9;     // H
    std::size_t patch = 4;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t classes = 10;
    std::size_t mlp_ratio = 4;
    AgentVariant agent_variant = AgentVariant::base;

    std::size_t grid() const { return image_size / patch; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t head_dim() const { return hidden / heads; }
    std::size_t mlp_hidden() const { return hidden * mlp_ratio; }

    void validate() const {
        if (layers == 0 || hidden == 0 || heads == 0 || classes == 0 || channels == 0 || mlp_ratio == 0)
            throw ConfigError("arch: all sizes must be positive");
        if (hidden % heads != 0)
            throw ConfigError("arch: hidden " + std::to_string(hidden) + " not divisible by " +
                              std::to_string(heads) + " heads");
    }

    void validate_patched() const {
        validate();
        if (patch == 0 || image_size % patch != 0)
            throw ConfigError("arch: image " + std::to_string(image_size) + " not divisible by patch " +
                              std::to_string(patch));
    }

    // Encoder layers per res-like stage; down-sampling sits between stages.
    std::vector<std::size_t> res_stage_layers() const {
        if (layers == 6) return {1, 1, 4};
        if (layers == 12) return {2, 2, 8};
        if (layers >= 3) return {1, 1, layers - 2};
        return {layers};
    }
};

// Standard configurations; the tiny one is this artifact's own desk-scale
// addition and is the default everywhere.
inline ArchConfig vit_small_config() {
    ArchConfig c;
    c.layers = 6;
    c.hidden = 288;
    c.heads = 9;
    c.patch = 16;
    c.image_size = 224;
    c.agent_variant = AgentVariant::res_like;
    return c;
}

inline ArchConfig vit_base_config() {
    ArchConfig c = vit_small_config();
    c.layers = 12;
    c.hidden = 384;
    c.heads = 6;
    return c;
}

inline ArchConfig vit_tiny_desk_config() {
    ArchConfig c;
    c.layers = 4;
    c.hidden = 72;
    c.heads = 9;
    c.patch = 4;
    c.image_size = 32;
    c.agent_variant = AgentVariant::base;
    return c;
}

template <typename T>
struct NormParams {
    Tensor<T> g, b;
};

template <typename T>
struct AttnParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct FfnParams {
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct VitLayer {
    NormParams<T> ln1;
    AttnParams<T> attn;
    NormParams<T> ln2;
    FfnParams<T> ffn;
};

namespace detail {

// Every parameter gets its own seeded stream keyed on its canonical name, so
// initial values depend only on (master seed, name), never on construction
// order. That is what lets different training schemes start from identical
// weights for the tensors they have in common.
template <typename T>
Tensor<T> init_param(RngForest& forest, const std::string& name, Shape shape, double stddev) {
    RngStream s = forest.stream("init." + name);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(s.trunc_normal(stddev));
    return Tensor<T>::from_data(std::move(shape), std::move(v)).set_requires_grad(true).set_name(name);
}

template <typename T>
Tensor<T> init_const(const std::string& name, Shape shape, T value) {
    return Tensor<T>::full(std::move(shape), value).set_requires_grad(true).set_name(name);
}

template <typename T>
NormParams<T> init_norm(const std::string& prefix, std::size_t d) {
    return {init_const<T>(prefix + ".g", {d}, T(1)), init_const<T>(prefix + ".b", {d}, T(0))};
}

template <typename T>
FfnParams<T> init_ffn(RngForest& forest, const std::string& prefix, std::size_t d, std::size_t dh) {
    FfnParams<T> f;
    f.w1 = init_param<T>(forest, prefix + ".w1", {d, dh}, 0.02);
    f.b1 = init_const<T>(prefix + ".b1", {dh}, T(0));
    f.w2 = init_param<T>(forest, prefix + ".w2", {dh, d}, 0.02);
    f.b2 = init_const<T>(prefix + ".b2", {d}, T(0));
    return f;
}

}  // namespace detail

// Per-layer traces plus logits from one forward pass.
template <typename T>
struct Traced {
    std::vector<Tensor<T>> features;          // one token matrix per encoder layer
    std::vector<std::size_t> feature_tokens;  // tokens per sample in each entry
    Tensor<T> logits;
    // MHSA attention maps, per layer then per head; empty for the agent.
    std::vector<std::vector<std::shared_ptr<std::vector<T>>>> attention;
};

// One MHSA sublayer over packed projections: the per-head projections are
// column slices of d x d matrices. `fixed` overrides every head's attention
// with a given dense matrix (used to check the Eq. 5 / Eq. 2 coincidence on
// hard-coded patterns); gradients then flow through the value path only.
template <typename T>
std::pair<Tensor<T>, std::vector<std::shared_ptr<std::vector<T>>>> mhsa_layer_forward(
    const Tensor<T>& x, const AttnParams<T>& p, std::size_t heads, std::size_t block_rows,
    const std::vector<std::vector<T>>* fixed = nullptr) {
    const std::size_t d = x.dim(1);
    if (heads == 0 || d % heads != 0) throw ConfigError("mhsa: width " + std::to_string(d) + " with " +
                                                        std::to_string(heads) + " heads");
    const std::size_t dk = d / heads;
    const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor<T> q = linear(x, p.wq, p.bq);
    Tensor<T> k = linear(x, p.wk, p.bk);
    Tensor<T> v = linear(x, p.wv, p.bv);
    Tensor<T> sum;
    std::vector<std::shared_ptr<std::vector<T>>> probs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> vh = slice_cols(v, h * dk, (h + 1) * dk);
        Tensor<T> ctx;
        if (fixed) {
            ctx = apply_attention((*fixed)[h], vh, block_rows);
            probs.push_back(std::make_shared<std::vector<T>>((*fixed)[h]));
        } else {
            Tensor<T> qh = slice_cols(q, h * dk, (h + 1) * dk);
            Tensor<T> kh = slice_cols(k, h * dk, (h + 1) * dk);
            AttentionOut<T> att = attention_context(qh, kh, vh, block_rows, att_scale);
            ctx = att.context;
            probs.push_back(att.probs);
        }
        Tensor<T> term = matmul(ctx, slice_rows(p.wo, h * dk, (h + 1) * dk));
        sum = sum.defined() ? add(sum, term) : term;
    }
    return {add_row_bias(sum, p.bo), std::move(probs)};
}

// The shared-weight CONV sublayer: the value projection and output projection
// of an MHSA layer reused verbatim, with each head's attention replaced by
// its hard-coded selection matrix.
template <typename T>
Tensor<T> conv_shared_forward(const Tensor<T>& x, const Tensor<T>& wv, const Tensor<T>& bv,
                              const Tensor<T>& wo, const Tensor<T>& bo, const BiasSet& biases) {
    const std::size_t d = x.dim(1);
    const std::size_t heads = biases.size();
    if (heads == 0 || d % heads != 0)
        throw ConfigError("shared conv: width " + std::to_string(d) + " with " + std::to_string(heads) +
                          " heads");
    const std::size_t dk = d / heads;
    Tensor<T> v = linear(x, wv, bv);
    Tensor<T> sum;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> vh = slice_cols(v, h * dk, (h + 1) * dk);
        Tensor<T> g = sparse_select(biases.matrices[h], vh, biases.n());
        Tensor<T> term = matmul(g, slice_rows(wo, h * dk, (h + 1) * dk));
        sum = sum.defined() ? add(sum, term) : term;
    }
    return add_row_bias(sum, bo);
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const FfnParams<T>& p) {
    return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
struct VitModel {
    ArchConfig cfg;
    Tensor<T> patch_w, patch_b;  // [p,p,C,d], [d]
    Tensor<T> cls, pos;          // [d], [n+1 x d]
    std::vector<VitLayer<T>> layers;
    NormParams<T> final_norm;
    Tensor<T> head_w, head_b;

    template <typename F>
    void visit_params(F&& fn) {
        fn(patch_w);
        fn(patch_b);
        fn(cls);
        fn(pos);
        for (auto& l : layers) {
            fn(l.ln1.g);
            fn(l.ln1.b);
            fn(l.attn.wq);
            fn(l.attn.bq);
            fn(l.attn.wk);
            fn(l.attn.bk);
            fn(l.attn.wv);
            fn(l.attn.bv);
            fn(l.attn.wo);
            fn(l.attn.bo);
            fn(l.ln2.g);
            fn(l.ln2.b);
            fn(l.ffn.w1);
            fn(l.ffn.b1);
            fn(l.ffn.w2);
            fn(l.ffn.b2);
        }
        fn(final_norm.g);
        fn(final_norm.b);
        fn(head_w);
        fn(head_b);
    }

    Traced<T> forward_traced(const Tensor<T>& batch) {
        if (batch.shape().size() != 4 || batch.dim(1) != cfg.channels || batch.dim(2) != cfg.image_size ||
            batch.dim(3) != cfg.image_size)
            throw ShapeError("vit forward: batch " + shape_str(batch.shape()));
        const std::size_t n = cfg.tokens(), rows = n + 1;
        Tensor<T> x = chw_to_tokens(add_channel_bias(conv2d_direct(batch, patch_w, cfg.patch, 0), patch_b));
        x = block_prepend_row(x, cls, n);
        x = block_broadcast_add(x, pos, rows);
        Traced<T> out;
        for (auto& l : layers) {
            auto [att, probs] = mhsa_layer_forward(layer_norm(x, l.ln1.g, l.ln1.b), l.attn, cfg.heads, rows);
            x = add(x, att);
            x = add(x, ffn_forward(layer_norm(x, l.ln2.g, l.ln2.b), l.ffn));
            out.features.push_back(block_drop_first(x, rows));
            out.feature_tokens.push_back(n);
            out.attention.push_back(std::move(probs));
        }
        Tensor<T> h = layer_norm(x, final_norm.g, final_norm.b);
        out.logits = linear(block_take_first(h, rows), head_w, head_b);
        return out;
    }
};

// The slots both networks read when weight sharing is on. These are handles
// to the ViT's own tensors, not copies; there is exactly one storage location
// per slot.
template <typename T>
struct SharedParameterStore {
    struct LayerSlots {
        Tensor<T> wv, bv, wo, bo;  // the factors of W^vo plus their biases
        Tensor<T> w1, b1, w2, b2;  // FFN
    };
    std::size_t hidden = 0, heads = 0, mlp_hidden = 0;
    std::vector<LayerSlots> layers;

    static SharedParameterStore from_vit(const VitModel<T>& vit) {
        SharedParameterStore s;
        s.hidden = vit.cfg.hidden;
        s.heads = vit.cfg.heads;
        s.mlp_hidden = vit.cfg.mlp_hidden();
        for (const auto& l : vit.layers)
            s.layers.push_back({l.attn.wv, l.attn.bv, l.attn.wo, l.attn.bo, l.ffn.w1, l.ffn.b1, l.ffn.w2,
                                l.ffn.b2});
        return s;
    }

    template <typename F>
    void visit_params(F&& fn) {
        for (auto& l : layers) {
            fn(l.wv);
            fn(l.bv);
            fn(l.wo);
            fn(l.bo);
            fn(l.w1);
            fn(l.b1);
            fn(l.w2);
            fn(l.b2);
        }
    }
};

template <typename T>
struct AgentLayer {
    NormParams<T> ln1;
    // Private CONV weights; empty under sharing, where the store's value and
    // output projections stand in.
    std::vector<Tensor<T>> conv_heads;  // H of [d x d]
    Tensor<T> conv_bias;
    NormParams<T> ln2;
    FfnParams<T> ffn;  // aliases the store under sharing
    std::size_t stage = 0;
};

template <typename T>
struct AgentModel {
    ArchConfig cfg;
    bool shared = false;
    // base: stem1 is the patch projection. res-like: stem1 is the 7x7/64
    // convolution, stem2 the 3x3/d one; a 2x2 max pool sits between them.
    Tensor<T> stem1_w, stem1_b, stem2_w, stem2_b;
    std::vector<AgentLayer<T>> layers;
    std::vector<std::size_t> stage_grid;  // map side per stage
    std::vector<BiasSet> stage_biases;
    SharedParameterStore<T> store;  // engaged only when shared
    NormParams<T> final_norm;
    Tensor<T> head_w, head_b;

    bool res_like() const { return cfg.agent_variant == AgentVariant::res_like; }

    // Agent-owned parameters only; shared slots belong to the ViT and are
    // deliberately not revisited here.
    template <typename F>
    void visit_params(F&& fn) {
        fn(stem1_w);
        fn(stem1_b);
        if (res_like()) {
            fn(stem2_w);
            fn(stem2_b);
        }
        for (auto& l : layers) {
            fn(l.ln1.g);
            fn(l.ln1.b);
            if (!shared) {
                for (auto& h : l.conv_heads) fn(h);
                fn(l.conv_bias);
            }
            fn(l.ln2.g);
            fn(l.ln2.b);
            if (!shared) {
                fn(l.ffn.w1);
                fn(l.ffn.b1);
                fn(l.ffn.w2);
                fn(l.ffn.b2);
            }
        }
        fn(final_norm.g);
        fn(final_norm.b);
        fn(head_w);
        fn(head_b);
    }

    Traced<T> forward_traced(const Tensor<T>& batch) {
        if (batch.shape().size() != 4 || batch.dim(1) != cfg.channels || batch.dim(2) != cfg.image_size ||
            batch.dim(3) != cfg.image_size)
            throw ShapeError("agent forward: batch " + shape_str(batch.shape()));
        Tensor<T> x;
        if (res_like()) {
            Tensor<T> c1 = relu(add_channel_bias(conv2d_direct(batch, stem1_w, 2, 3), stem1_b));
            Tensor<T> pooled = maxpool2d(c1, 2, 2);
            x = chw_to_tokens(add_channel_bias(conv2d_direct(pooled, stem2_w, 2, 1), stem2_b));
        } else {
            x = chw_to_tokens(add_channel_bias(conv2d_direct(batch, stem1_w, cfg.patch, 0), stem1_b));
        }
        Traced<T> out;
        std::size_t stage = 0;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            AgentLayer<T>& l = layers[li];
            if (l.stage != stage) {
                // Parameter-free down-sampling between stages.
                const std::size_t g = stage_grid[stage];
                x = chw_to_tokens(avgpool2d(tokens_to_chw(x, g, g), 2, 2));
                stage = l.stage;
            }
            const BiasSet& biases = stage_biases[stage];
            const std::size_t rows = biases.n();
            Tensor<T> h1 = layer_norm(x, l.ln1.g, l.ln1.b);
            Tensor<T> conv;
            if (shared) {
                const auto& s = store.layers[li];
                conv = conv_shared_forward(h1, s.wv, s.bv, s.wo, s.bo, biases);
            } else {
                // The branch sums one full d x d projection per offset, so its
                // output is divided by the head count to stay comparable to a
                // single projection while the weights keep the common init
                // scale (Adam steps are absolute, so very small weights would
                // otherwise be dominated by minibatch noise).
                conv = add_row_bias(
                    scale(conv_generalized(h1, biases, l.conv_heads), 1.0 / static_cast<double>(cfg.heads)),
                    l.conv_bias);
            }
            x = add(x, conv);
            x = add(x, ffn_forward(layer_norm(x, l.ln2.g, l.ln2.b), l.ffn));
            out.features.push_back(x);
            out.feature_tokens.push_back(rows);
        }
        Tensor<T> h = layer_norm(x, final_norm.g, final_norm.b);
        const std::size_t last_rows = stage_biases[stage].n();
        out.logits = linear(block_mean_rows(h, last_rows), head_w, head_b);
        return out;
    }
};

inline constexpr std::size_t kResStemChannels = 64;

template <typename T>
VitModel<T> build_vit(const ArchConfig& cfg, RngForest& forest) {
    cfg.validate_patched();
    VitModel<T> m;
    m.cfg = cfg;
    const std::size_t d = cfg.hidden, n = cfg.tokens();
    m.patch_w = detail::init_param<T>(forest, "vit.patch.w", {cfg.patch, cfg.patch, cfg.channels, d}, 0.02);
    m.patch_b = detail::init_const<T>("vit.patch.b", {d}, T(0));
    m.cls = detail::init_param<T>(forest, "vit.cls", {d}, 0.02);
    m.pos = detail::init_param<T>(forest, "vit.pos", {n + 1, d}, 0.02);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "vit.l" + std::to_string(l);
        VitLayer<T> layer;
        layer.ln1 = detail::init_norm<T>(p + ".ln1", d);
        layer.attn.wq = detail::init_param<T>(forest, p + ".attn.wq", {d, d}, 0.02);
        layer.attn.bq = detail::init_const<T>(p + ".attn.bq", {d}, T(0));
        layer.attn.wk = detail::init_param<T>(forest, p + ".attn.wk", {d, d}, 0.02);
        layer.attn.bk = detail::init_const<T>(p + ".attn.bk", {d}, T(0));
        layer.attn.wv = detail::init_param<T>(forest, p + ".attn.wv", {d, d}, 0.02);
        layer.attn.bv = detail::init_const<T>(p + ".attn.bv", {d}, T(0));
        layer.attn.wo = detail::init_param<T>(forest, p + ".attn.wo", {d, d}, 0.02);
        layer.attn.bo = detail::init_const<T>(p + ".attn.bo", {d}, T(0));
        layer.ln2 = detail::init_norm<T>(p + ".ln2", d);
        layer.ffn = detail::init_ffn<T>(forest, p + ".ffn", d, cfg.mlp_hidden());
        m.layers.push_back(std::move(layer));
    }
    m.final_norm = detail::init_norm<T>("vit.norm", d);
    m.head_w = detail::init_param<T>(forest, "vit.head.w", {d, cfg.classes}, 0.02);
    m.head_b = detail::init_const<T>("vit.head.b", {cfg.classes}, T(0));
    return m;
}

namespace detail {

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

template <typename T>
AgentModel<T> build_agent(const ArchConfig& cfg, RngForest& forest,
                          const SharedParameterStore<T>* store = nullptr) {
    AgentModel<T> m;
    m.cfg = cfg;
    m.shared = store != nullptr;
    const std::size_t d = cfg.hidden;
    if (m.shared) {
        if (store->hidden != d || store->heads != cfg.heads || store->mlp_hidden != cfg.mlp_hidden() ||
            store->layers.size() != cfg.layers)
            throw ShapeError("agent: shared store does not fit the configuration");
        m.store = *store;
    }

    std::size_t grid;
    if (cfg.agent_variant == AgentVariant::res_like) {
        cfg.validate();
        m.stem1_w =
            detail::init_param<T>(forest, "agent.stem1.w", {7, 7, cfg.channels, kResStemChannels}, 0.02);
        m.stem1_b = detail::init_const<T>("agent.stem1.b", {kResStemChannels}, T(0));
        m.stem2_w = detail::init_param<T>(forest, "agent.stem2.w", {3, 3, kResStemChannels, d}, 0.02);
        m.stem2_b = detail::init_const<T>("agent.stem2.b", {d}, T(0));
        const std::size_t after1 = detail::conv_out(cfg.image_size, 7, 2, 3);
        const std::size_t after_pool = detail::conv_out(after1, 2, 2, 0);
        grid = detail::conv_out(after_pool, 3, 2, 1);
    } else {
        cfg.validate_patched();
        m.stem1_w =
            detail::init_param<T>(forest, "agent.stem1.w", {cfg.patch, cfg.patch, cfg.channels, d}, 0.02);
        m.stem1_b = detail::init_const<T>("agent.stem1.b", {d}, T(0));
        grid = cfg.grid();
    }

    const std::vector<std::size_t> stages =
        cfg.agent_variant == AgentVariant::res_like ? cfg.res_stage_layers() : std::vector<std::size_t>{cfg.layers};
    std::size_t g = grid;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        if (g == 0) throw ConfigError("agent: feature map shrank to nothing; fewer stages or a larger image");
        m.stage_grid.push_back(g);
        m.stage_biases.push_back(generalized_bias_set(g, g, cfg.heads));
        if (s + 1 < stages.size()) g = detail::conv_out(g, 2, 2, 0);
    }

    std::size_t li = 0;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        for (std::size_t i = 0; i < stages[s]; ++i, ++li) {
            const std::string p = "agent.l" + std::to_string(li);
            AgentLayer<T> layer;
            layer.stage = s;
            layer.ln1 = detail::init_norm<T>(p + ".ln1", d);
            layer.ln2 = detail::init_norm<T>(p + ".ln2", d);
            if (m.shared) {
                const auto& slots = m.store.layers[li];
                layer.ffn = {slots.w1, slots.b1, slots.w2, slots.b2};
            } else {
                for (std::size_t h = 0; h < cfg.heads; ++h)
                    layer.conv_heads.push_back(
                        detail::init_param<T>(forest, p + ".conv.h" + std::to_string(h), {d, d}, 0.02));
                layer.conv_bias = detail::init_const<T>(p + ".conv.b", {d}, T(0));
                layer.ffn = detail::init_ffn<T>(forest, p + ".ffn", d, cfg.mlp_hidden());
            }
            m.layers.push_back(std::move(layer));
        }
    }

    m.final_norm = detail::init_norm<T>("agent.norm", d);
    m.head_w = detail::init_param<T>(forest, "agent.head.w", {d, cfg.classes}, 0.02);
    m.head_b = detail::init_const<T>("agent.head.b", {cfg.classes}, T(0));
    return m;
}

template <typename M>
std::size_t count_params(M& model) {
    std::size_t total = 0;
    model.visit_params([&](auto& t) { total += t.numel(); });
    return total;
}

// Applies (W, b) to a token sequence both as a fully connected layer and as a
// 1x1 convolution over the unflattened map, and reports whether the two
// agree. The map factorization is immaterial for a 1x1 kernel, so a 1 x n
// layout serves for any token count.
template <typename T>
bool fc_equals_1x1_conv(const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& x) {
    const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
    Tensor<T> fc = linear(x, w, b);
    Tensor<T> as_map = tokens_to_chw(x, 1, n);
    std::vector<T> kv(w.data());
    Tensor<T> kernel = Tensor<T>::from_data({1, 1, din, dout}, std::move(kv));
    Tensor<T> conv = chw_to_tokens(add_channel_bias(conv2d_direct(as_map, kernel, 1, 0), b));
    double worst = 0;
    for (std::size_t i = 0; i < fc.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(fc.data()[i]) -
                                         static_cast<double>(conv.data()[i])));
    return worst < 1e-10;
}

}  // namespace bootvit
