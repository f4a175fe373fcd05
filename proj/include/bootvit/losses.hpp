#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "bootvit/model.hpp"
#include "bootvit/ops_core.hpp"
#include "bootvit/ops_tokens.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

enum class AdaptMode { seq_interp_1d, avg_pool_2d };
enum class DecayMode { linear, none };

struct LossWeights {
    double alpha = 1.0;
    double beta = 10.0;
    double temperature = 4.0;
    DecayMode decay = DecayMode::linear;
    // Layer indices (1-based) that receive intermediate supervision; absent
    // means all layers. An explicitly empty set disables every term.
    std::optional<std::set<std::size_t>> supervised_layers;
    AdaptMode adapt = AdaptMode::seq_interp_1d;
    // Mixing weights of the hard and soft terms inside the distillation loss.
    double kd_hard = 1.0;
    double kd_soft = 1.0;
    // Ablation switch: stop the feature loss from training the agent.
    bool feat_detach_agent = false;

    void validate(std::size_t model_layers) const {
        if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be nonnegative");
        if (temperature <= 0) throw ConfigError("distillation temperature must be positive");
        if (supervised_layers) {
            for (std::size_t l : *supervised_layers)
                if (l == 0 || l > model_layers)
                    throw ConfigError("supervised layer " + std::to_string(l) + " outside 1.." +
                                      std::to_string(model_layers));
        }
    }
};

struct LossBreakdown {
    std::vector<double> feat_per_layer;  // unweighted, one entry per encoder layer
    double feat_total = 0;
    double mutual = 0;
    double total = 0;
    double feat_weight_multiplier = 1;
};

// Resample a feature toward a target token count, per block. The sequence
// mode interpolates linearly along the token axis; the pooling mode treats
// each block as a square map and average-pools it down.
template <typename T>
Tensor<T> adapt_feature(const Tensor<T>& f, std::size_t block_rows, std::size_t target, AdaptMode mode) {
    if (block_rows == target) return f;
    if (mode == AdaptMode::seq_interp_1d) return block_interp_rows(f, block_rows, target);
    const auto side = [](std::size_t n, const char* which) {
        const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (s * s != n)
            throw ConfigError(std::string("adapt: ") + which + " token count " + std::to_string(n) +
                              " is not a perfect square");
        return s;
    };
    const std::size_t s_in = side(block_rows, "source");
    const std::size_t s_out = side(target, "target");
    if (s_out == 0 || s_in % s_out != 0)
        throw ConfigError("adapt: map side " + std::to_string(s_in) + " not divisible by " +
                          std::to_string(s_out));
    const std::size_t k = s_in / s_out;
    return chw_to_tokens(avgpool2d(tokens_to_chw(f, s_in, s_in), k, k));
}

// Normalized squared feature distance at one depth, batch mean. The agent
// feature is adapted to the sequence length of the reference feature; each
// sample is globally L2-normalized over all of its entries before the
// distance.
template <typename T>
Tensor<T> feat_loss_layer(const Tensor<T>& f_agent, std::size_t agent_rows, const Tensor<T>& f_vit,
                          std::size_t vit_rows, AdaptMode mode, bool detach_agent = false) {
    const std::size_t b = detail::block_count(f_vit, vit_rows, "feat_loss_layer");
    if (detail::block_count(f_agent, agent_rows, "feat_loss_layer") != b)
        throw ShapeError("feat_loss_layer: traces carry different batch sizes");
    if (f_agent.dim(1) != f_vit.dim(1))
        throw ShapeError("feat_loss_layer: widths " + std::to_string(f_agent.dim(1)) + " vs " +
                         std::to_string(f_vit.dim(1)));
    Tensor<T> fa = detach_agent ? f_agent.detach() : f_agent;
    Tensor<T> adapted = adapt_feature(fa, agent_rows, vit_rows, mode);
    Tensor<T> na = block_l2_normalize(adapted, vit_rows);
    Tensor<T> nv = block_l2_normalize(f_vit, vit_rows);
    Tensor<T> diff = sub(na, nv);
    return scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(b));
}

template <typename T>
struct FeatLossResult {
    Tensor<T> total;                     // undefined when no layer contributes
    std::vector<double> per_layer;       // unweighted values, zero where skipped
};

// Sum of per-layer feature losses over the supervised set.
template <typename T>
FeatLossResult<T> feat_loss_total(const Traced<T>& vit, const Traced<T>& agent, const LossWeights& w) {
    const std::size_t m = vit.features.size();
    if (agent.features.size() != m)
        throw ShapeError("feat_loss_total: " + std::to_string(agent.features.size()) + " agent layers vs " +
                         std::to_string(m));
    w.validate(m);
    FeatLossResult<T> out;
    out.per_layer.assign(m, 0.0);
    for (std::size_t l = 1; l <= m; ++l) {
        if (w.supervised_layers && !w.supervised_layers->count(l)) continue;
        Tensor<T> term = feat_loss_layer(agent.features[l - 1], agent.feature_tokens[l - 1],
                                         vit.features[l - 1], vit.feature_tokens[l - 1], w.adapt,
                                         w.feat_detach_agent);
        out.per_layer[l - 1] = static_cast<double>(term.item());
        out.total = out.total.defined() ? add(out.total, term) : term;
    }
    return out;
}

// Mean cross-entropy against integer labels, as one fused op.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    if (logits.shape().size() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("cross_entropy: " + shape_str(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    for (std::size_t y : labels)
        if (y >= c) throw ShapeError("cross_entropy: label " + std::to_string(y) + " of " + std::to_string(c));
    auto n = detail::make_result<T>({1}, {logits.node()});
    auto probs = std::make_shared<std::vector<double>>(b * c);
    const T* pl = logits.data().data();
    double loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(pl[i * c + j]));
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(pl[i * c + j]) - mx);
            (*probs)[i * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
        loss -= std::log((*probs)[i * c + labels[i]]);
    }
    n->value[0] = static_cast<T>(loss / static_cast<double>(b));
    auto lab = std::make_shared<std::vector<std::size_t>>(labels);
    detail::finish_op(n, [b, c, probs, lab](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T g = self.grad[0];
        T* gi = self.inputs[0]->grad_ptr();
        const T inv = g / static_cast<T>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double p = (*probs)[i * c + j];
                if (j == (*lab)[i]) p -= 1.0;
                gi[i * c + j] += inv * static_cast<T>(p);
            }
    });
    return Tensor<T>(n);
}

// Temperature-scaled KL(teacher || student), times T^2, batch mean. The
// teacher side must already be free of gradient; it enters as plain values.
template <typename T>
Tensor<T> kd_soft_term(const Tensor<T>& student, const Tensor<T>& teacher, double temp) {
    if (student.shape() != teacher.shape())
        throw ShapeError("kd: " + shape_str(student.shape()) + " vs " + shape_str(teacher.shape()));
    if (teacher.requires_grad())
        throw ContractError("kd: teacher logits must be constants; detach them first");
    const std::size_t b = student.dim(0), c = student.dim(1);
    auto n = detail::make_result<T>({1}, {student.node()});
    auto sp = std::make_shared<std::vector<double>>(b * c);
    auto tp = std::make_shared<std::vector<double>>(b * c);
    auto soft = [&](const T* src, std::vector<double>& dst, std::size_t row) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j)
            mx = std::max(mx, static_cast<double>(src[row * c + j]) / temp);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(src[row * c + j]) / temp - mx);
            dst[row * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) dst[row * c + j] /= z;
    };
    double loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        soft(student.data().data(), *sp, i);
        soft(teacher.data().data(), *tp, i);
        for (std::size_t j = 0; j < c; ++j) {
            const double t = (*tp)[i * c + j];
            if (t > 0) loss += t * (std::log(t) - std::log((*sp)[i * c + j]));
        }
    }
    n->value[0] = static_cast<T>(temp * temp * loss / static_cast<double>(b));
    detail::finish_op(n, [b, c, temp, sp, tp](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        const T g = self.grad[0];
        T* gi = self.inputs[0]->grad_ptr();
        const double k = temp / static_cast<double>(b);
        for (std::size_t i = 0; i < b * c; ++i)
            gi[i] += g * static_cast<T>(k * ((*sp)[i] - (*tp)[i]));
    });
    return Tensor<T>(n);
}

// Hard cross-entropy plus the tempered soft term.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& student, const Tensor<T>& teacher, const std::vector<std::size_t>& y,
                  double temp, double hard_w = 1.0, double soft_w = 1.0) {
    return add(scale(cross_entropy_mean(student, y), hard_w),
               scale(kd_soft_term(student, teacher, temp), soft_w));
}

// Symmetric distillation with each teacher side treated as a constant.
template <typename T>
Tensor<T> mutual_loss(const Tensor<T>& logits_v, const Tensor<T>& logits_a,
                      const std::vector<std::size_t>& y, double temp, double hard_w = 1.0,
                      double soft_w = 1.0) {
    return add(kd_loss(logits_v, logits_a.detach(), y, temp, hard_w, soft_w),
               kd_loss(logits_a, logits_v.detach(), y, temp, hard_w, soft_w));
}

template <typename T>
struct LossOutputs {
    Tensor<T> total;
    LossBreakdown breakdown;
};

inline double decay_multiplier(DecayMode mode, double progress) {
    if (progress < 0 || progress > 1)
        throw ContractError("loss: training progress " + std::to_string(progress) + " outside [0,1]");
    return mode == DecayMode::linear ? 1.0 - progress : 1.0;
}

// The full scheduled objective over both traces.
template <typename T>
LossOutputs<T> combined_loss(const Traced<T>& vit, const Traced<T>& agent,
                             const std::vector<std::size_t>& y, const LossWeights& w, double progress) {
    LossOutputs<T> out;
    out.breakdown.feat_weight_multiplier = decay_multiplier(w.decay, progress);
    const double eff_alpha = w.alpha * out.breakdown.feat_weight_multiplier;
    out.breakdown.feat_per_layer.assign(vit.features.size(), 0.0);

    Tensor<T> total;
    if (w.alpha > 0) {
        FeatLossResult<T> feat = feat_loss_total(vit, agent, w);
        out.breakdown.feat_per_layer = feat.per_layer;
        for (double v : feat.per_layer) out.breakdown.feat_total += v;
        if (feat.total.defined()) total = scale(feat.total, eff_alpha);
    }
    if (w.beta > 0) {
        Tensor<T> mut = mutual_loss(vit.logits, agent.logits, y, w.temperature, w.kd_hard, w.kd_soft);
        out.breakdown.mutual = static_cast<double>(mut.item());
        Tensor<T> weighted = scale(mut, w.beta);
        total = total.defined() ? add(total, weighted) : weighted;
    }
    if (!total.defined()) total = Tensor<T>::scalar(T(0));
    out.total = total;
    out.breakdown.total = static_cast<double>(total.item());
    return out;
}

}  // namespace bootvit
