#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bootvit/model.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

// Project the source gradient onto the half-space of the reference: when the
// two already agree (nonnegative dot product) the source passes through
// untouched, otherwise its component along the reference is removed.
template <typename T>
std::vector<T> align(const std::vector<T>& g_src, const std::vector<T>& g_ref) {
    if (g_src.size() != g_ref.size())
        throw ShapeError("align: " + std::to_string(g_src.size()) + " vs " + std::to_string(g_ref.size()) +
                         " entries");
    double dot = 0, ref2 = 0;
    for (std::size_t i = 0; i < g_src.size(); ++i) {
        dot += static_cast<double>(g_src[i]) * static_cast<double>(g_ref[i]);
        ref2 += static_cast<double>(g_ref[i]) * static_cast<double>(g_ref[i]);
    }
    if (dot >= 0 || ref2 == 0) return g_src;
    const double c = dot / ref2;
    std::vector<T> out(g_src.size());
    for (std::size_t i = 0; i < g_src.size(); ++i)
        out[i] = static_cast<T>(static_cast<double>(g_src[i]) - c * static_cast<double>(g_ref[i]));
    return out;
}

// Both halves of the gradient of one shared tensor, from the two sweeps.
template <typename T>
struct GradientPair {
    std::vector<T> vit, agent;
};

// Half the ViT gradient plus half the agent gradient after alignment.
template <typename T>
std::vector<T> effective_gradient(const GradientPair<T>& g) {
    if (g.vit.empty() || g.agent.empty())
        throw ContractError("effective_gradient: gradient pair is incomplete");
    std::vector<T> aligned = align(g.agent, g.vit);
    std::vector<T> out(g.vit.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(0.5 * (static_cast<double>(g.vit[i]) + static_cast<double>(aligned[i])));
    return out;
}

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-2;
};

struct AdamSlot {
    std::vector<double> m, v;
};

// Decoupled weight decay; moments are kept in f64 whatever the working
// precision. `step` is 1-based.
template <typename T>
void adamw_update(Tensor<T>& param, const std::vector<T>& grad, AdamSlot& slot,
                  const AdamWHyper& h, std::size_t step, double lr) {
    const std::size_t n = param.numel();
    if (grad.size() != n)
        throw ShapeError("adamw: " + std::to_string(grad.size()) + " gradient entries for " +
                         shape_str(param.shape()));
    if (step == 0) throw ContractError("adamw: step counter must start at 1");
    if (slot.m.empty()) {
        slot.m.assign(n, 0.0);
        slot.v.assign(n, 0.0);
    }
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
    T* p = param.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(grad[i]);
        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g;
        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = slot.m[i] / c1;
        const double vhat = slot.v[i] / c2;
        const double upd = mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * static_cast<double>(p[i]);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * upd);
    }
}

inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max) {
    if (total_steps == 0) throw ConfigError("cosine schedule needs a positive step count");
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_max * 0.5 * (1.0 + std::cos(M_PI * t));
}

// How one parameter group is stepped.
enum class UpdateRule { adamw, sgd };

template <typename T>
struct Optimizer {
    AdamWHyper hyper;
    UpdateRule rule = UpdateRule::adamw;
    std::size_t step_count = 0;  // completed steps
    std::map<std::string, AdamSlot> slots;

    void apply(Tensor<T>& param, const std::vector<T>& grad, double lr) {
        if (rule == UpdateRule::sgd) {
            if (grad.size() != param.numel())
                throw ShapeError("sgd: " + std::to_string(grad.size()) + " gradient entries for " +
                                 shape_str(param.shape()));
            T* p = param.data().data();
            for (std::size_t i = 0; i < grad.size(); ++i)
                p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * static_cast<double>(grad[i]));
            return;
        }
        if (param.name().empty()) throw ContractError("optimizer: parameter without a name");
        adamw_update(param, grad, slots[param.name()], hyper, step_count, lr);
    }
};

// The trainable tensors of a run, split by who owns them. Under sharing the
// shared group holds the single storage locations read by both networks.
template <typename T>
struct ParamPartition {
    std::vector<Tensor<T>> vit_private;
    std::vector<Tensor<T>> agent_private;
    std::vector<Tensor<T>> shared;
};

template <typename T>
ParamPartition<T> build_partition(VitModel<T>& vit, AgentModel<T>& agent) {
    ParamPartition<T> part;
    std::set<const void*> shared_nodes;
    if (agent.shared) {
        agent.store.visit_params([&](Tensor<T>& t) {
            shared_nodes.insert(t.node().get());
            part.shared.push_back(t);
        });
    }
    vit.visit_params([&](Tensor<T>& t) {
        if (!shared_nodes.count(t.node().get())) part.vit_private.push_back(t);
    });
    agent.visit_params([&](Tensor<T>& t) { part.agent_private.push_back(t); });
    return part;
}

// Gradients of one combined objective, separated per network by two sweeps
// over the same tape: the first ignores agent-tagged nodes, the second
// ignores ViT-tagged ones.
template <typename T>
struct SweepGrads {
    std::vector<std::vector<T>> vit_private;
    std::vector<std::vector<T>> agent_private;
    std::vector<GradientPair<T>> shared;
};

namespace detail {

template <typename T>
std::vector<T> take_grad(Tensor<T>& p) {
    if (!p.has_grad()) return std::vector<T>(p.numel(), T(0));
    return std::vector<T>(p.grad().begin(), p.grad().end());
}

}  // namespace detail

template <typename T>
SweepGrads<T> compute_gradient_pair(Tape<T>& tape, const Tensor<T>& loss, ParamPartition<T>& part) {
    auto zero_all = [&part]() {
        for (auto& p : part.vit_private) p.zero_grad();
        for (auto& p : part.agent_private) p.zero_grad();
        for (auto& p : part.shared) p.zero_grad();
    };
    SweepGrads<T> out;
    out.shared.resize(part.shared.size());

    zero_all();
    tape.backward(loss, Path::agent);
    for (auto& p : part.vit_private) out.vit_private.push_back(detail::take_grad(p));
    for (std::size_t i = 0; i < part.shared.size(); ++i) out.shared[i].vit = detail::take_grad(part.shared[i]);

    zero_all();
    tape.backward(loss, Path::vit);
    for (auto& p : part.agent_private) out.agent_private.push_back(detail::take_grad(p));
    for (std::size_t i = 0; i < part.shared.size(); ++i)
        out.shared[i].agent = detail::take_grad(part.shared[i]);
    return out;
}

// One optimizer step of the whole run: private tensors take their own sweep's
// gradient, shared tensors take the aligned average of their two halves.
template <typename T>
void bootstrap_step(Tape<T>& tape, const Tensor<T>& loss, ParamPartition<T>& part, Optimizer<T>& opt,
                    double lr) {
    SweepGrads<T> grads = compute_gradient_pair(tape, loss, part);
    ++opt.step_count;
    for (std::size_t i = 0; i < part.vit_private.size(); ++i)
        opt.apply(part.vit_private[i], grads.vit_private[i], lr);
    for (std::size_t i = 0; i < part.agent_private.size(); ++i)
        opt.apply(part.agent_private[i], grads.agent_private[i], lr);
    for (std::size_t i = 0; i < part.shared.size(); ++i)
        opt.apply(part.shared[i], effective_gradient(grads.shared[i]), lr);
}

}  // namespace bootvit
