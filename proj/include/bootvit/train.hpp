#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "bootvit/checkpoint.hpp"
#include "bootvit/config.hpp"
#include "bootvit/data.hpp"
#include "bootvit/losses.hpp"
#include "bootvit/metrics.hpp"
#include "bootvit/model.hpp"
#include "bootvit/optim.hpp"

namespace bootvit {

struct RunResult {
    std::vector<TrainRecord> records;
    double final_val_vit = std::numeric_limits<double>::quiet_NaN();
    double best_val_vit = std::numeric_limits<double>::quiet_NaN();
    double final_val_agent = std::numeric_limits<double>::quiet_NaN();
    double best_val_agent = std::numeric_limits<double>::quiet_NaN();
    std::size_t trainable_params = 0;
    double wall_seconds = 0;
};

namespace detail {

inline nlohmann::json config_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["scheme"] = scheme_name(cfg.scheme);
    j["layers"] = cfg.arch.layers;
    j["hidden"] = cfg.arch.hidden;
    j["heads"] = cfg.arch.heads;
    j["patch"] = cfg.arch.patch;
    j["image"] = cfg.arch.image_size;
    j["classes"] = cfg.arch.classes;
    j["agent"] = cfg.arch.agent_variant == AgentVariant::res_like ? "res-like" : "base";
    j["alpha"] = cfg.weights.alpha;
    j["beta"] = cfg.weights.beta;
    j["temperature"] = cfg.weights.temperature;
    j["decay"] = cfg.weights.decay == DecayMode::linear ? "linear" : "none";
    j["adapt"] = cfg.weights.adapt == AdaptMode::seq_interp_1d ? "seq-interp-1d" : "avg-pool-2d";
    j["lr"] = cfg.hyper.lr;
    j["weight_decay"] = cfg.hyper.weight_decay;
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batch_size;
    j["fraction"] = cfg.fraction;
    j["rng"]["master_seed"] = cfg.seed;
    return j;
}

template <typename T>
std::size_t count_partition(const ParamPartition<T>& p) {
    std::size_t n = 0;
    for (const auto& t : p.vit_private) n += t.numel();
    for (const auto& t : p.agent_private) n += t.numel();
    for (const auto& t : p.shared) n += t.numel();
    return n;
}

inline std::string breakdown_dump(const LossBreakdown& b) {
    std::string s = "total=" + fmt_double(b.total) + " feat_total=" + fmt_double(b.feat_total) +
                    " mutual=" + fmt_double(b.mutual) + " feat_mult=" + fmt_double(b.feat_weight_multiplier);
    for (std::size_t l = 0; l < b.feat_per_layer.size(); ++l)
        s += " feat_l" + std::to_string(l + 1) + "=" + fmt_double(b.feat_per_layer[l]);
    return s;
}

}  // namespace detail

// The whole training loop for one run: builds the networks the scheme asks
// for, iterates seeded epochs with per-epoch validation, streams metrics, and
// leaves best/last checkpoints plus a summary under cfg.out_dir.
inline RunResult run_training(const RunConfig& cfg, const Dataset& train_ds, const Dataset& val_ds,
                              SummaryWriter* extra_summary = nullptr) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    cfg.validate();
    if (train_ds.height != cfg.arch.image_size || train_ds.channels != cfg.arch.channels)
        throw ConfigError("dataset is " + std::to_string(train_ds.height) + "px/" +
                          std::to_string(train_ds.channels) + "ch, config wants " +
                          std::to_string(cfg.arch.image_size) + "px");
    if (train_ds.classes != cfg.arch.classes)
        throw ConfigError("dataset has " + std::to_string(train_ds.classes) + " classes, config wants " +
                          std::to_string(cfg.arch.classes));
    const auto t_start = clock::now();

    const bool has_vit = cfg.scheme != Scheme::scratch_agent;
    const bool has_agent = cfg.scheme != Scheme::scratch_vit;
    const bool paired = has_vit && has_agent;
    const bool ce_fallback = paired && cfg.weights.alpha == 0 && cfg.weights.beta == 0;

    RngForest forest(cfg.seed);
    VitModel<float> vit;
    AgentModel<float> agent;
    SharedParameterStore<float> store;
    if (has_vit) vit = build_vit<float>(cfg.arch, forest);
    if (cfg.scheme == Scheme::shared) {
        store = SharedParameterStore<float>::from_vit(vit);
        agent = build_agent<float>(cfg.arch, forest, &store);
    } else if (has_agent) {
        agent = build_agent<float>(cfg.arch, forest);
    }

    ParamPartition<float> part;
    if (paired) {
        part = build_partition(vit, agent);
    } else if (has_vit) {
        vit.visit_params([&](Tensor<float>& t) { part.vit_private.push_back(t); });
    } else {
        agent.visit_params([&](Tensor<float>& t) { part.agent_private.push_back(t); });
    }

    Optimizer<float> opt;
    opt.hyper = cfg.hyper;

    fs::create_directories(cfg.out_dir);
    std::ofstream metrics_os(fs::path(cfg.out_dir) / "metrics.csv");
    if (!metrics_os) throw FormatError("cannot write metrics under " + cfg.out_dir);
    MetricsWriter metrics(&metrics_os, cfg.arch.layers);

    const std::size_t n = train_ds.size();
    const std::size_t batches = n == 0 ? 0 : (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches;
    if (cfg.epochs > 0 && batches == 0) throw ConfigError("no training samples");

    auto validate = [&]() {
        double acc_v = 0, acc_a = 0;
        std::size_t seen = 0;
        std::vector<std::size_t> idx, labels;
        for (std::size_t i = 0; i < val_ds.size(); i += cfg.val_batch) {
            idx.clear();
            for (std::size_t j = i; j < std::min(val_ds.size(), i + cfg.val_batch); ++j) idx.push_back(j);
            Tensor<float> x = make_batch(val_ds, idx, nullptr, labels);
            if (has_vit) acc_v += accuracy(vit.forward_traced(x).logits, labels) * idx.size();
            if (has_agent) acc_a += accuracy(agent.forward_traced(x).logits, labels) * idx.size();
            seen += idx.size();
        }
        const double qn = std::numeric_limits<double>::quiet_NaN();
        return std::pair<double, double>{has_vit && seen ? acc_v / seen : qn,
                                         has_agent && seen ? acc_a / seen : qn};
    };

    RunResult res;
    res.trainable_params = detail::count_partition(part);

    auto [v0, a0] = validate();
    TrainRecord first;
    first.epoch = 0;
    first.step = 0;
    first.val_acc_vit = v0;
    first.val_acc_agent = a0;
    metrics.add(first);
    res.best_val_vit = res.final_val_vit = v0;
    res.best_val_agent = res.final_val_agent = a0;

    std::vector<Tensor<float>> ckpt_params;
    for (auto& t : part.vit_private) ckpt_params.push_back(t);
    for (auto& t : part.shared) ckpt_params.push_back(t);
    for (auto& t : part.agent_private) ckpt_params.push_back(t);
    const nlohmann::json cj = detail::config_json(cfg);
    double best_primary = has_vit ? v0 : a0;
    save_checkpoint((fs::path(cfg.out_dir) / "best.ckpt").string(), ckpt_params, &opt, cj);

    std::size_t global_step = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        RngStream order_rng = forest.stream("order.e" + std::to_string(epoch));
        order_rng.shuffle(order.begin(), order.end());
        RngStream aug_rng = forest.stream("aug.e" + std::to_string(epoch));

        LossBreakdown mean{};
        mean.feat_per_layer.assign(cfg.arch.layers, 0.0);
        double mean_mult = 0, train_hits_v = 0, train_hits_a = 0;
        std::size_t train_seen = 0;
        double last_lr = 0;

        for (std::size_t bi = 0; bi < batches; ++bi) {
            std::vector<std::size_t> idx(order.begin() + bi * cfg.batch_size,
                                         order.begin() + std::min(n, (bi + 1) * cfg.batch_size));
            std::vector<std::size_t> labels;
            Tensor<float> x = make_batch(train_ds, idx, cfg.augment ? &aug_rng : nullptr, labels);

            const double progress =
                total_steps ? static_cast<double>(global_step) / static_cast<double>(total_steps) : 0.0;
            const double lr = cosine_lr(global_step, total_steps, cfg.hyper.lr);
            last_lr = lr;

            Tape<float> tape;
            TapeScope<float> scope(tape);
            Traced<float> tv, ta;
            if (has_vit) {
                PathScope path(Path::vit);
                tv = vit.forward_traced(x);
            }
            if (has_agent) {
                PathScope path(Path::agent);
                ta = agent.forward_traced(x);
            }

            Tensor<float> loss;
            LossBreakdown bd{};
            bd.feat_per_layer.assign(cfg.arch.layers, 0.0);
            bd.feat_weight_multiplier = std::numeric_limits<double>::quiet_NaN();
            if (!paired) {
                loss = cross_entropy_mean(has_vit ? tv.logits : ta.logits, labels);
                bd.total = loss.item();
                bd.feat_total = bd.mutual = std::numeric_limits<double>::quiet_NaN();
                bd.feat_per_layer.assign(cfg.arch.layers, std::numeric_limits<double>::quiet_NaN());
            } else if (ce_fallback) {
                loss = add(cross_entropy_mean(tv.logits, labels), cross_entropy_mean(ta.logits, labels));
                bd.total = loss.item();
                bd.feat_total = bd.mutual = std::numeric_limits<double>::quiet_NaN();
                bd.feat_per_layer.assign(cfg.arch.layers, std::numeric_limits<double>::quiet_NaN());
            } else {
                LossOutputs<float> out = combined_loss(tv, ta, labels, cfg.weights, progress);
                loss = out.total;
                bd = out.breakdown;
            }
            if (!std::isfinite(bd.total))
                throw NumericError("loss is not finite at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(global_step + 1) + ": " + detail::breakdown_dump(bd));

            bootstrap_step(tape, loss, part, opt, lr);
            ++global_step;

            if (has_vit) train_hits_v += accuracy(tv.logits, labels) * idx.size();
            if (has_agent) train_hits_a += accuracy(ta.logits, labels) * idx.size();
            train_seen += idx.size();

            TrainRecord r;
            r.epoch = epoch;
            r.step = global_step;
            r.lr = lr;
            r.feat_weight_multiplier = bd.feat_weight_multiplier;
            r.feat_per_layer = bd.feat_per_layer;
            r.feat_total = bd.feat_total;
            r.mutual = bd.mutual;
            r.total = bd.total;
            metrics.add(r);

            for (std::size_t l = 0; l < cfg.arch.layers; ++l) mean.feat_per_layer[l] += bd.feat_per_layer[l];
            mean.feat_total += bd.feat_total;
            mean.mutual += bd.mutual;
            mean.total += bd.total;
            mean_mult += bd.feat_weight_multiplier;
        }

        auto [va, aa] = validate();
        TrainRecord r;
        r.epoch = epoch;
        r.step = global_step;
        r.lr = last_lr;
        const double nb = static_cast<double>(batches);
        r.feat_weight_multiplier = mean_mult / nb;
        r.feat_per_layer.resize(cfg.arch.layers);
        for (std::size_t l = 0; l < cfg.arch.layers; ++l) r.feat_per_layer[l] = mean.feat_per_layer[l] / nb;
        r.feat_total = mean.feat_total / nb;
        r.mutual = mean.mutual / nb;
        r.total = mean.total / nb;
        r.train_acc_vit = has_vit ? train_hits_v / static_cast<double>(train_seen)
                                  : std::numeric_limits<double>::quiet_NaN();
        r.train_acc_agent = has_agent ? train_hits_a / static_cast<double>(train_seen)
                                      : std::numeric_limits<double>::quiet_NaN();
        r.val_acc_vit = va;
        r.val_acc_agent = aa;
        metrics.add(r);

        res.final_val_vit = va;
        res.final_val_agent = aa;
        if (has_vit && (std::isnan(res.best_val_vit) || va > res.best_val_vit)) res.best_val_vit = va;
        if (has_agent && (std::isnan(res.best_val_agent) || aa > res.best_val_agent))
            res.best_val_agent = aa;
        const double primary = has_vit ? va : aa;
        if (primary > best_primary) {
            best_primary = primary;
            save_checkpoint((fs::path(cfg.out_dir) / "best.ckpt").string(), ckpt_params, &opt, cj);
        }
    }

    save_checkpoint((fs::path(cfg.out_dir) / "last.ckpt").string(), ckpt_params, &opt, cj);
    res.records = metrics.records();
    res.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();

    SummaryWriter sum;
    sum.set("scheme", scheme_name(cfg.scheme));
    sum.set("epochs", cfg.epochs);
    sum.set("batch", cfg.batch_size);
    sum.set("seed", static_cast<std::size_t>(cfg.seed));
    sum.set("trainable_params", res.trainable_params);
    sum.set("final_val_vit", res.final_val_vit);
    sum.set("best_val_vit", res.best_val_vit);
    sum.set("final_val_agent", res.final_val_agent);
    sum.set("best_val_agent", res.best_val_agent);
    sum.set("wall_clock_sec", res.wall_seconds);
    if (extra_summary)
        for (const std::string& l : extra_summary->lines()) sum.set(l.substr(0, l.find(" = ")),
                                                                    l.substr(l.find(" = ") + 3));
    sum.write((fs::path(cfg.out_dir) / "summary.txt").string());
    return res;
}

// Table-style objective switches layered onto a config.
struct AblateToggles {
    bool no_mutual = false;
    bool no_feat = false;
    bool no_decay = false;
    bool ap2d = false;
    std::size_t drop_layer = 0;  // 1-based; 0 means none
};

inline void apply_toggles(RunConfig& cfg, const AblateToggles& t) {
    if (t.no_feat && (t.ap2d || t.drop_layer || t.no_decay))
        throw ConfigError("feature-loss toggles conflict with no-feat");
    if (t.no_feat) cfg.weights.alpha = 0;
    if (t.no_mutual) cfg.weights.beta = 0;
    if (t.no_decay) cfg.weights.decay = DecayMode::none;
    if (t.ap2d) cfg.weights.adapt = AdaptMode::avg_pool_2d;
    if (t.drop_layer) {
        if (t.drop_layer > cfg.arch.layers)
            throw ConfigError("drop-layer " + std::to_string(t.drop_layer) + " outside 1.." +
                              std::to_string(cfg.arch.layers));
        std::set<std::size_t> keep;
        for (std::size_t l = 1; l <= cfg.arch.layers; ++l)
            if (l != t.drop_layer) keep.insert(l);
        cfg.weights.supervised_layers = std::move(keep);
    }
}

inline std::string toggles_string(const AblateToggles& t) {
    std::string s;
    auto addtok = [&](const std::string& tok) { s += (s.empty() ? "" : ",") + tok; };
    if (t.no_mutual) addtok("no-mutual");
    if (t.no_feat) addtok("no-feat");
    if (t.no_decay) addtok("no-decay");
    if (t.ap2d) addtok("adapt=AP-2D");
    if (t.drop_layer) addtok("drop-layer=" + std::to_string(t.drop_layer));
    return s.empty() ? "none" : s;
}

inline RunResult run_ablation(RunConfig cfg, const AblateToggles& toggles, const Dataset& train_ds,
                              const Dataset& val_ds) {
    apply_toggles(cfg, toggles);
    SummaryWriter extra;
    extra.set("toggles", toggles_string(toggles));
    return run_training(cfg, train_ds, val_ds, &extra);
}

// One training run per grid point, rows of final/best accuracies.
inline std::string sweep(const RunConfig& base, const std::vector<double>& alphas,
                         const std::vector<double>& betas, const std::vector<double>& temps,
                         const Dataset& train_ds, const Dataset& val_ds) {
    namespace fs = std::filesystem;
    if (alphas.empty() || betas.empty() || temps.empty()) throw ConfigError("sweep grid is empty");
    std::string csv = "alpha,beta,temperature,final_val_vit,best_val_vit,final_val_agent,best_val_agent\n";
    std::size_t cell = 0;
    for (double a : alphas)
        for (double b : betas)
            for (double t : temps) {
                RunConfig cfg = base;
                cfg.weights.alpha = a;
                cfg.weights.beta = b;
                cfg.weights.temperature = t;
                cfg.out_dir = (fs::path(base.out_dir) / ("cell_" + std::to_string(cell++))).string();
                const RunResult r = run_training(cfg, train_ds, val_ds);
                csv += detail::fmt_double(a) + "," + detail::fmt_double(b) + "," + detail::fmt_double(t) +
                       "," + detail::fmt_double(r.final_val_vit) + "," + detail::fmt_double(r.best_val_vit) +
                       "," + detail::fmt_double(r.final_val_agent) + "," +
                       detail::fmt_double(r.best_val_agent) + "\n";
            }
    fs::create_directories(base.out_dir);
    std::ofstream out(fs::path(base.out_dir) / "sweep.csv");
    out << csv;
    return csv;
}

}  // namespace bootvit
