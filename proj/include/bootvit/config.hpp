#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bootvit/losses.hpp"
#include "bootvit/model.hpp"
#include "bootvit/optim.hpp"

namespace bootvit {

enum class Scheme { scratch_vit, scratch_agent, joint, shared };

inline std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::scratch_vit: return "scratch-vit";
        case Scheme::scratch_agent: return "scratch-agent";
        case Scheme::joint: return "joint";
        case Scheme::shared: return "shared";
    }
    return "?";
}

inline Scheme scheme_from(const std::string& s) {
    if (s == "scratch-vit") return Scheme::scratch_vit;
    if (s == "scratch-agent") return Scheme::scratch_agent;
    if (s == "joint") return Scheme::joint;
    if (s == "shared") return Scheme::shared;
    throw ConfigError("unknown scheme '" + s + "'");
}

struct RunConfig {
    Scheme scheme = Scheme::joint;
    ArchConfig arch = vit_tiny_desk_config();
    LossWeights weights;
    AdamWHyper hyper;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    std::string data_dir = "data";
    double fraction = 1.0;
    std::uint64_t seed = 1;
    bool augment = true;
    std::string out_dir = "run";
    std::size_t val_batch = 250;

    void validate() const {
        arch.validate();
        weights.validate(arch.layers);
        if (batch_size == 0 || val_batch == 0) throw ConfigError("batch sizes must be positive");
        if (fraction <= 0 || fraction > 1) throw ConfigError("fraction must lie in (0,1]");
        if (hyper.lr <= 0) throw ConfigError("learning rate must be positive");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline double parse_num(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + v + "' as a number");
    }
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    const double x = parse_num(key, v);
    if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x)))
        throw ConfigError(key + ": '" + v + "' is not a nonnegative integer");
    return static_cast<std::size_t>(x);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": cannot parse '" + v + "' as a boolean");
}

}  // namespace detail

// One configuration key, shared between flags and config files.
inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_count;
    using detail::parse_num;
    if (key == "scheme") cfg.scheme = scheme_from(value);
    else if (key == "layers") cfg.arch.layers = parse_count(key, value);
    else if (key == "hidden") cfg.arch.hidden = parse_count(key, value);
    else if (key == "heads") cfg.arch.heads = parse_count(key, value);
    else if (key == "patch") cfg.arch.patch = parse_count(key, value);
    else if (key == "image") cfg.arch.image_size = parse_count(key, value);
    else if (key == "classes") cfg.arch.classes = parse_count(key, value);
    else if (key == "mlp_ratio") cfg.arch.mlp_ratio = parse_count(key, value);
    else if (key == "agent") {
        if (value == "base") cfg.arch.agent_variant = AgentVariant::base;
        else if (value == "res-like") cfg.arch.agent_variant = AgentVariant::res_like;
        else throw ConfigError("agent: unknown variant '" + value + "'");
    } else if (key == "alpha") cfg.weights.alpha = parse_num(key, value);
    else if (key == "beta") cfg.weights.beta = parse_num(key, value);
    else if (key == "temperature") cfg.weights.temperature = parse_num(key, value);
    else if (key == "decay") {
        if (value == "linear") cfg.weights.decay = DecayMode::linear;
        else if (value == "none") cfg.weights.decay = DecayMode::none;
        else throw ConfigError("decay: unknown mode '" + value + "'");
    } else if (key == "adapt") {
        if (value == "seq-interp-1d") cfg.weights.adapt = AdaptMode::seq_interp_1d;
        else if (value == "avg-pool-2d") cfg.weights.adapt = AdaptMode::avg_pool_2d;
        else throw ConfigError("adapt: unknown mode '" + value + "'");
    } else if (key == "lambda") {
        if (value == "all") {
            cfg.weights.supervised_layers.reset();
        } else {
            std::set<std::size_t> set;
            std::stringstream ss(value);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                tok = detail::trim(tok);
                if (!tok.empty()) set.insert(parse_count(key, tok));
            }
            cfg.weights.supervised_layers = std::move(set);
        }
    } else if (key == "lr") cfg.hyper.lr = parse_num(key, value);
    else if (key == "weight_decay") cfg.hyper.weight_decay = parse_num(key, value);
    else if (key == "epochs") cfg.epochs = parse_count(key, value);
    else if (key == "batch") cfg.batch_size = parse_count(key, value);
    else if (key == "val_batch") cfg.val_batch = parse_count(key, value);
    else if (key == "data") cfg.data_dir = value;
    else if (key == "fraction") cfg.fraction = parse_num(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_count(key, value));
    else if (key == "augment") cfg.augment = parse_bool(key, value);
    else if (key == "out") cfg.out_dir = value;
    else throw ConfigError("unknown configuration key '" + key + "'");
}

// `key = value` lines; '#' starts a comment; blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(no) + ": expected 'key = value'");
        out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

// Config files take precedence over anything already applied from flags.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    for (const auto& [k, v] : parse_config_file(path)) apply_key(cfg, k, v);
}

}  // namespace bootvit
