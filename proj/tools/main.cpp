#include <cstdio>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "bootvit/bias.hpp"
#include "bootvit/config.hpp"
#include "bootvit/data.hpp"
#include "bootvit/model.hpp"
#include "bootvit/optim.hpp"
#include "bootvit/svg.hpp"
#include "bootvit/train.hpp"

namespace {

using namespace bootvit;

// Every RunConfig key as a flag; values are applied in the order given, and
// a config file, when present, is applied after the flags and wins.
struct ConfigCli {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string config_path;

    void attach(CLI::App* cmd) {
        static const std::vector<std::pair<const char*, const char*>> keys = {
            {"scheme", "scratch-vit | scratch-agent | joint | shared"},
            {"layers", "encoder depth m"},
            {"hidden", "embedding width d"},
            {"heads", "attention heads H"},
            {"patch", "patch side"},
            {"image", "input side in pixels"},
            {"classes", "label count"},
            {"mlp_ratio", "FFN expansion"},
            {"agent", "agent variant: base | res-like"},
            {"alpha", "feature-loss weight"},
            {"beta", "mutual-loss weight"},
            {"temperature", "distillation temperature"},
            {"decay", "feature-weight schedule: linear | none"},
            {"adapt", "feature adapter: seq-interp-1d | avg-pool-2d"},
            {"lambda", "supervised layers, e.g. 1,2,4 or all"},
            {"lr", "peak learning rate"},
            {"weight_decay", "decoupled weight decay"},
            {"epochs", "training epochs"},
            {"batch", "batch size"},
            {"val_batch", "validation batch size"},
            {"data", "dataset directory"},
            {"fraction", "stratified train fraction in (0,1]"},
            {"seed", "master seed"},
            {"augment", "crop/flip augmentation on or off"},
            {"out", "output directory"},
        };
        for (const auto& [key, help] : keys) {
            const std::string k = key;
            cmd->add_option_function<std::string>(
                "--" + k, [this, k](const std::string& v) { pairs.emplace_back(k, v); }, help);
        }
        cmd->add_option("--config", config_path, "key = value file; overrides any flags");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        for (const auto& [k, v] : pairs) apply_key(cfg, k, v);
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        cfg.validate();
        return cfg;
    }
};

std::vector<double> parse_grid(const std::string& key, const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!detail::trim(tok).empty()) out.push_back(detail::parse_num(key, detail::trim(tok)));
    if (out.empty()) throw ConfigError(key + ": empty grid");
    return out;
}

std::pair<Dataset, Dataset> load_splits(const RunConfig& cfg, const std::string& flavor) {
    const CifarFlavor f = flavor == "cifar100" ? CifarFlavor::cifar100 : CifarFlavor::cifar10;
    CifarData data = load_cifar(cfg.data_dir, f);
    Dataset train = subsample(data.train, cfg.fraction, cfg.seed);
    return {std::move(train), std::move(data.test)};
}

void print_result(const RunResult& r) {
    std::printf("trainable_params %zu\n", r.trainable_params);
    std::printf("final_val_vit %s\n", detail::fmt_double(r.final_val_vit).c_str());
    std::printf("best_val_vit %s\n", detail::fmt_double(r.best_val_vit).c_str());
    std::printf("final_val_agent %s\n", detail::fmt_double(r.final_val_agent).c_str());
    std::printf("best_val_agent %s\n", detail::fmt_double(r.best_val_agent).c_str());
    std::printf("wall_clock_sec %s\n", detail::fmt_double(r.wall_seconds).c_str());
}

int run_check() {
    int failures = 0;
    auto report = [&](const char* name, bool ok) {
        std::printf("%s %s\n", ok ? "pass" : "FAIL", name);
        if (!ok) ++failures;
    };
    {
        // Token-form convolution against the direct one, 3x3 on a 4x4 map.
        RngForest forest(7);
        RngStream rng = forest.stream("check.conv");
        const std::size_t s = 4, cin = 3, cout = 5, k = 3;
        std::vector<float> xv(cin * s * s), wv(k * k * cin * cout);
        for (auto& v : xv) v = static_cast<float>(rng.normal());
        for (auto& v : wv) v = static_cast<float>(rng.normal());
        Tensor<float> img = Tensor<float>::from_data({1, cin, s, s}, xv);
        Tensor<float> w = Tensor<float>::from_data({k, k, cin, cout}, wv);
        Tensor<float> direct = chw_to_tokens(conv2d_direct(img, w, 1, 1));
        BiasSet biases = build_selection_matrices(s, s, k);
        std::vector<Tensor<float>> slices;
        for (std::size_t i = 0; i < k * k; ++i) {
            std::vector<float> sw(wv.begin() + i * cin * cout, wv.begin() + (i + 1) * cin * cout);
            slices.push_back(Tensor<float>::from_data({cin, cout}, std::move(sw)));
        }
        Tensor<float> tokens = conv_matrix_form(chw_to_tokens(img), biases, slices);
        double err = 0;
        for (std::size_t i = 0; i < tokens.numel(); ++i)
            err = std::max(err, std::abs(static_cast<double>(tokens.data()[i] - direct.data()[i])));
        report("conv matrix form equals direct conv", err < 1e-4);
    }
    {
        const std::vector<double> out = align<double>({-1.0, 1.0}, {1.0, 0.0});
        report("align hand case", out[0] == 0.0 && out[1] == 1.0);
    }
    {
        RngForest forest(8);
        VitModel<float> m = build_vit<float>(vit_small_config(), forest);
        const double p = static_cast<double>(count_params(m));
        report("ViT-S parameter count within 1%", std::abs(p - 6.28e6) / 6.28e6 < 0.01);
    }
    {
        RngStream rng(9);
        std::vector<double> wv(6 * 4), bv(4), xv(5 * 6);
        for (auto& v : wv) v = rng.normal();
        for (auto& v : bv) v = rng.normal();
        for (auto& v : xv) v = rng.normal();
        report("fully connected equals 1x1 conv",
               fc_equals_1x1_conv(Tensor<double>::from_data({6, 4}, wv), Tensor<double>::from_data({4}, bv),
                                  Tensor<double>::from_data({5, 6}, xv)));
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bootvit: two-network co-training at desk scale"};
    app.require_subcommand(1);

    ConfigCli train_cfg, ablate_cfg, sweep_cfg;
    std::string flavor = "cifar10";

    CLI::App* cmd_train = app.add_subcommand("train", "one training run");
    train_cfg.attach(cmd_train);
    cmd_train->add_option("--flavor", flavor, "cifar10 | cifar100");

    CLI::App* cmd_ablate = app.add_subcommand("ablate", "train with objective toggles");
    ablate_cfg.attach(cmd_ablate);
    AblateToggles toggles;
    cmd_ablate->add_flag("--no-mutual", toggles.no_mutual, "drop the mutual term");
    cmd_ablate->add_flag("--no-feat", toggles.no_feat, "drop the feature term");
    cmd_ablate->add_flag("--no-decay", toggles.no_decay, "constant feature weight");
    cmd_ablate->add_flag("--ap2d", toggles.ap2d, "average-pool feature adapter");
    cmd_ablate->add_option("--drop-layer", toggles.drop_layer, "remove one supervised layer (1-based)");

    CLI::App* cmd_sweep = app.add_subcommand("sweep", "grid over alpha, beta, temperature");
    sweep_cfg.attach(cmd_sweep);
    std::string alphas_csv = "1", betas_csv = "10", temps_csv = "4";
    cmd_sweep->add_option("--alphas", alphas_csv, "comma list of alpha values");
    cmd_sweep->add_option("--betas", betas_csv, "comma list of beta values");
    cmd_sweep->add_option("--temps", temps_csv, "comma list of temperatures");

    CLI::App* cmd_curves = app.add_subcommand("curves", "accuracy curves from metrics files");
    std::vector<std::string> metrics_files;
    std::string svg_out = "curves.svg", csv_out = "curves.csv";
    cmd_curves->add_option("files", metrics_files, "metrics.csv files");
    cmd_curves->add_option("--svg", svg_out, "SVG output path");
    cmd_curves->add_option("--csv", csv_out, "merged CSV output path");

    CLI::App* cmd_phi = app.add_subcommand("inspect-phi", "dump selection matrices as triplets");
    std::size_t phi_size = 4, phi_kernel = 3, phi_heads = 0;
    cmd_phi->add_option("--size", phi_size, "feature map side");
    cmd_phi->add_option("--kernel", phi_kernel, "odd kernel side (full window)");
    cmd_phi->add_option("--heads", phi_heads, "generalized subset size; 0 dumps the full window");

    CLI::App* cmd_check = app.add_subcommand("check", "run the built-in oracles");

    CLI::App* cmd_data = app.add_subcommand("make-data", "write a synthetic set in CIFAR-10 layout");
    std::string data_out = "data";
    std::size_t n_train = 10000, n_test = 2000, data_classes = 10;
    std::uint64_t data_seed = 1;
    cmd_data->add_option("--out", data_out, "output directory");
    cmd_data->add_option("--train", n_train, "training images");
    cmd_data->add_option("--test", n_test, "test images");
    cmd_data->add_option("--seed", data_seed, "generator seed");
    cmd_data->add_option("--classes", data_classes, "class count (1..10)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            RunConfig cfg = train_cfg.resolve();
            auto [train_ds, val_ds] = load_splits(cfg, flavor);
            print_result(run_training(cfg, train_ds, val_ds));
        } else if (cmd_ablate->parsed()) {
            RunConfig cfg = ablate_cfg.resolve();
            auto [train_ds, val_ds] = load_splits(cfg, flavor);
            print_result(run_ablation(cfg, toggles, train_ds, val_ds));
        } else if (cmd_sweep->parsed()) {
            RunConfig cfg = sweep_cfg.resolve();
            auto [train_ds, val_ds] = load_splits(cfg, flavor);
            std::fputs(sweep(cfg, parse_grid("alphas", alphas_csv), parse_grid("betas", betas_csv),
                             parse_grid("temps", temps_csv), train_ds, val_ds)
                           .c_str(),
                       stdout);
        } else if (cmd_curves->parsed()) {
            export_curves(metrics_files, svg_out, csv_out);
            std::printf("wrote %s and %s\n", svg_out.c_str(), csv_out.c_str());
        } else if (cmd_phi->parsed()) {
            const BiasSet set = phi_heads ? generalized_bias_set(phi_size, phi_size, phi_heads)
                                          : build_selection_matrices(phi_size, phi_size, phi_kernel);
            for (std::size_t i = 0; i < set.size(); ++i) {
                std::printf("# matrix %zu offset (%d,%d) nnz %zu\n", i, set.matrices[i].di,
                            set.matrices[i].dj, set.matrices[i].nnz());
                std::ostringstream os;
                write_triplets(os, set.matrices[i]);
                std::fputs(os.str().c_str(), stdout);
            }
        } else if (cmd_check->parsed()) {
            return run_check();
        } else if (cmd_data->parsed()) {
            make_synthetic_cifar(data_out, n_train, n_test, data_seed, data_classes);
            std::printf("wrote %zu train and %zu test images under %s\n", n_train, n_test,
                        data_out.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
