#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "astromae/train.hpp"
#include "astromae/zoo.hpp"

namespace astromae {

namespace {

struct CliOptions {
    std::string config_path;
    bool desk = false;
    std::map<std::string, std::string> overrides;  // config keys set on the command line
};

void add_common_flags(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "flat key=value config file");
    cmd->add_flag("--desk", opts.desk, "apply the desk-scale preset");
    auto track = [&opts](const std::string& key) {
        return [&opts, key](const std::string& v) { opts.overrides[key] = v; };
    };
    cmd->add_option_function<std::string>("--seed", track("seed"), "RNG seed");
    cmd->add_option_function<std::string>("--variant", track("variant"), "architecture variant");
    cmd->add_option_function<std::string>("--data", track("data"), "dataset path (AMDS)");
    cmd->add_option_function<std::string>("--out", track("out"), "run directory");
    cmd->add_option_function<std::string>("--epochs", track("epochs"), "training epochs");
    cmd->add_option_function<std::string>("--batch", track("batch"), "batch size");
    cmd->add_option_function<std::string>("--checkpoint", track("checkpoint"),
                                          "checkpoint path (pretrained encoder / saved model)");
    cmd->add_option_function<std::string>("--resume", track("resume"), "training state to resume from");
    cmd->add_option_function<std::string>("--n", track("n_samples"), "sample count (gen-data)");
    cmd->add_option_function<std::string>("--noise-std", track("noise_std"),
                                          "augmentation noise level");
    cmd->add_option_function<std::string>("--split", track("split"), "evaluation split");
    cmd->add_option_function<std::string>("--allow-train-eval", track("allow_train_eval"),
                                          "permit evaluating on the training split");
}

RunConfig build_config(RunMode mode, const CliOptions& opts) {
    RunConfig cfg = RunConfig::defaults_for(mode);
    std::map<std::string, std::string> file_kv;
    if (!opts.config_path.empty()) file_kv = parse_config_file(opts.config_path);
    bool desk = opts.desk;
    if (auto it = file_kv.find("desk"); it != file_kv.end()) {
        desk = desk || it->second == "true" || it->second == "1" || it->second == "yes";
    }
    if (desk) cfg.apply_desk_preset();
    for (const auto& [k, v] : file_kv) {
        if (k == "desk" || k == "mode") continue;
        cfg.apply_key(k, v);
    }
    for (const auto& [k, v] : opts.overrides) cfg.apply_key(k, v);
    return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"masked-autoencoder pretraining and redshift-regression fine-tuning"};
    app.require_subcommand(1);

    CliOptions opts;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic galaxy dataset");
    CLI::App* pre = app.add_subcommand("pretrain", "masked-autoencoder pretraining");
    CLI::App* fin = app.add_subcommand("finetune", "fine-tune a variant for redshift regression");
    CLI::App* scratch = app.add_subcommand("train-scratch", "train a from-scratch variant");
    CLI::App* ev = app.add_subcommand("eval", "evaluate a saved model");
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    for (CLI::App* cmd : {gen, pre, fin, scratch, ev, gc}) add_common_flags(cmd, opts);

    std::vector<const char*> argv;
    argv.push_back("astromae");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            cmd_gen_data(build_config(RunMode::GenData, opts));
        } else if (pre->parsed()) {
            cmd_pretrain(build_config(RunMode::Pretrain, opts));
        } else if (fin->parsed() || scratch->parsed()) {
            RunConfig cfg = build_config(RunMode::Finetune, opts);
            if (scratch->parsed() && variant_uses_pretrained(variant_from_string(cfg.variant))) {
                throw ConfigError("train-scratch is for from-scratch variants; '" + cfg.variant +
                                  "' needs a pretrained encoder (use finetune)");
            }
            cmd_finetune(cfg);
        } else if (ev->parsed()) {
            cmd_evaluate(build_config(RunMode::Eval, opts));
        } else if (gc->parsed()) {
            return cmd_gradcheck(build_config(RunMode::GradCheck, opts));
        }
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace astromae
