#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "astromae/error.hpp"

namespace astromae {

enum class RunMode { GenData, Pretrain, Finetune, Eval, GradCheck };

RunMode mode_from_string(const std::string& s);
std::string mode_to_string(RunMode m);

// Flat key=value configuration. Defaults reproduce the published
// hyperparameter tables for the given mode; the desk preset swaps in the
// small-model settings; config-file keys and CLI flags override in that
// order. resolve_text() materializes every key for the run directory.
struct RunConfig {
    RunMode mode = RunMode::Pretrain;

    std::string data_path;
    std::string out_dir = "runs/out";
    std::string variant = "plain-astromae";
    std::string checkpoint;  // pretrained encoder (finetune) / model (eval)
    std::string resume;

    std::uint64_t seed = 42;

    // model dims
    std::int64_t patch = 8;
    std::int64_t embed_dim = 192;
    std::int64_t enc_depth = 12;
    std::int64_t dec_depth = 4;
    std::int64_t heads = 3;
    std::int64_t crop = 32;
    double mask_ratio = 0.75;

    // optimizer / schedule
    double lr_peak = 1.17e-3;
    double lr_initial = 1e-4;
    std::int64_t warmup_epochs = 196;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    std::int64_t epochs = 2000;
    std::int64_t batch = 2048;
    std::int64_t cycle_length = 10;
    double decay_base = 0.995;
    std::string cyclic_mode = "restart";  // or "envelope"

    // data
    double noise_std = 0.05;
    std::int64_t n_samples = 1000;
    bool desk = false;

    // eval
    std::string eval_split = "test";
    bool allow_train_eval = false;

    static RunConfig defaults_for(RunMode mode);
    void apply_desk_preset();
    void apply_key(const std::string& key, const std::string& value);
    void validate() const;
    std::string resolve_text() const;
};

// Parse a flat key=value file ('#' comments, blank lines ignored).
std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace astromae
