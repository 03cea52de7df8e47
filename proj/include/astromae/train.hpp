#pragma once

#include <string>
#include <vector>

#include "astromae/config.hpp"
#include "astromae/metrics.hpp"

namespace astromae {

// Subcommand entry points. Each writes its artifacts under cfg.out_dir:
// resolved config, machine-parseable log lines
// "epoch=<e> lr=<v> train_loss=<v> val_loss=<v>", checkpoints, metrics.
void cmd_gen_data(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
MetricsReport cmd_finetune(const RunConfig& cfg);
MetricsReport cmd_evaluate(const RunConfig& cfg);

struct GradCheckResult {
    std::string component;
    double max_error = 0.0;
    bool pass = false;
};

// Finite-difference sweep over every layer type and both block kinds (64-bit);
// checks the gradient of the objective with respect to the input and every
// parameter tensor of each component.
std::vector<GradCheckResult> run_gradcheck_suite();
int cmd_gradcheck(const RunConfig& cfg);

// Full command-line surface; returns the process exit code
// (0 ok, 1 config error, 2 data error, 3 numeric failure).
int run_cli(const std::vector<std::string>& args);

}  // namespace astromae
