#pragma once

#include <string>

#include "frmlp/network.hpp"
#include "frmlp/objectives.hpp"

namespace frmlp {

/// Everything a run needs: task, network, loss weights, optimizer schedule
/// and synthetic-data parameters. Defaults per task mirror the reference
/// schedules scaled down to desk size.
struct RunConfig {
    Task task = Task::Restore;
    NetworkConfig network;
    LossWeights loss;

    // Optimizer / schedule.
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int batch_size = 2;
    int iterations = 300;
    int val_interval = 25;
    double plateau_factor = 0.1;  // restoration: decay on stalled validation
    int plateau_patience = 3;
    double min_lr = 2e-6;         // restoration: stop when the decay passes this
    double step_lr2 = 5e-5;       // segmentation: lr after 1/3 of the budget
    double step_lr3 = 1e-5;       // segmentation: lr after 2/3 of the budget

    // Synthetic data.
    int n_blobs = 5;
    double drf = 100.0;
    double counts_full_dose = 1e4;
    double reg_amplitude = 3.0;
    double reg_sigma = 4.0;
    int train_cases = 24;
    int val_cases = 6;
    int eval_cases = 16;

    std::uint64_t seed = 1;
    std::string out_dir = "out";

    void validate() const;
};

/// Task-appropriate defaults (learning rate, batch, budget, network shape).
RunConfig default_config(Task task);

/// Strict parser: unknown keys anywhere reject the config.
RunConfig parse_config_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
std::uint32_t config_hash(const RunConfig& cfg);

/// Table 4 style stage codes: 'P' is the configured MLP block, 'C' a
/// residual conv block. Five letters, e.g. PPPPP, CPPPP, CCPPP.
std::array<BlockKind, 5> parse_stage_code(const std::string& code, BlockKind mlp_kind);

}  // namespace frmlp
