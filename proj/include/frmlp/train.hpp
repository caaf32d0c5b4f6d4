#pragma once

#include <memory>

#include "frmlp/checkpoint.hpp"
#include "frmlp/config.hpp"
#include "frmlp/data.hpp"
#include "frmlp/metrics.hpp"
#include "frmlp/optim.hpp"

namespace frmlp {

struct TrainResult {
    io::Checkpoint checkpoint;  // best-validation weights and optimizer state
    std::string log;            // full metric log (also written to out_dir)
    double best_val_metric = 0.0;
    int best_iteration = -1;
};

/// Runs the task loop: restoration with alternating generator/discriminator
/// updates, unsupervised registration on random synthetic pairs, or Dice +
/// focal segmentation. Validation every cfg.val_interval iterations; the best
/// validation checkpoint is retained. Throws DomainError on a non-finite loss.
TrainResult train(const RunConfig& cfg);

/// Task-appropriate held-out metrics from a checkpoint (restoration additionally
/// reports the DRF-weighted score over levels 100/50/20/10/4).
metrics::MetricReport evaluate(const io::Checkpoint& ckpt, const RunConfig& cfg);

/// Network construction and parameter transfer helpers shared by the CLI,
/// the bindings and the tests.
std::unique_ptr<Network> build_network(const RunConfig& cfg, DType dt = DType::F32);
void load_params(nn::ParamStore& params, const io::Checkpoint& ckpt);
io::Checkpoint snapshot(const RunConfig& cfg, const nn::ParamStore& params,
                        const std::vector<std::pair<std::string, Tensor>>& opt_state,
                        std::int64_t iteration, std::int64_t opt_step);

/// Deterministic synthetic datasets (seeded off cfg.seed).
data::Phantom train_phantom(const RunConfig& cfg, int index);
data::Phantom val_phantom(const RunConfig& cfg, int index);
data::Phantom eval_phantom(const RunConfig& cfg, int index);
data::RegistrationPair train_reg_pair(const RunConfig& cfg, std::uint64_t index);
data::RegistrationPair val_reg_pair(const RunConfig& cfg, int index);
data::RegistrationPair eval_reg_pair(const RunConfig& cfg, int index);

/// One-hot [1,H,W,D] float tensor from a binary label map.
Tensor labels_to_onehot(const LabelMap& labels, DType dt = DType::F32);
/// Thresholds per-channel sigmoid probabilities at 0.5 into a label map.
LabelMap logits_to_labels(const Tensor& logits);

}  // namespace frmlp
