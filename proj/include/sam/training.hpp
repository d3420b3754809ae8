#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sam/geometry.hpp"
#include "sam/model.hpp"

namespace sam {

/// Negative log-likelihood of the ground truth under log P: -mean over M_gt of
/// log P_ij - mean over I of log P_{i,N} - mean over J of log P_{M,j}, where row M
/// and column N are the dustbins. Empty sets contribute nothing.
Var loss_match(const Var& log_assignment, const GroundTruth& gt);

/// Explicit grouping supervision on the k x M soft assignments: matched points
/// towards group 0 on both sides, I and J towards group 1.
Var loss_group(const Var& soft_source, const Var& soft_target, const GroundTruth& gt);

struct LossTerms {
    Var total;
    Var match;
    Var group;
};

/// loss_match + lambda * loss_group.
LossTerms total_loss(const Var& log_assignment, const Var& soft_source, const Var& soft_target,
                     const GroundTruth& gt, double lambda = 1.0);

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay; moments are allocated per slot on first use.
class AdamW {
public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    /// Updates every trainable slot from its gradient. Throws ContractError if no
    /// gradient was accumulated since the store's last zero_grad().
    void step(ParamStore& params, double lr);

    [[nodiscard]] std::size_t steps() const noexcept { return steps_; }

private:
    AdamWOptions options_;
    std::vector<Matrix> m_, v_;
    std::size_t steps_ = 0;
};

/// Linear warm-up from 0 to base_lr over warmup_steps, then cosine decay to 0 at
/// total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                   double base_lr);

struct TrainConfig {
    ModelConfig model;
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    double base_lr = 3e-3;  // toy-scale overfit setting
    std::size_t warmup_epochs = 1;
    double group_loss_weight = 1.0;  // lambda
    std::uint64_t seed = 0;
    int jobs = 1;
    GroundTruthOptions ground_truth;

    /// Throws ConfigError for non-positive sizes or a negative lambda.
    void validate() const;
};

std::string train_config_to_json(const TrainConfig& c);
/// Missing keys keep the values already in `base`.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;       // mean total loss over the epoch's pairs
    double match_loss = 0.0;
    double group_loss = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double grouping_accuracy = 0.0;
    double lr = 0.0;  // learning rate of the epoch's last step
};

std::string epoch_metrics_to_json(const EpochMetrics& m);

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> log;
    double best_f1 = 0.0;
};

/// Writes `model.ckpt`, `best.ckpt` (model at the best epoch F1) and
/// `metrics.jsonl` into `out_dir` when it is non-empty. A non-finite loss throws
/// NumericalError after saving the last finite parameters as `model.ckpt`.
///
/// Pairs of a batch run in parallel on `jobs` threads; their gradients are summed
/// in pair order, so results do not depend on the thread count.
TrainResult train(const TrainConfig& config, const std::vector<FeaturePair>& pairs,
                  const std::filesystem::path& out_dir = {});

/// Gradient of the model's total loss on one pair, accumulated into the store.
/// Returns the loss terms' values (total, match, group).
struct PairStep {
    double total = 0.0;
    double match = 0.0;
    double group = 0.0;
    Matrix assignment;
    Matrix hard_source;
    Matrix hard_target;
    std::vector<std::pair<std::size_t, Matrix>> grads;
};
PairStep pair_step(const Model& model, const FeaturePair& pair, const GroundTruth& gt,
                   double lambda, std::uint64_t seed);

struct ModelGradCheck {
    GradCheckResult result;
    std::string worst_name;  // parameter holding the worst entry
    double elapsed_seconds = 0.0;
};

/// Finite-difference check of the total loss on one synthetic pair with
/// `keypoints` points per image. Gumbel noise is regenerated from a fixed seed on
/// every evaluation and discrete choices are replayed.
ModelGradCheck gradcheck_model(const ModelConfig& config, std::uint64_t seed,
                               std::size_t keypoints = 16, double lambda = 1.0);

/// Binary checkpoint: magic "SAMCKPT1", uint64 little-endian manifest length, JSON
/// manifest [{name, rows, cols, byte_offset}], little-endian float64 payload.
std::string checkpoint_bytes(const ParamStore& params);
/// Copies values into the matching slots of `params`. Throws IoError for a bad
/// magic, a malformed manifest, or a name/shape mismatch with the store.
void load_checkpoint_bytes(const std::string& bytes, ParamStore& params);

/// The model config goes to `<path>.config.json` next to the checkpoint.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::filesystem::path model_config_path(const std::filesystem::path& checkpoint);

}  // namespace sam
