#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsinet/checkpoint.hpp"
#include "tsinet/data.hpp"
#include "tsinet/loss.hpp"
#include "tsinet/metrics.hpp"
#include "tsinet/model.hpp"

namespace tsinet {

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  bool operator==(const AdamWConfig&) const = default;
};

/// Moment buffers in parameter-store order.
struct OptimState {
  AdamWConfig hp;
  std::vector<Tensor<float>> m, v;
  std::int64_t step = 0;

  static OptimState for_params(const ParamStore<float>& params, AdamWConfig hp = {});
};

/// Decoupled weight decay (p *= 1 - lr*wd), then a bias-corrected Adam update.
/// Throws NumericError naming the first parameter with a non-finite gradient.
void adamw_step(ParamStore<float>& params, OptimState& state, double lr);

/// lr_min + (lr_max - lr_min)(1 + cos(pi step / total)) / 2; steps past the end give lr_min.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min);

struct TrainConfig {
  int epochs = 100;           // cosine horizon
  int crops_per_epoch = 64;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double lr_max = 5e-4, lr_min = 1e-6;
  AdamWConfig adamw;
  std::size_t crop_frames = 8, crop_height = 64, crop_width = 64, temporal_origin = 0;
  bool augment = true;
  int val_every = 1;          // epochs between validation passes
  double threshold = 0.5;     // val Dice threshold for model selection
  /// Stop after this many epochs without changing the schedule (0 = run all).
  /// Not part of the run identity, so it is excluded from artifacts.
  int stop_after_epochs = 0;

  void validate() const;
  int steps_per_epoch() const { return (crops_per_epoch + batch_size - 1) / batch_size; }
  std::int64_t total_steps() const { return std::int64_t(epochs) * steps_per_epoch(); }
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// A training sample ready for the network.
struct Sample {
  Tensor<float> frames;  // [T,H,W], z-scored
  Tensor<float> target;  // [1,H,W]
  Tensor<float> skeleton;  // [1,H,W]
};

/// A sequence with the per-sequence preprocessing cached.
struct PreparedSequence {
  std::string id;
  Tensor<float> frames;  // z-scored [T,H,W]
  BinaryMask mask;
  BinaryMask skeleton;
};

PreparedSequence prepare(const DsaSequence& seq);

/// The crop and augmentation draws for one sample, in draw order.
Sample draw_sample(const std::vector<PreparedSequence>& pool, const TrainConfig& cfg, Rng& rng);

/// Forward + loss (+ backward into the parameter grads when `with_grad`).
LossBreakdown sample_loss(TsiNet<float>& net, const Sample& s, const LossConfig& loss, bool with_grad);

/// Logits [1,H,W] for a z-scored sequence.
Tensor<float> predict_logits(TsiNet<float>& net, const Tensor<float>& frames);

struct EvalOptions {
  double threshold = 0.5;
  int connectivity = 8;
  std::function<void(const std::string&)> warn;  // notified about center crops
};

/// Full sequences of a split, center-cropped to a multiple of 2^levels.
MetricsReport evaluate(TsiNet<float>& net, const Dataset& data, const std::string& split, const EvalOptions& opt = {});
MetricsReport evaluate(TsiNet<float>& net, const std::vector<DsaSequence>& seqs, const EvalOptions& opt = {});

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // a last.ckpt written by an earlier run
  std::function<void(const nlohmann::json&)> on_record;  // every log record
  bool write_files = true;  // log + checkpoints under out_dir
};

struct TrainResult {
  double best_dice = -1;
  int best_epoch = -1;
  int epochs_done = 0;
  std::int64_t steps_done = 0;
  std::vector<double> step_losses;  // batch-mean total loss per step run in this call
  std::filesystem::path last_checkpoint, best_checkpoint;
};

/// Model init seed derived from the run seed.
std::uint64_t init_seed(std::uint64_t run_seed);

/// Checkpoint with model parameters, optimizer moments ("adam.m.*", "adam.v.*") and run metadata.
Checkpoint training_checkpoint(const TsiNet<float>& net, const OptimState& opt, const nlohmann::json& meta);

TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& cfg, const Dataset& data,
                  const std::filesystem::path& out_dir, const TrainOptions& opt = {});

/// Lower-level entry point over in-memory splits; `val` may be empty (no selection).
TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& cfg,
                  const std::vector<DsaSequence>& train_set, const std::vector<DsaSequence>& val_set,
                  const std::filesystem::path& out_dir, const TrainOptions& opt = {});

}  // namespace tsinet
