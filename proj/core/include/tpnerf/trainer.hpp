#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpnerf/metrics.hpp"
#include "tpnerf/model.hpp"
#include "tpnerf/renderer.hpp"
#include "tpnerf/scene_data.hpp"

namespace tpnerf {

struct TrainConfig {
  int n_source_views = 3;
  int n_dest_views_phase1 = 20;
  int rays_per_step_phase1 = 1000;
  int patch_size_phase2 = 40;
  int phase2_start_epoch = 30;
  int epochs = 100;
  int steps_per_epoch = 100;
  double lr_init = 5e-5;
  double lr_peak = 5e-4;
  double lr_final = 5e-6;
  int warmup_steps = 0;  ///< 0 means one epoch
  std::uint64_t seed = 0;
  int early_stopping_patience = 10;  ///< epochs without a validation gain; 0 disables
  int val_views_per_scene = 1;       ///< 0 disables validation
  double finetune_lr = 5e-6;
  int finetune_steps = 100;
  int finetune_rays = 1000;
  std::string dump_dir;  ///< where a non-finite batch is written; empty: temp dir

  void validate() const;
  int64_t total_steps() const { return static_cast<int64_t>(epochs) * steps_per_epoch; }
  int64_t warmup() const { return warmup_steps > 0 ? warmup_steps : steps_per_epoch; }
  bool operator==(const TrainConfig&) const = default;
};

/// Linear ramp lr_init -> lr_peak over the warmup, then exponential decay that
/// reaches lr_final at the last step (total_steps - 1).
double lr_at(int64_t step, const TrainConfig& config);

/// Phase 2 (patch sampling, perceptual term) starts at phase2_start_epoch.
bool is_phase2(int epoch, const TrainConfig& config);

struct TrainBatch {
  SourceViews sources;
  RayBatch rays;
  torch::Tensor target;  ///< [R, 3]
  int patch_size = 0;    ///< > 0 when the rays form a patch (row-major)
  std::vector<int64_t> source_indices;
};

/// Random source views and rays across destination views of `scene`,
/// determined by (seed, step).
TrainBatch make_phase1_batch(const Scene& scene, const TrainConfig& config, int64_t step);
/// Random source views and one square patch of a single destination view.
TrainBatch make_phase2_batch(const Scene& scene, const TrainConfig& config, int64_t step);

struct StepReport {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  bool phase2 = false;
  LossBreakdown loss;
};

class Trainer {
 public:
  Trainer(NerfModel model, TrainConfig train, LossConfig loss, SamplingConfig sampling);

  /// One optimizer step on `batch` at the current step counter.
  StepReport step(const TrainBatch& batch, int epoch);
  /// Builds the batch for the phase `epoch` selects and steps on it.
  StepReport step(const Scene& scene, int epoch);

  /// Loss of `batch` without updating anything (gradients are left in place).
  torch::Tensor loss(const TrainBatch& batch, int epoch, LossBreakdown* breakdown);

  NerfModel& model() { return model_; }
  Renderer& renderer() { return renderer_; }
  torch::optim::Adam& optimizer() { return *optimizer_; }
  PerceptualBackbone& perceptual() { return perceptual_; }
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t step) { step_ = step; }
  /// Disables coarse-to-fine resampling (used by finite-difference checks).
  void set_hierarchical(bool enabled) { hierarchical_ = enabled; }
  const TrainConfig& config() const { return train_; }

 private:
  NerfModel model_;
  Renderer renderer_;
  TrainConfig train_;
  LossConfig loss_config_;
  SamplingConfig sampling_;
  PerceptualBackbone perceptual_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int64_t step_ = 0;
  bool hierarchical_ = true;
};

inline const std::vector<std::string>& finetune_groups() {
  static const std::vector<std::string> groups{"depth_mlp", "aggregators", "plane_convs"};
  return groups;
}

struct FinetuneReport {
  std::vector<double> losses;
};

/// Per-scene optimization of the triplane network only, on the given source
/// views, at the constant finetuning learning rate. Encoder and decoders stay
/// frozen; normalization layers use their stored statistics.
FinetuneReport finetune(NerfModel& model, const SourceViews& sources, const TrainConfig& train,
                        const LossConfig& loss, const SamplingConfig& sampling);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointState {
  std::string config_json = "{}";  ///< resolved experiment configuration
  int epoch = 0;                   ///< epochs completed
  int64_t step = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::vector<std::string> groups;
};

/// Parameters and buffers as float32 blobs, per-parameter Adam moments when
/// `optimizer` is given.
void save_checkpoint(const std::filesystem::path& path, const NerfModel& model,
                     const torch::optim::Adam* optimizer, const CheckpointState& state);

/// Header only.
CheckpointState read_checkpoint_state(const std::filesystem::path& path);

/// Loads into an already constructed model (and optimizer). Throws LoadError
/// naming a missing group or tensor.
CheckpointState load_checkpoint(const std::filesystem::path& path, NerfModel& model,
                                torch::optim::Adam* optimizer);

}  // namespace tpnerf
