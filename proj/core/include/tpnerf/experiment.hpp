#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tpnerf/metrics.hpp"
#include "tpnerf/model.hpp"
#include "tpnerf/renderer.hpp"
#include "tpnerf/scene_data.hpp"
#include "tpnerf/trainer.hpp"

namespace tpnerf {

struct EvalConfig {
  SamplingConfig sampling{0.02, 3.0, 32, 32, false};
  int chunk_size = 4096;
  int max_views = 0;  ///< eval views per scene, 0 = all
};

/// Every tunable of a run. Serialized as a JSON tree with sections "model",
/// "train", "loss", "sampling", "eval" and the key "perceptual_weights".
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  SamplingConfig sampling;
  EvalConfig eval;
  std::string perceptual_weights;  ///< optional tensor archive for the perceptual backbone

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& config);
/// Keys absent from `text` keep their defaults; unknown keys raise a
/// ConfigError listing all of them.
ExperimentConfig config_from_json(std::string_view text);
/// Applies "section.key=value" (value parsed as JSON, else taken as a string).
void apply_override(ExperimentConfig& config, const std::string& assignment);

// ---------------------------------------------------------------------------
// Data

struct ToyDataOptions {
  std::filesystem::path out;
  int scenes = 9;
  std::uint64_t seed = 7;
  int objects_min = 1;
  int objects_max = 4;
  int views_train = 20;
  int views_eval = 5;
  int height = 64;
  int width = 64;
  bool force = false;
};

/// Spec of scene `index` of a generated toy dataset.
ToySceneSpec toy_spec_for(const ToyDataOptions& options, int index);

/// Writes scene_000 ... into options.out; returns one summary line per scene.
std::vector<std::string> make_toy_data(const ToyDataOptions& options);

struct NamedScene {
  std::string name;
  Scene scene;
};

/// `dir` is either one scene directory or a directory of scene directories
/// (loaded in name order).
std::vector<NamedScene> load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
  int epochs_completed = 0;
  int64_t steps = 0;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  bool stopped_early = false;
};

using StepCallback = std::function<void(const StepReport&)>;

/// Runs both phases over `scenes` (one scene per step, round robin). Writes
/// `out`/config.json, checkpoints/epoch_NNN.ckpt, checkpoints/best.ckpt and
/// logs.jsonl. With `resume`, continues from the stored epoch counter.
TrainOutcome run_training(const ExperimentConfig& config, const std::vector<NamedScene>& scenes,
                          const std::filesystem::path& out,
                          const std::optional<std::filesystem::path>& resume = std::nullopt,
                          const StepCallback& on_step = {});

/// Trains `model` in place without writing anything.
std::vector<StepReport> train_in_memory(NerfModel& model, const ExperimentConfig& config,
                                        const std::vector<const Scene*>& scenes,
                                        const StepCallback& on_step = {});

struct LoadedModel {
  NerfModel model{nullptr};
  ExperimentConfig config;
  CheckpointState state;
};

/// Builds the model the checkpoint header describes. When `runtime` differs
/// from the header, a warning goes to `warnings` and the header wins.
LoadedModel load_model(const std::filesystem::path& checkpoint,
                       const std::optional<ExperimentConfig>& runtime = std::nullopt,
                       std::ostream* warnings = nullptr);

NerfModel copy_model(const NerfModel& model);

// ---------------------------------------------------------------------------
// Evaluation

struct SceneMetrics {
  std::string name;
  int views = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  bool has_depth = false;
  double depth_l1 = 0.0;
  double depth_rmse = 0.0;
};

struct EvalReport {
  int source_views = 0;
  bool finetune = false;
  std::vector<SceneMetrics> scenes;
  SceneMetrics aggregate;
  std::string to_json(const ExperimentConfig& config, const std::string& backbone) const;
};

/// Renders the eval split of `scene` from `source_views` spread source frames.
/// With `finetune`, a copy of the model is finetuned on those frames first.
SceneMetrics evaluate_scene(const NerfModel& model, const Scene& scene,
                            const ExperimentConfig& config, int source_views, bool finetune,
                            PerceptualBackbone& backbone, const std::string& name = "");

EvalReport evaluate(const NerfModel& model, const std::vector<NamedScene>& scenes,
                    const ExperimentConfig& config, int source_views, bool finetune,
                    PerceptualBackbone& backbone);

/// Mean PSNR of the first `views_per_scene` eval views of every scene.
double validation_psnr(const NerfModel& model, const std::vector<const Scene*>& scenes,
                       const ExperimentConfig& config, int views_per_scene);

// ---------------------------------------------------------------------------
// Rendering

enum class Trajectory { Circle, EvalCameras };

struct RenderJob {
  Trajectory trajectory = Trajectory::Circle;
  int frames = 10;
  RenderMode mode = RenderMode::Full;
  std::optional<std::vector<OrientedBox>> boxes;  ///< overrides the scene boxes
  std::filesystem::path out;
};

/// Ring of cameras at the mean radius and elevation of `reference`, looking
/// at the origin.
std::vector<Camera> circle_trajectory(const std::vector<Camera>& reference, int frames);

std::vector<OrientedBox> boxes_from_json(std::string_view text, const std::string& source);

/// Writes frame_NNNN.png and depth_NNNN.pfm per camera (plus per-source
/// images in decomposed mode); returns the number of frames.
int render_trajectory(const NerfModel& model, const Scene& scene, const ExperimentConfig& config,
                      const RenderJob& job);

}  // namespace tpnerf
