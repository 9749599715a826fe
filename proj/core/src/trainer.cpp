#include "tpnerf/trainer.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "tpnerf/errors.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace tpnerf {

using nlohmann::json;

namespace {

class Draw {
 public:
  Draw(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
  double uniform() { return hash_uniform(seed_, stream_, index_++); }
  int64_t below(int64_t n) {
    return std::min<int64_t>(static_cast<int64_t>(uniform() * static_cast<double>(n)), n - 1);
  }
  /// `k` distinct elements of `pool` in random order.
  std::vector<int64_t> choose(std::vector<int64_t> pool, int64_t k) {
    k = std::min<int64_t>(k, static_cast<int64_t>(pool.size()));
    for (int64_t i = 0; i < k; ++i) {
      const int64_t j = i + below(static_cast<int64_t>(pool.size()) - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

constexpr std::uint64_t kBatchStream = 1000;
constexpr std::uint64_t kFinetuneStream = 5000;

std::vector<int64_t> training_frames(const Scene& scene) {
  std::vector<int64_t> out(scene.manifest.split.source_indices.begin(),
                           scene.manifest.split.source_indices.end());
  if (out.empty()) throw InputError("scene has no source frames to train on");
  return out;
}

/// Rays through `pixels` ([N, 2] row/col) of frame `view`, ids unique per frame.
RayBatch frame_rays(const Scene& scene, int64_t view, const torch::Tensor& pixels) {
  const auto& cam = scene.cameras[view];
  auto rays = generate_rays(cam, pixels, torch::kFloat32);
  rays.ray_ids = rays.ray_ids + view * static_cast<int64_t>(cam.width) * cam.height;
  return rays;
}

torch::Tensor frame_colors(const Scene& scene, int64_t view, const torch::Tensor& pixels) {
  const auto img = scene.images[view];
  return img.index({pixels.select(1, 0), pixels.select(1, 1)});
}

TrainBatch rays_from_frames(const Scene& scene, const std::vector<int64_t>& frames, int rays,
                            Draw& draw) {
  const int64_t h = scene.images.size(1);
  const int64_t w = scene.images.size(2);
  std::vector<std::vector<int64_t>> per_frame(frames.size());
  for (int r = 0; r < rays; ++r) {
    const auto f = draw.below(static_cast<int64_t>(frames.size()));
    per_frame[f].push_back(draw.below(h * w));
  }
  TrainBatch batch;
  std::vector<torch::Tensor> origins, dirs, ids, colors;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (per_frame[f].empty()) continue;
    const auto flat = torch::tensor(per_frame[f], torch::kInt64);
    const auto pixels = torch::stack({flat.div(w, "floor"), flat.remainder(w)}, 1);
    auto rb = frame_rays(scene, frames[f], pixels);
    origins.push_back(rb.origins);
    dirs.push_back(rb.directions);
    ids.push_back(rb.ray_ids);
    colors.push_back(frame_colors(scene, frames[f], pixels));
  }
  batch.rays = {torch::cat(origins), torch::cat(dirs), torch::cat(ids)};
  batch.target = torch::cat(colors);
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  if (n_source_views < 1 || n_dest_views_phase1 < 1 || rays_per_step_phase1 < 1 ||
      patch_size_phase2 < 1 || epochs < 1 || steps_per_epoch < 1)
    throw InputError("train counts must be positive");
  if (phase2_start_epoch < 0) throw InputError("phase2_start_epoch must be nonnegative");
  if (!(lr_init > 0 && lr_peak > 0 && lr_final > 0))
    throw InputError("learning rates must be positive");
  if (lr_init > lr_peak || lr_final > lr_peak)
    throw InputError("lr_init and lr_final must not exceed lr_peak");
  if (warmup_steps < 0 || early_stopping_patience < 0 || val_views_per_scene < 0)
    throw InputError("warmup_steps, patience and validation views must be nonnegative");
  if (!(finetune_lr > 0) || finetune_steps < 0 || finetune_rays < 1)
    throw InputError("invalid finetuning settings");
}

double lr_at(int64_t step, const TrainConfig& config) {
  if (step < 0) throw InputError("lr_at: step must be nonnegative");
  const int64_t warmup = config.warmup();
  if (step < warmup) {
    return config.lr_init +
           (config.lr_peak - config.lr_init) * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const int64_t last = config.total_steps() - 1;
  if (last <= warmup) return config.lr_peak;
  const double frac = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(last - warmup));
  return config.lr_peak * std::pow(config.lr_final / config.lr_peak, frac);
}

bool is_phase2(int epoch, const TrainConfig& config) { return epoch >= config.phase2_start_epoch; }

TrainBatch make_phase1_batch(const Scene& scene, const TrainConfig& config, int64_t step) {
  Draw draw(config.seed, kBatchStream + 2 * static_cast<std::uint64_t>(step));
  const auto frames = training_frames(scene);
  const auto sources = draw.choose(frames, config.n_source_views);
  if (static_cast<int>(sources.size()) < config.n_source_views)
    throw InputError("scene has fewer training frames than source views");
  const auto dest = draw.choose(frames, config.n_dest_views_phase1);
  auto batch = rays_from_frames(scene, dest, config.rays_per_step_phase1, draw);
  batch.sources = scene.views(sources);
  batch.source_indices = sources;
  return batch;
}

TrainBatch make_phase2_batch(const Scene& scene, const TrainConfig& config, int64_t step) {
  Draw draw(config.seed, kBatchStream + 2 * static_cast<std::uint64_t>(step) + 1);
  const auto frames = training_frames(scene);
  const auto sources = draw.choose(frames, config.n_source_views);
  if (static_cast<int>(sources.size()) < config.n_source_views)
    throw InputError("scene has fewer training frames than source views");
  const auto view = frames[draw.below(static_cast<int64_t>(frames.size()))];
  const int64_t h = scene.images.size(1);
  const int64_t w = scene.images.size(2);
  const int64_t p = std::min<int64_t>({config.patch_size_phase2, h, w});
  const int64_t r0 = draw.below(h - p + 1);
  const int64_t c0 = draw.below(w - p + 1);
  const auto rows = torch::arange(r0, r0 + p, torch::kInt64);
  const auto cols = torch::arange(c0, c0 + p, torch::kInt64);
  const auto grid = torch::meshgrid({rows, cols}, "ij");
  const auto pixels = torch::stack({grid[0].reshape(-1), grid[1].reshape(-1)}, 1);
  TrainBatch batch;
  batch.rays = frame_rays(scene, view, pixels);
  batch.target = frame_colors(scene, view, pixels);
  batch.patch_size = static_cast<int>(p);
  batch.sources = scene.views(sources);
  batch.source_indices = sources;
  return batch;
}

Trainer::Trainer(NerfModel model, TrainConfig train, LossConfig loss, SamplingConfig sampling)
    : model_(model),
      renderer_(model),
      train_(std::move(train)),
      loss_config_(loss),
      sampling_(sampling),
      perceptual_(PerceptualBackbone()) {
  train_.validate();
  loss_config_.validate();
  sampling_.validate();
  optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(),
                                                    torch::optim::AdamOptions(lr_at(0, train_)));
}

torch::Tensor Trainer::loss(const TrainBatch& batch, int epoch, LossBreakdown* breakdown) {
  const auto views = renderer_.encode(batch.sources);
  RenderSettings settings;
  settings.sampling = sampling_;
  settings.seed = train_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step_);
  settings.hierarchical = hierarchical_;
  const auto out = renderer_.render_rays(views, batch.rays, settings);
  const auto target = batch.target.to(out.rgb.scalar_type());
  const auto photo = photometric_loss(out.rgb, target);
  const auto reg_near = distortion_loss(out.near.edges, out.near.weights).mean();
  torch::Tensor reg_far;
  if (out.far.weights.defined()) reg_far = distortion_loss(out.far.edges, out.far.weights).mean();
  torch::Tensor perceptual;
  if (batch.patch_size > 0 && epoch >= loss_config_.lpips_start_epoch) {
    const int64_t p = batch.patch_size;
    perceptual = perceptual_loss(out.rgb.view({p, p, 3}), target.view({p, p, 3}), perceptual_);
  }
  return combine_losses(photo, reg_near, reg_far, perceptual, loss_config_, epoch, breakdown);
}

StepReport Trainer::step(const TrainBatch& batch, int epoch) {
  model_->train();
  StepReport report;
  report.step = step_;
  report.epoch = epoch;
  report.phase2 = batch.patch_size > 0;
  report.lr = lr_at(step_, train_);
  auto total = loss(batch, epoch, &report.loss);
  if (!std::isfinite(report.loss.total)) {
    const std::filesystem::path dir =
        train_.dump_dir.empty() ? std::filesystem::temp_directory_path() : std::filesystem::path(train_.dump_dir);
    const auto path = dir / ("nonfinite_batch_step" + std::to_string(step_) + ".tpna");
    TensorArchive dump;
    dump.metadata = json{{"step", step_}, {"epoch", epoch}, {"sources", batch.source_indices}}.dump();
    dump.tensors = {{"origins", batch.rays.origins},
                    {"directions", batch.rays.directions},
                    {"ray_ids", batch.rays.ray_ids},
                    {"target", batch.target}};
    save_archive(path, dump);
    throw NumericalError("non-finite loss at step " + std::to_string(step_) +
                         " (photo=" + std::to_string(report.loss.photo) +
                         ", reg=" + std::to_string(report.loss.reg) + "); batch written to " +
                         path.string());
  }
  optimizer_->zero_grad();
  total.backward();
  for (auto& group : optimizer_->param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(report.lr);
  optimizer_->step();
  ++step_;
  return report;
}

StepReport Trainer::step(const Scene& scene, int epoch) {
  const auto batch = is_phase2(epoch, train_) ? make_phase2_batch(scene, train_, step_)
                                              : make_phase1_batch(scene, train_, step_);
  return step(batch, epoch);
}

FinetuneReport finetune(NerfModel& model, const SourceViews& sources, const TrainConfig& train,
                        const LossConfig& loss, const SamplingConfig& sampling) {
  if (!model->config().use_triplane) throw InputError("finetuning needs the triplane network");
  sources.validate();
  std::vector<torch::Tensor> params;
  for (const auto& g : finetune_groups())
    for (auto& p : model->group_parameters(g)) params.push_back(p);
  std::vector<std::pair<torch::Tensor, bool>> saved;
  for (auto& p : model->parameters()) saved.emplace_back(p, p.requires_grad());
  for (const auto& g : model->group_names()) {
    const bool tuned = std::find(finetune_groups().begin(), finetune_groups().end(), g) !=
                       finetune_groups().end();
    model->set_group_trainable(g, tuned);
  }

  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(train.finetune_lr));
  model->eval();
  Renderer renderer(model);
  const int64_t h = sources.images.size(1);
  const int64_t w = sources.images.size(2);
  FinetuneReport report;
  for (int s = 0; s < train.finetune_steps; ++s) {
    Draw draw(train.seed, kFinetuneStream + static_cast<std::uint64_t>(s));
    std::vector<int64_t> view_of, pix;
    for (int r = 0; r < train.finetune_rays; ++r) {
      view_of.push_back(draw.below(sources.size()));
      pix.push_back(draw.below(h * w));
    }
    std::vector<torch::Tensor> origins, dirs, ids, colors;
    for (int64_t v = 0; v < sources.size(); ++v) {
      std::vector<int64_t> mine;
      for (std::size_t r = 0; r < pix.size(); ++r)
        if (view_of[r] == v) mine.push_back(pix[r]);
      if (mine.empty()) continue;
      const auto flat = torch::tensor(mine, torch::kInt64);
      const auto pixels = torch::stack({flat.div(w, "floor"), flat.remainder(w)}, 1);
      auto rb = generate_rays(sources.cameras[v], pixels, torch::kFloat32);
      origins.push_back(rb.origins);
      dirs.push_back(rb.directions);
      ids.push_back(rb.ray_ids + v * h * w);
      colors.push_back(sources.images[v].index({pixels.select(1, 0), pixels.select(1, 1)}));
    }
    const RayBatch rays{torch::cat(origins), torch::cat(dirs), torch::cat(ids)};
    const auto views = renderer.encode(sources);
    RenderSettings settings;
    settings.sampling = sampling;
    settings.seed = train.seed + 7919 * static_cast<std::uint64_t>(s);
    const auto out = renderer.render_rays(views, rays, settings);
    const auto photo = photometric_loss(out.rgb, torch::cat(colors).to(out.rgb.scalar_type()));
    const auto reg_near = distortion_loss(out.near.edges, out.near.weights).mean();
    torch::Tensor reg_far;
    if (out.far.weights.defined()) reg_far = distortion_loss(out.far.edges, out.far.weights).mean();
    LossBreakdown b;
    auto total = combine_losses(photo, reg_near, reg_far, {}, loss, 0, &b);
    if (!std::isfinite(b.total)) throw NumericalError("non-finite loss during finetuning");
    optimizer.zero_grad();
    total.backward();
    optimizer.step();
    report.losses.push_back(b.total);
  }
  for (auto& [p, flag] : saved) p.set_requires_grad(flag);
  return report;
}

void save_checkpoint(const std::filesystem::path& path, const NerfModel& model,
                     const torch::optim::Adam* optimizer, const CheckpointState& state) {
  TensorArchive archive;
  json meta;
  meta["format"] = "tpnerf-checkpoint";
  meta["config"] = json::parse(state.config_json);
  meta["epoch"] = state.epoch;
  meta["step"] = state.step;
  meta["best_metric"] = std::isfinite(state.best_metric) ? json(state.best_metric) : json(nullptr);
  meta["groups"] = model->group_names();
  meta["optimizer"] = optimizer != nullptr;
  archive.metadata = meta.dump();
  for (const auto& [name, t] : model->state()) archive.tensors["model/" + name] = t;
  if (optimizer) {
    const auto& st = optimizer->state();
    for (const auto& item : model->named_parameters()) {
      const auto it = st.find(item.value().unsafeGetTensorImpl());
      if (it == st.end()) continue;
      const auto& adam = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const std::string base = "optim/" + item.key();
      archive.tensors[base + "/exp_avg"] = adam.exp_avg();
      archive.tensors[base + "/exp_avg_sq"] = adam.exp_avg_sq();
      archive.tensors[base + "/step"] = torch::tensor({adam.step()}, torch::kInt64);
    }
  }
  save_archive(path, archive);
}

namespace {

CheckpointState state_from_metadata(const std::string& metadata, const std::string& source) {
  CheckpointState state;
  try {
    const auto meta = json::parse(metadata);
    if (meta.value("format", "") != "tpnerf-checkpoint")
      throw LoadError(source + ": not a checkpoint archive");
    state.config_json = meta.at("config").dump();
    state.epoch = meta.at("epoch").get<int>();
    state.step = meta.at("step").get<int64_t>();
    const auto& best = meta.at("best_metric");
    state.best_metric =
        best.is_null() ? -std::numeric_limits<double>::infinity() : best.get<double>();
    state.groups = meta.at("groups").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw LoadError(source + ": malformed checkpoint header: " + e.what());
  }
  return state;
}

}  // namespace

CheckpointState read_checkpoint_state(const std::filesystem::path& path) {
  const auto archive = load_archive(path);
  return state_from_metadata(archive.metadata, path.string());
}

CheckpointState load_checkpoint(const std::filesystem::path& path, NerfModel& model,
                                torch::optim::Adam* optimizer) {
  const auto archive = load_archive(path);
  auto state = state_from_metadata(archive.metadata, path.string());
  const std::set<std::string> stored(state.groups.begin(), state.groups.end());
  for (const auto& g : model->group_names())
    if (!stored.contains(g))
      throw LoadError(path.string() + ": checkpoint lacks parameter group '" + g + "'");

  torch::NoGradGuard no_grad;
  for (auto& [name, t] : model->state()) {
    const auto it = archive.tensors.find("model/" + name);
    if (it == archive.tensors.end())
      throw LoadError(path.string() + ": checkpoint lacks tensor '" + name + "' of group '" +
                      group_of(name) + "'");
    if (it->second.sizes() != t.sizes())
      throw LoadError(path.string() + ": shape mismatch for '" + name + "'");
    t.copy_(it->second);
  }
  if (optimizer) {
    auto& st = optimizer->state();
    for (const auto& item : model->named_parameters()) {
      const std::string base = "optim/" + item.key();
      const auto avg = archive.tensors.find(base + "/exp_avg");
      if (avg == archive.tensors.end()) continue;
      const auto sq = archive.tensors.find(base + "/exp_avg_sq");
      const auto step = archive.tensors.find(base + "/step");
      if (sq == archive.tensors.end() || step == archive.tensors.end())
        throw LoadError(path.string() + ": incomplete optimizer state for '" + item.key() + "'");
      auto adam = std::make_unique<torch::optim::AdamParamState>();
      adam->step(step->second.item<int64_t>());
      adam->exp_avg(avg->second.to(item.value().dtype()).clone());
      adam->exp_avg_sq(sq->second.to(item.value().dtype()).clone());
      st[item.value().unsafeGetTensorImpl()] = std::move(adam);
    }
  }
  return state;
}

}  // namespace tpnerf
