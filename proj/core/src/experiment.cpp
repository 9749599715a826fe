#include "tpnerf/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "tpnerf/errors.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace tpnerf {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json sampling_tree(const SamplingConfig& s) {
  return {{"near", s.near},
          {"far", s.far},
          {"n_coarse", s.n_coarse},
          {"n_fine", s.n_fine},
          {"stratified_jitter", s.stratified_jitter}};
}

SamplingConfig sampling_from(const json& j) {
  SamplingConfig s;
  s.near = j.at("near").get<double>();
  s.far = j.at("far").get<double>();
  s.n_coarse = j.at("n_coarse").get<int>();
  s.n_fine = j.at("n_fine").get<int>();
  s.stratified_jitter = j.at("stratified_jitter").get<bool>();
  return s;
}

json to_tree(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  json model = {
      {"channels", m.channels},
      {"grid", {{"resolution", m.grid.resolution}, {"lo", m.grid.lo}, {"hi", m.grid.hi}}},
      {"encoder_blocks", m.encoder_blocks},
      {"depth_hidden", m.depth_hidden},
      {"aggregator_hidden", m.aggregator_hidden},
      {"decoder_hidden", m.decoder_hidden},
      {"decoder_layers", m.decoder_layers},
      {"decoder_skip", m.decoder_skip},
      {"decoder_pool", m.decoder_pool},
      {"encoding",
       {{"n_freq_pos", m.encoding.n_freq_pos},
        {"n_freq_dir", m.encoding.n_freq_dir},
        {"include_input", m.encoding.include_input}}},
      {"use_triplane", m.use_triplane},
      {"use_near_far", m.use_near_far},
      {"init_seed", m.init_seed},
  };
  json train = {
      {"n_source_views", t.n_source_views},
      {"n_dest_views_phase1", t.n_dest_views_phase1},
      {"rays_per_step_phase1", t.rays_per_step_phase1},
      {"patch_size_phase2", t.patch_size_phase2},
      {"phase2_start_epoch", t.phase2_start_epoch},
      {"epochs", t.epochs},
      {"steps_per_epoch", t.steps_per_epoch},
      {"lr_init", t.lr_init},
      {"lr_peak", t.lr_peak},
      {"lr_final", t.lr_final},
      {"warmup_steps", t.warmup_steps},
      {"seed", t.seed},
      {"early_stopping_patience", t.early_stopping_patience},
      {"val_views_per_scene", t.val_views_per_scene},
      {"finetune_lr", t.finetune_lr},
      {"finetune_steps", t.finetune_steps},
      {"finetune_rays", t.finetune_rays},
      {"dump_dir", t.dump_dir},
  };
  json loss = {{"lambda_reg", c.loss.lambda_reg},
               {"lambda_lpips", c.loss.lambda_lpips},
               {"lpips_start_epoch", c.loss.lpips_start_epoch}};
  json eval = {{"sampling", sampling_tree(c.eval.sampling)},
               {"chunk_size", c.eval.chunk_size},
               {"max_views", c.eval.max_views}};
  return {{"model", model},
          {"train", train},
          {"loss", loss},
          {"sampling", sampling_tree(c.sampling)},
          {"eval", eval},
          {"perceptual_weights", c.perceptual_weights}};
}

ExperimentConfig from_tree(const json& j) {
  ExperimentConfig c;
  const auto& m = j.at("model");
  c.model.channels = m.at("channels").get<int>();
  c.model.grid.resolution = m.at("grid").at("resolution").get<int>();
  c.model.grid.lo = m.at("grid").at("lo").get<double>();
  c.model.grid.hi = m.at("grid").at("hi").get<double>();
  c.model.encoder_blocks = m.at("encoder_blocks").get<std::vector<int>>();
  c.model.depth_hidden = m.at("depth_hidden").get<int>();
  c.model.aggregator_hidden = m.at("aggregator_hidden").get<int>();
  c.model.decoder_hidden = m.at("decoder_hidden").get<int>();
  c.model.decoder_layers = m.at("decoder_layers").get<int>();
  c.model.decoder_skip = m.at("decoder_skip").get<int>();
  c.model.decoder_pool = m.at("decoder_pool").get<int>();
  c.model.encoding.n_freq_pos = m.at("encoding").at("n_freq_pos").get<int>();
  c.model.encoding.n_freq_dir = m.at("encoding").at("n_freq_dir").get<int>();
  c.model.encoding.include_input = m.at("encoding").at("include_input").get<bool>();
  c.model.use_triplane = m.at("use_triplane").get<bool>();
  c.model.use_near_far = m.at("use_near_far").get<bool>();
  c.model.init_seed = m.at("init_seed").get<std::uint64_t>();

  const auto& t = j.at("train");
  c.train.n_source_views = t.at("n_source_views").get<int>();
  c.train.n_dest_views_phase1 = t.at("n_dest_views_phase1").get<int>();
  c.train.rays_per_step_phase1 = t.at("rays_per_step_phase1").get<int>();
  c.train.patch_size_phase2 = t.at("patch_size_phase2").get<int>();
  c.train.phase2_start_epoch = t.at("phase2_start_epoch").get<int>();
  c.train.epochs = t.at("epochs").get<int>();
  c.train.steps_per_epoch = t.at("steps_per_epoch").get<int>();
  c.train.lr_init = t.at("lr_init").get<double>();
  c.train.lr_peak = t.at("lr_peak").get<double>();
  c.train.lr_final = t.at("lr_final").get<double>();
  c.train.warmup_steps = t.at("warmup_steps").get<int>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.train.early_stopping_patience = t.at("early_stopping_patience").get<int>();
  c.train.val_views_per_scene = t.at("val_views_per_scene").get<int>();
  c.train.finetune_lr = t.at("finetune_lr").get<double>();
  c.train.finetune_steps = t.at("finetune_steps").get<int>();
  c.train.finetune_rays = t.at("finetune_rays").get<int>();
  c.train.dump_dir = t.at("dump_dir").get<std::string>();

  const auto& l = j.at("loss");
  c.loss.lambda_reg = l.at("lambda_reg").get<double>();
  c.loss.lambda_lpips = l.at("lambda_lpips").get<double>();
  c.loss.lpips_start_epoch = l.at("lpips_start_epoch").get<int>();

  c.sampling = sampling_from(j.at("sampling"));
  c.eval.sampling = sampling_from(j.at("eval").at("sampling"));
  c.eval.chunk_size = j.at("eval").at("chunk_size").get<int>();
  c.eval.max_views = j.at("eval").at("max_views").get<int>();
  c.perceptual_weights = j.at("perceptual_weights").get<std::string>();
  return c;
}

/// Copies `user` over `base`, collecting keys `base` does not have.
void merge_known(json& base, const json& user, const std::string& prefix,
                 std::vector<std::string>& unknown) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      unknown.push_back(path);
      continue;
    }
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be a table");
      merge_known(slot, it.value(), path, unknown);
    } else {
      slot = it.value();
    }
  }
}

ExperimentConfig resolve(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json tree = to_tree(ExperimentConfig{});
  std::vector<std::string> unknown;
  merge_known(tree, user, "", unknown);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key(s): " + list);
  }
  ExperimentConfig config;
  try {
    config = from_tree(tree);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  config.validate();
  return config;
}

std::string padded(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix, index, ext);
  return buf;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return static_cast<std::uint64_t>(hash_uniform(seed, stream, index) * 9007199254740992.0);
}

std::vector<const Scene*> scene_pointers(const std::vector<NamedScene>& scenes) {
  std::vector<const Scene*> out;
  for (const auto& s : scenes) out.push_back(&s.scene);
  return out;
}

PerceptualBackbone make_backbone(const ExperimentConfig& config) {
  PerceptualBackbone backbone;
  if (!config.perceptual_weights.empty()) backbone->load(config.perceptual_weights);
  return backbone;
}

std::string model_section(const ExperimentConfig& c) { return to_tree(c).at("model").dump(); }

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.validate();
    train.validate();
    loss.validate();
    sampling.validate();
    eval.sampling.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (eval.chunk_size < 1) throw ConfigError("eval.chunk_size must be positive");
  if (eval.max_views < 0) throw ConfigError("eval.max_views must be >= 0");
}

std::string config_to_json(const ExperimentConfig& config) { return to_tree(config).dump(2); }

ExperimentConfig config_from_json(std::string_view text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return resolve(user);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json user = json::object();
  json* node = &user;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  json tree = to_tree(config);
  std::vector<std::string> unknown;
  merge_known(tree, user, "", unknown);
  if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown.front());
  try {
    config = from_tree(tree);
  } catch (const json::exception& e) {
    throw ConfigError("invalid value for '" + key + "': " + e.what());
  }
  config.validate();
}

// ---------------------------------------------------------------------------
// Data

ToySceneSpec toy_spec_for(const ToyDataOptions& options, int index) {
  if (options.objects_min < 1 || options.objects_max > 4 || options.objects_min > options.objects_max)
    throw InputError("object counts must satisfy 1 <= min <= max <= 4");
  ToySceneSpec spec;
  spec.seed = derived_seed(options.seed, 300, static_cast<std::uint64_t>(index));
  const int span = options.objects_max - options.objects_min + 1;
  const int pick = static_cast<int>(hash_uniform(options.seed, 301, static_cast<std::uint64_t>(index)) * span);
  spec.n_objects = options.objects_min + std::min(pick, span - 1);
  spec.n_train_views = options.views_train;
  spec.n_eval_views = options.views_eval;
  spec.height = options.height;
  spec.width = options.width;
  return spec;
}

std::vector<std::string> make_toy_data(const ToyDataOptions& options) {
  if (options.scenes < 1) throw InputError("--scenes must be positive");
  if (options.out.empty()) throw InputError("missing output directory");
  if (fs::exists(options.out)) {
    if (!fs::is_directory(options.out))
      throw InputError("output path " + options.out.string() + " is not a directory");
    if (!fs::is_empty(options.out) && !options.force)
      throw InputError("output directory " + options.out.string() +
                       " is not empty (pass --force to overwrite)");
  }
  std::vector<std::string> summary;
  for (int i = 0; i < options.scenes; ++i) {
    const auto spec = toy_spec_for(options, i);
    spec.validate();
    const Scene scene = generate_toy_scene(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    const fs::path dir = options.out / name;
    if (fs::exists(dir)) fs::remove_all(dir);
    save_scene(dir, scene);
    char line[160];
    std::snprintf(line, sizeof(line), "%s: %lld frames (%zu source, %zu eval), %zu objects, %dx%d",
                  name, static_cast<long long>(scene.size()),
                  scene.manifest.split.source_indices.size(),
                  scene.manifest.split.eval_indices.size(), scene.manifest.boxes.size(),
                  spec.height, spec.width);
    summary.emplace_back(line);
  }
  return summary;
}

std::vector<NamedScene> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("dataset directory not found: " + dir.string());
  std::vector<fs::path> dirs;
  if (fs::exists(dir / "scene.json")) {
    dirs.push_back(dir);
  } else {
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && fs::exists(entry.path() / "scene.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw LoadError("no scene directories (with scene.json) under " + dir.string());
  std::vector<NamedScene> out;
  for (const auto& d : dirs) {
    auto name = d.filename().string();
    if (name.empty() || name == ".") name = fs::absolute(d).parent_path().filename().string();
    out.push_back({name, normalize_scene(load_scene(d))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

NerfModel copy_model(const NerfModel& model) {
  NerfModel copy(model->config());
  torch::NoGradGuard guard;
  const auto src = model->state();
  for (auto& [name, dst] : copy->state()) dst.copy_(src.at(name));
  copy->train(model->is_training());
  return copy;
}

std::vector<StepReport> train_in_memory(NerfModel& model, const ExperimentConfig& config,
                                        const std::vector<const Scene*>& scenes,
                                        const StepCallback& on_step) {
  config.validate();
  if (scenes.empty()) throw InputError("training needs at least one scene");
  Trainer trainer(model, config.train, config.loss, config.sampling);
  if (!config.perceptual_weights.empty()) trainer.perceptual()->load(config.perceptual_weights);
  std::vector<StepReport> reports;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    for (int s = 0; s < config.train.steps_per_epoch; ++s) {
      const auto* scene = scenes[trainer.step_count() % static_cast<int64_t>(scenes.size())];
      reports.push_back(trainer.step(*scene, epoch));
      if (on_step) on_step(reports.back());
    }
  }
  model->eval();
  return reports;
}

TrainOutcome run_training(const ExperimentConfig& config, const std::vector<NamedScene>& scenes,
                          const fs::path& out, const std::optional<fs::path>& resume,
                          const StepCallback& on_step) {
  config.validate();
  if (scenes.empty()) throw InputError("training needs at least one scene");
  fs::create_directories(out / "checkpoints");

  NerfModel model(config.model);
  Trainer trainer(model, config.train, config.loss, config.sampling);
  if (!config.perceptual_weights.empty()) trainer.perceptual()->load(config.perceptual_weights);

  TrainOutcome outcome;
  int start_epoch = 0;
  if (resume) {
    const auto header = read_checkpoint_state(*resume);
    if (model_section(config_from_json(header.config_json)) != model_section(config))
      throw ConfigError("checkpoint " + resume->string() + " was trained with a different model config");
    const auto state = load_checkpoint(*resume, model, &trainer.optimizer());
    start_epoch = state.epoch;
    trainer.set_step_count(state.step);
    outcome.best_val_psnr = state.best_metric;
    if (fs::exists(out / "checkpoints" / "best.ckpt")) outcome.best_checkpoint = out / "checkpoints" / "best.ckpt";
  }
  {
    std::ofstream echo(out / "config.json", std::ios::trunc);
    echo << config_to_json(config) << "\n";
  }
  std::ofstream log(out / "logs.jsonl", resume ? std::ios::app : std::ios::trunc);
  std::ofstream val_log(out / "validation.jsonl", resume ? std::ios::app : std::ios::trunc);
  const auto ptrs = scene_pointers(scenes);
  const auto n = static_cast<int64_t>(ptrs.size());

  int stale = 0;
  outcome.epochs_completed = start_epoch;
  for (int epoch = start_epoch; epoch < config.train.epochs; ++epoch) {
    for (int s = 0; s < config.train.steps_per_epoch; ++s) {
      const auto report = trainer.step(*ptrs[trainer.step_count() % n], epoch);
      log << json{{"step", report.step},
                  {"epoch", report.epoch},
                  {"lr", report.lr},
                  {"phase", report.phase2 ? 2 : 1},
                  {"loss_photo", report.loss.photo},
                  {"loss_reg", report.loss.reg},
                  {"loss_lpips", report.loss.lpips},
                  {"loss_total", report.loss.total}}
                 .dump()
          << "\n";
      if (on_step) on_step(report);
    }
    log.flush();

    bool improved = true;
    if (config.train.val_views_per_scene > 0) {
      const double val = validation_psnr(model, ptrs, config, config.train.val_views_per_scene);
      improved = val > outcome.best_val_psnr;
      if (improved) outcome.best_val_psnr = val;
      val_log << json{{"epoch", epoch}, {"step", trainer.step_count()}, {"val_psnr", val}}.dump() << "\n";
      val_log.flush();
    }
    stale = improved ? 0 : stale + 1;

    CheckpointState state;
    state.config_json = config_to_json(config);
    state.epoch = epoch + 1;
    state.step = trainer.step_count();
    state.best_metric = outcome.best_val_psnr;
    state.groups = model->group_names();
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
    outcome.last_checkpoint = out / "checkpoints" / name;
    save_checkpoint(outcome.last_checkpoint, model, &trainer.optimizer(), state);
    if (improved) {
      outcome.best_checkpoint = out / "checkpoints" / "best.ckpt";
      fs::copy_file(outcome.last_checkpoint, outcome.best_checkpoint, fs::copy_options::overwrite_existing);
    }
    outcome.epochs_completed = epoch + 1;
    if (config.train.early_stopping_patience > 0 && stale >= config.train.early_stopping_patience) {
      outcome.stopped_early = true;
      break;
    }
  }
  outcome.steps = trainer.step_count();
  return outcome;
}

LoadedModel load_model(const fs::path& checkpoint, const std::optional<ExperimentConfig>& runtime,
                       std::ostream* warnings) {
  LoadedModel loaded;
  loaded.state = read_checkpoint_state(checkpoint);
  const auto stored = config_from_json(loaded.state.config_json);
  loaded.config = runtime ? *runtime : stored;
  if (runtime && model_section(*runtime) != model_section(stored) && warnings)
    *warnings << "warning: model config differs from the checkpoint header; using the header\n";
  loaded.config.model = stored.model;
  loaded.model = NerfModel(stored.model);
  load_checkpoint(checkpoint, loaded.model, nullptr);
  loaded.model->eval();
  return loaded;
}

// ---------------------------------------------------------------------------
// Evaluation

SceneMetrics evaluate_scene(const NerfModel& model, const Scene& scene,
                            const ExperimentConfig& config, int source_views, bool tune,
                            PerceptualBackbone& backbone, const std::string& name) {
  const auto& split = scene.manifest.split;
  if (source_views < 1 || source_views > static_cast<int>(split.source_indices.size()))
    throw InputError("requested " + std::to_string(source_views) + " source views but scene " +
                     name + " has " + std::to_string(split.source_indices.size()));
  if (split.eval_indices.empty()) throw InputError("scene " + name + " has no eval views");
  const auto sources = scene.views(spread_views(scene.cameras, split.source_indices, source_views));

  NerfModel net = model;
  if (tune) {
    net = copy_model(model);
    finetune(net, sources, config.train, config.loss, config.sampling);
  }
  const bool was_training = net->is_training();
  net->eval();
  Renderer renderer(net);
  torch::NoGradGuard guard;
  const auto encoded = renderer.encode(sources);
  RenderSettings settings;
  settings.sampling = config.eval.sampling;
  settings.seed = config.train.seed;

  std::vector<int> targets = split.eval_indices;
  if (config.eval.max_views > 0 && static_cast<int>(targets.size()) > config.eval.max_views)
    targets.resize(config.eval.max_views);

  SceneMetrics m;
  m.name = name;
  std::vector<torch::Tensor> pred_depth, gt_depth;
  for (const int v : targets) {
    const auto img = renderer.render_image(encoded, scene.cameras[v], settings, config.eval.chunk_size);
    const auto gt = scene.images[v];
    m.psnr += psnr(img.rgb, gt);
    m.ssim += ssim(img.rgb, gt);
    m.perceptual += perceptual_loss(img.rgb, gt, backbone).item<double>();
    if (scene.has_depth()) {
      const auto valid = scene.depth_valid[v];
      pred_depth.push_back(img.depth.to(torch::kFloat64).masked_select(valid));
      gt_depth.push_back(scene.depths[v].to(torch::kFloat64).masked_select(valid));
    }
  }
  m.views = static_cast<int>(targets.size());
  m.psnr /= m.views;
  m.ssim /= m.views;
  m.perceptual /= m.views;
  if (!pred_depth.empty()) {
    const auto p = torch::cat(pred_depth);
    if (p.numel() > 0) {
      const auto e = depth_errors(p, torch::cat(gt_depth), torch::ones_like(p, torch::kBool));
      m.has_depth = true;
      m.depth_l1 = e.l1;
      m.depth_rmse = e.rmse;
    }
  }
  net->train(was_training);
  return m;
}

EvalReport evaluate(const NerfModel& model, const std::vector<NamedScene>& scenes,
                    const ExperimentConfig& config, int source_views, bool tune,
                    PerceptualBackbone& backbone) {
  if (scenes.empty()) throw InputError("evaluation needs at least one scene");
  EvalReport report;
  report.source_views = source_views;
  report.finetune = tune;
  report.aggregate.name = "aggregate";
  int with_depth = 0;
  for (const auto& s : scenes) {
    report.scenes.push_back(evaluate_scene(model, s.scene, config, source_views, tune, backbone, s.name));
    const auto& m = report.scenes.back();
    report.aggregate.views += m.views;
    report.aggregate.psnr += m.psnr;
    report.aggregate.ssim += m.ssim;
    report.aggregate.perceptual += m.perceptual;
    if (m.has_depth) {
      ++with_depth;
      report.aggregate.depth_l1 += m.depth_l1;
      report.aggregate.depth_rmse += m.depth_rmse;
    }
  }
  const double n = static_cast<double>(scenes.size());
  report.aggregate.psnr /= n;
  report.aggregate.ssim /= n;
  report.aggregate.perceptual /= n;
  if (with_depth > 0) {
    report.aggregate.has_depth = true;
    report.aggregate.depth_l1 /= with_depth;
    report.aggregate.depth_rmse /= with_depth;
  }
  return report;
}

std::string EvalReport::to_json(const ExperimentConfig& config, const std::string& backbone) const {
  auto row = [](const SceneMetrics& m) {
    json r = {{"name", m.name}, {"views", m.views}, {"psnr", m.psnr}, {"ssim", m.ssim},
              {"perceptual", m.perceptual}};
    r["depth_l1"] = m.has_depth ? json(m.depth_l1) : json(nullptr);
    r["depth_rmse"] = m.has_depth ? json(m.depth_rmse) : json(nullptr);
    return r;
  };
  std::string variant = "full";
  if (!config.model.use_triplane && !config.model.use_near_far) variant = "no-triplane+no-near-far";
  else if (!config.model.use_triplane) variant = "no-triplane";
  else if (!config.model.use_near_far) variant = "no-near-far";
  json j;
  j["source_views"] = source_views;
  j["finetune"] = finetune;
  j["ablation"] = {{"variant", variant},
                   {"use_triplane", config.model.use_triplane},
                   {"use_near_far", config.model.use_near_far}};
  j["perceptual_backbone"] = backbone;
  j["config"] = to_tree(config);
  j["scenes"] = json::array();
  for (const auto& s : scenes) j["scenes"].push_back(row(s));
  j["aggregate"] = row(aggregate);
  return j.dump(2);
}

double validation_psnr(const NerfModel& model, const std::vector<const Scene*>& scenes,
                       const ExperimentConfig& config, int views_per_scene) {
  ExperimentConfig c = config;
  c.eval.max_views = views_per_scene;
  PerceptualBackbone backbone = make_backbone(config);
  double total = 0.0;
  for (const auto* s : scenes) {
    const int n = std::min<int>(config.train.n_source_views,
                                static_cast<int>(s->manifest.split.source_indices.size()));
    total += evaluate_scene(model, *s, c, n, false, backbone).psnr;
  }
  return total / static_cast<double>(scenes.size());
}

// ---------------------------------------------------------------------------
// Rendering

std::vector<Camera> circle_trajectory(const std::vector<Camera>& reference, int frames) {
  if (reference.empty()) throw InputError("circle trajectory needs reference cameras");
  if (frames < 1) throw InputError("--frames must be positive");
  double radius = 0.0, elevation = 0.0;
  for (const auto& c : reference) {
    const Vec3 p = c.center();
    radius += p.norm();
    elevation += std::atan2(p.z(), p.head<2>().norm());
  }
  radius /= static_cast<double>(reference.size());
  elevation /= static_cast<double>(reference.size());
  const Vec3 first = reference.front().center();
  const double az0 = std::atan2(first.y(), first.x());
  const auto& ref = reference.front();
  const double fov = 2.0 * std::atan(0.5 * ref.height / ref.intrinsics(1, 1));
  std::vector<Camera> out;
  for (int i = 0; i < frames; ++i) {
    const double az = az0 + 2.0 * std::numbers::pi * i / frames;
    const Vec3 eye = radius * Vec3(std::cos(elevation) * std::cos(az),
                                   std::cos(elevation) * std::sin(az), std::sin(elevation));
    out.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), fov, ref.width, ref.height));
  }
  return out;
}

std::vector<OrientedBox> boxes_from_json(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw LoadError(source + ": " + e.what());
  }
  // Accept either a bare list or an object with a "boxes" list, as in scene.json.
  const json list = j.is_object() && j.contains("boxes") ? j.at("boxes") : j;
  json wrapper = {{"version", kManifestVersion},
                  {"frames", json::array()},
                  {"boxes", list},
                  {"split", {{"source_indices", json::array()}, {"eval_indices", json::array()}}}};
  return SceneManifest::from_json(wrapper.dump(), source).boxes;
}

int render_trajectory(const NerfModel& model, const Scene& scene, const ExperimentConfig& config,
                      const RenderJob& job) {
  const auto& boxes = job.boxes ? *job.boxes : scene.manifest.boxes;
  if (job.mode == RenderMode::Decomposed && boxes.empty())
    throw InputError("decomposed mode needs boxes: pass --boxes or use a scene with boxes");
  const auto& split = scene.manifest.split;
  const int n_src = std::min<int>(config.train.n_source_views, static_cast<int>(split.source_indices.size()));
  if (n_src < 1) throw InputError("scene has no source views");
  const auto sources = scene.views(spread_views(scene.cameras, split.source_indices, n_src));

  std::vector<Camera> cameras;
  if (job.trajectory == Trajectory::Circle) {
    std::vector<Camera> ref;
    for (int i : split.source_indices) ref.push_back(scene.cameras[i]);
    cameras = circle_trajectory(ref, job.frames);
  } else {
    for (int i : split.eval_indices) cameras.push_back(scene.cameras[i]);
    if (cameras.empty()) throw InputError("scene has no eval cameras");
  }

  fs::create_directories(job.out);
  NerfModel net = model;
  net->eval();
  Renderer renderer(net);
  torch::NoGradGuard guard;
  const auto encoded = renderer.encode(sources);
  RenderSettings settings;
  settings.sampling = config.eval.sampling;
  settings.seed = config.train.seed;
  settings.mode = job.mode;
  settings.boxes = boxes;

  for (std::size_t f = 0; f < cameras.size(); ++f) {
    const auto& cam = cameras[f];
    const int i = static_cast<int>(f);
    if (job.mode == RenderMode::Decomposed) {
      const auto rays = generate_all_rays(cam);
      std::vector<torch::Tensor> rgb, depth, obj, nbg, fbg;
      for (int64_t s = 0; s < rays.size(); s += config.eval.chunk_size) {
        const int64_t e = std::min<int64_t>(rays.size(), s + config.eval.chunk_size);
        const auto r = renderer.render_rays(encoded, rays.slice(s, e), settings);
        rgb.push_back(r.rgb);
        depth.push_back(r.depth);
        obj.push_back(r.objects_rgb);
        nbg.push_back(r.near_bg_rgb);
        fbg.push_back(r.far_bg_rgb);
      }
      const auto shape = std::vector<int64_t>{cam.height, cam.width, 3};
      write_png(job.out / padded("frame", i, "png"), torch::cat(rgb).view(shape));
      write_pfm(job.out / padded("depth", i, "pfm"), torch::cat(depth).view({cam.height, cam.width}));
      write_png(job.out / padded("objects", i, "png"), torch::cat(obj).view(shape));
      write_png(job.out / padded("near_bg", i, "png"), torch::cat(nbg).view(shape));
      write_png(job.out / padded("far_bg", i, "png"), torch::cat(fbg).view(shape));
    } else {
      const auto img = renderer.render_image(encoded, cam, settings, config.eval.chunk_size);
      write_png(job.out / padded("frame", i, "png"), img.rgb);
      write_pfm(job.out / padded("depth", i, "pfm"), img.depth);
    }
  }
  return static_cast<int>(cameras.size());
}

}  // namespace tpnerf
