// tpnerf: make-toy-data, train, eval and render commands.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "tpnerf/errors.hpp"
#include "tpnerf/experiment.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace fs = std::filesystem;
using namespace tpnerf;

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;
  bool no_triplane = false;
  bool no_near_far = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON config file");
    cmd->add_option("--set", overrides, "override, e.g. train.epochs=3 (repeatable)");
    cmd->add_flag("--no-triplane", no_triplane, "residual image features only");
    cmd->add_flag("--no-near-far", no_near_far, "one decoder over the whole ray");
  }

  bool given() const { return !file.empty() || !overrides.empty() || no_triplane || no_near_far; }

  ExperimentConfig resolve() const {
    ExperimentConfig config;
    if (!file.empty()) config = config_from_json(read_file(file));
    for (const auto& o : overrides) apply_override(config, o);
    if (no_triplane) config.model.use_triplane = false;
    if (no_near_far) config.model.use_near_far = false;
    config.validate();
    return config;
  }
};

void parse_size(const std::string& text, int& height, int& width) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    height = std::stoi(text.substr(0, x), &used);
    width = std::stoi(text.substr(x + 1));
  } catch (const std::exception&) {
    throw InputError("--size must look like HxW, got '" + text + "'");
  }
}

RenderMode parse_mode(const std::string& mode) {
  if (mode == "full") return RenderMode::Full;
  if (mode == "decomposed") return RenderMode::Decomposed;
  if (mode == "objects-removed") return RenderMode::ObjectsRemoved;
  throw InputError("unknown --mode '" + mode + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-view novel view synthesis with triplane priors"};
  app.require_subcommand(1);

  ToyDataOptions toy;
  std::string toy_size = "64x64";
  auto* make = app.add_subcommand("make-toy-data", "generate procedural toy scenes");
  make->add_option("--out", toy.out, "output directory")->required();
  make->add_option("--scenes", toy.scenes, "number of scenes");
  make->add_option("--seed", toy.seed, "dataset seed");
  make->add_option("--objects-min", toy.objects_min);
  make->add_option("--objects-max", toy.objects_max);
  make->add_option("--views-train", toy.views_train);
  make->add_option("--views-eval", toy.views_eval);
  make->add_option("--size", toy_size, "HxW");
  make->add_flag("--force", toy.force, "overwrite a non-empty output directory");

  std::string data, out, resume;
  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train the model on a dataset");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train_flags.add_to(train);

  std::string ckpt, report_path;
  int source_views = 3;
  bool do_finetune = false;
  ConfigFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "evaluate on the eval split");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--source-views", source_views, "1, 3 or 5");
  eval->add_flag("--finetune", do_finetune, "finetune per scene before evaluating");
  eval->add_option("--report", report_path, "report JSON path")->required();
  eval_flags.add_to(eval);

  std::string scene_dir, trajectory = "circle", mode = "full", boxes_file;
  int frames = 10;
  ConfigFlags render_flags;
  auto* render = app.add_subcommand("render", "render a trajectory");
  render->add_option("--ckpt", ckpt)->required();
  render->add_option("--scene", scene_dir)->required();
  render->add_option("--trajectory", trajectory)->check(CLI::IsMember({"circle", "eval-cams"}));
  render->add_option("--frames", frames);
  render->add_option("--out", out)->required();
  render->add_option("--mode", mode)->check(CLI::IsMember({"full", "decomposed", "objects-removed"}));
  render->add_option("--boxes", boxes_file, "JSON list of oriented boxes");
  render_flags.add_to(render);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*make) {
      parse_size(toy_size, toy.height, toy.width);
      for (const auto& line : make_toy_data(toy)) std::cout << line << "\n";
    } else if (*train) {
      const auto config = train_flags.resolve();
      const auto scenes = load_dataset(data);
      const auto outcome = run_training(
          config, scenes, out, resume.empty() ? std::nullopt : std::optional<fs::path>(resume),
          [](const StepReport& r) {
            if (r.step % 50 == 0)
              std::fprintf(stderr, "step %lld epoch %d lr %.3g loss %.5f\n",
                           static_cast<long long>(r.step), r.epoch, r.lr, r.loss.total);
          });
      std::cout << "epochs " << outcome.epochs_completed << ", steps " << outcome.steps
                << ", best checkpoint " << outcome.best_checkpoint.string() << "\n";
    } else if (*eval) {
      const auto runtime = eval_flags.given() ? std::optional(eval_flags.resolve()) : std::nullopt;
      auto loaded = load_model(ckpt, runtime, &std::cerr);
      const auto scenes = load_dataset(data);
      PerceptualBackbone backbone;
      if (!loaded.config.perceptual_weights.empty()) backbone->load(loaded.config.perceptual_weights);
      const auto report = evaluate(loaded.model, scenes, loaded.config, source_views, do_finetune, backbone);
      write_text(report_path, report.to_json(loaded.config, backbone->description()));
      std::printf("PSNR %.3f  SSIM %.4f  perceptual %.4f\n", report.aggregate.psnr,
                  report.aggregate.ssim, report.aggregate.perceptual);
    } else if (*render) {
      const auto runtime = render_flags.given() ? std::optional(render_flags.resolve()) : std::nullopt;
      auto loaded = load_model(ckpt, runtime, &std::cerr);
      const auto scenes = load_dataset(scene_dir);
      if (scenes.size() != 1) throw InputError("--scene must point at a single scene directory");
      RenderJob job;
      job.trajectory = trajectory == "circle" ? Trajectory::Circle : Trajectory::EvalCameras;
      job.frames = frames;
      job.mode = parse_mode(mode);
      job.out = out;
      if (!boxes_file.empty()) job.boxes = boxes_from_json(read_file(boxes_file), boxes_file);
      const int n = render_trajectory(loaded.model, scenes.front().scene, loaded.config, job);
      write_text(fs::path(out) / "config.json", config_to_json(loaded.config));
      std::cout << n << " frames written to " << out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
