#include <benchmark/benchmark.h>

#include "tpnerf/experiment.hpp"

namespace {

using namespace tpnerf;

// Small model of the single-scene sanity run.
ModelConfig small_model() {
  ModelConfig m;
  m.channels = 128;
  m.grid.resolution = 32;
  m.encoder_blocks = {1, 1, 1};
  m.depth_hidden = 64;
  m.aggregator_hidden = 64;
  m.decoder_hidden = 64;
  return m;
}

const Scene& toy() {
  static const Scene scene = [] {
    ToySceneSpec spec;
    spec.seed = 3;
    spec.n_train_views = 8;
    spec.n_eval_views = 1;
    return generate_toy_scene(spec);
  }();
  return scene;
}

SourceViews three_views() { return toy().views({0, 3, 6}); }

void BM_Encoder(benchmark::State& state) {
  NerfModel model(small_model());
  model->eval();
  const auto images = three_views().images.permute({0, 3, 1, 2}).contiguous();
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model->encoder->forward(images));
}
BENCHMARK(BM_Encoder)->Unit(benchmark::kMillisecond);

void BM_BuildTriplanes(benchmark::State& state) {
  NerfModel model(small_model());
  model->eval();
  const auto src = three_views();
  torch::NoGradGuard guard;
  const auto features = model->encoder->forward(src.images.permute({0, 3, 1, 2}).contiguous());
  const auto cams = CameraPack::from(src.cameras, torch::kFloat32);
  for (auto _ : state)
    benchmark::DoNotOptimize(build_triplanes(model->triplane, features, cams, model->config().grid));
}
BENCHMARK(BM_BuildTriplanes)->Unit(benchmark::kMillisecond);

void BM_SampleTriplane(benchmark::State& state) {
  NerfModel model(small_model());
  model->eval();
  Renderer renderer(model);
  torch::NoGradGuard guard;
  const auto views = renderer.encode(three_views());
  const auto points = torch::rand({state.range(0), 3}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(sample_triplane(*views.triplanes, points));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SampleTriplane)->Arg(1 << 15)->Unit(benchmark::kMillisecond);

void BM_RenderRays(benchmark::State& state) {
  NerfModel model(small_model());
  model->eval();
  Renderer renderer(model);
  torch::NoGradGuard guard;
  const auto views = renderer.encode(three_views());
  const auto rays = generate_all_rays(toy().cameras[1]).slice(0, state.range(0));
  RenderSettings settings;
  settings.sampling.n_coarse = 32;
  settings.sampling.n_fine = 32;
  for (auto _ : state) benchmark::DoNotOptimize(renderer.render_rays(views, rays, settings).rgb);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderRays)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig train;
  train.rays_per_step_phase1 = static_cast<int>(state.range(0));
  SamplingConfig sampling;
  sampling.n_coarse = 32;
  sampling.n_fine = 32;
  Trainer trainer(NerfModel(small_model()), train, LossConfig{}, sampling);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(toy(), 0).loss.total);
}
BENCHMARK(BM_TrainStep)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
