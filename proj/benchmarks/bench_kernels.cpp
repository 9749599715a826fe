#include <benchmark/benchmark.h>

#include "tpnerf/geometry.hpp"
#include "tpnerf/volume_render.hpp"

namespace {

using namespace tpnerf;

void BM_Composite(benchmark::State& state) {
  const int64_t rays = state.range(0);
  const int64_t samples = state.range(1);
  torch::manual_seed(0);
  const auto sigma = torch::rand({rays, samples}) * 5;
  const auto rgb = torch::rand({rays, samples, 3});
  const auto t = std::get<0>(torch::sort(torch::rand({rays, samples}) * 2, 1));
  const auto deltas = torch::cat({t.diff(1, 1), torch::full({rays, 1}, 0.01)}, 1);
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(composite(sigma, rgb, deltas, t).rgb);
  state.SetItemsProcessed(state.iterations() * rays * samples);
}
BENCHMARK(BM_Composite)->Args({1024, 64})->Args({4096, 128});

void BM_SamplePdf(benchmark::State& state) {
  const int64_t rays = state.range(0);
  torch::manual_seed(0);
  const auto edges = torch::linspace(0, 1, 65).expand({rays, 65}).contiguous();
  const auto weights = torch::rand({rays, 64});
  const auto u = torch::rand({rays, 64});
  for (auto _ : state) benchmark::DoNotOptimize(sample_pdf(edges, weights, u));
  state.SetItemsProcessed(state.iterations() * rays * 64);
}
BENCHMARK(BM_SamplePdf)->Arg(1024)->Arg(4096);

void BM_Contract(benchmark::State& state) {
  torch::manual_seed(0);
  const auto p = torch::randn({state.range(0), 3}) * 4;
  for (auto _ : state) benchmark::DoNotOptimize(contract(p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Contract)->Arg(1 << 16);

void BM_RayBox(benchmark::State& state) {
  torch::manual_seed(0);
  RayBatch rays;
  rays.origins = torch::randn({state.range(0), 3});
  rays.directions = torch::nn::functional::normalize(torch::randn({state.range(0), 3}),
                                                     torch::nn::functional::NormalizeFuncOptions().dim(1));
  rays.ray_ids = torch::arange(state.range(0));
  OrientedBox box;
  box.half_extents = Vec3(0.2, 0.3, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(ray_box_intersect(rays, box).hit);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RayBox)->Arg(1 << 14);

}  // namespace
