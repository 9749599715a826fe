// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails.
//
//   acceptance [--only 1,2,3] [--c4-steps N] [--bench-steps N] [--verbose]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "tpnerf/errors.hpp"
#include "tpnerf/experiment.hpp"
#include "tpnerf/tensor_archive.hpp"
#include "tpnerf/volume_render.hpp"

namespace fs = std::filesystem;
using namespace tpnerf;

namespace {

// Tolerances.
constexpr double kExampleTol = 1e-9;
constexpr double kOracleTol = 1e-6;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsFloor = 1e-9;  // both sides below this count as equal
constexpr double kInvariantTol = 1e-6;
constexpr double kLrTol = 1e-9;
constexpr double kOverfitTrainPsnr = 28.0;
constexpr double kOverfitHeldOutPsnr = 22.0;
constexpr double kSphereDepthMedian = 0.05;
constexpr double kPriorGainDb = 2.0;
constexpr double kViewCountSlackDb = 0.2;
constexpr double kFinetuneMatchDb = 0.05;  // "matches": within this of zero-shot
constexpr double kNoTriplaneGapDb = 0.5;
constexpr double kNoNearFarGapDb = 0.0;

bool g_verbose = false;

/// Collects sub-check failures of one criterion.
class Tally {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok) {
      ++failed_;
      if (first_.empty()) first_ = what;
      if (g_verbose) std::cerr << "  failed: " << what << "\n";
    }
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s << what << ": got " << got << ", want " << want << " +- " << tol;
    expect(std::abs(got - want) <= tol, s.str());
  }
  void info(const std::string& text) { info_ += (info_.empty() ? "" : "; ") + text; }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    s << checks_ - failed_ << "/" << checks_ << " checks";
    if (!info_.empty()) s << "; " << info_;
    if (!first_.empty()) s << "; first failure: " << first_;
    return s.str();
  }

 private:
  int checks_ = 0;
  int failed_ = 0;
  std::string first_;
  std::string info_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

RaySegmentSamples on_axis(std::vector<double> t, std::vector<double> sigma, std::vector<Rgb> color,
                          double last_delta = 1.0) {
  RaySegmentSamples s;
  for (double ti : t) s.positions.push_back(Vec3(0, 0, ti));
  s.t_values = std::move(t);
  s.sigmas = std::move(sigma);
  s.colors = std::move(color);
  s.last_delta = last_delta;
  return s;
}

ModelConfig micro_model() {
  ModelConfig m;
  m.channels = 16;
  m.grid.resolution = 8;
  m.encoder_blocks = {1, 1, 1};
  m.depth_hidden = 16;
  m.aggregator_hidden = 16;
  m.decoder_hidden = 16;
  m.encoding.n_freq_pos = 2;
  m.encoding.n_freq_dir = 1;
  return m;
}

ToySceneSpec micro_scene(std::uint64_t seed) {
  ToySceneSpec s;
  s.seed = seed;
  s.height = 16;
  s.width = 16;
  s.n_train_views = 6;
  s.n_eval_views = 2;
  return s;
}

// ---------------------------------------------------------------------------
// 1. Math kernels and oracle suites

double inverse_cdf(const std::vector<double>& edges, const std::vector<double>& w, double u) {
  std::vector<double> p(w.size());
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) total += (p[i] = std::max(w[i], 0.0) + kPdfFloor);
  double c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double next = c + p[i] / total;
    if (u < next || i + 1 == p.size()) {
      const double f = std::clamp((u - c) / (next - c), 0.0, 1.0);
      return edges[i] + f * (edges[i + 1] - edges[i]);
    }
    c = next;
  }
  return edges.back();
}

std::optional<Interval> march(const Ray& r, const OrientedBox& box, double t_max, double step) {
  std::optional<Interval> out;
  for (double t = 0; t <= t_max; t += step) {
    if (box.contains(r.at(t))) {
      if (!out) out = Interval{t, t};
      out->t1 = t;
    }
  }
  return out;
}

/// Four-neighbor lookup with border clamping; (x, y) in pixel units of `map`
/// [C, H, W] where pixel centers sit at integers.
torch::Tensor bilinear_oracle(const torch::Tensor& map, double x, double y) {
  const int64_t h = map.size(1), w = map.size(2);
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const double x0 = std::floor(x), y0 = std::floor(y);
  const double fx = x - x0, fy = y - y0;
  auto at = [&](double r, double c) {
    const auto ri = std::clamp<int64_t>(static_cast<int64_t>(r), 0, h - 1);
    const auto ci = std::clamp<int64_t>(static_cast<int64_t>(c), 0, w - 1);
    return map.select(1, ri).select(1, ci);
  };
  return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy) +
         at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
}

void kernel_examples(Tally& t) {
  const Rgb red(1, 0, 0), green(0, 1, 0), blue(0, 0, 1);
  const double ln2 = std::numbers::ln2;

  // composite
  auto r = composite(on_axis({0.5}, {1e6}, {red}));
  t.near((r.color - red).norm(), 0, kExampleTol, "opaque sample color");
  t.near(r.acc, 1, kExampleTol, "opaque sample acc");
  r = composite(on_axis({0, 1, 2}, {0, 0, 0}, {red, green, blue}));
  t.expect(r.color == Rgb::Zero() && r.acc == 0.0, "empty space gives zero color and acc");
  for (double w : r.weights) t.expect(w == 0.0, "empty space weights are zero");
  r = composite(on_axis({0, 1}, {ln2, ln2}, {red, blue}));
  t.near(r.weights[0], 0.5, kExampleTol, "two samples w0");
  t.near(r.weights[1], 0.25, kExampleTol, "two samples w1");
  t.near((r.color - Rgb(0.5, 0, 0.25)).norm(), 0, kExampleTol, "two samples color");
  t.near(r.acc, 0.75, kExampleTol, "two samples acc");

  // composite_near_far
  CompositeResult opaque, clear, near, far;
  opaque.color = Rgb(0.2, 0.3, 0.4);
  opaque.acc = 1.0;
  far.color = blue;
  far.acc = 1.0;
  near.color = Rgb(0.5, 0, 0);
  near.acc = 0.75;
  t.near((composite_near_far(opaque, far) - opaque.color).norm(), 0, kExampleTol, "opaque foreground");
  t.near((composite_near_far(clear, far) - blue).norm(), 0, kExampleTol, "transparent foreground");
  t.near((composite_near_far(near, far) - Rgb(0.5, 0, 0.25)).norm(), 0, kExampleTol, "near/far mix");
  {
    const auto b = composite_near_far(
        CompositeBatch{torch::tensor({{0.5, 0.0, 0.0}}, torch::kFloat64), torch::tensor({0.75}, torch::kFloat64), {}, {}},
        CompositeBatch{torch::tensor({{0.0, 0.0, 1.0}}, torch::kFloat64), torch::tensor({1.0}, torch::kFloat64), {}, {}});
    t.near(max_abs(b - torch::tensor({{0.5, 0.0, 0.25}}, torch::kFloat64)), 0, kExampleTol,
           "batched near/far mix");
  }

  // prune_density
  const std::vector<double> sigma{3, 5};
  const bool none[] = {false, false};
  const bool all[] = {true, true};
  t.expect(prune_density(sigma, none) == sigma, "prune with empty mask is identity");
  t.expect(prune_density(sigma, all) == std::vector<double>{kPrunedDensity, kPrunedDensity},
           "prune with full mask gives the constant list");
  t.expect(kPrunedDensity == -1e-5, "pruned density constant");

  // Decomposed composition
  {
    const auto far_s = on_axis({2.5}, {ln2}, {blue});
    const auto near_s = on_axis({1.5}, {ln2}, {green});
    std::vector<ObjectSegment> objects{{on_axis({0.5}, {ln2}, {red}), Interval{0.0, 1.0}}};
    const auto d = composite_decomposed(far_s, near_s, objects);
    t.near((d.objects.color - 0.5 * red).norm(), 0, kExampleTol, "object contribution 0.5");
    t.near((d.near_bg.color - 0.25 * green).norm(), 0, kExampleTol, "near background 0.25");
    t.near((d.far_bg.color - 0.125 * blue).norm(), 0, kExampleTol, "far background 0.125");
    const auto occl = composite_decomposed(
        on_axis({2.5}, {3.0}, {blue}), on_axis({1.0, 1.5}, {2.0, 2.0}, {green, green}),
        std::vector<ObjectSegment>{{on_axis({0.4}, {1e6}, {red}), Interval{0.3, 0.6}}});
    t.near((occl.color - red).norm(), 0, kExampleTol, "opaque object occludes");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> tn, sn, tf, sf;
      std::vector<Rgb> cn, cf;
      for (int i = 0; i < 8; ++i) {
        tn.push_back(0.1 + 0.1 * i);
        sn.push_back(u(rng) * 4);
        cn.emplace_back(u(rng), u(rng), u(rng));
        tf.push_back(1.0 + 0.2 * i);
        sf.push_back(u(rng) * 4);
        cf.emplace_back(u(rng), u(rng), u(rng));
      }
      const auto ns = on_axis(tn, sn, cn, 0.1), fs_ = on_axis(tf, sf, cf, 0.2);
      const Rgb expected = composite_near_far(composite(ns), composite(fs_));
      worst = std::max(worst, (composite_decomposed(fs_, ns, {}).color - expected).norm());
    }
    t.near(worst, 0, kInvariantTol, "decomposition without boxes equals near/far composite");
  }

  // distortion_loss
  t.expect(distortion_loss(std::vector<double>{0, 0.5, 1}, std::vector<double>{0, 0}) == 0.0,
           "distortion of zero weights");
  t.near(distortion_loss(std::vector<double>{0.0, 0.2, 0.4, 1.0}, std::vector<double>{0.0, 0.8, 0.0}),
         0.64 * 0.2 / 3.0, kExampleTol, "distortion single weight");
  t.near(distortion_loss(std::vector<double>{0.0, 0.5, 1.0}, std::vector<double>{0.5, 0.5}),
         1.0 / 3.0, kExampleTol, "distortion two weights");

  // contract
  auto c = contract(Vec3(2, 0, 0));
  t.near((c.unit_dir - Vec3(1, 0, 0)).norm() + std::abs(c.inv_radius - 0.5), 0, kExampleTol,
         "contract (2,0,0)");
  c = contract(Vec3(0, 3, 4));
  t.near((c.unit_dir - Vec3(0, 0.6, 0.8)).norm() + std::abs(c.inv_radius - 0.2), 0, kExampleTol,
         "contract (0,3,4)");
  const Vec3 on_sphere = Vec3(1, 2, 2) / 3.0;
  c = contract(on_sphere);
  t.near((c.unit_dir - on_sphere).norm() + std::abs(c.inv_radius - 1.0), 0, kExampleTol,
         "contract on the unit sphere");
}

void oracle_suites(Tally& t) {
  constexpr int kCases = 1000;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // Importance sampling vs brute-force inverse CDF.
  {
    int bad = 0;
    for (int trial = 0; trial < kCases; ++trial) {
      const int bins = 1 + static_cast<int>(rng() % 40);
      std::vector<double> edges{uni(rng) * 2};
      for (int i = 0; i < bins; ++i) edges.push_back(edges.back() + 0.01 + uni(rng));
      std::vector<double> w(bins);
      for (auto& x : w) x = uni(rng) < 0.3 ? 0.0 : uni(rng) * 3;
      const int n = 1 + static_cast<int>(uni(rng) * 20);
      const auto seed = static_cast<std::uint64_t>(trial);
      const auto s = importance_samples(edges, w, n, seed);
      const auto u = stratified_uniforms(torch::zeros({1}, torch::kInt64), n, true, seed, 1,
                                         torch::kFloat64);
      for (int k = 0; k < n; ++k)
        if (std::abs(s[k] - inverse_cdf(edges, w, u[0][k].item<double>())) > kOracleTol) {
          ++bad;
          break;
        }
    }
    t.expect(bad == 0, std::to_string(bad) + " importance-sampling cases disagree with the inverse CDF");
  }

  // Ray-OBB vs dense marching.
  {
    std::uniform_real_distribution<double> u(-1.0, 1.0), size(0.1, 0.6);
    constexpr double kStep = 1e-3;
    int bad = 0, hits = 0;
    for (int trial = 0; trial < kCases; ++trial) {
      OrientedBox box;
      box.center = Vec3(u(rng), u(rng), u(rng)) * 0.5;
      box.half_extents = Vec3(size(rng), size(rng), size(rng));
      box.rotation = random_rotation(rng);
      Ray r;
      do {
        r.origin = Vec3(u(rng), u(rng), u(rng)) * 2.5;
      } while (box.contains(r.origin, 0.05));
      const Vec3 aim = box.center + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.half_extents) * 1.5;
      r.direction = (aim - r.origin).normalized();
      const auto exact = ray_box_intersect(r, box);
      const auto dense = march(r, box, 8.0, kStep);
      if (!dense) {
        if (exact && exact->length() >= 2 * kStep) ++bad;
        continue;
      }
      if (!exact || std::abs(exact->t0 - dense->t0) > kStep + 1e-9 ||
          std::abs(exact->t1 - dense->t1) > kStep + 1e-9)
        ++bad;
      else
        ++hits;
    }
    t.expect(bad == 0, std::to_string(bad) + " ray-box cases disagree with marching");
    t.expect(hits > kCases / 2, "ray-box suite exercised too few hits");
  }

  // Bilinear sampling vs four-neighbor oracle, both pixel conventions.
  {
    torch::manual_seed(5);
    const auto maps = torch::rand({1, 6, 9, 13}, torch::kFloat64);
    const auto grid = torch::rand({1, kCases, 2}, torch::kFloat64) * 2.2 - 1.1;
    for (bool align : {true, false}) {
      const auto got = bilinear_sample(maps, grid, align);
      int bad = 0;
      for (int i = 0; i < kCases; ++i) {
        const double gx = grid[0][i][0].item<double>(), gy = grid[0][i][1].item<double>();
        const double x = align ? (gx + 1) / 2 * 12 : ((gx + 1) * 13 - 1) / 2;
        const double y = align ? (gy + 1) / 2 * 8 : ((gy + 1) * 9 - 1) / 2;
        if (max_abs(got[0][i] - bilinear_oracle(maps[0], x, y)) > kOracleTol) ++bad;
      }
      t.expect(bad == 0, std::to_string(bad) + " bilinear cases disagree (align_corners=" +
                             std::to_string(align) + ")");
    }
  }

  // Triplane lookup vs per-plane oracle.
  {
    TriplaneSet s;
    s.grid = GridSpec{8, -1.0, 1.0};
    for (auto& p : s.planes) p = torch::rand({1, 4, 8, 8}, torch::kFloat64);
    const auto pts = torch::rand({kCases, 3}, torch::kFloat64) * 2 - 1;
    const auto got = sample_triplane(s, pts)[0];
    int bad = 0;
    for (int i = 0; i < kCases; ++i) {
      const double x = (pts[i][0].item<double>() + 1) / 2 * 7;
      const double y = (pts[i][1].item<double>() + 1) / 2 * 7;
      const double z = (pts[i][2].item<double>() + 1) / 2 * 7;
      const auto expected = torch::cat({bilinear_oracle(s.planes[0][0], x, y),
                                        bilinear_oracle(s.planes[1][0], x, z),
                                        bilinear_oracle(s.planes[2][0], y, z)});
      if (max_abs(got[i] - expected) > kOracleTol) ++bad;
    }
    t.expect(bad == 0, std::to_string(bad) + " triplane lookups disagree with the oracle");
  }

  // Softmax aggregation vs direct evaluation.
  {
    torch::manual_seed(4);
    torch::nn::ModuleList aggregators;
    for (int p = 0; p < 3; ++p) aggregators->push_back(Aggregator(8, 16));
    aggregators->to(torch::kFloat64);
    const int k = 4;
    const GridSpec grid{k, -1.0, 1.0};
    const auto axis = grid.axis_centers(torch::kFloat64);
    torch::NoGradGuard ng;
    int bad = 0;
    for (int trial = 0; trial < kCases; ++trial) {
      const auto v = torch::randn({1, k, k, k, 8}, torch::kFloat64) * (1 + trial % 5);
      const auto raw = aggregate(aggregators, DepthEncodedVolume{v, grid});
      for (int p = 0; p < 3; ++p) {
        const auto fibers = p == 0 ? v[0].permute({1, 2, 0, 3})
                                   : (p == 1 ? v[0].permute({0, 2, 1, 3}) : v[0]);
        const auto logits = aggregators[p]->as<Aggregator>()->forward(
            fibers, axis.view({1, 1, k}).expand({k, k, k}));
        const auto e = torch::exp(logits - std::get<0>(logits.max(-1, true)));
        const auto w = e / e.sum(-1, true);
        const auto expected = (w.unsqueeze(-1) * fibers).sum(2).permute({2, 0, 1});
        if (max_abs(raw.planes[p][0] - expected) > kOracleTol) ++bad;
        if (max_abs(w.sum(-1) - 1.0) > kOracleTol) ++bad;
      }
    }
    t.expect(bad == 0, std::to_string(bad) + " aggregation cases disagree with the softmax oracle");
  }
}

Tally criterion1() {
  Tally t;
  kernel_examples(t);
  oracle_suites(t);
  return t;
}

// ---------------------------------------------------------------------------
// 2. Gradient integrity

Tally criterion2() {
  Tally t;
  const auto scene = generate_toy_scene(micro_scene(5));
  auto cfg = micro_model();
  torch::manual_seed(0);
  NerfModel model(cfg);
  model->to(torch::kFloat64);
  TrainConfig train;
  train.n_source_views = 3;
  train.n_dest_views_phase1 = 4;
  train.rays_per_step_phase1 = 8;
  train.steps_per_epoch = 1;
  train.epochs = 1;
  LossConfig loss;
  Trainer trainer(model, train, loss, SamplingConfig{0.02, 3.0, 8, 8, true});
  trainer.set_hierarchical(false);

  auto batch = make_phase1_batch(scene, train, 0);
  batch.target = batch.target.to(torch::kFloat64);
  batch.rays.origins = batch.rays.origins.to(torch::kFloat64);
  batch.rays.directions = batch.rays.directions.to(torch::kFloat64);
  auto images = batch.sources.images.to(torch::kFloat64).clone().requires_grad_();
  batch.sources.images = images;

  auto params = model->named_parameters();
  trainer.loss(batch, 0, nullptr).backward();
  const auto pixel_grad = images.grad().clone();

  auto loss_value = [&]() {
    torch::NoGradGuard ng;
    return trainer.loss(batch, 0, nullptr).item<double>();
  };
  const double eps = 1e-6;
  auto check = [&](torch::Tensor flat, int64_t idx, double analytic, const std::string& name) {
    torch::NoGradGuard ng;
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + eps;
    const double fp = loss_value();
    flat[idx] = orig - eps;
    const double fm = loss_value();
    flat[idx] = orig;
    const double numeric = (fp - fm) / (2 * eps);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-300});
    std::ostringstream s;
    s << name << "[" << idx << "] analytic " << analytic << " numeric " << numeric;
    t.expect(std::abs(analytic - numeric) < kGradAbsFloor || rel < kGradRelTol, s.str());
    return std::abs(analytic) > kGradAbsFloor;
  };

  // Source-image pixels: the whole chain from pixels to the loss.
  std::mt19937_64 rng(9);
  int nonzero = 0;
  auto img_flat = images.detach().view(-1);
  for (int i = 0; i < 20; ++i) {
    const auto idx = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(img_flat.numel()));
    nonzero += check(img_flat, idx, pixel_grad.view(-1)[idx].item<double>(), "pixel");
  }
  // Parameters of every group.
  for (const auto& group : model->group_names()) {
    const auto ps = model->group_parameters(group);
    for (int i = 0; i < 2; ++i) {
      const auto& p = ps[rng() % ps.size()];
      if (!p.grad().defined()) continue;
      const auto idx = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(p.numel()));
      nonzero += check(p.detach().view(-1), idx, p.grad().view(-1)[idx].item<double>(), group);
    }
  }
  t.expect(nonzero >= 10, "too few nonzero gradient entries checked: " + std::to_string(nonzero));
  t.info(std::to_string(nonzero) + " nonzero entries checked");
  return t;
}

// ---------------------------------------------------------------------------
// 3. Structural invariants

Tally criterion3() {
  Tally t;
  const auto scene = generate_toy_scene(micro_scene(3));
  torch::manual_seed(0);
  NerfModel model(micro_model());
  model->to(torch::kFloat64);
  model->eval();
  Renderer renderer(model);
  RenderSettings settings;
  settings.sampling = SamplingConfig{0.02, 3.0, 16, 16, true};
  settings.seed = 5;
  torch::NoGradGuard ng;

  auto to_double = [](SourceViews v) {
    v.images = v.images.to(torch::kFloat64);
    return v;
  };
  auto rays = generate_all_rays(scene.cameras[6], torch::kFloat64);

  // View permutation.
  const auto a = renderer.render_rays(renderer.encode(to_double(scene.views({0, 2, 4}))), rays, settings);
  const auto b = renderer.render_rays(renderer.encode(to_double(scene.views({4, 0, 2}))), rays, settings);
  const double perm = std::max(max_abs(a.rgb - b.rgb), max_abs(a.depth - b.depth));
  t.near(perm, 0, kInvariantTol, "view permutation changes the render");

  const auto views = renderer.encode(to_double(scene.views({0, 2, 4})));
  // Decomposition with no boxes.
  auto dec = settings;
  dec.mode = RenderMode::Decomposed;
  const auto d = renderer.render_rays(views, rays, dec);
  t.near(max_abs(d.rgb - a.rgb), 0, kInvariantTol, "decomposed without boxes differs from full");
  t.near(max_abs(d.objects_rgb + d.near_bg_rgb + d.far_bg_rgb - d.rgb), 0, kInvariantTol,
         "decomposed sources do not add up");

  // Chunking.
  const auto one = renderer.render_image(views, scene.cameras[7], settings, 1);
  const auto big = renderer.render_image(views, scene.cameras[7], settings, 4096);
  t.near(std::max(max_abs(one.rgb - big.rgb), max_abs(one.depth - big.depth)), 0, kInvariantTol,
         "chunk size changes the image");

  // Near/far routing.
  int64_t near_n = 0, far_n = 0, violations = 0;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int round = 0; near_n < 100000 || far_n < 100000; ++round) {
    RayBatch r;
    const int64_t n = 4096;
    auto o = torch::empty({n, 3}, torch::kFloat64), dir = torch::empty({n, 3}, torch::kFloat64);
    for (int64_t i = 0; i < n; ++i) {
      Vec3 origin(u(rng), u(rng), u(rng));
      origin *= (round % 2 == 0 ? 1.0 : 3.0);
      Vec3 dv(u(rng), u(rng), u(rng));
      dv.normalize();
      for (int k = 0; k < 3; ++k) {
        o[i][k] = origin[k];
        dir[i][k] = dv[k];
      }
    }
    r.origins = o;
    r.directions = dir;
    r.ray_ids = torch::arange(round * n, (round + 1) * n, torch::kInt64);
    const auto out = renderer.render_rays(views, r, settings);
    const auto nv = out.near.valid.unsqueeze(-1).expand_as(out.near.t);
    const auto fv = out.far.valid.unsqueeze(-1).expand_as(out.far.t);
    violations += ((out.near.positions.norm(2, -1) >= 1.0) & nv).sum().item<int64_t>();
    violations += ((out.far.positions.norm(2, -1) < 1.0) & fv).sum().item<int64_t>();
    near_n += nv.sum().item<int64_t>();
    far_n += fv.sum().item<int64_t>();
    if (round > 200) break;
  }
  t.expect(violations == 0, std::to_string(violations) + " samples routed to the wrong branch");
  t.expect(near_n >= 100000 && far_n >= 100000, "routing suite drew too few samples");
  t.info("view-permutation diff " + fmt("%.2e", perm) + ", routing samples " +
         std::to_string(near_n) + " near / " + std::to_string(far_n) + " far");
  return t;
}

// ---------------------------------------------------------------------------
// 9. Schedule

Tally criterion9() {
  Tally t;
  const TrainConfig train;  // defaults
  const LossConfig loss;
  t.near(lr_at(0, train), 5e-5, kLrTol, "lr at step 0");
  t.near(lr_at(train.warmup(), train), 5e-4, kLrTol, "lr at the end of warmup");
  t.near(lr_at(train.total_steps() - 1, train), 5e-6, kLrTol, "lr at the final step");
  t.expect(loss.lambda_lpips == 0.3, "lambda_lpips default");
  t.expect(loss.lpips_start_epoch == 30 && train.phase2_start_epoch == 30, "phase 2 starts at epoch 30");
  t.expect(!is_phase2(29, train) && is_phase2(30, train), "is_phase2 at epochs 29/30");

  // The perceptual term contributes neither value nor gradient before epoch 30.
  for (int epoch : {0, 29, 30, 31}) {
    const auto photo = torch::tensor(0.1, torch::kFloat64).requires_grad_();
    const auto reg = torch::tensor(0.2, torch::kFloat64);
    auto perceptual = torch::tensor(0.7, torch::kFloat64).requires_grad_();
    LossBreakdown b;
    auto total = combine_losses(photo, reg, reg, perceptual, loss, epoch, &b);
    total.backward();
    const bool active = epoch >= 30;
    const double g = perceptual.grad().defined() ? perceptual.grad().item<double>() : 0.0;
    t.expect(b.lpips_active == active, "lpips_active at epoch " + std::to_string(epoch));
    t.near(b.lpips, active ? 0.3 * 0.7 : 0.0, 1e-12, "lpips term at epoch " + std::to_string(epoch));
    t.near(g, active ? 0.3 : 0.0, 1e-12, "lpips gradient at epoch " + std::to_string(epoch));
    t.near(b.photo + b.reg + b.lpips, b.total, 1e-12, "breakdown sum");
  }

  // Through the trainer on a real patch batch.
  const auto scene = generate_toy_scene(micro_scene(5));
  NerfModel model(micro_model());
  TrainConfig small;
  small.n_source_views = 3;
  small.patch_size_phase2 = 16;
  Trainer trainer(model, small, loss, SamplingConfig{0.02, 3.0, 8, 8, true});
  const auto batch = make_phase2_batch(scene, small, 0);
  LossBreakdown b29, b30;
  trainer.loss(batch, 29, &b29);
  trainer.loss(batch, 30, &b30);
  t.expect(!b29.lpips_active && b29.lpips == 0.0, "trainer perceptual term at epoch 29");
  t.expect(b30.lpips_active && b30.lpips > 0.0, "trainer perceptual term at epoch 30");
  return t;
}

// ---------------------------------------------------------------------------
// 11. Format round trips

std::string temp_name(const std::string& tag) {
  static int counter = 0;
  return (fs::temp_directory_path() /
          ("tpnerf_accept_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
      .string();
}

Tally criterion11() {
  Tally t;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  // Manifest JSON.
  int manifest_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SceneManifest m;
    const int n = 1 + static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) {
      FrameEntry f;
      f.image_path = "images/" + std::to_string(rng() % 1000) + ".png";
      f.pose.topLeftCorner<3, 3>() = random_rotation(rng);
      f.pose.topRightCorner<3, 1>() = Vec3(u(rng), u(rng), u(rng)) * 5;
      f.intrinsics << 10 + 100 * std::abs(u(rng)), 0.01 * u(rng), 32 + u(rng), 0,
          10 + 100 * std::abs(u(rng)), 30 + u(rng), 0, 0, 1;
      m.frames.push_back(f);
      if (trial % 2 == 0) m.depth_paths.push_back("depth/" + std::to_string(i) + ".pfm");
    }
    for (int b = 0; b < static_cast<int>(rng() % 4); ++b) {
      OrientedBox box;
      box.center = Vec3(u(rng), u(rng), u(rng));
      box.half_extents = Vec3(0.01 + std::abs(u(rng)), 0.01 + std::abs(u(rng)), 0.01 + std::abs(u(rng)));
      box.rotation = random_rotation(rng);
      m.boxes.push_back(box);
    }
    for (int i = 0; i < n; ++i) (i % 3 == 2 ? m.split.eval_indices : m.split.source_indices).push_back(i);
    const auto text = m.to_json();
    const auto back = SceneManifest::from_json(text);
    bool same = back.to_json() == text && back.frames.size() == m.frames.size() &&
                back.boxes.size() == m.boxes.size() && back.depth_paths == m.depth_paths &&
                back.split.source_indices == m.split.source_indices &&
                back.split.eval_indices == m.split.eval_indices;
    for (std::size_t i = 0; same && i < m.frames.size(); ++i)
      same = back.frames[i].pose == m.frames[i].pose &&
             back.frames[i].intrinsics == m.frames[i].intrinsics &&
             back.frames[i].image_path == m.frames[i].image_path;
    for (std::size_t i = 0; same && i < m.boxes.size(); ++i) same = back.boxes[i] == m.boxes[i];
    manifest_bad += !same;
  }
  t.expect(manifest_bad == 0, std::to_string(manifest_bad) + " manifests changed in a round trip");

  // PFM depth.
  int pfm_bad = 0;
  const auto pfm_a = temp_name("a") + ".pfm", pfm_b = temp_name("b") + ".pfm";
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t h = 1 + static_cast<int64_t>(rng() % 40), w = 1 + static_cast<int64_t>(rng() % 40);
    auto depth = torch::rand({h, w}, torch::kFloat32) * 5;
    depth.masked_fill_(torch::rand({h, w}) < 0.2, 0.0);
    write_pfm(pfm_a, depth);
    const auto back = read_pfm(pfm_a);
    write_pfm(pfm_b, back);
    pfm_bad += !(torch::equal(back, depth) && read_file(pfm_a) == read_file(pfm_b));
  }
  fs::remove(pfm_a);
  fs::remove(pfm_b);
  t.expect(pfm_bad == 0, std::to_string(pfm_bad) + " depth maps changed in a round trip");

  // Tensor archives and checkpoints.
  int archive_bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    TensorArchive a;
    a.metadata = "{\"trial\":" + std::to_string(trial) + "}";
    const int count = static_cast<int>(rng() % 6);
    for (int i = 0; i < count; ++i) {
      std::vector<int64_t> shape;
      for (int d = 0; d < 1 + static_cast<int>(rng() % 3); ++d) shape.push_back(1 + rng() % 5);
      a.tensors["t" + std::to_string(i)] = i % 2 == 0 ? torch::randn(shape)
                                                      : torch::randint(-1000, 1000, shape, torch::kInt64);
    }
    const auto bytes = serialize_archive(a);
    const auto back = parse_archive(bytes);
    bool same = serialize_archive(back) == bytes && back.metadata == a.metadata &&
                back.tensors.size() == a.tensors.size();
    for (const auto& [k, v] : a.tensors) same = same && torch::equal(back.tensors.at(k), v);
    archive_bad += !same;
  }
  t.expect(archive_bad == 0, std::to_string(archive_bad) + " archives changed in a round trip");

  int ckpt_bad = 0;
  const auto ck_a = temp_name("ck") + ".ckpt", ck_b = temp_name("ck") + ".ckpt";
  for (int trial = 0; trial < 5; ++trial) {
    auto cfg = micro_model();
    cfg.init_seed = static_cast<std::uint64_t>(trial);
    cfg.use_near_far = trial % 2 == 0;
    NerfModel m(cfg);
    torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(1e-3));
    // One step so the optimizer has moments to store.
    opt.zero_grad();
    torch::Tensor sum = torch::zeros({});
    for (const auto& p : m->parameters()) sum = sum + p.pow(2).sum();
    sum.backward();
    opt.step();
    CheckpointState st;
    st.config_json = R"({"trial":)" + std::to_string(trial) + "}";
    st.epoch = trial;
    st.step = 17 * trial;
    st.best_metric = trial == 0 ? -std::numeric_limits<double>::infinity() : 10.0 + u(rng);
    save_checkpoint(ck_a, m, &opt, st);
    NerfModel m2(cfg);
    torch::optim::Adam opt2(m2->parameters(), torch::optim::AdamOptions(1e-3));
    const auto st2 = load_checkpoint(ck_a, m2, &opt2);
    save_checkpoint(ck_b, m2, &opt2, st2);
    bool same = read_file(ck_a) == read_file(ck_b);
    for (const auto& [name, v] : m->state()) same = same && torch::equal(v, m2->state().at(name));
    ckpt_bad += !same;
  }
  fs::remove(ck_a);
  fs::remove(ck_b);
  t.expect(ckpt_bad == 0, std::to_string(ckpt_bad) + " checkpoints changed in a round trip");
  return t;
}

// ---------------------------------------------------------------------------
// Long criteria: training runs on the toy benchmark.

struct Budgets {
  int c4_steps = 3000;
  int bench_steps = 1500;
};

using Clock = std::chrono::steady_clock;

double minutes_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count() / 60.0;
}

StepCallback progress_cb(const std::string& tag) {
  return [tag](const StepReport& r) {
    if (g_verbose && r.step % 100 == 0)
      std::fprintf(stderr, "  [%s] step %lld lr %.2e loss %.5f\n", tag.c_str(),
                   static_cast<long long>(r.step), r.lr, r.loss.total);
  };
}

/// Splits `steps` into epochs of 100 with phase 2 over the last third.
void set_schedule(ExperimentConfig& c, int steps) {
  c.train.steps_per_epoch = std::min(100, steps);
  c.train.epochs = std::max(1, steps / c.train.steps_per_epoch);
  c.train.phase2_start_epoch = (2 * c.train.epochs) / 3;
  c.loss.lpips_start_epoch = c.train.phase2_start_epoch;
  c.train.val_views_per_scene = 0;
  c.train.early_stopping_patience = 0;
}

Tally criterion4(const Budgets& budgets) {
  Tally t;
  const auto start = Clock::now();
  ToyDataOptions opts;
  opts.seed = 11;
  opts.scenes = 1;
  opts.views_train = 20;
  opts.views_eval = 5;
  const Scene scene = normalize_scene(generate_toy_scene(toy_spec_for(opts, 0)));

  ExperimentConfig c;
  c.model.channels = 128;
  c.model.grid.resolution = 32;
  c.model.encoder_blocks = {1, 1, 1};
  c.model.depth_hidden = 64;
  c.model.aggregator_hidden = 64;
  c.model.decoder_hidden = 64;
  c.train.rays_per_step_phase1 = 256;
  c.train.patch_size_phase2 = 16;
  c.sampling.n_coarse = 16;
  c.sampling.n_fine = 16;
  set_schedule(c, budgets.c4_steps);

  NerfModel model(c.model);
  train_in_memory(model, c, {&scene}, progress_cb("overfit"));

  // Train views: training frames other than the sources used for rendering.
  const auto& split = scene.manifest.split;
  const auto sources = spread_views(scene.cameras, split.source_indices, c.train.n_source_views);
  Scene train_view_scene = scene;
  train_view_scene.manifest.split.eval_indices.clear();
  for (int i : split.source_indices)
    if (std::find(sources.begin(), sources.end(), i) == sources.end() &&
        train_view_scene.manifest.split.eval_indices.size() < 5)
      train_view_scene.manifest.split.eval_indices.push_back(i);
  PerceptualBackbone backbone;
  const auto train_m = evaluate_scene(model, train_view_scene, c, c.train.n_source_views, false, backbone);
  const auto held_m = evaluate_scene(model, scene, c, c.train.n_source_views, false, backbone);

  // Depth against the analytic toy geometry on the held-out views.
  Renderer renderer(model);
  torch::NoGradGuard ng;
  const auto encoded = renderer.encode(scene.views(sources));
  RenderSettings settings;
  settings.sampling = c.eval.sampling;
  settings.seed = c.train.seed;
  std::vector<torch::Tensor> errs;
  for (int v : split.eval_indices) {
    const auto img = renderer.render_image(encoded, scene.cameras[v], settings);
    errs.push_back((img.depth.to(torch::kFloat64) - scene.depths[v].to(torch::kFloat64))
                       .abs()
                       .masked_select(scene.depth_valid[v]));
  }
  const double depth_median = torch::cat(errs).median().item<double>();

  t.expect(train_m.psnr >= kOverfitTrainPsnr, "train-view PSNR " + fmt("%.2f", train_m.psnr) +
                                                  " < " + fmt("%.0f", kOverfitTrainPsnr));
  t.expect(held_m.psnr >= kOverfitHeldOutPsnr, "held-out PSNR " + fmt("%.2f", held_m.psnr) +
                                                   " < " + fmt("%.0f", kOverfitHeldOutPsnr));
  t.info("steps " + std::to_string(c.train.total_steps()) + ", train-view PSNR " +
         fmt("%.2f", train_m.psnr) + ", held-out PSNR " + fmt("%.2f", held_m.psnr) +
         ", median depth error " + fmt("%.4f", depth_median) + " (target < " +
         fmt("%.2f", kSphereDepthMedian) + ", informational), " + fmt("%.1f", minutes_since(start)) +
         " min");
  return t;
}

/// Shared state of criteria 5-8 and 10: one toy benchmark and the models
/// trained on it, built on first use.
class Benchmark {
 public:
  explicit Benchmark(const Budgets& budgets) : budgets_(budgets) {
    ToyDataOptions opts;
    opts.seed = 7;
    opts.scenes = 9;
    opts.height = 32;
    opts.width = 32;
    for (int i = 0; i < opts.scenes; ++i)
      scenes_.push_back(normalize_scene(generate_toy_scene(toy_spec_for(opts, i))));

    config_.model.channels = 64;
    config_.model.grid.resolution = 16;
    config_.model.encoder_blocks = {1, 1, 1};
    config_.model.depth_hidden = 32;
    config_.model.aggregator_hidden = 32;
    config_.model.decoder_hidden = 64;
    config_.train.rays_per_step_phase1 = 256;
    config_.train.patch_size_phase2 = 16;
    config_.sampling.n_coarse = 16;
    config_.sampling.n_fine = 16;
    set_schedule(config_, budgets.bench_steps);
  }

  const ExperimentConfig& config() const { return config_; }
  const Scene& unseen() const { return scenes_.back(); }

  /// Prior model (or an ablation of it) trained on the first eight scenes.
  const NerfModel& prior(const std::string& variant = "full") {
    auto it = models_.find(variant);
    if (it != models_.end()) return it->second;
    auto c = config_;
    if (variant == "no-triplane") c.model.use_triplane = false;
    if (variant == "no-near-far") c.model.use_near_far = false;
    std::vector<const Scene*> train;
    for (std::size_t i = 0; i + 1 < scenes_.size(); ++i) train.push_back(&scenes_[i]);
    const auto start = Clock::now();
    NerfModel model(c.model);
    train_in_memory(model, c, train, progress_cb(variant));
    log("trained " + variant + " prior in " + fmt("%.1f", minutes_since(start)) + " min");
    return models_.emplace(variant, model).first->second;
  }

  /// Same architecture trained from scratch on the three source views of the unseen scene.
  const NerfModel& scratch() {
    auto it = models_.find("scratch");
    if (it != models_.end()) return it->second;
    Scene few = unseen();
    const auto src = spread_views(few.cameras, few.manifest.split.source_indices, 3);
    few.manifest.split.source_indices.assign(src.begin(), src.end());
    auto c = config_;
    c.train.n_dest_views_phase1 = 3;
    const auto start = Clock::now();
    NerfModel model(c.model);
    train_in_memory(model, c, {&few}, progress_cb("scratch"));
    log("trained scratch model in " + fmt("%.1f", minutes_since(start)) + " min");
    return models_.emplace("scratch", model).first->second;
  }

  SceneMetrics eval(const NerfModel& model, int views, bool tune = false) {
    PerceptualBackbone backbone;
    auto c = config_;
    c.model = model->config();
    return evaluate_scene(model, unseen(), c, views, tune, backbone, "unseen");
  }

 private:
  static void log(const std::string& s) {
    if (g_verbose) std::cerr << "  " << s << "\n";
  }
  Budgets budgets_;
  std::vector<Scene> scenes_;
  ExperimentConfig config_;
  std::map<std::string, NerfModel> models_;
};

Tally criterion5(Benchmark& bench) {
  Tally t;
  const auto prior = bench.eval(bench.prior(), 3);
  const auto scratch = bench.eval(bench.scratch(), 3);
  t.expect(prior.psnr >= scratch.psnr + kPriorGainDb,
           "prior " + fmt("%.2f", prior.psnr) + " dB vs scratch " + fmt("%.2f", scratch.psnr) + " dB");
  t.info("3-view PSNR prior " + fmt("%.2f", prior.psnr) + " dB, scratch " + fmt("%.2f", scratch.psnr) +
         " dB, gain " + fmt("%.2f", prior.psnr - scratch.psnr) + " dB (need " +
         fmt("%.1f", kPriorGainDb) + ")");
  return t;
}

Tally criterion6(Benchmark& bench) {
  Tally t;
  const auto& model = bench.prior();
  const double p1 = bench.eval(model, 1).psnr;
  const double p3 = bench.eval(model, 3).psnr;
  const double p5 = bench.eval(model, 5).psnr;
  t.expect(p5 >= p3, "PSNR(5) " + fmt("%.2f", p5) + " < PSNR(3) " + fmt("%.2f", p3));
  t.expect(p3 >= p1 - kViewCountSlackDb,
           "PSNR(3) " + fmt("%.2f", p3) + " < PSNR(1) " + fmt("%.2f", p1) + " - slack");
  t.info("PSNR 1/3/5 views: " + fmt("%.2f", p1) + " / " + fmt("%.2f", p3) + " / " + fmt("%.2f", p5));
  return t;
}

Tally criterion7(Benchmark& bench) {
  Tally t;
  const auto& model = bench.prior();
  const auto before = model->state();
  std::map<std::string, torch::Tensor> snapshot;
  for (const auto& [k, v] : before) snapshot[k] = v.clone();
  const double zero_shot = bench.eval(model, 3).psnr;
  const double tuned = bench.eval(model, 3, true).psnr;
  t.expect(tuned >= zero_shot - kFinetuneMatchDb,
           "finetuned " + fmt("%.3f", tuned) + " dB < zero-shot " + fmt("%.3f", zero_shot) + " dB");
  // The benchmark model itself stays untouched (finetuning runs on a copy).
  for (const auto& [k, v] : model->state())
    t.expect(torch::equal(v, snapshot.at(k)), "source model changed: " + k);

  // Freeze contract on an explicit finetuning run.
  auto copy = copy_model(model);
  auto c = bench.config();
  const auto& scene = bench.unseen();
  const auto src = spread_views(scene.cameras, scene.manifest.split.source_indices, 3);
  finetune(copy, scene.views(src), c.train, c.loss, c.sampling);
  int frozen_changed = 0, tuned_changed = 0;
  for (const auto& [k, v] : copy->state()) {
    const auto group = group_of(k);
    const bool tunable = std::find(finetune_groups().begin(), finetune_groups().end(), group) !=
                         finetune_groups().end();
    const bool changed = !torch::equal(v, snapshot.at(k));
    if (!tunable && changed) ++frozen_changed;
    if (tunable && changed) ++tuned_changed;
  }
  t.expect(frozen_changed == 0, std::to_string(frozen_changed) + " frozen tensors changed");
  t.expect(tuned_changed > 0, "finetuning changed nothing");
  t.info("3-view PSNR zero-shot " + fmt("%.3f", zero_shot) + " dB, finetuned " + fmt("%.3f", tuned) +
         " dB; frozen groups bitwise unchanged: " + (frozen_changed == 0 ? "yes" : "no"));
  return t;
}

Tally criterion8(Benchmark& bench) {
  Tally t;
  const double full = bench.eval(bench.prior(), 3).psnr;
  const double no_tri = bench.eval(bench.prior("no-triplane"), 3).psnr;
  const double no_nf = bench.eval(bench.prior("no-near-far"), 3).psnr;
  t.expect(full >= no_tri + kNoTriplaneGapDb,
           "full " + fmt("%.2f", full) + " vs no-triplane " + fmt("%.2f", no_tri));
  t.expect(full >= no_nf + kNoNearFarGapDb,
           "full " + fmt("%.2f", full) + " vs no-near-far " + fmt("%.2f", no_nf));
  t.info("3-view PSNR full " + fmt("%.2f", full) + ", no-triplane " + fmt("%.2f", no_tri) +
         ", no-near-far " + fmt("%.2f", no_nf));
  return t;
}

Tally criterion10(Benchmark& bench) {
  Tally t;
  const auto prior = bench.eval(bench.prior(), 3);
  const auto scratch = bench.eval(bench.scratch(), 3);
  t.expect(prior.has_depth && scratch.has_depth, "depth ground truth missing");
  t.expect(prior.depth_l1 < scratch.depth_l1, "prior depth L1 " + fmt("%.3f", prior.depth_l1) +
                                                  " >= scratch " + fmt("%.3f", scratch.depth_l1));
  t.info("3-view depth L1 prior " + fmt("%.3f", prior.depth_l1) + ", scratch " +
         fmt("%.3f", scratch.depth_l1));
  return t;
}

std::set<int> parse_only(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const int n = std::stoi(item);
    if (n < 1 || n > 11) throw InputError("--only: criteria are numbered 1 to 11");
    out.insert(n);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only = "1,2,3,4,5,6,7,8,9,10,11";
  Budgets budgets;
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("--c4-steps", budgets.c4_steps, "training steps for the single-scene overfit");
  app.add_option("--bench-steps", budgets.bench_steps, "training steps per toy-benchmark model");
  app.add_flag("--verbose", g_verbose, "progress on stderr");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  try {
    selected = parse_only(only);
  } catch (const std::exception& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 2;
  }
  torch::set_num_threads(std::max(1, static_cast<int>(std::thread::hardware_concurrency())));

  std::optional<Benchmark> bench;
  auto benchmark = [&]() -> Benchmark& {
    if (!bench) bench.emplace(budgets);
    return *bench;
  };
  const std::map<int, std::pair<std::string, std::function<Tally()>>> criteria{
      {1, {"math kernels and oracle suites", criterion1}},
      {2, {"gradient integrity", criterion2}},
      {3, {"structural invariants", criterion3}},
      {4, {"single-scene overfit", [&] { return criterion4(budgets); }}},
      {5, {"prior benefit", [&] { return criterion5(benchmark()); }}},
      {6, {"view-count monotonicity", [&] { return criterion6(benchmark()); }}},
      {7, {"finetuning protocol", [&] { return criterion7(benchmark()); }}},
      {8, {"ablation direction", [&] { return criterion8(benchmark()); }}},
      {9, {"schedule fidelity", criterion9}},
      {10, {"depth trend", [&] { return criterion10(benchmark()); }}},
      {11, {"format round trips", criterion11}},
  };

  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.contains(id)) continue;
    const auto start = Clock::now();
    std::string verdict, detail;
    try {
      torch::manual_seed(0);
      const auto tally = entry.second();
      verdict = tally.ok() ? "PASS" : "FAIL";
      detail = tally.summary();
    } catch (const std::exception& e) {
      verdict = "FAIL";
      const std::string what = e.what();
      detail = "exception: " + what.substr(0, what.find('\n'));
    }
    failed += verdict != "PASS";
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    std::printf("criterion %2d %-32s %s  (%.1fs) %s\n", id, entry.first.c_str(), verdict.c_str(),
                secs, detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
