#include "tpnerf/volume_render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace {

double sample_alpha(double sigma, double delta) {
  return 1.0 - std::exp(-std::max(sigma * delta, 0.0));
}

}  // namespace

void RaySegmentSamples::validate() const {
  const std::size_t n = t_values.size();
  if (sigmas.size() != n || colors.size() != n || positions.size() != n)
    throw InputError("RaySegmentSamples: field lengths differ");
  for (std::size_t i = 1; i < n; ++i)
    if (!(t_values[i] > t_values[i - 1]))
      throw InputError("RaySegmentSamples: t values must be strictly increasing");
  if (last_delta < 0.0) throw InputError("RaySegmentSamples: last_delta must be >= 0");
}

std::vector<double> RaySegmentSamples::deltas() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i + 1 < size(); ++i) out[i] = (positions[i] - positions[i + 1]).norm();
  if (!out.empty()) out.back() = last_delta;
  return out;
}

CompositeResult composite(const RaySegmentSamples& samples) {
  samples.validate();
  const auto deltas = samples.deltas();
  return composite_intervals(samples.t_values, samples.sigmas, samples.colors, deltas);
}

CompositeResult composite_intervals(std::span<const double> t_values,
                                    std::span<const double> sigmas, std::span<const Rgb> colors,
                                    std::span<const double> deltas) {
  const std::size_t n = t_values.size();
  if (sigmas.size() != n || colors.size() != n || deltas.size() != n)
    throw InputError("composite: field lengths differ");
  for (std::size_t i = 1; i < n; ++i)
    if (!(t_values[i] > t_values[i - 1]))
      throw InputError("composite: t values must be strictly increasing");

  CompositeResult out;
  out.weights.resize(n);
  double transmittance = 1.0;
  double weighted_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = sample_alpha(sigmas[i], deltas[i]);
    const double w = alpha * transmittance;
    out.weights[i] = w;
    out.color += w * colors[i];
    out.acc += w;
    weighted_t += w * t_values[i];
    transmittance *= 1.0 - alpha;
  }
  out.depth = weighted_t / std::max(out.acc, 1e-8);
  return out;
}

Rgb composite_near_far(const CompositeResult& near, const CompositeResult& far) {
  return near.color + (1.0 - near.acc) * far.color;
}

std::vector<double> prune_density(std::span<const double> sigmas, std::span<const bool> inside) {
  if (sigmas.size() != inside.size()) throw InputError("prune_density: length mismatch");
  std::vector<double> out(sigmas.begin(), sigmas.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (inside[i]) out[i] = kPrunedDensity;
  return out;
}

DecomposedResult composite_decomposed(const RaySegmentSamples& far_bg,
                                      const RaySegmentSamples& near_bg_pruned,
                                      std::span<const ObjectSegment> objects) {
  far_bg.validate();
  near_bg_pruned.validate();

  struct Entry {
    double t;
    double alpha;
    Rgb color;
    int source;  // 0 near background, 1 object
    std::size_t slot;
  };
  std::vector<Entry> merged;
  {
    const auto d = near_bg_pruned.deltas();
    for (std::size_t i = 0; i < near_bg_pruned.size(); ++i)
      merged.push_back({near_bg_pruned.t_values[i], sample_alpha(near_bg_pruned.sigmas[i], d[i]),
                        near_bg_pruned.colors[i], 0, i});
  }
  std::size_t object_slots = 0;
  for (const auto& seg : objects) {
    seg.samples.validate();
    const auto d = seg.samples.deltas();
    for (std::size_t i = 0; i < seg.samples.size(); ++i) {
      const double t = seg.samples.t_values[i];
      if (t < seg.box_interval.t0 - 1e-9 || t > seg.box_interval.t1 + 1e-9)
        throw InputError("composite_decomposed: object sample outside its box interval");
      merged.push_back({t, sample_alpha(seg.samples.sigmas[i], d[i]), seg.samples.colors[i], 1,
                        object_slots++});
    }
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const Entry& a, const Entry& b) { return a.t < b.t; });

  DecomposedResult out;
  out.near_bg.weights.assign(near_bg_pruned.size(), 0.0);
  out.objects.weights.assign(object_slots, 0.0);
  double transmittance = 1.0;
  for (const auto& e : merged) {
    const double w = e.alpha * transmittance;
    auto& contrib = e.source == 0 ? out.near_bg : out.objects;
    contrib.weights[e.slot] = w;
    contrib.color += w * e.color;
    transmittance *= 1.0 - e.alpha;
  }

  const CompositeResult far = composite(far_bg);
  out.far_bg.weights.resize(far.weights.size());
  for (std::size_t i = 0; i < far.weights.size(); ++i)
    out.far_bg.weights[i] = transmittance * far.weights[i];
  out.far_bg.color = transmittance * far.color;
  out.color = out.far_bg.color + out.near_bg.color + out.objects.color;
  return out;
}

double distortion_loss(std::span<const double> s, std::span<const double> w) {
  if (s.size() != w.size() + 1) throw InputError("distortion_loss: need len(s) == len(w) + 1");
  for (double wi : w)
    if (wi < 0.0) throw InputError("distortion_loss: weights must be nonnegative");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] < s[i - 1]) throw InputError("distortion_loss: edges must be nondecreasing");

  const std::size_t n = w.size();
  double pairwise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mi = 0.5 * (s[i] + s[i + 1]);
    for (std::size_t j = 0; j < n; ++j) {
      const double mj = 0.5 * (s[j] + s[j + 1]);
      pairwise += w[i] * w[j] * std::abs(mi - mj);
    }
  }
  double self = 0.0;
  for (std::size_t i = 0; i < n; ++i) self += w[i] * w[i] * (s[i + 1] - s[i]);
  return pairwise + self / 3.0;
}

// ---------------------------------------------------------------------------

torch::Tensor alpha_from_density(const torch::Tensor& sigmas, const torch::Tensor& deltas) {
  return 1.0 - torch::exp(-torch::clamp_min(sigmas * deltas, 0.0));
}

CompositeBatch composite(const torch::Tensor& sigmas, const torch::Tensor& colors,
                         const torch::Tensor& deltas, const torch::Tensor& t_values) {
  // Transmittance in log space: prod_{j<i}(1 - alpha_j) = exp(-sum_{j<i} sigma_j delta_j).
  const auto optical = torch::clamp_min(sigmas * deltas, 0.0);
  const auto alpha = 1.0 - torch::exp(-optical);
  const auto transmittance = torch::exp(-(optical.cumsum(-1) - optical));

  CompositeBatch out;
  out.weights = alpha * transmittance;
  out.rgb = (out.weights.unsqueeze(-1) * colors).sum(-2);
  out.acc = out.weights.sum(-1);
  out.depth = (out.weights * t_values).sum(-1) / torch::clamp_min(out.acc, 1e-8);
  return out;
}

CompositeBatch composite_alphas(const torch::Tensor& alphas, const torch::Tensor& colors,
                                const torch::Tensor& t_values) {
  const auto keep = 1.0 - alphas;
  const auto transmittance =
      torch::cat({torch::ones_like(keep.narrow(-1, 0, 1)), keep.cumprod(-1)}, -1)
          .narrow(-1, 0, keep.size(-1));
  CompositeBatch out;
  out.weights = alphas * transmittance;
  out.rgb = (out.weights.unsqueeze(-1) * colors).sum(-2);
  out.acc = out.weights.sum(-1);
  out.depth = (out.weights * t_values).sum(-1) / torch::clamp_min(out.acc, 1e-8);
  return out;
}

torch::Tensor composite_near_far(const CompositeBatch& near, const CompositeBatch& far) {
  return near.rgb + (1.0 - near.acc).unsqueeze(-1) * far.rgb;
}

torch::Tensor prune_density(const torch::Tensor& sigmas, const torch::Tensor& inside) {
  if (sigmas.sizes() != inside.sizes()) throw InputError("prune_density: shape mismatch");
  return torch::where(inside, torch::full_like(sigmas, kPrunedDensity), sigmas);
}

torch::Tensor distortion_loss(const torch::Tensor& edges, const torch::Tensor& weights) {
  const int64_t n = weights.size(-1);
  const auto lo = edges.narrow(-1, 0, n);
  const auto hi = edges.narrow(-1, 1, n);
  const auto mid = 0.5 * (lo + hi);
  // sum_ij w_i w_j |m_i - m_j| = 2 sum_i w_i (m_i W_{<i} - (wm)_{<i}) for sorted m.
  const auto wm = weights * mid;
  const auto w_before = weights.cumsum(-1) - weights;
  const auto wm_before = wm.cumsum(-1) - wm;
  const auto pairwise = 2.0 * (weights * (mid * w_before - wm_before)).sum(-1);
  const auto self = (weights * weights * (hi - lo)).sum(-1) / 3.0;
  return pairwise + self;
}

}  // namespace tpnerf
