#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "tpnerf/geometry.hpp"

namespace tpnerf {

using Rgb = Eigen::Vector3d;

/// Density written into samples inside edited-out object boxes.
inline constexpr double kPrunedDensity = -1e-5;

/// Point samples along one ray segment. Interval i spans from sample i to
/// sample i + 1; the last one has length `last_delta`.
struct RaySegmentSamples {
  std::vector<double> t_values;
  std::vector<double> sigmas;
  std::vector<Rgb> colors;
  std::vector<Vec3> positions;
  double last_delta = 0.0;

  std::size_t size() const { return t_values.size(); }
  void validate() const;
  /// δ_i = |x_i - x_{i+1}|, last one `last_delta`.
  std::vector<double> deltas() const;
};

struct CompositeResult {
  Rgb color = Rgb::Zero();
  double acc = 0.0;
  std::vector<double> weights;
  double depth = 0.0;
};

struct SourceContribution {
  Rgb color = Rgb::Zero();
  std::vector<double> weights;
};

struct DecomposedResult {
  Rgb color = Rgb::Zero();
  SourceContribution far_bg;
  SourceContribution near_bg;
  SourceContribution objects;  ///< weights concatenated over object segments in input order
};

/// Object samples together with the ray interval of the box they came from.
struct ObjectSegment {
  RaySegmentSamples samples;
  Interval box_interval;
};

CompositeResult composite(const RaySegmentSamples& samples);

/// Compositing with explicit per-sample interval lengths.
CompositeResult composite_intervals(std::span<const double> t_values,
                                    std::span<const double> sigmas, std::span<const Rgb> colors,
                                    std::span<const double> deltas);

/// near.color + (1 - near.acc) * far.color
Rgb composite_near_far(const CompositeResult& near, const CompositeResult& far);

std::vector<double> prune_density(std::span<const double> sigmas, std::span<const bool> inside);

/// Three-way composition: object and pruned near-background samples are merged
/// into one t-ordered stream (each keeping its own opacity), then the far
/// background is attenuated by what the merged stream lets through.
DecomposedResult composite_decomposed(const RaySegmentSamples& far_bg,
                                      const RaySegmentSamples& near_bg_pruned,
                                      std::span<const ObjectSegment> objects);

/// Interval-distortion regularizer over normalized edges `s` (len(w) + 1).
double distortion_loss(std::span<const double> s, std::span<const double> w);

// ---------------------------------------------------------------------------
// Batched kernels, [R, S] over rays and samples.

struct CompositeBatch {
  torch::Tensor rgb;      ///< [R, 3]
  torch::Tensor acc;      ///< [R]
  torch::Tensor weights;  ///< [R, S]
  torch::Tensor depth;    ///< [R]
};

torch::Tensor alpha_from_density(const torch::Tensor& sigmas, const torch::Tensor& deltas);

CompositeBatch composite(const torch::Tensor& sigmas, const torch::Tensor& colors,
                         const torch::Tensor& deltas, const torch::Tensor& t_values);

/// Composites precomputed opacities in the given order.
CompositeBatch composite_alphas(const torch::Tensor& alphas, const torch::Tensor& colors,
                                const torch::Tensor& t_values);

torch::Tensor composite_near_far(const CompositeBatch& near, const CompositeBatch& far);

torch::Tensor prune_density(const torch::Tensor& sigmas, const torch::Tensor& inside);

/// O(S) evaluation of the distortion loss per ray: edges [R, S + 1], weights [R, S].
torch::Tensor distortion_loss(const torch::Tensor& edges, const torch::Tensor& weights);

}  // namespace tpnerf
