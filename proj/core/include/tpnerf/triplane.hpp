#pragma once

#include <torch/torch.h>

#include <array>

#include "tpnerf/image_features.hpp"

namespace tpnerf {

/// Axis-aligned cubic world grid of K^3 cells.
struct GridSpec {
  int resolution = 64;
  double lo = -1.0;
  double hi = 1.0;

  void validate() const;
  double cell_size() const { return (hi - lo) / resolution; }
  /// Cell-center coordinates along one axis, [K].
  torch::Tensor axis_centers(torch::Dtype dtype) const;
  /// Cell centers [K, K, K, 3] indexed [z][y][x], each holding (x, y, z).
  torch::Tensor cell_centers(torch::Dtype dtype) const;
  bool operator==(const GridSpec&) const = default;
};

/// Back-projected image features, channels-last [V, K, K, K, C] ([z][y][x]).
struct FeatureVolume {
  torch::Tensor data;
  GridSpec grid;
};

/// Output of the depth MLP, same layout as FeatureVolume.
struct DepthEncodedVolume {
  torch::Tensor data;
  GridSpec grid;
};

enum class PlaneAxis { XY = 0, XZ = 1, YZ = 2 };

/// Aggregated planes before refinement, each [V, C, K, K] (rows, cols):
/// xy -> (y, x), xz -> (z, x), yz -> (z, y).
struct RawPlanes {
  std::array<torch::Tensor, 3> planes;
};

/// Refined planes [V, G, H/2, W/2] per axis pair. World coordinates in
/// [grid.lo, grid.hi] map affinely onto [0, dim - 1] along each plane axis.
struct TriplaneSet {
  std::array<torch::Tensor, 3> planes;
  GridSpec grid;
  torch::Tensor feature_source;  ///< encoder output the planes were built from

  int64_t channels() const { return planes[0].size(1); }
  int64_t rows() const { return planes[0].size(2); }
  int64_t cols() const { return planes[0].size(3); }
  /// Plane pixel coordinates (col, row) of in-plane world coordinates (a, b).
  Vec2 world_to_plane(double a, double b) const;
};

/// Two-layer MLP Z on concat(feature, camera-frame position, unit direction
/// from the cell toward the camera center).
class DepthEncoderImpl : public torch::nn::Module {
 public:
  DepthEncoderImpl(int channels, int hidden);
  /// features [..., C], geometry [..., 6] -> [..., C]
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& geometry);

 private:
  int channels_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(DepthEncoder);

/// Two-layer MLP producing a scalar logit from concat(feature, coordinate
/// along the reduced axis).
class AggregatorImpl : public torch::nn::Module {
 public:
  AggregatorImpl(int channels, int hidden);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& coordinate);

 private:
  int channels_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Aggregator);

/// Conv stack C -> C/2 -> C/4 -> C/4 (3x3, stride 2), x2 upsample, conv,
/// resize to the target size, conv; batch-norm + ReLU after every conv.
class PlaneRefinerImpl : public torch::nn::Module {
 public:
  explicit PlaneRefinerImpl(int channels);
  torch::Tensor forward(const torch::Tensor& plane, int64_t out_h, int64_t out_w);

 private:
  torch::nn::Sequential down_{nullptr};
  torch::nn::Sequential mid_{nullptr};
  torch::nn::Sequential out_{nullptr};
};
TORCH_MODULE(PlaneRefiner);

/// Parameter groups of the triplane construction network.
struct TriplaneNetwork {
  DepthEncoder depth_mlp{nullptr};
  torch::nn::ModuleList aggregators{nullptr};  ///< xy, xz, yz
  torch::nn::ModuleList plane_convs{nullptr};  ///< xy, xz, yz
};

/// Samples each view's feature map at the projection of every cell center.
FeatureVolume backproject(const torch::Tensor& features, const CameraPack& cameras,
                          const GridSpec& grid);
FeatureVolume backproject(const FeatureMap& feature_map, const GridSpec& grid);

/// Per-cell geometry input of Z: [V, K, K, K, 6] = (x_c, d).
torch::Tensor depth_geometry(const CameraPack& cameras, const GridSpec& grid, torch::Dtype dtype);

DepthEncodedVolume encode_depth(DepthEncoder& depth_mlp, const FeatureVolume& volume,
                                const CameraPack& cameras);

/// Softmax-weighted sums of the volume along z, y and x.
RawPlanes aggregate(torch::nn::ModuleList& aggregators, const DepthEncodedVolume& volume);

TriplaneSet refine_planes(torch::nn::ModuleList& plane_convs, const RawPlanes& raw,
                          const GridSpec& grid, int64_t target_h, int64_t target_w);

TriplaneSet build_triplanes(TriplaneNetwork& net, const torch::Tensor& features,
                            const CameraPack& cameras, const GridSpec& grid);

/// Bilinear lookup (clamp-to-edge) in the three planes at un-contracted world
/// points [P, 3]. Returns [V, P, 3G] ordered (xy, xz, yz).
torch::Tensor sample_triplane(const TriplaneSet& triplanes, const torch::Tensor& points);

}  // namespace tpnerf
