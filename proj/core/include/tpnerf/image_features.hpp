#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "tpnerf/geometry.hpp"

namespace tpnerf {

/// Source cameras packed as tensors for batched projection.
struct CameraPack {
  torch::Tensor intrinsics;  ///< [V, 3, 3]
  torch::Tensor rotations;   ///< [V, 3, 3], camera to world
  torch::Tensor centers;     ///< [V, 3]
  int width = 0;
  int height = 0;

  static CameraPack from(std::span<const Camera> cameras, torch::Dtype dtype);
  int64_t size() const { return centers.size(0); }
  /// World points [..., 3] -> camera-frame points [V, ..., 3].
  torch::Tensor to_camera(const torch::Tensor& points) const;
};

/// Encoder feature map of one source view, stored channels-first [C, H/2, W/2].
struct FeatureMap {
  torch::Tensor data;
  Camera source_camera;
};

/// Pixel-aligned features at N points; rows of invalid points are zero.
struct ResidualFeature {
  torch::Tensor values;    ///< [N, C]
  torch::Tensor validity;  ///< [N] bool
};

/// Residual conv encoder: a stride-2 stem followed by three residual stages.
/// The stem and every stage output are bilinearly resized to half the input
/// resolution and concatenated (projected to `channels` when the stage widths
/// do not add up).
class ImageEncoderImpl : public torch::nn::Module {
 public:
  ImageEncoderImpl(int channels, std::vector<int> blocks_per_stage);

  /// [V, 3, H, W] in [0, 1] -> [V, C, H/2, W/2].
  torch::Tensor forward(const torch::Tensor& images);

  int channels() const { return channels_; }

 private:
  int channels_;
  torch::nn::Sequential stem_{nullptr};
  torch::nn::Sequential layer1_{nullptr}, layer2_{nullptr}, layer3_{nullptr};
  torch::nn::Conv2d project_{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// `image` is [H, W, 3]. Throws InputError on odd dimensions.
FeatureMap encode_image(ImageEncoder& encoder, const torch::Tensor& image, const Camera& camera);

/// Bilinear lookup with border clamping, equivalent to grid_sample in
/// bilinear/border mode. `maps` [V, C, H, W], `grid` [V, P, 2] normalized
/// (x, y) in [-1, 1]; returns [V, P, C].
torch::Tensor bilinear_sample(const torch::Tensor& maps, const torch::Tensor& grid,
                              bool align_corners);

std::vector<ResidualFeature> sample_residual(std::span<const FeatureMap> feature_maps,
                                             const torch::Tensor& points);

/// Batched pixel-aligned sampling: features [V, C, h, w], points [P, 3].
/// Returns values [V, P, C] and validity [V, P].
std::pair<torch::Tensor, torch::Tensor> sample_residual(const torch::Tensor& features,
                                                        const CameraPack& cameras,
                                                        const torch::Tensor& points);

/// Projects world points [P, 3] into every view: returns normalized sampling
/// coordinates [V, P, 2] (x, y in [-1, 1] over the image) and in-frustum
/// validity [V, P].
std::pair<torch::Tensor, torch::Tensor> project_to_views(const CameraPack& cameras,
                                                         const torch::Tensor& points);

}  // namespace tpnerf
