#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

namespace tpnerf {

struct LossConfig {
  double lambda_reg = 0.01;
  double lambda_lpips = 0.3;
  int lpips_start_epoch = 30;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// Mean squared error over all entries; throws InputError on shape mismatch.
torch::Tensor photometric_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Fixed convolutional feature extractor for the perceptual distance. The
/// default weights are drawn from a seeded generator; `load` replaces them
/// with weights from a tensor archive (keys "stage{i}.weight"/"stage{i}.bias").
class PerceptualBackboneImpl : public torch::nn::Module {
 public:
  explicit PerceptualBackboneImpl(std::uint64_t seed = 1234);

  /// [B, 3, H, W] -> feature maps of the three stages.
  std::vector<torch::Tensor> forward(const torch::Tensor& images);

  void load(const std::filesystem::path& weights);
  const std::string& description() const { return description_; }

 private:
  std::vector<torch::nn::Conv2d> stages_;
  std::string description_;
};
TORCH_MODULE(PerceptualBackbone);

/// Mean over stages of the spatially averaged squared distance between
/// channel-normalized feature maps. Patches are [P, P, 3] or [B, P, P, 3],
/// P >= 16.
torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target,
                              PerceptualBackbone& backbone);

/// 10 log10(1 / MSE); identical images give 100.
double psnr(const torch::Tensor& pred, const torch::Tensor& target);

inline constexpr double kPsnrCap = 100.0;

/// Gaussian-windowed SSIM averaged over channels ([H, W] or [H, W, C]),
/// evaluated on windows fully inside the image.
double ssim(const torch::Tensor& pred, const torch::Tensor& target, int window = 11,
            double sigma = 1.5);

struct DepthErrors {
  double l1 = 0.0;
  double rmse = 0.0;
};

DepthErrors depth_errors(const torch::Tensor& pred, const torch::Tensor& gt,
                         const torch::Tensor& valid);

struct LossBreakdown {
  double photo = 0.0;
  double reg = 0.0;  ///< λ_reg-weighted regularizer, both branches
  double lpips = 0.0;  ///< λ_lpips-weighted perceptual term, 0 before the start epoch
  double total = 0.0;
  bool lpips_active = false;
};

/// photo + λ_reg (reg_near + reg_far) + [epoch >= start] λ_lpips perceptual.
torch::Tensor combine_losses(const torch::Tensor& photo, const torch::Tensor& reg_near,
                             const torch::Tensor& reg_far, const torch::Tensor& perceptual,
                             const LossConfig& config, int epoch, LossBreakdown* breakdown);

}  // namespace tpnerf
