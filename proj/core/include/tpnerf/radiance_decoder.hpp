#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "tpnerf/geometry.hpp"

namespace tpnerf {

struct PositionalEncodingConfig {
  int n_freq_pos = 10;
  int n_freq_dir = 4;
  bool include_input = true;

  bool operator==(const PositionalEncodingConfig&) const = default;

  int output_dim(int input_dim, int n_freq) const {
    return input_dim * (2 * n_freq + (include_input ? 1 : 0));
  }
};

/// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(n-1) pi v), cos(2^(n-1) pi v)],
/// each block covering all k coordinates.
torch::Tensor positional_encode(const torch::Tensor& v, int n_freq, bool include_input);
std::vector<double> positional_encode(std::span<const double> v, int n_freq, bool include_input);

enum class Branch { Near, Far };

/// Near iff |x|^2 < 1; points on the unit sphere go to the far branch.
Branch route(const Vec3& x);
torch::Tensor route_near(const torch::Tensor& points);

struct DecoderConfig {
  int position_dim = 3;  ///< 3 for the near branch, 4 (contracted) for the far branch
  int triplane_dim = 0;  ///< 3G, or 0 when triplane features are disabled
  int residual_dim = 0;  ///< C
  int hidden = 128;
  int layers = 7;
  int skip_layer = 3;  ///< 1-based layer that receives the conditioning again
  int pool_layer = 4;  ///< views are mean-pooled after this layer
  PositionalEncodingConfig encoding;

  void validate() const;
  int conditioning_dim() const;
};

struct RadianceSamples {
  torch::Tensor sigma;  ///< [P], >= 0
  torch::Tensor rgb;    ///< [P, 3], in [0, 1]
};

/// Rendering MLP: per-view trunk up to the pooling layer, validity-weighted
/// mean across views, shared trunk, softplus density head and a two-layer
/// sigmoid color head conditioned on the encoded viewing direction.
class RadianceDecoderImpl : public torch::nn::Module {
 public:
  explicit RadianceDecoderImpl(DecoderConfig config);

  /// positions [P, position_dim], directions [P, 3], triplane [V, P, 3G]
  /// (undefined when disabled), residual [V, P, C], validity [V, P].
  RadianceSamples forward(const torch::Tensor& positions, const torch::Tensor& directions,
                          const torch::Tensor& triplane, const torch::Tensor& residual,
                          const torch::Tensor& validity);

  const DecoderConfig& config() const { return config_; }

 private:
  DecoderConfig config_;
  torch::nn::ModuleList trunk_{nullptr};
  torch::nn::Linear density_{nullptr};
  torch::nn::Linear color_hidden_{nullptr};
  torch::nn::Linear color_out_{nullptr};
};
TORCH_MODULE(RadianceDecoder);

/// Mean over the view axis (dim 0) restricted to valid views; points seen by
/// no view fall back to the plain mean.
torch::Tensor pool_views(const torch::Tensor& features, const torch::Tensor& validity);

}  // namespace tpnerf
