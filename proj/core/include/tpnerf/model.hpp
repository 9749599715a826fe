#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "tpnerf/image_features.hpp"
#include "tpnerf/radiance_decoder.hpp"
#include "tpnerf/triplane.hpp"

namespace tpnerf {

struct ModelConfig {
  int channels = 512;  ///< C; triplane channels are C / 4
  GridSpec grid;
  std::vector<int> encoder_blocks{3, 4, 6};
  int depth_hidden = 512;
  int aggregator_hidden = 512;
  int decoder_hidden = 128;
  int decoder_layers = 7;
  int decoder_skip = 3;
  int decoder_pool = 4;
  PositionalEncodingConfig encoding;
  bool use_triplane = true;  ///< false: residual features only
  bool use_near_far = true;  ///< false: one decoder over the whole ray
  std::uint64_t init_seed = 0;

  void validate() const;
  int triplane_channels() const { return channels / 4; }
  bool operator==(const ModelConfig&) const = default;
};

inline const std::vector<std::string>& all_parameter_groups() {
  static const std::vector<std::string> groups{"encoder",     "depth_mlp",    "aggregators",
                                               "plane_convs", "decoder_near", "decoder_far"};
  return groups;
}

/// Every learnable component, registered under its parameter-group name.
/// Groups that the configuration disables are not constructed.
class NerfModelImpl : public torch::nn::Module {
 public:
  explicit NerfModelImpl(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  ImageEncoder encoder{nullptr};
  TriplaneNetwork triplane;
  RadianceDecoder decoder_near{nullptr};
  RadianceDecoder decoder_far{nullptr};

  /// Names of the groups present in this model, in canonical order.
  std::vector<std::string> group_names() const;
  /// Parameters of one group; throws InputError for an absent group.
  std::vector<torch::Tensor> group_parameters(const std::string& group) const;
  /// Parameters and buffers keyed by fully qualified name ("group.sub.name").
  std::map<std::string, torch::Tensor> state() const;

  void set_group_trainable(const std::string& group, bool trainable);

 private:
  ModelConfig config_;
};
TORCH_MODULE(NerfModel);

/// Group of a fully qualified parameter name.
std::string group_of(const std::string& qualified_name);

}  // namespace tpnerf
