#include "tpnerf/model.hpp"

#include <algorithm>

#include "tpnerf/errors.hpp"

namespace tpnerf {

void ModelConfig::validate() const {
  if (channels < 8 || channels % 8 != 0) throw InputError("channels must be a positive multiple of 8");
  grid.validate();
  if (depth_hidden < 1 || aggregator_hidden < 1) throw InputError("hidden widths must be positive");
  if (encoder_blocks.empty() || encoder_blocks.size() > 3)
    throw InputError("encoder_blocks needs one to three stage depths");
  for (int b : encoder_blocks)
    if (b < 1) throw InputError("encoder stage depth must be >= 1");
}

NerfModelImpl::NerfModelImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.init_seed);
  const int c = config_.channels;
  encoder = register_module("encoder", ImageEncoder(c, config_.encoder_blocks));

  if (config_.use_triplane) {
    triplane.depth_mlp = register_module("depth_mlp", DepthEncoder(c, config_.depth_hidden));
    triplane.aggregators = register_module("aggregators", torch::nn::ModuleList());
    triplane.plane_convs = register_module("plane_convs", torch::nn::ModuleList());
    for (int p = 0; p < 3; ++p) {
      triplane.aggregators->push_back(Aggregator(c, config_.aggregator_hidden));
      triplane.plane_convs->push_back(PlaneRefiner(c));
    }
  }

  DecoderConfig near;
  near.position_dim = 3;
  near.triplane_dim = config_.use_triplane ? 3 * config_.triplane_channels() : 0;
  near.residual_dim = c;
  near.hidden = config_.decoder_hidden;
  near.layers = config_.decoder_layers;
  near.skip_layer = config_.decoder_skip;
  near.pool_layer = config_.decoder_pool;
  near.encoding = config_.encoding;
  decoder_near = register_module("decoder_near", RadianceDecoder(near));
  if (config_.use_near_far) {
    DecoderConfig far = near;
    far.position_dim = 4;
    decoder_far = register_module("decoder_far", RadianceDecoder(far));
  }
}

std::vector<std::string> NerfModelImpl::group_names() const {
  std::vector<std::string> out;
  const auto children = named_children();
  for (const auto& g : all_parameter_groups())
    if (children.contains(g)) out.push_back(g);
  return out;
}

std::vector<torch::Tensor> NerfModelImpl::group_parameters(const std::string& group) const {
  const auto children = named_children();
  if (!children.contains(group)) throw InputError("model has no parameter group '" + group + "'");
  return children[group]->parameters();
}

std::map<std::string, torch::Tensor> NerfModelImpl::state() const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : named_parameters()) out[item.key()] = item.value();
  for (const auto& item : named_buffers()) out[item.key()] = item.value();
  return out;
}

void NerfModelImpl::set_group_trainable(const std::string& group, bool trainable) {
  for (auto& p : group_parameters(group)) p.set_requires_grad(trainable);
}

std::string group_of(const std::string& qualified_name) {
  return qualified_name.substr(0, qualified_name.find('.'));
}

}  // namespace tpnerf
