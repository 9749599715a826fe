#include "tpnerf/radiance_decoder.hpp"

#include <cmath>
#include <numbers>

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace F = torch::nn::functional;

torch::Tensor positional_encode(const torch::Tensor& v, int n_freq, bool include_input) {
  if (n_freq < 0) throw InputError("positional_encode: n_freq must be >= 0");
  std::vector<torch::Tensor> parts;
  if (include_input) parts.push_back(v);
  for (int l = 0; l < n_freq; ++l) {
    const auto scaled = v * (std::ldexp(1.0, l) * std::numbers::pi);
    parts.push_back(torch::sin(scaled));
    parts.push_back(torch::cos(scaled));
  }
  if (parts.empty()) return v.narrow(-1, 0, 0);
  return torch::cat(parts, -1);
}

std::vector<double> positional_encode(std::span<const double> v, int n_freq, bool include_input) {
  if (n_freq < 0) throw InputError("positional_encode: n_freq must be >= 0");
  std::vector<double> out;
  out.reserve(v.size() * (2 * n_freq + 1));
  if (include_input) out.insert(out.end(), v.begin(), v.end());
  for (int l = 0; l < n_freq; ++l) {
    const double f = std::ldexp(1.0, l) * std::numbers::pi;
    for (double x : v) out.push_back(std::sin(f * x));
    for (double x : v) out.push_back(std::cos(f * x));
  }
  return out;
}

Branch route(const Vec3& x) { return x.squaredNorm() < 1.0 ? Branch::Near : Branch::Far; }

torch::Tensor route_near(const torch::Tensor& points) {
  return (points * points).sum(-1) < 1.0;
}

void DecoderConfig::validate() const {
  if (position_dim != 3 && position_dim != 4)
    throw InputError("decoder position_dim must be 3 or 4");
  if (hidden < 1) throw InputError("decoder hidden width must be positive");
  if (!(1 <= skip_layer && skip_layer <= pool_layer && pool_layer <= layers))
    throw InputError("decoder needs 1 <= skip_layer <= pool_layer <= layers");
  if (skip_layer == 1) throw InputError("decoder skip_layer must be > 1");
  if (encoding.n_freq_pos < 0 || encoding.n_freq_dir < 0)
    throw InputError("positional encoding frequencies must be >= 0");
}

int DecoderConfig::conditioning_dim() const {
  return encoding.output_dim(position_dim, encoding.n_freq_pos) + triplane_dim + residual_dim;
}

RadianceDecoderImpl::RadianceDecoderImpl(DecoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const int cond = config_.conditioning_dim();
  const int h = config_.hidden;
  trunk_ = register_module("trunk", torch::nn::ModuleList());
  for (int layer = 1; layer <= config_.layers; ++layer) {
    int in = h;
    if (layer == 1) in = cond;
    if (layer == config_.skip_layer) in = h + cond;
    trunk_->push_back(torch::nn::Linear(in, h));
  }
  density_ = register_module("density", torch::nn::Linear(h, 1));
  const int dir_dim = config_.encoding.output_dim(3, config_.encoding.n_freq_dir);
  color_hidden_ = register_module("color_hidden", torch::nn::Linear(h + dir_dim, h));
  color_out_ = register_module("color_out", torch::nn::Linear(h, 3));
}

torch::Tensor pool_views(const torch::Tensor& features, const torch::Tensor& validity) {
  if (!validity.defined()) return features.mean(0);
  auto w = validity.to(features.dtype());
  const auto seen = w.sum(0, true) > 0;
  w = torch::where(seen, w, torch::ones_like(w));
  return (features * w.unsqueeze(-1)).sum(0) / w.sum(0).unsqueeze(-1);
}

RadianceSamples RadianceDecoderImpl::forward(const torch::Tensor& positions,
                                             const torch::Tensor& directions,
                                             const torch::Tensor& triplane,
                                             const torch::Tensor& residual,
                                             const torch::Tensor& validity) {
  const auto& cfg = config_;
  if (positions.size(-1) != cfg.position_dim)
    throw InputError("decoder: unexpected conditioning position arity");
  int64_t views = 0;
  if (residual.defined()) views = residual.size(0);
  if (triplane.defined()) views = triplane.size(0);
  if (views == 0) throw InputError("decoder: at least one source view is required");
  const int64_t points = positions.size(0);

  const auto pe = positional_encode(positions, cfg.encoding.n_freq_pos, cfg.encoding.include_input);
  if (cfg.triplane_dim > 0 && (!triplane.defined() || triplane.size(-1) != cfg.triplane_dim))
    throw InputError("decoder: triplane feature width mismatch");
  if (cfg.residual_dim > 0 && (!residual.defined() || residual.size(-1) != cfg.residual_dim))
    throw InputError("decoder: residual feature width mismatch");

  // Layer 1 and the skip layer both read the conditioning vector
  // [pe, triplane, residual]. Their weights are applied block by block, so the
  // encoding shared by all views is projected once per point.
  const int64_t hidden = cfg.hidden;
  auto first = trunk_[0]->as<torch::nn::Linear>();
  auto skip = trunk_[cfg.skip_layer - 1]->as<torch::nn::Linear>();
  const auto w_cond = torch::cat({first->weight, skip->weight.narrow(1, hidden, cfg.conditioning_dim())}, 0);
  int64_t col = pe.size(-1);
  auto proj = F::linear(pe, w_cond.narrow(1, 0, col)).unsqueeze(0).expand({views, points, 2 * hidden});
  if (cfg.triplane_dim > 0) {
    proj = proj + F::linear(triplane, w_cond.narrow(1, col, cfg.triplane_dim));
    col += cfg.triplane_dim;
  }
  if (cfg.residual_dim > 0) proj = proj + F::linear(residual, w_cond.narrow(1, col, cfg.residual_dim));
  const auto skip_input = proj.narrow(-1, hidden, hidden);

  torch::Tensor h = torch::relu(proj.narrow(-1, 0, hidden) + first->bias);
  if (cfg.pool_layer == 1) h = pool_views(h, validity);
  for (int layer = 2; layer <= cfg.layers; ++layer) {
    if (layer == cfg.skip_layer) {
      auto pre = F::linear(h, skip->weight.narrow(1, 0, hidden), skip->bias);
      // Views are pooled no earlier than the skip layer.
      h = torch::relu(pre + skip_input);
    } else {
      h = torch::relu(trunk_[layer - 1]->as<torch::nn::Linear>()->forward(h));
    }
    if (layer == cfg.pool_layer) h = pool_views(h, validity);
  }

  RadianceSamples out;
  out.sigma = torch::softplus(density_(h)).squeeze(-1);
  const auto dir_pe =
      positional_encode(directions, cfg.encoding.n_freq_dir, cfg.encoding.include_input);
  const auto c = torch::relu(color_hidden_(torch::cat({h, dir_pe.to(h.dtype())}, -1)));
  out.rgb = torch::sigmoid(color_out_(c));
  return out;
}

}  // namespace tpnerf
