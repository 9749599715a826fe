#include "tpnerf/metrics.hpp"

#include <cmath>

#include "tpnerf/errors.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace tpnerf {

namespace F = torch::nn::functional;

void LossConfig::validate() const {
  if (lambda_reg < 0 || lambda_lpips < 0) throw InputError("loss weights must be nonnegative");
  if (lpips_start_epoch < 0) throw InputError("lpips_start_epoch must be nonnegative");
}

torch::Tensor photometric_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw InputError("photometric_loss: shape mismatch");
  return (pred - target).square().mean();
}

PerceptualBackboneImpl::PerceptualBackboneImpl(std::uint64_t seed) {
  const std::array<int, 4> widths{3, 16, 32, 64};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (int i = 0; i < 3; ++i) {
    auto conv = torch::nn::Conv2d(
        torch::nn::Conv2dOptions(widths[i], widths[i + 1], 3).stride(i == 0 ? 1 : 2).padding(1));
    torch::NoGradGuard no_grad;
    const double bound = std::sqrt(6.0 / (widths[i] * 9));
    conv->weight.copy_(
        torch::empty(conv->weight.sizes()).uniform_(-bound, bound, gen));
    conv->bias.zero_();
    stages_.push_back(register_module("stage" + std::to_string(i), conv));
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
  description_ = "random-conv3 seed " + std::to_string(seed);
}

std::vector<torch::Tensor> PerceptualBackboneImpl::forward(const torch::Tensor& images) {
  std::vector<torch::Tensor> out;
  auto x = (images - 0.5) / 0.25;
  for (auto& conv : stages_) {
    x = torch::relu(conv(x));
    out.push_back(x);
  }
  return out;
}

void PerceptualBackboneImpl::load(const std::filesystem::path& weights) {
  const auto archive = load_archive(weights);
  torch::NoGradGuard no_grad;
  for (const auto& item : named_parameters()) {
    const auto it = archive.tensors.find(item.key());
    if (it == archive.tensors.end())
      throw LoadError("perceptual weights " + weights.string() + " lack '" + item.key() + "'");
    if (it->second.sizes() != item.value().sizes())
      throw LoadError("perceptual weights " + weights.string() + ": shape mismatch for '" +
                      item.key() + "'");
    item.value().copy_(it->second);
  }
  description_ = "weights " + weights.filename().string();
}

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& target,
                              PerceptualBackbone& backbone) {
  if (pred.sizes() != target.sizes()) throw InputError("perceptual_loss: shape mismatch");
  const auto batch = pred.dim() == 3 ? pred.unsqueeze(0) : pred;
  const auto ref = target.dim() == 3 ? target.unsqueeze(0) : target;
  if (batch.dim() != 4 || batch.size(3) != 3) throw InputError("perceptual_loss expects RGB patches");
  if (batch.size(1) < 16 || batch.size(2) < 16)
    throw InputError("perceptual_loss: patch must be at least 16x16");
  const auto dtype = backbone->parameters()[0].scalar_type();
  const auto fa = backbone->forward(batch.permute({0, 3, 1, 2}).to(dtype));
  const auto fb = backbone->forward(ref.permute({0, 3, 1, 2}).to(dtype));
  torch::Tensor total = torch::zeros({}, fa[0].options());
  for (std::size_t s = 0; s < fa.size(); ++s) {
    const auto na = fa[s] / (fa[s].square().sum(1, true).sqrt() + 1e-10);
    const auto nb = fb[s] / (fb[s].square().sum(1, true).sqrt() + 1e-10);
    total = total + (na - nb).square().sum(1).mean();
  }
  return total / static_cast<double>(fa.size());
}

double psnr(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw InputError("psnr: shape mismatch");
  const double mse = (pred.to(torch::kFloat64) - target.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const torch::Tensor& pred, const torch::Tensor& target, int window, double sigma) {
  if (pred.sizes() != target.sizes()) throw InputError("ssim: shape mismatch");
  if (pred.dim() != 2 && pred.dim() != 3) throw InputError("ssim expects [H, W] or [H, W, C]");
  if (window < 1 || sigma <= 0) throw InputError("ssim: invalid window");
  if (pred.size(0) < window || pred.size(1) < window)
    throw InputError("ssim: image smaller than the window");
  auto to_nchw = [](const torch::Tensor& x) {
    auto y = x.to(torch::kFloat64);
    if (y.dim() == 2) y = y.unsqueeze(-1);
    return y.permute({2, 0, 1}).unsqueeze(1);  // [C, 1, H, W]
  };
  const auto a = to_nchw(pred);
  const auto b = to_nchw(target);
  const auto coords = torch::arange(window, torch::kFloat64) - (window - 1) / 2.0;
  auto g = torch::exp(-coords.square() / (2.0 * sigma * sigma));
  g = g / g.sum();
  const auto kernel = torch::outer(g, g).view({1, 1, window, window});
  auto filt = [&](const torch::Tensor& x) { return F::conv2d(x, kernel); };
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto mu_a = filt(a);
  const auto mu_b = filt(b);
  const auto var_a = filt(a * a) - mu_a.square();
  const auto var_b = filt(b * b) - mu_b.square();
  const auto cov = filt(a * b) - mu_a * mu_b;
  const auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2));
  return map.mean().item<double>();
}

DepthErrors depth_errors(const torch::Tensor& pred, const torch::Tensor& gt,
                         const torch::Tensor& valid) {
  if (pred.sizes() != gt.sizes() || valid.sizes() != gt.sizes())
    throw InputError("depth_errors: shape mismatch");
  const auto mask = valid.to(torch::kBool);
  const int64_t n = mask.sum().item<int64_t>();
  if (n == 0) throw InputError("depth_errors: empty validity mask");
  const auto diff = (pred.to(torch::kFloat64) - gt.to(torch::kFloat64)).masked_select(mask);
  return {diff.abs().mean().item<double>(), diff.square().mean().sqrt().item<double>()};
}

torch::Tensor combine_losses(const torch::Tensor& photo, const torch::Tensor& reg_near,
                             const torch::Tensor& reg_far, const torch::Tensor& perceptual,
                             const LossConfig& config, int epoch, LossBreakdown* breakdown) {
  // Bookkeeping in double so the breakdown adds up to the total exactly.
  const auto photo64 = photo.to(torch::kFloat64);
  auto reg = reg_near.defined() ? reg_near.to(torch::kFloat64) : torch::zeros_like(photo64);
  if (reg_far.defined()) reg = reg + reg_far.to(torch::kFloat64);
  const auto reg_term = config.lambda_reg * reg;
  auto total = photo64 + reg_term;
  const bool lpips_active = epoch >= config.lpips_start_epoch && perceptual.defined();
  torch::Tensor lpips_term;
  if (lpips_active) {
    lpips_term = config.lambda_lpips * perceptual.to(torch::kFloat64);
    total = total + lpips_term;
  }
  if (breakdown) {
    breakdown->photo = photo64.item<double>();
    breakdown->reg = reg_term.item<double>();
    breakdown->lpips = lpips_active ? lpips_term.item<double>() : 0.0;
    breakdown->total = total.item<double>();
    breakdown->lpips_active = lpips_active;
  }
  return total;
}

}  // namespace tpnerf
