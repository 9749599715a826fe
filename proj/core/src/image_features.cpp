#include "tpnerf/image_features.hpp"

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                               .stride(stride)
                               .padding(kernel / 2)
                               .bias(false));
}

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride)
      : conv1_(register_module("conv1", conv(in, out, 3, stride))),
        bn1_(register_module("bn1", torch::nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", conv(out, out, 3, 1))),
        bn2_(register_module("bn2", torch::nn::BatchNorm2d(out))) {
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", torch::nn::Sequential(conv(in, out, 1, stride), torch::nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1_(conv1_(x)));
    y = bn2_(conv2_(y));
    return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
  }

 private:
  torch::nn::Conv2d conv1_;
  torch::nn::BatchNorm2d bn1_;
  torch::nn::Conv2d conv2_;
  torch::nn::BatchNorm2d bn2_;
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

torch::nn::Sequential make_stage(int in, int out, int blocks, int stride) {
  torch::nn::Sequential stage;
  for (int i = 0; i < std::max(blocks, 1); ++i) {
    stage->push_back(BasicBlock(i == 0 ? in : out, out, i == 0 ? stride : 1));
  }
  return stage;
}

torch::Tensor resize(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

CameraPack CameraPack::from(std::span<const Camera> cameras, torch::Dtype dtype) {
  if (cameras.empty()) throw InputError("CameraPack needs at least one camera");
  const auto v = static_cast<int64_t>(cameras.size());
  auto k = torch::empty({v, 3, 3}, torch::kFloat64);
  auto r = torch::empty({v, 3, 3}, torch::kFloat64);
  auto c = torch::empty({v, 3}, torch::kFloat64);
  auto ka = k.accessor<double, 3>();
  auto ra = r.accessor<double, 3>();
  auto ca = c.accessor<double, 2>();
  for (int64_t i = 0; i < v; ++i) {
    const auto& cam = cameras[i];
    if (cam.width != cameras[0].width || cam.height != cameras[0].height)
      throw InputError("all source cameras must share one image size");
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        ka[i][a][b] = cam.intrinsics(a, b);
        ra[i][a][b] = cam.pose(a, b);
      }
      ca[i][a] = cam.pose(a, 3);
    }
  }
  return {k.to(dtype), r.to(dtype), c.to(dtype), cameras[0].width, cameras[0].height};
}

torch::Tensor CameraPack::to_camera(const torch::Tensor& points) const {
  const int64_t v = size();
  const auto flat = points.reshape({1, -1, 3});
  // x_c = R^T (x - c)  <=>  row vectors (x - c) R
  auto xc = (flat - centers.unsqueeze(1)).matmul(rotations);
  auto shape = points.sizes().vec();
  shape.insert(shape.begin(), v);
  return xc.reshape(shape);
}

ImageEncoderImpl::ImageEncoderImpl(int channels, std::vector<int> blocks_per_stage)
    : channels_(channels) {
  if (channels < 8) throw InputError("encoder needs at least 8 output channels");
  while (blocks_per_stage.size() < 3) blocks_per_stage.push_back(1);
  const int base = channels / 8;
  stem_ = register_module("stem", torch::nn::Sequential(conv(3, base, 7, 2),
                                                        torch::nn::BatchNorm2d(base),
                                                        torch::nn::ReLU()));
  layer1_ = register_module("layer1", make_stage(base, base, blocks_per_stage[0], 1));
  layer2_ = register_module("layer2", make_stage(base, 2 * base, blocks_per_stage[1], 2));
  layer3_ = register_module("layer3", make_stage(2 * base, 4 * base, blocks_per_stage[2], 2));
  if (8 * base != channels) {
    project_ = register_module("project", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                                                                8 * base, channels, 1)));
  }
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw InputError("encoder expects [V, 3, H, W]");
  const int64_t h = images.size(2);
  const int64_t w = images.size(3);
  if (h % 2 != 0 || w % 2 != 0) throw InputError("encoder input dimensions must be even");
  // ImageNet-style input normalization.
  const auto x = (images - 0.45) / 0.225;
  const auto f0 = stem_->forward(x);
  const auto pooled = F::max_pool2d(f0, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  const auto f1 = layer1_->forward(pooled);
  const auto f2 = layer2_->forward(f1);
  const auto f3 = layer3_->forward(f2);
  auto out = torch::cat({resize(f0, h / 2, w / 2), resize(f1, h / 2, w / 2),
                         resize(f2, h / 2, w / 2), resize(f3, h / 2, w / 2)},
                        1);
  if (project_) out = project_(out);
  return out;
}

FeatureMap encode_image(ImageEncoder& encoder, const torch::Tensor& image, const Camera& camera) {
  if (image.dim() != 3 || image.size(2) != 3) throw InputError("image must be [H, W, 3]");
  if (image.size(0) % 2 != 0 || image.size(1) % 2 != 0)
    throw InputError("image dimensions must be even");
  const auto batch = image.permute({2, 0, 1}).unsqueeze(0);
  return {encoder->forward(batch).squeeze(0), camera};
}

torch::Tensor bilinear_sample(const torch::Tensor& maps, const torch::Tensor& grid,
                              bool align_corners) {
  if (maps.dim() != 4 || grid.dim() != 3 || grid.size(0) != maps.size(0) || grid.size(2) != 2)
    throw InputError("bilinear_sample expects maps [V, C, H, W] and grid [V, P, 2]");
  const auto sampled = F::grid_sample(maps, grid.unsqueeze(1),
                                      F::GridSampleFuncOptions()
                                          .mode(torch::kBilinear)
                                          .padding_mode(torch::kBorder)
                                          .align_corners(align_corners));  // [V, C, 1, P]
  return sampled.squeeze(2).permute({0, 2, 1});
}

std::pair<torch::Tensor, torch::Tensor> project_to_views(const CameraPack& cameras,
                                                         const torch::Tensor& points) {
  const auto xc = cameras.to_camera(points);  // [V, P, 3]
  const auto z = xc.select(-1, 2);
  const auto in_front = z > 1e-8;
  const auto z_safe = torch::where(in_front, z, torch::ones_like(z));
  const auto x = xc.select(-1, 0) / z_safe;
  const auto y = xc.select(-1, 1) / z_safe;
  const auto& k = cameras.intrinsics;
  const auto fx = k.select(1, 0).select(1, 0).unsqueeze(1);
  const auto skew = k.select(1, 0).select(1, 1).unsqueeze(1);
  const auto cx = k.select(1, 0).select(1, 2).unsqueeze(1);
  const auto fy = k.select(1, 1).select(1, 1).unsqueeze(1);
  const auto cy = k.select(1, 1).select(1, 2).unsqueeze(1);
  const auto u = fx * x + skew * y + cx;
  const auto v = fy * y + cy;
  const double w = cameras.width;
  const double h = cameras.height;
  const auto valid = in_front & (u >= 0.0) & (u < w) & (v >= 0.0) & (v < h);
  auto grid = torch::stack({2.0 * u / w - 1.0, 2.0 * v / h - 1.0}, -1);
  grid = torch::clamp(grid, -2.0, 2.0);
  return {grid, valid};
}

std::pair<torch::Tensor, torch::Tensor> sample_residual(const torch::Tensor& features,
                                                        const CameraPack& cameras,
                                                        const torch::Tensor& points) {
  auto [grid, valid] = project_to_views(cameras, points);
  auto values = bilinear_sample(features, grid.to(features.dtype()), false);
  values = values * valid.unsqueeze(-1).to(values.dtype());
  return {values, valid};
}

std::vector<ResidualFeature> sample_residual(std::span<const FeatureMap> feature_maps,
                                             const torch::Tensor& points) {
  std::vector<ResidualFeature> out;
  out.reserve(feature_maps.size());
  for (const auto& fm : feature_maps) {
    const std::array<Camera, 1> cams{fm.source_camera};
    const auto pack = CameraPack::from(cams, fm.data.scalar_type());
    auto [values, valid] = sample_residual(fm.data.unsqueeze(0), pack, points);
    out.push_back({values.squeeze(0), valid.squeeze(0)});
  }
  return out;
}

}  // namespace tpnerf
