#include "tpnerf/triplane.hpp"

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace F = torch::nn::functional;

namespace {

void append_conv_bn_relu(torch::nn::Sequential& seq, int in, int out, int stride) {
  seq->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
  seq->push_back(torch::nn::BatchNorm2d(out));
  seq->push_back(torch::nn::ReLU());
}

torch::nn::Sequential conv_bn_relu(int in, int out, int stride) {
  torch::nn::Sequential seq;
  append_conv_bn_relu(seq, in, out, stride);
  return seq;
}

torch::Tensor resize(const torch::Tensor& x, int64_t h, int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

void GridSpec::validate() const {
  if (resolution < 2) throw InputError("grid resolution must be >= 2");
  if (!(lo < hi)) throw InputError("grid bounds must satisfy lo < hi");
}

torch::Tensor GridSpec::axis_centers(torch::Dtype dtype) const {
  const double cell = cell_size();
  return torch::arange(resolution, torch::kFloat64).mul(cell).add(lo + 0.5 * cell).to(dtype);
}

torch::Tensor GridSpec::cell_centers(torch::Dtype dtype) const {
  const auto c = axis_centers(dtype);
  const auto mesh = torch::meshgrid({c, c, c}, "ij");  // z, y, x
  return torch::stack({mesh[2], mesh[1], mesh[0]}, -1);
}

Vec2 TriplaneSet::world_to_plane(double a, double b) const {
  const double span = grid.hi - grid.lo;
  return {(a - grid.lo) / span * static_cast<double>(cols() - 1),
          (b - grid.lo) / span * static_cast<double>(rows() - 1)};
}

DepthEncoderImpl::DepthEncoderImpl(int channels, int hidden)
    : channels_(channels),
      fc1_(register_module("fc1", torch::nn::Linear(channels + 6, hidden))),
      fc2_(register_module("fc2", torch::nn::Linear(hidden, channels))) {}

torch::Tensor DepthEncoderImpl::forward(const torch::Tensor& features,
                                        const torch::Tensor& geometry) {
  // fc1 over the concatenation, evaluated blockwise to avoid materializing it.
  const auto& w = fc1_->weight;
  auto h = F::linear(features, w.narrow(1, 0, channels_), fc1_->bias) +
           F::linear(geometry, w.narrow(1, channels_, 6));
  return fc2_(torch::relu(h));
}

AggregatorImpl::AggregatorImpl(int channels, int hidden)
    : channels_(channels),
      fc1_(register_module("fc1", torch::nn::Linear(channels + 1, hidden))),
      fc2_(register_module("fc2", torch::nn::Linear(hidden, 1))) {}

torch::Tensor AggregatorImpl::forward(const torch::Tensor& features,
                                      const torch::Tensor& coordinate) {
  const auto& w = fc1_->weight;
  auto h = F::linear(features, w.narrow(1, 0, channels_), fc1_->bias) +
           coordinate.unsqueeze(-1) * w.narrow(1, channels_, 1).squeeze(1);
  return fc2_(torch::relu(h)).squeeze(-1);
}

PlaneRefinerImpl::PlaneRefinerImpl(int channels) {
  const int half = std::max(channels / 2, 1);
  const int quarter = std::max(channels / 4, 1);
  torch::nn::Sequential down;
  append_conv_bn_relu(down, channels, half, 2);
  append_conv_bn_relu(down, half, quarter, 2);
  append_conv_bn_relu(down, quarter, quarter, 2);
  down_ = register_module("down", down);
  mid_ = register_module("mid", conv_bn_relu(quarter, quarter, 1));
  out_ = register_module("out", conv_bn_relu(quarter, quarter, 1));
}

torch::Tensor PlaneRefinerImpl::forward(const torch::Tensor& plane, int64_t out_h,
                                        int64_t out_w) {
  auto x = down_->forward(plane);
  x = resize(x, 2 * x.size(2), 2 * x.size(3));
  x = mid_->forward(x);
  x = resize(x, out_h, out_w);
  return out_->forward(x);
}

FeatureVolume backproject(const torch::Tensor& features, const CameraPack& cameras,
                          const GridSpec& grid) {
  grid.validate();
  const int64_t k = grid.resolution;
  const auto centers = grid.cell_centers(features.scalar_type()).reshape({-1, 3});
  auto [values, valid] = sample_residual(features, cameras, centers);
  return {values.reshape({cameras.size(), k, k, k, features.size(1)}), grid};
}

FeatureVolume backproject(const FeatureMap& feature_map, const GridSpec& grid) {
  const std::array<Camera, 1> cams{feature_map.source_camera};
  return backproject(feature_map.data.unsqueeze(0),
                     CameraPack::from(cams, feature_map.data.scalar_type()), grid);
}

torch::Tensor depth_geometry(const CameraPack& cameras, const GridSpec& grid,
                             torch::Dtype dtype) {
  const auto centers = grid.cell_centers(dtype);  // [K, K, K, 3]
  const auto xc = cameras.to_camera(centers);     // [V, K, K, K, 3]
  const auto cam_centers = cameras.centers.to(dtype).view({-1, 1, 1, 1, 3});
  auto toward_camera = cam_centers - centers.unsqueeze(0);
  toward_camera = toward_camera / toward_camera.norm(2, -1, true).clamp_min(1e-12);
  return torch::cat({xc.to(dtype), toward_camera}, -1);
}

DepthEncodedVolume encode_depth(DepthEncoder& depth_mlp, const FeatureVolume& volume,
                                const CameraPack& cameras) {
  const auto geometry = depth_geometry(cameras, volume.grid, volume.data.scalar_type());
  return {depth_mlp->forward(volume.data, geometry), volume.grid};
}

RawPlanes aggregate(torch::nn::ModuleList& aggregators, const DepthEncodedVolume& volume) {
  const auto& v = volume.data;  // [V, Kz, Ky, Kx, C]
  const int64_t k = volume.grid.resolution;
  const auto axis = volume.grid.axis_centers(v.scalar_type());

  struct Reduction {
    int64_t dim;
    std::vector<int64_t> coord_shape;
  };
  // xy reduces z (dim 1), xz reduces y (dim 2), yz reduces x (dim 3).
  const std::array<Reduction, 3> reductions{{{1, {1, k, 1, 1}}, {2, {1, 1, k, 1}},
                                             {3, {1, 1, 1, k}}}};
  RawPlanes out;
  for (int p = 0; p < 3; ++p) {
    const auto& red = reductions[p];
    auto coord = axis.view(red.coord_shape).expand({v.size(0), k, k, k});
    auto logits = aggregators[p]->as<Aggregator>()->forward(v, coord);
    auto weights = torch::softmax(logits, red.dim);
    auto plane = (weights.unsqueeze(-1) * v).sum(red.dim);  // [V, K, K, C]
    out.planes[p] = plane.permute({0, 3, 1, 2}).contiguous();
  }
  return out;
}

TriplaneSet refine_planes(torch::nn::ModuleList& plane_convs, const RawPlanes& raw,
                          const GridSpec& grid, int64_t target_h, int64_t target_w) {
  if (target_h < 1 || target_w < 1) throw InputError("refine_planes: invalid target size");
  TriplaneSet out;
  out.grid = grid;
  for (int p = 0; p < 3; ++p)
    out.planes[p] = plane_convs[p]->as<PlaneRefiner>()->forward(raw.planes[p], target_h, target_w);
  return out;
}

TriplaneSet build_triplanes(TriplaneNetwork& net, const torch::Tensor& features,
                            const CameraPack& cameras, const GridSpec& grid) {
  const auto volume = backproject(features, cameras, grid);
  const auto encoded = encode_depth(net.depth_mlp, volume, cameras);
  const auto raw = aggregate(net.aggregators, encoded);
  auto set = refine_planes(net.plane_convs, raw, grid, features.size(2), features.size(3));
  set.feature_source = features;
  return set;
}

torch::Tensor sample_triplane(const TriplaneSet& triplanes, const torch::Tensor& points) {
  const auto& grid = triplanes.grid;
  const auto n = (points.to(triplanes.planes[0].scalar_type()) - grid.lo) *
                     (2.0 / (grid.hi - grid.lo)) -
                 1.0;
  const auto x = n.select(-1, 0);
  const auto y = n.select(-1, 1);
  const auto z = n.select(-1, 2);
  const std::array<torch::Tensor, 3> coords{torch::stack({x, y}, -1), torch::stack({x, z}, -1),
                                            torch::stack({y, z}, -1)};
  const int64_t views = triplanes.planes[0].size(0);
  std::vector<torch::Tensor> parts;
  for (int p = 0; p < 3; ++p) {
    const auto g = coords[p].unsqueeze(0).expand({views, -1, 2});
    parts.push_back(bilinear_sample(triplanes.planes[p], g, true));
  }
  return torch::cat(parts, -1);
}

}  // namespace tpnerf
