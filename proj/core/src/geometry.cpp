#include "tpnerf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

torch::Tensor eigen_to_tensor(const Mat3& m) {
  auto t = torch::empty({3, 3}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a[i][j] = m(i, j);
  return t;
}

torch::Tensor eigen_to_tensor(const Vec3& v) {
  return torch::tensor({v.x(), v.y(), v.z()}, torch::kFloat64);
}

}  // namespace

void Camera::validate() const {
  if (width <= 0 || height <= 0 || width % 2 != 0 || height % 2 != 0) {
    std::ostringstream os;
    os << "camera size must be positive and even, got " << width << "x" << height;
    throw InputError(os.str());
  }
  const Mat3& k = intrinsics;
  if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0)
    throw InputError("camera intrinsics must be upper-triangular");
  if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0) || !(k(2, 2) > 0.0))
    throw InputError("camera intrinsics must have positive focal entries");
  const Mat3 r = rotation();
  const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err < 1e-6)) throw InputError("camera pose rotation is not orthonormal");
  if (r.determinant() < 0.0) throw InputError("camera pose rotation has determinant -1");
  const Eigen::RowVector4d last = pose.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    throw InputError("camera pose last row must be (0, 0, 0, 1)");
}

Vec3 Camera::world_to_camera(const Vec3& x) const {
  return rotation().transpose() * (x - center());
}

std::optional<Vec2> Camera::project(const Vec3& x) const {
  const Vec3 xc = world_to_camera(x);
  if (xc.z() <= 0.0) return std::nullopt;
  const Vec3 p = intrinsics * (xc / xc.z());
  return Vec2(p.x(), p.y());
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y,
                       int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right);

  Camera cam;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y);
  cam.intrinsics << f, 0, 0.5 * width, 0, f, 0.5 * height, 0, 0, 1;
  cam.pose.setIdentity();
  cam.pose.block<3, 1>(0, 0) = right;
  cam.pose.block<3, 1>(0, 1) = down;
  cam.pose.block<3, 1>(0, 2) = forward;
  cam.pose.block<3, 1>(0, 3) = eye;
  return cam;
}

void OrientedBox::validate() const {
  if (!(half_extents.array() > 0.0).all()) throw InputError("box half extents must be positive");
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err < 1e-6)) throw InputError("box rotation is not orthonormal");
}

bool OrientedBox::contains(const Vec3& x, double slack) const {
  const Vec3 local = rotation.transpose() * (x - center);
  return (local.cwiseAbs().array() <= half_extents.array() + slack).all();
}

std::array<Vec3, 8> OrientedBox::corners() const {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Vec3 sign((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    out[i] = center + rotation * sign.cwiseProduct(half_extents);
  }
  return out;
}

void SamplingConfig::validate() const {
  if (!(near > 0.0) || !(near < far)) throw InputError("sampling requires 0 < near < far");
  if (n_coarse < 1 || n_fine < 1) throw InputError("sampling requires n_coarse, n_fine >= 1");
}

std::vector<Ray> generate_rays(const Camera& camera, std::span<const PixelIndex> pixels) {
  const Mat3 k_inv = camera.intrinsics.inverse();
  const Mat3 r = camera.rotation();
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& px : pixels) {
    if (px.row < 0 || px.row >= camera.height || px.col < 0 || px.col >= camera.width) {
      std::ostringstream os;
      os << "pixel (" << px.row << ", " << px.col << ") outside " << camera.height << "x"
         << camera.width << " image";
      throw InputError(os.str());
    }
    const Vec3 dir_cam = k_inv * Vec3(px.col + 0.5, px.row + 0.5, 1.0);
    rays.push_back({camera.center(), (r * dir_cam).normalized()});
  }
  return rays;
}

ContractedPoint contract(const Vec3& x) {
  const double r = x.norm();
  if (r < 1.0) throw DomainError("contract: point lies inside the unit sphere");
  return {x / r, 1.0 / r};
}

SphereSplit ray_sphere_split(const Ray& ray, double t_min, double t_max) {
  if (!(t_min < t_max)) throw InputError("ray_sphere_split requires t_min < t_max");
  const double a = ray.direction.squaredNorm();
  const double b = ray.origin.dot(ray.direction);
  const double c = ray.origin.squaredNorm() - 1.0;
  const double disc = b * b - a * c;

  SphereSplit out;
  if (disc <= 0.0) {
    out.far = Interval{t_min, t_max};
    return out;
  }
  const double root = std::sqrt(disc);
  const double t_in = (-b - root) / a;
  const double t_out = (-b + root) / a;
  const double n0 = std::max(t_min, t_in);
  const double n1 = std::min(t_max, t_out);
  if (n0 < n1) out.near = Interval{n0, n1};
  const double f0 = std::max(t_min, t_out);
  if (f0 < t_max) out.far = Interval{f0, t_max};
  return out;
}

double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  z = splitmix64(z ^ (index * 0xD1B54A32D192ED03ULL));
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

std::vector<double> stratified_samples(Interval interval, int n, bool jitter, std::uint64_t seed) {
  if (!(interval.t0 < interval.t1)) throw InputError("stratified_samples: degenerate interval");
  if (n < 1) throw InputError("stratified_samples: n must be >= 1");
  const double width = interval.length() / n;
  std::vector<double> out(n);
  for (int k = 0; k < n; ++k) {
    const double offset = jitter ? hash_uniform(seed, 0, k) : 0.5;
    out[k] = interval.t0 + (k + offset) * width;
  }
  return out;
}

std::vector<double> importance_samples(std::span<const double> bin_edges,
                                       std::span<const double> weights, int n,
                                       std::uint64_t seed) {
  if (bin_edges.size() < 2 || weights.size() + 1 != bin_edges.size())
    throw InputError("importance_samples: need len(weights) == len(bin_edges) - 1");
  if (n < 1) throw InputError("importance_samples: n must be >= 1");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1]))
      throw InputError("importance_samples: bin edges must be increasing");
  for (double w : weights)
    if (w < 0.0) throw InputError("importance_samples: weights must be nonnegative");

  const auto edges =
      torch::tensor(std::vector<double>(bin_edges.begin(), bin_edges.end()), torch::kFloat64)
          .unsqueeze(0);
  const auto w =
      torch::tensor(std::vector<double>(weights.begin(), weights.end()), torch::kFloat64)
          .unsqueeze(0);
  const auto ids = torch::zeros({1}, torch::kInt64);
  const auto u = stratified_uniforms(ids, n, /*jitter=*/true, seed, 1, torch::kFloat64);
  const auto t = sample_pdf(edges, w, u).squeeze(0).contiguous();
  return {t.data_ptr<double>(), t.data_ptr<double>() + n};
}

std::optional<Interval> ray_box_intersect(const Ray& ray, const OrientedBox& box) {
  const Vec3 o = box.rotation.transpose() * (ray.origin - box.center);
  const Vec3 d = box.rotation.transpose() * ray.direction;
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double h = box.half_extents[i];
    if (std::abs(d[i]) < 1e-12) {
      if (std::abs(o[i]) > h) return std::nullopt;
      continue;
    }
    double lo = (-h - o[i]) / d[i];
    double hi = (h - o[i]) / d[i];
    if (lo > hi) std::swap(lo, hi);
    t_enter = std::max(t_enter, lo);
    t_exit = std::min(t_exit, hi);
  }
  if (!(t_enter < t_exit) || t_exit < 0.0) return std::nullopt;
  return Interval{t_enter, t_exit};
}

// ---------------------------------------------------------------------------

RayBatch RayBatch::slice(int64_t begin, int64_t end) const {
  return {origins.slice(0, begin, end), directions.slice(0, begin, end),
          ray_ids.slice(0, begin, end)};
}

RayBatch RayBatch::to(torch::Dtype dtype) const {
  return {origins.to(dtype), directions.to(dtype), ray_ids};
}

RayBatch generate_rays(const Camera& camera, const torch::Tensor& pixels, torch::Dtype dtype) {
  if (pixels.dim() != 2 || pixels.size(1) != 2) throw InputError("pixels must be [N, 2]");
  const auto px = pixels.to(torch::kInt64);
  const auto rows = px.select(1, 0);
  const auto cols = px.select(1, 1);
  if (px.numel() > 0 && (rows.min().item<int64_t>() < 0 ||
                         rows.max().item<int64_t>() >= camera.height ||
                         cols.min().item<int64_t>() < 0 ||
                         cols.max().item<int64_t>() >= camera.width))
    throw InputError("pixel index outside image bounds");

  const auto k_inv = eigen_to_tensor(Mat3(camera.intrinsics.inverse()));
  const auto rot = eigen_to_tensor(camera.rotation());
  const auto homog = torch::stack({cols.to(torch::kFloat64) + 0.5, rows.to(torch::kFloat64) + 0.5,
                                   torch::ones({px.size(0)}, torch::kFloat64)},
                                  1);
  auto dirs = homog.matmul(k_inv.t()).matmul(rot.t());
  dirs = dirs / dirs.norm(2, 1, true);
  auto origins = eigen_to_tensor(camera.center()).unsqueeze(0).expand({px.size(0), 3});
  return {origins.to(dtype).contiguous(), dirs.to(dtype).contiguous(),
          rows * camera.width + cols};
}

RayBatch generate_all_rays(const Camera& camera, torch::Dtype dtype) {
  const auto rows = torch::arange(camera.height, torch::kInt64);
  const auto cols = torch::arange(camera.width, torch::kInt64);
  const auto grid = torch::meshgrid({rows, cols}, "ij");
  const auto pixels = torch::stack({grid[0].reshape(-1), grid[1].reshape(-1)}, 1);
  return generate_rays(camera, pixels, dtype);
}

SphereSplitBatch ray_sphere_split(const RayBatch& rays, double t_min, double t_max) {
  if (!(t_min < t_max)) throw InputError("ray_sphere_split requires t_min < t_max");
  const auto& o = rays.origins;
  const auto& d = rays.directions;
  const auto a = (d * d).sum(-1);
  const auto b = (o * d).sum(-1);
  const auto c = (o * o).sum(-1) - 1.0;
  const auto disc = b * b - a * c;
  const auto hits = disc > 0.0;
  const auto root = torch::sqrt(torch::clamp_min(disc, 0.0));
  const auto t_in = (-b - root) / a;
  const auto t_out = (-b + root) / a;

  SphereSplitBatch out;
  out.near_t0 = torch::clamp_min(t_in, t_min);
  out.near_t1 = torch::clamp_max(t_out, t_max);
  out.near_valid = hits & (out.near_t0 < out.near_t1);
  out.far_t0 = torch::where(hits, torch::clamp_min(t_out, t_min), torch::full_like(t_out, t_min));
  out.far_t1 = torch::full_like(t_out, t_max);
  out.far_valid = out.far_t0 < out.far_t1;
  return out;
}

std::pair<torch::Tensor, torch::Tensor> stratified_samples(const torch::Tensor& t0,
                                                           const torch::Tensor& t1, int n,
                                                           const torch::Tensor& u) {
  if (n < 1) throw InputError("stratified_samples: n must be >= 1");
  const auto steps = torch::linspace(0.0, 1.0, n + 1, t0.options());
  const auto edges = t0.unsqueeze(-1) + (t1 - t0).unsqueeze(-1) * steps;
  const auto lo = edges.narrow(-1, 0, n);
  const auto width = edges.narrow(-1, 1, n) - lo;
  const auto offset = u.defined() ? u : torch::full_like(lo, 0.5);
  return {edges, lo + offset * width};
}

torch::Tensor sample_pdf(const torch::Tensor& edges, const torch::Tensor& weights,
                         const torch::Tensor& u) {
  torch::NoGradGuard no_grad;
  const int64_t bins = weights.size(-1);
  const auto w = weights.detach().clamp_min(0.0) + kPdfFloor;
  const auto pdf = w / w.sum(-1, true);
  const auto cdf = torch::cat({torch::zeros_like(pdf.narrow(-1, 0, 1)), pdf.cumsum(-1)}, -1);
  const auto idx = torch::searchsorted(cdf.contiguous(), u.contiguous(), /*out_int32=*/false,
                                       /*right=*/true);
  const auto below = torch::clamp(idx - 1, 0, bins - 1);
  const auto above = below + 1;
  const auto cdf_lo = cdf.gather(-1, below);
  const auto cdf_hi = cdf.gather(-1, above);
  const auto e_lo = edges.gather(-1, below);
  const auto e_hi = edges.gather(-1, above);
  const auto frac = torch::clamp((u - cdf_lo) / (cdf_hi - cdf_lo), 0.0, 1.0);
  return e_lo + frac * (e_hi - e_lo);
}

torch::Tensor jitter_uniforms(const torch::Tensor& ray_ids, int n, bool jitter, std::uint64_t seed,
                              std::uint64_t stream, torch::Dtype dtype) {
  if (!jitter) return {};
  const auto ids = ray_ids.to(torch::kInt64).contiguous();
  const int64_t rays = ids.size(0);
  auto out = torch::empty({rays, n}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  const int64_t* id = ids.data_ptr<int64_t>();
  for (int64_t r = 0; r < rays; ++r) {
    const std::uint64_t key = splitmix64(static_cast<std::uint64_t>(id[r]) ^ (stream << 48));
    for (int k = 0; k < n; ++k) acc[r][k] = hash_uniform(seed, key, k);
  }
  return out.to(dtype);
}

torch::Tensor stratified_uniforms(const torch::Tensor& ray_ids, int n, bool jitter,
                                  std::uint64_t seed, std::uint64_t stream, torch::Dtype dtype) {
  const auto k = torch::arange(n, torch::TensorOptions().dtype(dtype));
  const auto offset = jitter ? jitter_uniforms(ray_ids, n, true, seed, stream, dtype)
                             : torch::full({ray_ids.size(0), n}, 0.5, torch::dtype(dtype));
  return (k.unsqueeze(0) + offset) / static_cast<double>(n);
}

torch::Tensor t_at_radius(const RayBatch& rays, const torch::Tensor& radius) {
  const auto b = (rays.origins * rays.directions).sum(-1, true);
  const auto c = (rays.origins * rays.origins).sum(-1, true) - radius * radius;
  return -b + torch::sqrt(torch::clamp_min(b * b - c, 0.0));
}

BoxHitBatch ray_box_intersect(const RayBatch& rays, const OrientedBox& box) {
  const auto opts = rays.origins.options();
  const auto rot = eigen_to_tensor(box.rotation).to(opts);
  const auto center = eigen_to_tensor(box.center).to(opts);
  const auto half = eigen_to_tensor(box.half_extents).to(opts);
  const auto o = (rays.origins - center).matmul(rot);
  const auto d = rays.directions.matmul(rot);

  const auto tiny = d.abs() < 1e-12;
  const auto d_safe = torch::where(tiny, torch::full_like(d, 1e-12), d);
  const auto lo = (-half - o) / d_safe;
  const auto hi = (half - o) / d_safe;
  auto t_near = torch::minimum(lo, hi);
  auto t_far = torch::maximum(lo, hi);
  const auto inside_slab = o.abs() <= half;
  const double inf = std::numeric_limits<double>::infinity();
  t_near = torch::where(tiny, torch::where(inside_slab, torch::full_like(d, -inf),
                                           torch::full_like(d, inf)),
                        t_near);
  t_far = torch::where(tiny, torch::where(inside_slab, torch::full_like(d, inf),
                                          torch::full_like(d, -inf)),
                       t_far);
  BoxHitBatch out;
  out.t0 = std::get<0>(t_near.max(-1));
  out.t1 = std::get<0>(t_far.min(-1));
  out.hit = (out.t0 < out.t1) & (out.t1 >= 0.0);
  return out;
}

torch::Tensor contract(const torch::Tensor& points) {
  const auto r = points.norm(2, -1, true);
  return torch::cat({points / r, 1.0 / r}, -1);
}

}  // namespace tpnerf
