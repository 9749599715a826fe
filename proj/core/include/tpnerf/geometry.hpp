#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace tpnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Pinhole camera. Camera frame is x right, y down, z forward; `pose` maps
/// camera coordinates to world coordinates.
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat4 pose = Mat4::Identity();
  int width = 0;
  int height = 0;

  /// Throws InputError when any invariant (upper-triangular intrinsics with
  /// positive focals, orthonormal rotation, even positive size) is violated.
  void validate() const;

  Mat3 rotation() const { return pose.topLeftCorner<3, 3>(); }
  Vec3 center() const { return pose.topRightCorner<3, 1>(); }
  Vec3 world_to_camera(const Vec3& x) const;
  /// Pixel coordinates (u, v) of a world point, or nullopt behind the camera.
  std::optional<Vec2> project(const Vec3& x) const;

  /// Camera at `eye` looking at `target` with world `up`, vertical field of
  /// view in radians and principal point at the image center.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y,
                        int width, int height);
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

struct PixelIndex {
  int row = 0;
  int col = 0;
};

/// Ray parameter range [t0, t1].
struct Interval {
  double t0 = 0.0;
  double t1 = 0.0;

  double length() const { return t1 - t0; }
  bool operator==(const Interval&) const = default;
};

/// Inverted-sphere coordinates of a point outside the unit sphere.
struct ContractedPoint {
  Vec3 unit_dir = Vec3::UnitX();
  double inv_radius = 1.0;
};

struct SphereSplit {
  std::optional<Interval> near;
  std::optional<Interval> far;
};

struct OrientedBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
  Mat3 rotation = Mat3::Identity();  ///< box frame to world

  void validate() const;
  bool contains(const Vec3& x, double slack = 0.0) const;
  std::array<Vec3, 8> corners() const;
};

struct SamplingConfig {
  double near = 0.02;
  double far = 3.0;
  int n_coarse = 64;
  int n_fine = 64;
  bool stratified_jitter = true;

  void validate() const;
};

std::vector<Ray> generate_rays(const Camera& camera, std::span<const PixelIndex> pixels);

/// Throws DomainError for points strictly inside the unit sphere.
ContractedPoint contract(const Vec3& x);

/// Splits [t_min, t_max] into the part inside the unit sphere and the part
/// after the ray leaves it.
SphereSplit ray_sphere_split(const Ray& ray, double t_min, double t_max);

std::vector<double> stratified_samples(Interval interval, int n, bool jitter, std::uint64_t seed);

/// Inverse-CDF samples from the piecewise-constant density proportional to
/// `weights` (+1e-5 per bin) over the bins delimited by `bin_edges`.
std::vector<double> importance_samples(std::span<const double> bin_edges,
                                       std::span<const double> weights, int n,
                                       std::uint64_t seed);

/// Slab test in the box frame.
std::optional<Interval> ray_box_intersect(const Ray& ray, const OrientedBox& box);

/// Stateless uniform draw in [0, 1) keyed by (seed, stream, index).
double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Per-bin CDF floor used by importance sampling.
inline constexpr double kPdfFloor = 1e-5;

// ---------------------------------------------------------------------------
// Batched variants used by the renderer. Tensors are [R, ...] over rays.

struct RayBatch {
  torch::Tensor origins;     ///< [R, 3]
  torch::Tensor directions;  ///< [R, 3], unit length
  torch::Tensor ray_ids;     ///< [R] int64, keys the jitter streams

  int64_t size() const { return origins.size(0); }
  RayBatch slice(int64_t begin, int64_t end) const;
  RayBatch to(torch::Dtype dtype) const;
};

/// Rays for every (row, col) in `pixels` ([N, 2] int64). `ray_ids` are the
/// flat pixel indices row * width + col.
RayBatch generate_rays(const Camera& camera, const torch::Tensor& pixels,
                       torch::Dtype dtype = torch::kFloat32);
RayBatch generate_all_rays(const Camera& camera, torch::Dtype dtype = torch::kFloat32);

struct SphereSplitBatch {
  torch::Tensor near_t0, near_t1, near_valid;  ///< [R], [R], [R] bool
  torch::Tensor far_t0, far_t1, far_valid;
};

SphereSplitBatch ray_sphere_split(const RayBatch& rays, double t_min, double t_max);

/// Bin edges [R, n + 1] and samples [R, n]. `u` ([R, n] in [0,1)) places each
/// sample inside its bin; an undefined `u` yields bin midpoints.
std::pair<torch::Tensor, torch::Tensor> stratified_samples(const torch::Tensor& t0,
                                                           const torch::Tensor& t1, int n,
                                                           const torch::Tensor& u);

/// Batched inverse-CDF sampling. `edges` [R, B + 1] increasing, `weights`
/// [R, B] nonnegative, `u` [R, n] sorted in [0, 1). Returns sorted [R, n].
torch::Tensor sample_pdf(const torch::Tensor& edges, const torch::Tensor& weights,
                         const torch::Tensor& u);

/// Stratified uniforms u_k = (k + U_k) / n with U_k from hash_uniform keyed by
/// ray id, or midpoints (k + 0.5) / n when `jitter` is false.
torch::Tensor stratified_uniforms(const torch::Tensor& ray_ids, int n, bool jitter,
                                  std::uint64_t seed, std::uint64_t stream,
                                  torch::Dtype dtype);

/// Per-sample jitter U in [0,1) ([R, n]) keyed by ray id, or undefined when
/// `jitter` is false.
torch::Tensor jitter_uniforms(const torch::Tensor& ray_ids, int n, bool jitter, std::uint64_t seed,
                              std::uint64_t stream, torch::Dtype dtype);

/// Ray parameter t where the ray (origin inside or entering the sphere) is at
/// distance `radius` from the origin on its outgoing branch.
torch::Tensor t_at_radius(const RayBatch& rays, const torch::Tensor& radius);

struct BoxHitBatch {
  torch::Tensor t0, t1, hit;  ///< [R]
};

BoxHitBatch ray_box_intersect(const RayBatch& rays, const OrientedBox& box);

/// [N, 3] inverted-sphere coordinates (unit direction, 1/r) -> [N, 4].
torch::Tensor contract(const torch::Tensor& points);

}  // namespace tpnerf
