#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpnerf/geometry.hpp"
#include "tpnerf/renderer.hpp"

namespace tpnerf {

// ---------------------------------------------------------------------------
// Image files

/// 8-bit RGB PNG -> [H, W, 3] float32 in [0, 1].
torch::Tensor read_png(const std::filesystem::path& path);
/// [H, W, 3] in [0, 1] -> 8-bit RGB PNG (values rounded to the nearest level).
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Portable float map, little-endian ("Pf" for [H, W], "PF" for [H, W, 3]).
/// Rows are stored bottom-up as the format prescribes.
std::string encode_pfm(const torch::Tensor& values);
torch::Tensor decode_pfm(std::string_view bytes, const std::string& source = "pfm");
void write_pfm(const std::filesystem::path& path, const torch::Tensor& values);
torch::Tensor read_pfm(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

struct FrameEntry {
  std::string image_path;  ///< relative to the scene directory
  Mat4 pose = Mat4::Identity();
  Mat3 intrinsics = Mat3::Identity();

  bool operator==(const FrameEntry&) const = default;
};

struct SceneSplit {
  std::vector<int> source_indices;
  std::vector<int> eval_indices;

  bool operator==(const SceneSplit&) const = default;
};

struct SceneManifest {
  int version = 1;
  std::vector<FrameEntry> frames;
  std::vector<std::string> depth_paths;  ///< empty, or one per frame
  std::vector<OrientedBox> boxes;
  SceneSplit split;

  /// Structural checks that do not touch the file system.
  void validate() const;
  std::string to_json() const;
  static SceneManifest from_json(std::string_view text, const std::string& source = "manifest");
};

bool operator==(const OrientedBox& a, const OrientedBox& b);

inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Scenes

struct Scene {
  SceneManifest manifest;
  std::vector<Camera> cameras;
  torch::Tensor images;       ///< [N, H, W, 3] float32
  torch::Tensor depths;       ///< [N, H, W] ray distance, 0 where invalid; undefined if absent
  torch::Tensor depth_valid;  ///< [N, H, W] bool

  int64_t size() const { return static_cast<int64_t>(cameras.size()); }
  bool has_depth() const { return depths.defined(); }
  SourceViews views(const std::vector<int64_t>& indices) const;
};

/// Reads scene.json and every referenced file under `dir`.
Scene load_scene(const std::filesystem::path& dir);
/// Writes scene.json, images and depth maps (paths taken from the manifest).
void save_scene(const std::filesystem::path& dir, const Scene& scene);

struct Similarity {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();  ///< x' = scale * (x + translation)

  Vec3 apply(const Vec3& x) const { return scale * (x + translation); }
  bool is_identity() const { return scale == 1.0 && translation.isZero(0.0); }
};

inline constexpr double kNormalizeEpsilon = 1e-3;

/// Similarity that moves the least-squares intersection of the optical axes
/// to the origin and shrinks the scene so the farthest camera sits at radius
/// 1 - ε. Scenes already inside that radius are not enlarged.
Similarity normalization_transform(const std::vector<Camera>& cameras);
Scene normalize_scene(const Scene& scene);
Camera transform_camera(const Camera& camera, const Similarity& s);
OrientedBox transform_box(const OrientedBox& box, const Similarity& s);

/// `n` indices from `candidates` whose camera centers are spread out
/// (greedy farthest point, starting from the first candidate).
std::vector<int64_t> spread_views(const std::vector<Camera>& cameras,
                                  const std::vector<int>& candidates, int n);

// ---------------------------------------------------------------------------
// Procedural toy scenes

struct ToyObject {
  enum class Kind { Sphere, Box } kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Constant(0.1);  ///< radius in x for spheres
  double yaw = 0.0;                          ///< boxes only
  Vec3 albedo = Vec3::Constant(0.7);
};

struct ToySceneSpec {
  std::uint64_t seed = 0;
  int n_objects = 2;  ///< 1-4; used when `objects` is empty
  std::vector<ToyObject> objects;
  Vec3 ground_color{0.45, 0.42, 0.38};
  Vec3 sky_horizon{0.80, 0.85, 0.92};
  Vec3 sky_zenith{0.35, 0.55, 0.85};
  Vec3 light_direction{0.4, 0.3, 0.85};
  double ground_radius = 2.0;
  int n_train_views = 20;
  int n_eval_views = 5;
  int height = 64;
  int width = 64;
  double camera_radius = 1.0 - kNormalizeEpsilon;
  double min_elevation_deg = 15.0;
  double max_elevation_deg = 40.0;
  double fov_y_deg = 60.0;

  void validate() const;
};

/// Renders every view with an analytic ray tracer. Depth is the ray distance
/// to the first hit, 0 (invalid) for sky pixels.
Scene generate_toy_scene(const ToySceneSpec& spec);

/// Randomized objects for `spec.seed` (what generate_toy_scene uses when
/// `spec.objects` is empty).
std::vector<ToyObject> sample_toy_objects(const ToySceneSpec& spec);

/// Tight oriented box around an object (spheres get their bounding cube).
OrientedBox bounding_box(const ToyObject& object, double margin = 1e-3);

struct ToyHit {
  double t = 0.0;
  int object = -1;  ///< -1 ground, -2 sky, otherwise object index
  Vec3 color = Vec3::Zero();
};

/// Color and first hit of one ray in a toy scene.
ToyHit trace_toy_ray(const ToySceneSpec& spec, const std::vector<ToyObject>& objects,
                     const Ray& ray);

}  // namespace tpnerf
