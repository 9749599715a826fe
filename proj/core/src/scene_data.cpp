#include "tpnerf/scene_data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <set>

#include <json.hpp>

#include "tpnerf/errors.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace tpnerf {

using nlohmann::json;

namespace {

template <int R, int C>
json matrix_to_json(const Eigen::Matrix<double, R, C>& m) {
  json rows = json::array();
  for (int r = 0; r < R; ++r) {
    json row = json::array();
    for (int c = 0; c < C; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != R) throw LoadError(what + ": expected " + std::to_string(R) + " rows");
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r) {
    if (!j[r].is_array() || j[r].size() != C)
      throw LoadError(what + ": expected " + std::to_string(C) + " columns");
    for (int c = 0; c < C; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw LoadError(what + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_rigid(const Mat4& pose, const std::string& what) {
  const Mat3 r = pose.topLeftCorner<3, 3>();
  if (!pose.allFinite()) throw InputError(what + ": pose has non-finite entries");
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw InputError(what + ": pose rotation is not orthonormal");
  if (r.determinant() <= 0.0) throw InputError(what + ": pose rotation is a reflection");
  if ((pose.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    throw InputError(what + ": pose last row must be (0, 0, 0, 1)");
}

}  // namespace

bool operator==(const OrientedBox& a, const OrientedBox& b) {
  return a.center == b.center && a.half_extents == b.half_extents && a.rotation == b.rotation;
}

void SceneManifest::validate() const {
  if (version != kManifestVersion)
    throw InputError("unsupported manifest version " + std::to_string(version));
  const int n = static_cast<int>(frames.size());
  for (int i = 0; i < n; ++i) {
    const std::string what = "frame " + std::to_string(i) + " (" + frames[i].image_path + ")";
    if (frames[i].image_path.empty()) throw InputError(what + ": empty image_path");
    check_rigid(frames[i].pose, what);
    const auto& k = frames[i].intrinsics;
    if (!(k(0, 0) > 0 && k(1, 1) > 0) || k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 ||
        k(2, 2) != 1)
      throw InputError(what + ": invalid intrinsics");
  }
  if (!depth_paths.empty() && static_cast<int>(depth_paths.size()) != n)
    throw InputError("depth_paths must be empty or list one path per frame");
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    try {
      boxes[b].validate();
    } catch (const InputError& e) {
      throw InputError("box " + std::to_string(b) + ": " + e.what());
    }
  }
  std::set<int> seen;
  for (int i : split.source_indices) {
    if (i < 0 || i >= n) throw InputError("split source index out of range: " + std::to_string(i));
    seen.insert(i);
  }
  for (int i : split.eval_indices) {
    if (i < 0 || i >= n) throw InputError("split eval index out of range: " + std::to_string(i));
    if (seen.contains(i))
      throw InputError("frame " + std::to_string(i) + " is in both source and eval splits");
  }
}

std::string SceneManifest::to_json() const {
  json j;
  j["version"] = version;
  json frames_j = json::array();
  for (const auto& f : frames) {
    frames_j.push_back({{"image_path", f.image_path},
                        {"pose", matrix_to_json<4, 4>(f.pose)},
                        {"intrinsics", matrix_to_json<3, 3>(f.intrinsics)}});
  }
  j["frames"] = frames_j;
  if (!depth_paths.empty()) j["depth_paths"] = depth_paths;
  json boxes_j = json::array();
  for (const auto& b : boxes) {
    boxes_j.push_back({{"center", vec_to_json(b.center)},
                       {"half_extents", vec_to_json(b.half_extents)},
                       {"rotation", matrix_to_json<3, 3>(b.rotation)}});
  }
  j["boxes"] = boxes_j;
  j["split"] = {{"source_indices", split.source_indices}, {"eval_indices", split.eval_indices}};
  return j.dump(2) + "\n";
}

SceneManifest SceneManifest::from_json(std::string_view text, const std::string& source) {
  SceneManifest m;
  try {
    const auto j = json::parse(text);
    m.version = j.at("version").get<int>();
    const auto& frames = j.at("frames");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      const std::string what = source + ": frame " + std::to_string(i);
      FrameEntry e;
      e.image_path = f.at("image_path").get<std::string>();
      e.pose = matrix_from_json<4, 4>(f.at("pose"), what + " pose");
      e.intrinsics = matrix_from_json<3, 3>(f.at("intrinsics"), what + " intrinsics");
      m.frames.push_back(std::move(e));
    }
    if (j.contains("depth_paths")) m.depth_paths = j["depth_paths"].get<std::vector<std::string>>();
    if (j.contains("boxes")) {
      for (std::size_t b = 0; b < j["boxes"].size(); ++b) {
        const auto& bj = j["boxes"][b];
        const std::string what = source + ": box " + std::to_string(b);
        OrientedBox box;
        box.center = vec_from_json(bj.at("center"), what + " center");
        box.half_extents = vec_from_json(bj.at("half_extents"), what + " half_extents");
        box.rotation = matrix_from_json<3, 3>(bj.at("rotation"), what + " rotation");
        m.boxes.push_back(box);
      }
    }
    const auto& split = j.at("split");
    m.split.source_indices = split.at("source_indices").get<std::vector<int>>();
    m.split.eval_indices = split.at("eval_indices").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw LoadError(source + ": " + e.what());
  }
  try {
    m.validate();
  } catch (const InputError& e) {
    throw LoadError(source + ": " + e.what());
  }
  return m;
}

SourceViews Scene::views(const std::vector<int64_t>& indices) const {
  SourceViews out;
  for (int64_t i : indices) {
    if (i < 0 || i >= size()) throw InputError("view index out of range");
    out.cameras.push_back(cameras[i]);
  }
  out.images = images.index_select(0, torch::tensor(indices, torch::kInt64));
  return out;
}

Scene load_scene(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "scene.json";
  if (!std::filesystem::exists(manifest_path))
    throw LoadError("missing manifest " + manifest_path.string());
  Scene scene;
  scene.manifest = SceneManifest::from_json(read_file(manifest_path), manifest_path.string());
  const auto& m = scene.manifest;

  std::vector<torch::Tensor> images;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const auto path = dir / m.frames[i].image_path;
    if (!std::filesystem::exists(path)) throw LoadError("missing image " + path.string());
    auto img = read_png(path);
    Camera cam;
    cam.intrinsics = m.frames[i].intrinsics;
    cam.pose = m.frames[i].pose;
    cam.height = static_cast<int>(img.size(0));
    cam.width = static_cast<int>(img.size(1));
    try {
      cam.validate();
    } catch (const InputError& e) {
      throw LoadError(path.string() + ": " + e.what());
    }
    if (!images.empty() && img.sizes() != images[0].sizes())
      throw LoadError(path.string() + ": all frames must share one image size");
    scene.cameras.push_back(cam);
    images.push_back(img);
  }
  if (images.empty()) throw LoadError(manifest_path.string() + ": scene has no frames");
  scene.images = torch::stack(images);

  if (!m.depth_paths.empty()) {
    std::vector<torch::Tensor> depths;
    for (const auto& rel : m.depth_paths) {
      const auto path = dir / rel;
      if (!std::filesystem::exists(path)) throw LoadError("missing depth map " + path.string());
      auto d = read_pfm(path);
      if (d.dim() != 2 || d.size(0) != images[0].size(0) || d.size(1) != images[0].size(1))
        throw LoadError(path.string() + ": depth map size does not match its image");
      depths.push_back(d);
    }
    scene.depths = torch::stack(depths);
    scene.depth_valid = scene.depths > 0;
  }
  return scene;
}

void save_scene(const std::filesystem::path& dir, const Scene& scene) {
  scene.manifest.validate();
  const auto& m = scene.manifest;
  if (static_cast<int64_t>(m.frames.size()) != scene.images.size(0))
    throw InputError("save_scene: manifest and image counts differ");
  std::filesystem::create_directories(dir);
  write_file(dir / "scene.json", m.to_json());
  for (std::size_t i = 0; i < m.frames.size(); ++i)
    write_png(dir / m.frames[i].image_path, scene.images[static_cast<int64_t>(i)]);
  if (!m.depth_paths.empty()) {
    if (!scene.has_depth()) throw InputError("save_scene: manifest lists depth maps but scene has none");
    for (std::size_t i = 0; i < m.depth_paths.size(); ++i) {
      auto d = scene.depths[static_cast<int64_t>(i)];
      if (scene.depth_valid.defined())
        d = torch::where(scene.depth_valid[static_cast<int64_t>(i)], d, torch::zeros_like(d));
      write_pfm(dir / m.depth_paths[i], d);
    }
  }
}

Similarity normalization_transform(const std::vector<Camera>& cameras) {
  if (cameras.empty()) throw InputError("normalize_scene needs at least one camera");
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& cam : cameras) {
    const Vec3 d = cam.rotation().col(2).normalized();
    const Mat3 p = Mat3::Identity() - d * d.transpose();
    a += p;
    b += p * cam.center();
  }
  // Minimum-norm solution: a single camera (or parallel axes) leaves the
  // component along the axes undetermined.
  Vec3 target = a.completeOrthogonalDecomposition().solve(b);
  if (target.norm() < 1e-12) target.setZero();

  Similarity s;
  s.translation = -target;
  double max_dist = 0.0;
  for (const auto& cam : cameras) max_dist = std::max(max_dist, (cam.center() - target).norm());
  const double limit = 1.0 - kNormalizeEpsilon;
  if (max_dist > limit * (1.0 + 1e-12)) s.scale = limit / max_dist;
  return s;
}

Camera transform_camera(const Camera& camera, const Similarity& s) {
  Camera out = camera;
  out.pose.topRightCorner<3, 1>() = s.apply(camera.center());
  return out;
}

OrientedBox transform_box(const OrientedBox& box, const Similarity& s) {
  OrientedBox out = box;
  out.center = s.apply(box.center);
  out.half_extents = box.half_extents * s.scale;
  return out;
}

Scene normalize_scene(const Scene& scene) {
  const auto s = normalization_transform(scene.cameras);
  Scene out = scene;
  if (s.is_identity()) return out;
  for (auto& cam : out.cameras) cam = transform_camera(cam, s);
  for (std::size_t i = 0; i < out.manifest.frames.size(); ++i)
    out.manifest.frames[i].pose.topRightCorner<3, 1>() =
        s.apply(scene.manifest.frames[i].pose.topRightCorner<3, 1>());
  for (auto& box : out.manifest.boxes) box = transform_box(box, s);
  if (scene.has_depth()) out.depths = scene.depths * s.scale;
  return out;
}

std::vector<int64_t> spread_views(const std::vector<Camera>& cameras,
                                  const std::vector<int>& candidates, int n) {
  if (n < 1) throw InputError("need at least one view");
  if (n > static_cast<int>(candidates.size()))
    throw InputError("requested " + std::to_string(n) + " views but only " +
                     std::to_string(candidates.size()) + " are available");
  std::vector<int64_t> chosen{candidates[0]};
  std::vector<double> dist(candidates.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(chosen.size()) < n) {
    const Vec3 last = cameras.at(chosen.back()).center();
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      dist[i] = std::min(dist[i], (cameras.at(candidates[i]).center() - last).norm());
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    chosen.push_back(candidates[best]);
  }
  return chosen;
}

}  // namespace tpnerf
