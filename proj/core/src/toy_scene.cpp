#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tpnerf/errors.hpp"
#include "tpnerf/scene_data.hpp"

namespace tpnerf {

namespace {

constexpr std::uint64_t kObjectStream = 100;
constexpr std::uint64_t kCameraStream = 200;

class Draw {
 public:
  Draw(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * hash_uniform(seed_, stream_, index_++);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

Mat3 yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

double bounding_radius(const ToyObject& o) {
  return o.kind == ToyObject::Kind::Sphere ? o.half_extents.x() : o.half_extents.norm();
}

std::string frame_name(const char* dir, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%03d.%s", dir, index, ext);
  return buf;
}

}  // namespace

void ToySceneSpec::validate() const {
  if (objects.empty() && (n_objects < 1 || n_objects > 4))
    throw InputError("toy scene: n_objects must be in [1, 4]");
  if (n_train_views < 1 || n_eval_views < 0) throw InputError("toy scene: invalid view counts");
  if (height < 2 || width < 2 || height % 2 || width % 2)
    throw InputError("toy scene: image size must be even and positive");
  if (!(camera_radius > 0 && camera_radius < 1)) throw InputError("toy scene: camera radius must be in (0, 1)");
  if (!(0 <= min_elevation_deg && min_elevation_deg <= max_elevation_deg && max_elevation_deg < 90))
    throw InputError("toy scene: invalid elevation range");
  if (!(fov_y_deg > 0 && fov_y_deg < 180)) throw InputError("toy scene: invalid field of view");
  if (!(ground_radius > 0)) throw InputError("toy scene: ground radius must be positive");
  for (const auto& o : objects) {
    for (const auto& corner : bounding_box(o, 0.0).corners())
      if (corner.norm() >= 1.0) throw InputError("toy scene: object extends outside the unit sphere");
  }
}

OrientedBox bounding_box(const ToyObject& object, double margin) {
  OrientedBox box;
  box.center = object.center;
  if (object.kind == ToyObject::Kind::Sphere) {
    box.half_extents = Vec3::Constant(object.half_extents.x() + margin);
  } else {
    box.half_extents = object.half_extents + Vec3::Constant(margin);
    box.rotation = yaw_rotation(object.yaw);
  }
  return box;
}

std::vector<ToyObject> sample_toy_objects(const ToySceneSpec& spec) {
  Draw draw(spec.seed, kObjectStream);
  std::vector<ToyObject> objects;
  for (int i = 0; i < spec.n_objects; ++i) {
    ToyObject o;
    for (int attempt = 0; attempt < 200; ++attempt) {
      o.kind = draw.uniform() < 0.5 ? ToyObject::Kind::Sphere : ToyObject::Kind::Box;
      if (o.kind == ToyObject::Kind::Sphere) {
        const double r = draw.uniform(0.10, 0.20);
        o.half_extents = Vec3::Constant(r);
      } else {
        o.half_extents = {draw.uniform(0.07, 0.15), draw.uniform(0.07, 0.15),
                          draw.uniform(0.07, 0.15)};
        o.yaw = draw.uniform(0.0, std::numbers::pi);
      }
      const double rho = 0.45 * std::sqrt(draw.uniform());
      const double phi = draw.uniform(0.0, 2.0 * std::numbers::pi);
      o.center = {rho * std::cos(phi), rho * std::sin(phi), o.half_extents.z()};
      bool clear = true;
      for (const auto& other : objects)
        if ((other.center - o.center).head<2>().norm() <
            bounding_radius(o) + bounding_radius(other) + 0.02)
          clear = false;
      if (clear) break;
    }
    o.albedo = {draw.uniform(0.15, 0.95), draw.uniform(0.15, 0.95), draw.uniform(0.15, 0.95)};
    objects.push_back(o);
  }
  return objects;
}

ToyHit trace_toy_ray(const ToySceneSpec& spec, const std::vector<ToyObject>& objects,
                     const Ray& ray) {
  constexpr double kMinT = 1e-9;
  ToyHit best;
  best.t = std::numeric_limits<double>::infinity();
  best.object = -2;
  Vec3 normal = Vec3::UnitZ();
  Vec3 albedo = spec.ground_color;

  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (o.kind == ToyObject::Kind::Sphere) {
      const Vec3 oc = ray.origin - o.center;
      const double b = oc.dot(ray.direction);
      const double c = oc.squaredNorm() - o.half_extents.x() * o.half_extents.x();
      const double disc = b * b - c;
      if (disc < 0) continue;
      const double root = std::sqrt(disc);
      double t = -b - root;
      if (t < kMinT) t = -b + root;
      if (t >= kMinT && t < best.t) {
        best.t = t;
        best.object = static_cast<int>(i);
        normal = (ray.at(t) - o.center).normalized();
        albedo = o.albedo;
      }
    } else {
      const Mat3 rot = yaw_rotation(o.yaw);
      const Vec3 lo = rot.transpose() * (ray.origin - o.center);
      const Vec3 ld = rot.transpose() * ray.direction;
      double t0 = -std::numeric_limits<double>::infinity();
      double t1 = std::numeric_limits<double>::infinity();
      int axis = 0;
      double sign = 1.0;
      bool miss = false;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(ld[a]) < 1e-15) {
          if (std::abs(lo[a]) > o.half_extents[a]) miss = true;
          continue;
        }
        double ta = (-o.half_extents[a] - lo[a]) / ld[a];
        double tb = (o.half_extents[a] - lo[a]) / ld[a];
        double s = -1.0;
        if (ta > tb) {
          std::swap(ta, tb);
          s = 1.0;
        }
        if (ta > t0) {
          t0 = ta;
          axis = a;
          sign = s;
        }
        t1 = std::min(t1, tb);
      }
      if (miss || t0 > t1 || t0 < kMinT) continue;
      if (t0 < best.t) {
        best.t = t0;
        best.object = static_cast<int>(i);
        Vec3 n = Vec3::Zero();
        n[axis] = sign;
        normal = rot * n;
        albedo = o.albedo;
      }
    }
  }

  if (ray.direction.z() < -1e-12) {
    const double t = -ray.origin.z() / ray.direction.z();
    const Vec3 p = ray.at(t);
    if (t >= kMinT && t < best.t && p.head<2>().norm() <= spec.ground_radius) {
      best.t = t;
      best.object = -1;
      normal = Vec3::UnitZ();
      // Soft low-frequency pattern so the ground is not textureless.
      albedo = spec.ground_color * (0.85 + 0.15 * std::cos(5.0 * p.x()) * std::cos(5.0 * p.y()));
    }
  }

  if (best.object == -2) {
    const double up = std::clamp(ray.direction.z(), 0.0, 1.0);
    const double w = std::sqrt(up);
    best.color = (1.0 - w) * spec.sky_horizon + w * spec.sky_zenith;
    if (ray.direction.z() < 0) best.color = 0.9 * spec.sky_horizon;
    best.t = 0.0;
    return best;
  }
  const Vec3 light = spec.light_direction.normalized();
  const double shade = 0.35 + 0.65 * std::max(0.0, normal.dot(light));
  best.color = (albedo * shade).cwiseMin(1.0).cwiseMax(0.0);
  return best;
}

Scene generate_toy_scene(const ToySceneSpec& input) {
  ToySceneSpec spec = input;
  if (spec.objects.empty()) spec.objects = sample_toy_objects(spec);
  spec.validate();

  Draw draw(spec.seed, kCameraStream);
  const int n_views = spec.n_train_views + spec.n_eval_views;
  const double deg = std::numbers::pi / 180.0;
  const double az0 = draw.uniform(0.0, 2.0 * std::numbers::pi);

  Scene scene;
  scene.manifest.version = kManifestVersion;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> depths;
  for (int v = 0; v < n_views; ++v) {
    const bool train = v < spec.n_train_views;
    const int k = train ? v : v - spec.n_train_views;
    const int count = train ? spec.n_train_views : spec.n_eval_views;
    const double slot = 2.0 * std::numbers::pi / count;
    // Eval cameras sit between the training azimuths.
    const double az = az0 + slot * (k + (train ? 0.0 : 0.5)) + draw.uniform(-0.25, 0.25) * slot;
    const double el = draw.uniform(spec.min_elevation_deg, spec.max_elevation_deg) * deg;
    const Vec3 eye = spec.camera_radius *
                     Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    const auto cam = Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), spec.fov_y_deg * deg,
                                     spec.width, spec.height);

    auto img = torch::empty({spec.height, spec.width, 3}, torch::kFloat32);
    auto depth = torch::empty({spec.height, spec.width}, torch::kFloat32);
    auto ia = img.accessor<float, 3>();
    auto da = depth.accessor<float, 2>();
    const Mat3 kinv = cam.intrinsics.inverse();
    const Mat3 rot = cam.rotation();
    for (int r = 0; r < spec.height; ++r) {
      for (int c = 0; c < spec.width; ++c) {
        Ray ray;
        ray.origin = cam.center();
        ray.direction = (rot * (kinv * Vec3(c + 0.5, r + 0.5, 1.0))).normalized();
        const auto hit = trace_toy_ray(spec, spec.objects, ray);
        for (int ch = 0; ch < 3; ++ch) ia[r][c][ch] = static_cast<float>(hit.color[ch]);
        da[r][c] = static_cast<float>(hit.t);
      }
    }
    // Quantize like the stored PNG so in-memory and on-disk scenes agree.
    images.push_back((img * 255.0f).round() / 255.0f);
    depths.push_back(depth);

    scene.cameras.push_back(cam);
    FrameEntry f;
    f.image_path = frame_name("images", v, "png");
    f.pose = cam.pose;
    f.intrinsics = cam.intrinsics;
    scene.manifest.frames.push_back(f);
    scene.manifest.depth_paths.push_back(frame_name("depth", v, "pfm"));
    (train ? scene.manifest.split.source_indices : scene.manifest.split.eval_indices).push_back(v);
  }
  for (const auto& o : spec.objects) scene.manifest.boxes.push_back(bounding_box(o));
  scene.images = torch::stack(images);
  scene.depths = torch::stack(depths);
  scene.depth_valid = scene.depths > 0;
  return scene;
}

}  // namespace tpnerf
