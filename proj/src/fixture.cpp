#include "dietfield/fixture.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <optional>

#include "dietfield/container.hpp"
#include "dietfield/error.hpp"
#include "dietfield/posedist.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::fixture {

using Eigen::Vector3d;

std::string to_string(SceneKind kind) { return kind == SceneKind::TexturedCube ? "textured-cube" : "two-sphere"; }

SceneKind scene_kind_from_string(const std::string& name) {
  if (name == "textured-cube") return SceneKind::TexturedCube;
  if (name == "two-sphere") return SceneKind::TwoSphere;
  throw ValidationError("unknown fixture scene '" + name + "' (expected textured-cube or two-sphere)");
}

void FixtureSpec::validate() const {
  if (size < 1) throw ValidationError("fixture: size must be >= 1");
  if (views < 1) throw ValidationError("fixture: views must be >= 1");
  if (supersample < 1) throw ValidationError("fixture: supersample must be >= 1");
  if (!(radius_min > 1.5) || radius_max < radius_min) {
    throw ValidationError("fixture: need 1.5 < radius_min <= radius_max (cameras must stay outside the scene)");
  }
  if (!(camera_angle_x > 0.0 && camera_angle_x < 3.1)) throw ValidationError("fixture: camera_angle_x out of range");
}

nlohmann::json FixtureSpec::to_json() const {
  return {{"scene", to_string(kind)}, {"size", size},
          {"views", views},           {"radius_min", radius_min},
          {"radius_max", radius_max}, {"camera_angle_x", camera_angle_x},
          {"supersample", supersample}, {"seed", seed}};
}

FixtureSpec FixtureSpec::from_json(const nlohmann::json& j) {
  FixtureSpec s;
  s.kind = scene_kind_from_string(j.value("scene", to_string(s.kind)));
  s.size = j.value("size", s.size);
  s.views = j.value("views", s.views);
  s.radius_min = j.value("radius_min", s.radius_min);
  s.radius_max = j.value("radius_max", s.radius_max);
  s.camera_angle_x = j.value("camera_angle_x", s.camera_angle_x);
  s.supersample = j.value("supersample", s.supersample);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vector3d color = Vector3d::Zero();
};

const Vector3d kLight = Vector3d(0.4, 0.3, 0.85).normalized();

Vector3d shade(const Vector3d& albedo, const Vector3d& normal) {
  return albedo * (0.35 + 0.65 * std::max(0.0, normal.dot(kLight)));
}

// Cube of half-size 0.6 rotated 30 degrees about z, each face a 4 x 4 checkerboard of its color.
void hit_cube(const Vector3d& o, const Vector3d& d, Hit& best) {
  static const Eigen::Matrix3d rot = Eigen::AngleAxisd(0.5235987755982988, Vector3d::UnitZ()).toRotationMatrix();
  static const Vector3d face_colors[6] = {{0.85, 0.25, 0.2}, {0.2, 0.7, 0.3},  {0.2, 0.35, 0.85},
                                          {0.9, 0.75, 0.2},  {0.7, 0.3, 0.75}, {0.25, 0.75, 0.8}};
  constexpr double h = 0.6;
  const Vector3d lo = rot.transpose() * o, ld = rot.transpose() * d;
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-12) {
      if (std::abs(lo[a]) > h) return;
      continue;
    }
    double ta = (-h - lo[a]) / ld[a], tb = (h - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (axis < 0 || t0 > t1 || t0 <= 0.0 || t0 >= best.t) return;
  const Vector3d p = lo + t0 * ld;
  Vector3d n = Vector3d::Zero();
  n[axis] = p[axis] > 0 ? 1.0 : -1.0;
  const int face = 2 * axis + (p[axis] > 0 ? 0 : 1);
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  const int cu = std::clamp(static_cast<int>(std::floor((p[u] + h) / (2 * h) * 4)), 0, 3);
  const int cv = std::clamp(static_cast<int>(std::floor((p[v] + h) / (2 * h) * 4)), 0, 3);
  const double checker = (cu + cv) % 2 == 0 ? 1.0 : 0.55;
  best.t = t0;
  best.color = shade(face_colors[face] * checker, rot * n);
}

void hit_sphere(const Vector3d& o, const Vector3d& d, const Vector3d& center, double radius, const Vector3d& a,
                const Vector3d& b, Hit& best) {
  const Vector3d oc = o - center;
  const double half_b = oc.dot(d);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = half_b * half_b - c;
  if (disc < 0.0) return;
  const double t = -half_b - std::sqrt(disc);
  if (t <= 0.0 || t >= best.t) return;
  const Vector3d n = (o + t * d - center) / radius;
  // Latitude bands alternate between the two albedos.
  const int band = static_cast<int>(std::floor((n.z() + 1.0) * 3.0));
  best.t = t;
  best.color = shade(band % 2 == 0 ? a : b, n);
}

std::optional<Vector3d> trace(SceneKind kind, const Vector3d& o, const Vector3d& d) {
  Hit best;
  if (kind == SceneKind::TexturedCube) {
    hit_cube(o, d, best);
  } else {
    hit_sphere(o, d, {-0.45, -0.1, 0.0}, 0.55, {0.9, 0.3, 0.2}, {0.95, 0.8, 0.3}, best);
    hit_sphere(o, d, {0.55, 0.35, 0.15}, 0.4, {0.2, 0.4, 0.9}, {0.3, 0.85, 0.6}, best);
  }
  if (!std::isfinite(best.t)) return std::nullopt;
  return best.color;
}

}  // namespace

io::Image8 render_view(SceneKind kind, const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose,
                       int supersample) {
  if (supersample < 1) throw ValidationError("render_view: supersample must be >= 1");
  io::Image8 img;
  img.height = intrinsics.height;
  img.width = intrinsics.width;
  img.channels = 4;
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * 4);
  const Vector3d o = pose.origin();
  const int n = supersample * supersample;
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      Vector3d sum = Vector3d::Zero();
      int hits = 0;
      for (int a = 0; a < supersample; ++a) {
        for (int b = 0; b < supersample; ++b) {
          const Vector3d d =
              scene::pixel_direction(intrinsics, pose, i + (a + 0.5) / supersample, j + (b + 0.5) / supersample);
          if (auto c = trace(kind, o, d)) {
            sum += *c;
            ++hits;
          }
        }
      }
      std::uint8_t* px = &img.pixels[(static_cast<std::size_t>(i) * img.width + j) * 4];
      const Vector3d color = hits > 0 ? Vector3d(sum / hits) : Vector3d::Zero();
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<std::uint8_t>(std::lround(std::clamp(color[c], 0.0, 1.0) * 255.0));
      }
      px[3] = static_cast<std::uint8_t>(std::lround(255.0 * hits / n));
    }
  }
  return img;
}

diff::Tensor render_view_rgb(SceneKind kind, const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose,
                             int supersample, const scene::Rgb& background) {
  return io::to_float_rgb(render_view(kind, intrinsics, pose, supersample), background);
}

std::vector<scene::Pose> fixture_poses(const FixtureSpec& spec) {
  spec.validate();
  posedist::Hemisphere h;
  h.radius_min = spec.radius_min;
  h.radius_max = spec.radius_max;
  Rng rng(spec.seed);
  std::vector<scene::Pose> poses;
  for (int v = 0; v < spec.views; ++v) poses.push_back(posedist::sample_hemisphere_pose(h, rng));
  return poses;
}

void write_fixture(const FixtureSpec& spec, const std::filesystem::path& out_dir) {
  const auto poses = fixture_poses(spec);
  const auto intrinsics = scene::CameraIntrinsics::from_fov(spec.size, spec.size, spec.camera_angle_x);
  nlohmann::json doc;
  doc["camera_angle_x"] = spec.camera_angle_x;
  doc["fixture"] = spec.to_json();
  doc["frames"] = nlohmann::json::array();
  for (std::size_t v = 0; v < poses.size(); ++v) {
    const std::string name = "r_" + std::to_string(v);
    io::write_png(out_dir / (name + ".png"), render_view(spec.kind, intrinsics, poses[v], spec.supersample));
    doc["frames"].push_back({{"file_path", "./" + name}, {"transform_matrix", scene::pose_to_json(poses[v])}});
  }
  io::write_file(out_dir / "transforms.json", doc.dump(2) + "\n");
}

}  // namespace dietfield::fixture
