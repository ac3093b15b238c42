#pragma once

// Procedural scenes rendered by an analytic ray tracer, written in the transforms.json layout.
// Ground truth is available for any pose, so novel-view quality can be measured exactly.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "dietfield/image_io.hpp"
#include "dietfield/scene.hpp"

namespace dietfield::fixture {

enum class SceneKind { TexturedCube, TwoSphere };

std::string to_string(SceneKind kind);
SceneKind scene_kind_from_string(const std::string& name);

struct FixtureSpec {
  SceneKind kind = SceneKind::TexturedCube;
  int size = 64;  // square images
  int views = 8;
  double radius_min = 4.0;  // camera distance to the origin
  double radius_max = 4.0;
  double camera_angle_x = 0.6911112070083618;
  int supersample = 2;  // supersample x supersample rays per pixel
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static FixtureSpec from_json(const nlohmann::json& j);
};

// RGBA image of the scene from `pose`: alpha is pixel coverage, color the mean of the covered
// samples.
io::Image8 render_view(SceneKind kind, const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose,
                       int supersample);

// Same, composited over `background` as float H x W x 3.
diff::Tensor render_view_rgb(SceneKind kind, const scene::CameraIntrinsics& intrinsics, const scene::Pose& pose,
                             int supersample, const scene::Rgb& background);

// Camera poses of the fixture: upper hemisphere around the origin, seeded.
std::vector<scene::Pose> fixture_poses(const FixtureSpec& spec);

// Writes r_<i>.png for every view plus transforms.json into `out_dir`.
void write_fixture(const FixtureSpec& spec, const std::filesystem::path& out_dir);

}  // namespace dietfield::fixture
