#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dietfield/tensor.hpp"

namespace dietfield::scene {

using Rgb = std::array<float, 3>;

struct CameraIntrinsics {
  int height = 0;
  int width = 0;
  double focal = 0.0;  // pixels

  // focal = 0.5 W / tan(0.5 camera_angle_x)
  static CameraIntrinsics from_fov(int height, int width, double camera_angle_x);
  void validate() const;
};

// Camera-to-world rigid transform. Camera space looks down -z with +x right and +y up.
struct Pose {
  Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();

  Pose() = default;
  explicit Pose(const Eigen::Matrix4d& m) : camera_to_world(m) {}
  static Pose from_rotation_origin(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& origin);

  Eigen::Matrix3d rotation() const { return camera_to_world.block<3, 3>(0, 0); }
  Eigen::Vector3d origin() const { return camera_to_world.block<3, 1>(0, 3); }

  // Throws ValidationError unless R^T R = I and det R = +1 within `tolerance`, and the last row is
  // (0, 0, 0, 1).
  void validate(double tolerance = 1e-4) const;
};

struct PosedImage {
  diff::Tensor image;  // H x W x 3 in [0,1], alpha already composited
  Pose pose;
  std::string file_path;  // as written in transforms.json
};

struct SceneDataset {
  CameraIntrinsics intrinsics;
  double camera_angle_x = 0.0;
  std::vector<PosedImage> views;
  double near = 2.0;
  double far = 6.0;
  Rgb background{1.0f, 1.0f, 1.0f};
};

struct RayBundle {
  diff::Tensor origins;     // N x 3
  diff::Tensor directions;  // N x 3, unit length
  std::vector<std::int64_t> pixel_indices;  // row-major index into the full H x W grid
  int grid_height = 0;      // rows of the emitted grid (ceil(H / stride))
  int grid_width = 0;

  std::int64_t size() const { return origins.size() / 3; }
};

struct LoadOptions {
  double near = 2.0;
  double far = 6.0;
  Rgb background{1.0f, 1.0f, 1.0f};
  // Box-filter factor applied to every image. Unset: 2 for 800x800 inputs, otherwise 1.
  std::optional<int> downsample;
  std::string transforms_file = "transforms.json";
};

SceneDataset load_scene(const std::filesystem::path& directory, const LoadOptions& options = {});

// `k` views drawn uniformly without replacement; original order kept.
SceneDataset subsample_views(const SceneDataset& dataset, std::size_t k, std::uint64_t seed);
// Indices picked by subsample_views, in increasing order.
std::vector<std::size_t> subsample_indices(std::size_t count, std::size_t k, std::uint64_t seed);

// Unit world-space direction through continuous image position (row, col); pixel (i, j) has its
// center at (i + 0.5, j + 0.5).
Eigen::Vector3d pixel_direction(const CameraIntrinsics& intrinsics, const Pose& pose, double row, double col);

RayBundle camera_rays(const CameraIntrinsics& intrinsics, const Pose& pose);
// Rays through pixels whose row and column are multiples of `stride`, row-major.
RayBundle strided_rays(const CameraIntrinsics& intrinsics, const Pose& pose, int stride);

// transforms.json document for `dataset` (camera_angle_x plus one frame per view).
nlohmann::json transforms_json(const SceneDataset& dataset);
nlohmann::json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& matrix);

}  // namespace dietfield::scene
