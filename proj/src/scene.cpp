#include "dietfield/scene.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dietfield/container.hpp"
#include "dietfield/error.hpp"
#include "dietfield/image_io.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::scene {

using diff::Shape;
using diff::Tensor;

CameraIntrinsics CameraIntrinsics::from_fov(int height, int width, double camera_angle_x) {
  CameraIntrinsics k;
  k.height = height;
  k.width = width;
  k.focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
  k.validate();
  return k;
}

void CameraIntrinsics::validate() const {
  if (height < 1 || width < 1) {
    throw ValidationError("intrinsics: image size " + std::to_string(height) + "x" + std::to_string(width) + " invalid");
  }
  if (!(focal > 0.0) || !std::isfinite(focal)) throw ValidationError("intrinsics: focal must be positive and finite");
}

Pose Pose::from_rotation_origin(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& origin) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = origin;
  return Pose(m);
}

void Pose::validate(double tolerance) const {
  if (!camera_to_world.allFinite()) throw ValidationError("pose: non-finite entries");
  const Eigen::Matrix3d r = rotation();
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tolerance) {
    throw ValidationError("pose: rotation not orthonormal (max |R^T R - I| = " + std::to_string(ortho) + ")");
  }
  const double det = r.determinant();
  if (std::abs(det - 1.0) > tolerance) throw ValidationError("pose: rotation determinant " + std::to_string(det) + " != +1");
  const Eigen::RowVector4d last = camera_to_world.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tolerance) {
    throw ValidationError("pose: last row must be (0, 0, 0, 1)");
  }
}

nlohmann::json pose_to_json(const Pose& pose) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    rows.push_back({pose.camera_to_world(i, 0), pose.camera_to_world(i, 1), pose.camera_to_world(i, 2),
                    pose.camera_to_world(i, 3)});
  }
  return rows;
}

Pose pose_from_json(const nlohmann::json& matrix) {
  if (!matrix.is_array() || matrix.size() != 4) throw ValidationError("transform_matrix must be a 4x4 array");
  Eigen::Matrix4d m;
  for (int i = 0; i < 4; ++i) {
    const auto& row = matrix[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != 4) throw ValidationError("transform_matrix must be a 4x4 array");
    for (int j = 0; j < 4; ++j) {
      if (!row[static_cast<std::size_t>(j)].is_number()) throw ValidationError("transform_matrix entries must be numbers");
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
  }
  return Pose(m);
}

SceneDataset load_scene(const std::filesystem::path& directory, const LoadOptions& options) {
  if (!(options.near > 0.0) || !(options.far > options.near)) {
    throw ValidationError("load_scene: need 0 < near < far");
  }
  const auto transforms_path = directory / options.transforms_file;
  if (!std::filesystem::exists(transforms_path)) throw IoError("missing '" + transforms_path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(transforms_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in '" + transforms_path.string() + "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("camera_angle_x") || !doc["camera_angle_x"].is_number()) {
    throw FormatError("'" + transforms_path.string() + "': missing numeric camera_angle_x");
  }
  if (!doc.contains("frames") || !doc["frames"].is_array() || doc["frames"].empty()) {
    throw FormatError("'" + transforms_path.string() + "': missing or empty frames[]");
  }

  SceneDataset ds;
  ds.camera_angle_x = doc["camera_angle_x"].get<double>();
  ds.near = options.near;
  ds.far = options.far;
  ds.background = options.background;

  int height = -1, width = -1, factor = 1;
  std::size_t index = 0;
  for (const auto& frame : doc["frames"]) {
    const std::string where = "frame " + std::to_string(index++);
    if (!frame.contains("file_path") || !frame["file_path"].is_string()) {
      throw FormatError(where + ": missing file_path");
    }
    if (!frame.contains("transform_matrix")) throw FormatError(where + ": missing transform_matrix");
    PosedImage view;
    view.file_path = frame["file_path"].get<std::string>();
    try {
      view.pose = pose_from_json(frame["transform_matrix"]);
      view.pose.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(where + " (" + view.file_path + "): " + e.what());
    }
    std::filesystem::path image_path = directory / view.file_path;
    if (!image_path.has_extension()) image_path += ".png";
    const io::Image8 raw = io::read_png(image_path);
    if (height < 0) {
      height = raw.height;
      width = raw.width;
      factor = options.downsample.value_or(raw.height == 800 && raw.width == 800 ? 2 : 1);
      if (factor < 1) throw ValidationError("load_scene: downsample factor must be >= 1");
    } else if (raw.height != height || raw.width != width) {
      throw ValidationError(where + ": image size " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                            " differs from " + std::to_string(height) + "x" + std::to_string(width));
    }
    view.image = io::box_downsample(io::to_float_rgb(raw, ds.background), factor);
    ds.views.push_back(std::move(view));
  }
  ds.intrinsics = CameraIntrinsics::from_fov(height / factor, width / factor, ds.camera_angle_x);
  return ds;
}

std::vector<std::size_t> subsample_indices(std::size_t count, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > count) {
    throw ValidationError("subsample_views: k = " + std::to_string(k) + " outside [1, " + std::to_string(count) + "]");
  }
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(count - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

SceneDataset subsample_views(const SceneDataset& dataset, std::size_t k, std::uint64_t seed) {
  SceneDataset out = dataset;
  out.views.clear();
  for (std::size_t i : subsample_indices(dataset.views.size(), k, seed)) out.views.push_back(dataset.views[i]);
  return out;
}

Eigen::Vector3d pixel_direction(const CameraIntrinsics& intrinsics, const Pose& pose, double row, double col) {
  const Eigen::Vector3d cam((col - 0.5 * intrinsics.width) / intrinsics.focal,
                            -(row - 0.5 * intrinsics.height) / intrinsics.focal, -1.0);
  return (pose.rotation() * cam).normalized();
}

RayBundle strided_rays(const CameraIntrinsics& intrinsics, const Pose& pose, int stride) {
  if (stride < 1) throw ValidationError("strided_rays: stride must be >= 1");
  intrinsics.validate();
  RayBundle rays;
  rays.grid_height = (intrinsics.height + stride - 1) / stride;
  rays.grid_width = (intrinsics.width + stride - 1) / stride;
  const std::int64_t n = static_cast<std::int64_t>(rays.grid_height) * rays.grid_width;
  std::vector<float> origins(static_cast<std::size_t>(n * 3));
  std::vector<float> dirs(static_cast<std::size_t>(n * 3));
  rays.pixel_indices.reserve(static_cast<std::size_t>(n));
  const Eigen::Vector3d o = pose.origin();
  std::size_t k = 0;
  for (int i = 0; i < intrinsics.height; i += stride) {
    for (int j = 0; j < intrinsics.width; j += stride) {
      const Eigen::Vector3d d = pixel_direction(intrinsics, pose, i + 0.5, j + 0.5);
      for (int c = 0; c < 3; ++c) {
        origins[k * 3 + static_cast<std::size_t>(c)] = static_cast<float>(o[c]);
        dirs[k * 3 + static_cast<std::size_t>(c)] = static_cast<float>(d[c]);
      }
      rays.pixel_indices.push_back(static_cast<std::int64_t>(i) * intrinsics.width + j);
      ++k;
    }
  }
  rays.origins = Tensor(Shape{n, 3}, std::move(origins));
  rays.directions = Tensor(Shape{n, 3}, std::move(dirs));
  return rays;
}

RayBundle camera_rays(const CameraIntrinsics& intrinsics, const Pose& pose) { return strided_rays(intrinsics, pose, 1); }

nlohmann::json transforms_json(const SceneDataset& dataset) {
  nlohmann::json doc;
  doc["camera_angle_x"] = dataset.camera_angle_x;
  doc["frames"] = nlohmann::json::array();
  for (const auto& v : dataset.views) {
    doc["frames"].push_back({{"file_path", v.file_path}, {"transform_matrix", pose_to_json(v.pose)}});
  }
  return doc;
}

}  // namespace dietfield::scene
