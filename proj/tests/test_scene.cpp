#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dietfield/container.hpp"
#include "dietfield/error.hpp"
#include "dietfield/image_io.hpp"
#include "dietfield/posedist.hpp"
#include "dietfield/scene.hpp"
#include "test_util.hpp"

using namespace dietfield;
using namespace dietfield::scene;

namespace {

// Writes a tiny dataset: `n` RGBA frames of h x w looking at the origin.
void write_dataset(const std::filesystem::path& dir, int n, int h, int w, double angle = 0.7) {
  nlohmann::json doc;
  doc["camera_angle_x"] = angle;
  doc["frames"] = nlohmann::json::array();
  for (int k = 0; k < n; ++k) {
    io::Image8 img{h, w, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 4))};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37 + k) % 256);
    // first pixel fully transparent
    img.pixels[3] = 0;
    io::write_png(dir / ("f" + std::to_string(k) + ".png"), img);
    const Pose p = posedist::orbit_pose(k * 0.7, 0.4, 4.0, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
    doc["frames"].push_back({{"file_path", "./f" + std::to_string(k)}, {"transform_matrix", pose_to_json(p)}});
  }
  io::write_file(dir / "transforms.json", doc.dump(2));
}

}  // namespace

TEST_CASE("focal length from field of view") {
  CHECK(CameraIntrinsics::from_fov(400, 400, std::numbers::pi / 2).focal == doctest::Approx(200.0));
  CHECK_THROWS_AS(CameraIntrinsics::from_fov(0, 4, 1.0), ValidationError);
}

TEST_CASE("load_scene reads frames, composites alpha and round-trips poses") {
  testutil::TempDir dir("scene");
  write_dataset(dir.path(), 3, 64, 64);
  LoadOptions opts;
  opts.background = {0.25f, 0.5f, 0.75f};
  const SceneDataset ds = load_scene(dir.path(), opts);
  REQUIRE(ds.views.size() == 3);
  CHECK(ds.intrinsics.height == 64);
  CHECK(ds.intrinsics.focal == doctest::Approx(0.5 * 64 / std::tan(0.35)));
  CHECK(ds.near == 2.0);
  CHECK(ds.far == 6.0);
  // transparent pixel equals the background exactly
  for (int c = 0; c < 3; ++c) CHECK(ds.views[0].image[c] == opts.background[static_cast<std::size_t>(c)]);
  for (float v : ds.views[1].image.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const auto doc = nlohmann::json::parse(io::read_file(dir / "transforms.json"));
  for (std::size_t k = 0; k < 3; ++k) {
    const Pose original = pose_from_json(doc["frames"][k]["transform_matrix"]);
    const Pose again = pose_from_json(transforms_json(ds)["frames"][k]["transform_matrix"]);
    CHECK((original.camera_to_world - again.camera_to_world).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("load_scene errors") {
  testutil::TempDir dir("scene_err");
  CHECK_THROWS_AS(load_scene(dir.path()), IoError);

  io::write_file(dir / "transforms.json", "{ not json");
  CHECK_THROWS_AS(load_scene(dir.path()), FormatError);

  write_dataset(dir.path(), 2, 8, 8);
  auto doc = nlohmann::json::parse(io::read_file(dir / "transforms.json"));
  auto flipped = doc;
  for (int r = 0; r < 3; ++r) flipped["frames"][1]["transform_matrix"][r][0] = -flipped["frames"][1]["transform_matrix"][r][0].get<double>();
  io::write_file(dir / "transforms.json", flipped.dump());
  try {
    load_scene(dir.path());
    FAIL("expected a determinant error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
    CHECK(std::string(e.what()).find("determinant") != std::string::npos);
  }

  auto skewed = doc;
  skewed["frames"][0]["transform_matrix"][0][1] = skewed["frames"][0]["transform_matrix"][0][1].get<double>() + 0.01;
  io::write_file(dir / "transforms.json", skewed.dump());
  CHECK_THROWS_AS(load_scene(dir.path()), ValidationError);

  io::write_file(dir / "transforms.json", doc.dump());
  io::Image8 small{4, 4, 3, std::vector<std::uint8_t>(48, 100)};
  io::write_png(dir / "f1.png", small);
  try {
    load_scene(dir.path());
    FAIL("expected a size mismatch");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("differs") != std::string::npos);
  }

  std::filesystem::remove(dir / "f1.png");
  CHECK_THROWS_AS(load_scene(dir.path()), IoError);
}

TEST_CASE("800x800 inputs are box-downsampled to 400x400") {
  testutil::TempDir dir("scene_800");
  write_dataset(dir.path(), 1, 800, 800);
  const SceneDataset ds = load_scene(dir.path());
  CHECK(ds.intrinsics.height == 400);
  CHECK(ds.intrinsics.width == 400);
  CHECK(ds.views[0].image.dim(0) == 400);
}

TEST_CASE("subsample_views") {
  SceneDataset ds;
  ds.intrinsics = CameraIntrinsics::from_fov(2, 2, 1.0);
  for (int k = 0; k < 100; ++k) {
    PosedImage v;
    v.file_path = std::to_string(k);
    ds.views.push_back(v);
  }
  SUBCASE("identity when k equals the view count") {
    const SceneDataset all = subsample_views(ds, 100, 3);
    for (int k = 0; k < 100; ++k) CHECK(all.views[static_cast<std::size_t>(k)].file_path == std::to_string(k));
  }
  SUBCASE("deterministic per seed, ordered") {
    const auto a = subsample_indices(100, 8, 1), b = subsample_indices(100, 8, 1), c = subsample_indices(100, 8, 2);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  }
  SUBCASE("uniform over 10k seeds") {
    std::vector<int> counts(100, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) {
      for (std::size_t i : subsample_indices(100, 8, s)) ++counts[i];
    }
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.08) <= 0.01);
  }
  CHECK_THROWS_AS(subsample_views(ds, 0, 0), ValidationError);
  CHECK_THROWS_AS(subsample_views(ds, 101, 0), ValidationError);
}

TEST_CASE("camera rays") {
  CameraIntrinsics k{3, 3, 2.0};
  const RayBundle center = camera_rays(k, Pose{});
  CHECK(center.directions[4 * 3 + 0] == doctest::Approx(0.0));
  CHECK(center.directions[4 * 3 + 1] == doctest::Approx(0.0));
  CHECK(center.directions[4 * 3 + 2] == doctest::Approx(-1.0));

  CameraIntrinsics k2{2, 2, 1.0};
  const RayBundle r = camera_rays(k2, Pose{});
  const double n = std::sqrt(0.25 + 0.25 + 1.0);
  CHECK(r.directions[0] == doctest::Approx(-0.5 / n));
  CHECK(r.directions[1] == doctest::Approx(0.5 / n));
  CHECK(r.directions[2] == doctest::Approx(-1.0 / n));

  const Pose p = posedist::orbit_pose(0.3, 0.5, 4.0, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
  const RayBundle full = camera_rays(CameraIntrinsics{17, 23, 20.0}, p);
  for (std::int64_t i = 0; i < full.size(); ++i) {
    const double len = std::hypot(full.directions[i * 3], full.directions[i * 3 + 1], full.directions[i * 3 + 2]);
    CHECK(std::abs(len - 1.0) <= 1e-5);
    for (int c = 0; c < 3; ++c) CHECK(full.origins[i * 3 + c] == static_cast<float>(p.origin()[c]));
  }
}

TEST_CASE("strided rays are a subset of the full grid") {
  const Pose p = posedist::orbit_pose(1.1, 0.2, 3.5, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
  const CameraIntrinsics k{17, 23, 20.0};
  const RayBundle full = camera_rays(k, p);
  CHECK(strided_rays(k, p, 1).directions.identical(full.directions));
  for (int stride : {2, 3, 5}) {
    const RayBundle s = strided_rays(k, p, stride);
    CHECK(s.grid_height == (17 + stride - 1) / stride);
    CHECK(s.grid_width == (23 + stride - 1) / stride);
    REQUIRE(s.size() == static_cast<std::int64_t>(s.grid_height) * s.grid_width);
    for (std::int64_t r = 0; r < s.size(); ++r) {
      const std::int64_t pix = s.pixel_indices[static_cast<std::size_t>(r)];
      // row-major strided grid
      CHECK(pix == (r / s.grid_width) * stride * 23 + (r % s.grid_width) * stride);
      for (int c = 0; c < 3; ++c) CHECK(s.directions[r * 3 + c] == full.directions[pix * 3 + c]);
    }
  }
  CHECK(strided_rays(CameraIntrinsics{400, 400, 300.0}, p, 5).size() == 6400);
  CHECK(strided_rays(CameraIntrinsics{400, 400, 300.0}, p, 2).size() == 40000);
  CHECK_THROWS_AS(strided_rays(k, p, 0), ValidationError);
}
