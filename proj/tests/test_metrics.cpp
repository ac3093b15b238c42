#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dietfield/error.hpp"
#include "dietfield/fixture.hpp"
#include "dietfield/metrics.hpp"
#include "test_util.hpp"

using namespace dietfield;
using namespace dietfield::diff;
using namespace dietfield::metrics;

namespace {

Tensor pattern(int mul_i, int mul_j, int mul_c, int mod) {
  Tensor t(Shape{12, 10, 3});
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 10; ++j) {
      for (int c = 0; c < 3; ++c) {
        t.mutable_values()[static_cast<std::size_t>((i * 10 + j) * 3 + c)] =
            static_cast<float>((i * mul_i + j * mul_j + c * mul_c) % mod) / static_cast<float>(mod - 1);
      }
    }
  }
  return t;
}

scene::SceneDataset fixture_scene(fixture::SceneKind kind, int views) {
  fixture::FixtureSpec spec;
  spec.kind = kind;
  spec.size = 16;
  spec.views = views;
  spec.supersample = 1;
  scene::SceneDataset ds;
  ds.intrinsics = scene::CameraIntrinsics::from_fov(16, 16, spec.camera_angle_x);
  for (const auto& pose : fixture::fixture_poses(spec)) {
    scene::PosedImage v;
    v.pose = pose;
    v.image = fixture::render_view_rgb(kind, ds.intrinsics, pose, 1, ds.background);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

}  // namespace

TEST_CASE("psnr examples") {
  const Tensor zero(Shape{2, 2, 3}, 0.0f);
  CHECK(psnr(zero, Tensor(Shape{2, 2, 3}, 0.1f)) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(zero, Tensor(Shape{2, 2, 3}, 1.0f)) == doctest::Approx(0.0));
  CHECK(std::isinf(psnr(zero, zero)));
  CHECK(psnr(zero, zero) > 0.0);
  // one element off by 0.6 among 12: mse 0.03
  Tensor one = zero;
  one.mutable_values()[7] = 0.6f;
  CHECK(psnr(one, zero) == doctest::Approx(-10.0 * std::log10(0.03)).epsilon(1e-6));
  CHECK(psnr(pattern(7, 13, 5, 17), pattern(3, 5, 11, 19)) == doctest::Approx(7.291010031194515).epsilon(1e-6));
  CHECK_THROWS_AS(psnr(zero, Tensor(Shape{2, 3, 3})), ShapeError);

  double prev = INFINITY;
  for (float e = 0.01f; e < 1.0f; e += 0.05f) {
    const double p = psnr(zero, Tensor(Shape{2, 2, 3}, e));
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim reference values") {
  const Tensor a = pattern(7, 13, 5, 17), b = pattern(3, 5, 11, 19);
  CHECK(ssim(a, b) == doctest::Approx(0.021091881285862677).epsilon(1e-5));
  Tensor c = a;
  for (float& v : c.mutable_values()) v = std::clamp(0.8f * v + 0.1f, 0.0f, 1.0f);
  CHECK(ssim(a, c) == doctest::Approx(0.975738752061401).epsilon(1e-5));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

  const double flat = ssim(Tensor(Shape{8, 8, 3}, 0.0f), Tensor(Shape{8, 8, 3}, 1.0f));
  CHECK(flat < 0.01);
  CHECK(flat == doctest::Approx(9.999000099990002e-05).epsilon(1e-5));

  CHECK_THROWS_AS(ssim(Tensor(Shape{6, 9, 3}), Tensor(Shape{6, 9, 3})), ValidationError);
  CHECK_THROWS_AS(ssim(a, Tensor(Shape{12, 11, 3})), ShapeError);
}

TEST_CASE("ssim orders a degradation sweep") {
  const Tensor ref = testutil::random_image(16, 16, 1);
  const Tensor noise = testutil::random_tensor({16, 16, 3}, 2);
  double prev = 1.01;
  for (float s : {0.0f, 0.05f, 0.1f, 0.2f, 0.4f}) {
    Tensor x = ref;
    for (std::int64_t i = 0; i < x.size(); ++i) x.mutable_values()[static_cast<std::size_t>(i)] = std::clamp(ref[i] + s * noise[i], 0.0f, 1.0f);
    const double v = ssim(x, ref);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("embedding similarity report") {
  const scene::SceneDataset cube = fixture_scene(fixture::SceneKind::TexturedCube, 4);
  const scene::SceneDataset spheres = fixture_scene(fixture::SceneKind::TwoSphere, 3);
  const semantic::BaselineEncoder enc(1, 16);

  SUBCASE("single view pairs with itself") {
    scene::SceneDataset one = cube;
    one.views.resize(1);
    const SimilarityReport r = embedding_similarity_report({{"one", &one}}, enc, 5, 0);
    REQUIRE(r.groups.size() == 1);
    for (const auto& s : r.groups[0].samples) {
      CHECK(s.cosine == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(s.distance == 0.0);
    }
  }
  SUBCASE("groups, ranges, histograms") {
    const SimilarityReport r = embedding_similarity_report({{"cube", &cube}, {"spheres", &spheres}}, enc, 40, 7, 10);
    REQUIRE(r.groups.size() == 3);
    CHECK(r.bin_edges.size() == 11);
    CHECK(r.bin_edges.front() == -1.0);
    CHECK(r.bin_edges.back() == 1.0);
    for (const auto& g : r.groups) {
      CHECK(g.samples.size() == 40);
      std::int64_t total = 0;
      for (auto c : g.histogram) total += c;
      CHECK(total == 40);
      double mean = 0.0;
      for (const auto& s : g.samples) {
        CHECK(s.cosine >= -1.0);
        CHECK(s.cosine <= 1.0);
        CHECK(s.distance >= 0.0);
        mean += s.cosine / 40.0;
      }
      CHECK(g.mean_cosine == doctest::Approx(mean));
    }
    const SimilarityReport again = embedding_similarity_report({{"cube", &cube}, {"spheres", &spheres}}, enc, 40, 7, 10);
    CHECK(again.to_json() == r.to_json());
    std::ostringstream csv;
    r.write_csv(csv);
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 40);
  }
}
