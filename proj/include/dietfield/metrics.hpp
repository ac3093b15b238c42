#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "dietfield/scene.hpp"
#include "dietfield/semantic.hpp"

namespace dietfield::metrics {

// -10 log10(mean squared error over all elements); +infinity for identical images.
double psnr(const diff::Tensor& image, const diff::Tensor& reference);

// Mean SSIM of H x W x C images with data range 1: 7 x 7 uniform windows, C1 = 0.01^2,
// C2 = 0.03^2, unbiased (N - 1) window variances, averaged over the windows that fit entirely
// inside the image and then over channels.
double ssim(const diff::Tensor& image, const diff::Tensor& reference);

struct PairSample {
  std::size_t view_a = 0;
  std::size_t view_b = 0;
  double cosine = 0.0;
  double distance = 0.0;  // between camera origins
};

struct PairGroup {
  std::string scene_a;
  std::string scene_b;
  std::vector<PairSample> samples;
  double mean_cosine = 0.0;
  double mean_distance = 0.0;
  std::vector<std::int64_t> histogram;  // counts per cosine bin
};

struct SimilarityReport {
  std::vector<double> bin_edges;  // over [-1, 1]
  std::vector<PairGroup> groups;  // one per unordered scene pair, same-scene pairs included

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

struct NamedScene {
  std::string name;
  const scene::SceneDataset* dataset = nullptr;
};

// Samples `num_pairs` view pairs (uniform, independent) for every unordered pair of scenes
// (A-A, B-B, A-B, ...) and records embedding cosine similarity against camera distance.
SimilarityReport embedding_similarity_report(const std::vector<NamedScene>& scenes, const semantic::Encoder& encoder,
                                             std::size_t num_pairs, std::uint64_t seed, int bins = 20);

}  // namespace dietfield::metrics
