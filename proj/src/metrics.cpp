#include "dietfield/metrics.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "dietfield/error.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::metrics {

using diff::Tensor;

namespace {

void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + diff::shape_string(a.shape()) + " and " +
                     diff::shape_string(b.shape()) + " differ");
  }
  if (a.empty()) throw ShapeError(std::string(op) + ": empty images");
}

}  // namespace

double psnr(const Tensor& image, const Tensor& reference) {
  check_same("psnr", image, reference);
  double se = 0.0;
  for (std::int64_t i = 0; i < image.size(); ++i) {
    const double d = static_cast<double>(image[i]) - reference[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(image.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const Tensor& image, const Tensor& reference) {
  check_same("ssim", image, reference);
  if (image.rank() != 3) throw ShapeError("ssim: expected H x W x C images, got " + diff::shape_string(image.shape()));
  constexpr int win = 7;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  constexpr double np = win * win;
  constexpr double cov_norm = np / (np - 1.0);
  const std::int64_t h = image.dim(0), w = image.dim(1), channels = image.dim(2);
  if (h < win || w < win) {
    throw ValidationError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the 7x7 window");
  }
  double total = 0.0;
  for (std::int64_t c = 0; c < channels; ++c) {
    double sum_s = 0.0;
    for (std::int64_t i = 0; i + win <= h; ++i) {
      for (std::int64_t j = 0; j + win <= w; ++j) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int a = 0; a < win; ++a) {
          for (int b = 0; b < win; ++b) {
            const std::int64_t k = ((i + a) * w + (j + b)) * channels + c;
            const double x = image[k], y = reference[k];
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
          }
        }
        const double ux = sx / np, uy = sy / np;
        const double vx = cov_norm * (sxx / np - ux * ux);
        const double vy = cov_norm * (syy / np - uy * uy);
        const double vxy = cov_norm * (sxy / np - ux * uy);
        sum_s += ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
      }
    }
    total += sum_s / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return total / static_cast<double>(channels);
}

nlohmann::json SimilarityReport::to_json() const {
  nlohmann::json groups_json = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : g.samples) {
      samples.push_back({{"view_a", s.view_a}, {"view_b", s.view_b}, {"cosine", s.cosine}, {"distance", s.distance}});
    }
    groups_json.push_back({{"scene_a", g.scene_a},
                           {"scene_b", g.scene_b},
                           {"mean_cosine", g.mean_cosine},
                           {"mean_distance", g.mean_distance},
                           {"histogram", g.histogram},
                           {"samples", samples}});
  }
  return {{"bin_edges", bin_edges}, {"groups", groups_json}};
}

void SimilarityReport::write_csv(std::ostream& out) const {
  out << "scene_a,scene_b,view_a,view_b,cosine,distance\n";
  const auto prec = out.precision(17);
  for (const auto& g : groups) {
    for (const auto& s : g.samples) {
      out << g.scene_a << ',' << g.scene_b << ',' << s.view_a << ',' << s.view_b << ',' << s.cosine << ','
          << s.distance << '\n';
    }
  }
  out.precision(prec);
}

SimilarityReport embedding_similarity_report(const std::vector<NamedScene>& scenes, const semantic::Encoder& encoder,
                                             std::size_t num_pairs, std::uint64_t seed, int bins) {
  if (scenes.empty()) throw ValidationError("embedding analysis: need at least one scene");
  if (bins < 1) throw ValidationError("embedding analysis: bins must be >= 1");
  std::vector<std::vector<semantic::Embedding>> embeddings;
  for (const auto& s : scenes) {
    if (!s.dataset || s.dataset->views.empty()) throw ValidationError("embedding analysis: scene '" + s.name + "' has no views");
    std::vector<semantic::Embedding> e;
    for (const auto& v : s.dataset->views) e.push_back(encoder.embed(v.image));
    embeddings.push_back(std::move(e));
  }
  SimilarityReport report;
  for (int b = 0; b <= bins; ++b) report.bin_edges.push_back(-1.0 + 2.0 * b / bins);
  Rng rng(seed);
  for (std::size_t a = 0; a < scenes.size(); ++a) {
    for (std::size_t b = a; b < scenes.size(); ++b) {
      PairGroup g;
      g.scene_a = scenes[a].name;
      g.scene_b = scenes[b].name;
      g.histogram.assign(static_cast<std::size_t>(bins), 0);
      for (std::size_t k = 0; k < num_pairs; ++k) {
        PairSample s;
        s.view_a = static_cast<std::size_t>(rng.below(embeddings[a].size()));
        s.view_b = static_cast<std::size_t>(rng.below(embeddings[b].size()));
        const Tensor& ea = embeddings[a][s.view_a];
        const Tensor& eb = embeddings[b][s.view_b];
        double d = 0.0;
        for (std::int64_t i = 0; i < ea.size(); ++i) d += static_cast<double>(ea[i]) * eb[i];
        s.cosine = std::clamp(d, -1.0, 1.0);
        s.distance = (scenes[a].dataset->views[s.view_a].pose.origin() - scenes[b].dataset->views[s.view_b].pose.origin()).norm();
        const int bin = std::clamp(static_cast<int>(std::floor((s.cosine + 1.0) / 2.0 * bins)), 0, bins - 1);
        ++g.histogram[static_cast<std::size_t>(bin)];
        g.mean_cosine += s.cosine;
        g.mean_distance += s.distance;
        g.samples.push_back(s);
      }
      if (num_pairs > 0) {
        g.mean_cosine /= static_cast<double>(num_pairs);
        g.mean_distance /= static_cast<double>(num_pairs);
      }
      report.groups.push_back(std::move(g));
    }
  }
  return report;
}

}  // namespace dietfield::metrics
