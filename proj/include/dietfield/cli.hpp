#pragma once

// Commands behind the `dietfield` executable. Each returns a process exit code.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dietfield/config.hpp"
#include "dietfield/fixture.hpp"

namespace dietfield::cli {

int cmd_make_fixture(const fixture::FixtureSpec& spec, const std::filesystem::path& out_dir);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // continue from this checkpoint
  bool quiet = false;
};
int cmd_train(const config::RunConfig& config, const TrainOptions& options = {});

struct RenderOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> scene;  // render at this dataset's poses (and score them)
  int orbit_frames = 0;                         // otherwise an orbit around the origin
  double orbit_radius = 4.0;
  double orbit_elevation_deg = 30.0;
  int stride = 1;
  std::filesystem::path out_dir;
};
int cmd_render(const RenderOptions& options);

struct EvalOptions {
  std::filesystem::path checkpoint;  // ignored with ground_truth_as_prediction
  std::filesystem::path scene;
  std::string split = "test";
  std::filesystem::path out;  // JSON file
  bool ground_truth_as_prediction = false;  // debug: score the dataset against itself
};
int cmd_eval(const EvalOptions& options);

struct EmbedOptions {
  std::vector<std::filesystem::path> scenes;
  config::EncoderSection encoder;
  std::size_t pairs = 100;
  std::uint64_t seed = 0;
  int bins = 20;
  std::filesystem::path out_dir;
};
int cmd_embed_analysis(const EmbedOptions& options);

// Parses argv and dispatches.
int run(int argc, char** argv);

}  // namespace dietfield::cli
