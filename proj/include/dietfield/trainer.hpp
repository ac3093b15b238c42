#pragma once

// Optimization loop: ray-batch MSE every iteration, semantic consistency every K-th iteration at a
// pose drawn from the pose distribution, Adam with exponential learning-rate decay.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dietfield/adam.hpp"
#include "dietfield/error.hpp"
#include "dietfield/posedist.hpp"
#include "dietfield/render.hpp"
#include "dietfield/rng.hpp"
#include "dietfield/scene.hpp"
#include "dietfield/semantic.hpp"

namespace dietfield::trainer {

enum class PoseDistKind { Hemisphere, Interpolate };

struct PoseDistConfig {
  PoseDistKind kind = PoseDistKind::Hemisphere;
  // Unset: 0.9 / 1.1 times the mean training-camera distance to look_at.
  std::optional<double> radius_min;
  std::optional<double> radius_max;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
};

struct TrainConfig {
  std::int64_t num_iters = 5000;
  std::int64_t ray_batch_size = 1024;
  std::int64_t sc_interval = 10;  // K
  float sc_weight = 0.1f;         // lambda; 0 disables the semantic loss
  int sc_render_stride = 2;
  double lr_init = 5e-4;
  double lr_decay_steps = 250000.0;
  std::int64_t finetune_iters = 0;
  std::uint64_t seed = 0;
  bool sc_perturb = true;  // jitter samples when rendering the semantic-loss view
  PoseDistConfig pose_dist;
  bool restart_on_degenerate = false;
  std::int64_t degenerate_check_iter = 2500;

  void validate() const;
};

struct TrainState {
  field::FieldParams coarse;
  std::optional<field::FieldParams> fine;
  optim::AdamState adam;
  Rng rng;
  std::int64_t iteration = 0;     // completed iterations
  std::uint64_t init_seed = 0;    // seed of the current parameter initialization
  int restarts = 0;
};

// Fresh parameters and optimizer state for `config.seed`.
TrainState init_state(const render::ModelConfig& model, const TrainConfig& config);

struct LogEntry {
  std::int64_t iter = 0;
  double mse = 0.0;                      // final-pass ray MSE
  std::optional<double> mse_coarse;      // coarse-pass ray MSE when hierarchical with a fine network
  std::optional<double> sc;              // semantic loss, on SC iterations only
  double lr = 0.0;
  double wall_ms = 0.0;                  // excluded from comparisons
  std::string phase = "train";           // "train" or "finetune"
  bool restarted = false;

  nlohmann::json to_json() const;
  // Equal in everything except wall_ms.
  bool same_as(const LogEntry& other) const;
};

struct TrainLog {
  std::vector<LogEntry> entries;

  std::int64_t sc_count() const;
  bool same_as(const TrainLog& other) const;
  void write_jsonl(std::ostream& out) const;
};

// Raised when the loss or a gradient becomes non-finite. The state is left as it was before the
// failing iteration.
class DivergenceError : public NonFiniteError {
 public:
  DivergenceError(std::int64_t iteration, const std::string& what)
      : NonFiniteError("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

// One target embedding per training view, in dataset order.
std::vector<semantic::Embedding> precompute_target_embeddings(const scene::SceneDataset& dataset,
                                                              const semantic::Encoder& encoder);

class Trainer {
 public:
  // `encoder` is required when config.sc_weight > 0 and never called otherwise.
  Trainer(const scene::SceneDataset& dataset, render::ModelConfig model, TrainConfig config,
          std::shared_ptr<const semantic::Encoder> encoder);

  // Runs iteration state.iteration + 1. `semantic` = false forces lambda to 0 for this step.
  LogEntry step(TrainState& state, bool semantic = true) const;

  // Steps until state.iteration == until, appending to `log`. `on_step` runs after every step.
  void run(TrainState& state, std::int64_t until, TrainLog& log, const std::string& phase = "train",
           const std::function<void(const TrainState&, const LogEntry&)>& on_step = {}) const;

  const std::vector<semantic::Embedding>& targets() const { return targets_; }
  const posedist::PoseDistribution& pose_distribution() const { return pose_dist_; }
  const render::ModelConfig& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  render::Bounds bounds() const;

 private:
  bool degenerate(const TrainState& state) const;

  const scene::SceneDataset& dataset_;
  render::ModelConfig model_;
  TrainConfig config_;
  std::shared_ptr<const semantic::Encoder> encoder_;
  std::vector<semantic::Embedding> targets_;
  posedist::PoseDistribution pose_dist_;
};

struct TrainResult {
  TrainState state;
  TrainLog log;
};

// init_state + num_iters iterations.
TrainResult train(const scene::SceneDataset& dataset, const render::ModelConfig& model, const TrainConfig& config,
                  std::shared_ptr<const semantic::Encoder> encoder);

// finetune_iters further iterations with the semantic loss disabled.
void finetune_mse(TrainState& state, TrainLog& log, const scene::SceneDataset& dataset,
                  const render::ModelConfig& model, const TrainConfig& config);

// --- checkpoints ----------------------------------------------------------------------------------

inline constexpr io::Magic kCheckpointMagic{'D', 'N', 'R', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  render::ModelConfig model;
  TrainConfig config;
  nlohmann::json metadata = nlohmann::json::object();  // caller-defined, stored verbatim
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dietfield::trainer
