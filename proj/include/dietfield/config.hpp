#pragma once

// JSON (de)serialization of model, training and run configurations. Parsing is strict: unknown
// keys and ill-typed values are rejected with the dotted path of the offending key.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "dietfield/render.hpp"
#include "dietfield/scene.hpp"
#include "dietfield/semantic.hpp"
#include "dietfield/trainer.hpp"

namespace dietfield::config {

// Full: two 8x256 networks, L_x 10 / L_d 4, view dependent, 64 coarse + 128 fine samples.
// Simplified: one 8x256 network, L_x 5, no view dependence, 128 coarse samples, no fine pass.
enum class Regime { Full, Simplified };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& name, const std::string& path = "field.regime");
render::ModelConfig regime_preset(Regime r);
double regime_lr(Regime r);  // 5e-4 full, 5e-5 simplified

// {"field": {...}, "sampling": {...}}; missing keys take the values of `defaults`.
nlohmann::json model_to_json(const render::ModelConfig& model);
render::ModelConfig model_from_json(const nlohmann::json& j, const std::string& path,
                                    const render::ModelConfig& defaults = {});

nlohmann::json train_to_json(const trainer::TrainConfig& train);
trainer::TrainConfig train_from_json(const nlohmann::json& j, const std::string& path,
                                     const trainer::TrainConfig& defaults = {});

struct SceneSection {
  std::string path;
  std::optional<std::string> test_path;  // held-out views for evaluation
  double near = 2.0;
  double far = 6.0;
  scene::Rgb background{1.0f, 1.0f, 1.0f};
  std::optional<int> downsample;
  std::optional<int> views;  // keep this many training views (seeded subsample)
  std::uint64_t subsample_seed = 0;
};

struct EncoderSection {
  std::string kind = "baseline";  // "baseline" or "vit"
  std::optional<std::string> weights_path;
  std::uint64_t seed = 0;
  int dim = 64;
};

struct OutputSection {
  std::string dir = "out";
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
};

struct RunConfig {
  SceneSection scene;
  Regime regime = Regime::Simplified;
  render::ModelConfig model = regime_preset(Regime::Simplified);
  trainer::TrainConfig train = default_train(Regime::Simplified);
  EncoderSection encoder;
  OutputSection output;

  static trainer::TrainConfig default_train(Regime r);

  void validate() const;
  // Effective configuration with every default spelled out; from_json(to_json()) reproduces it.
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

scene::LoadOptions load_options(const SceneSection& scene);

// Baseline encoder or ViT weights from disk.
std::shared_ptr<semantic::Encoder> make_encoder(const EncoderSection& encoder);

}  // namespace dietfield::config
