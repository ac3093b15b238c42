#include "dietfield/config.hpp"

#include <set>

#include "dietfield/container.hpp"
#include "dietfield/error.hpp"

namespace dietfield::config {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(join(path_, key) + ": invalid value " + j_.at(key).dump());
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  void get(const std::string& key, Eigen::Vector3d& out) {
    std::array<double, 3> v{out.x(), out.y(), out.z()};
    get(key, v);
    out = Eigen::Vector3d(v[0], v[1], v[2]);
  }

  const nlohmann::json& sub(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ValidationError("unknown key '" + join(path_, k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto rethrow_with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.rfind(path, 0) == 0 || what.rfind("unknown key", 0) == 0) throw;
    throw ValidationError(path + ": " + what);
  }
}

}  // namespace

std::string to_string(Regime r) { return r == Regime::Full ? "full" : "simplified"; }

Regime regime_from_string(const std::string& name, const std::string& path) {
  if (name == "full") return Regime::Full;
  if (name == "simplified") return Regime::Simplified;
  throw ValidationError(path + ": expected \"full\" or \"simplified\", got \"" + name + "\"");
}

render::ModelConfig regime_preset(Regime r) {
  render::ModelConfig m;
  if (r == Regime::Full) {
    m.encoding.num_freqs_position = 10;
    m.encoding.num_freqs_direction = 4;
    m.field.view_dependent = true;
    m.sampling.n_coarse = 64;
    m.sampling.n_fine = 128;
    m.sampling.separate_fine_network = true;
  } else {
    m.encoding.num_freqs_position = 5;
    m.encoding.num_freqs_direction = 0;
    m.field.view_dependent = false;
    m.sampling.n_coarse = 128;
    m.sampling.n_fine = 0;
    m.sampling.separate_fine_network = false;
  }
  return m;
}

double regime_lr(Regime r) { return r == Regime::Full ? 5e-4 : 5e-5; }

nlohmann::json model_to_json(const render::ModelConfig& m) {
  return {{"field",
           {{"depth", m.field.depth},
            {"width", m.field.width},
            {"skip_layers", m.field.skip_layers},
            {"L_x", m.encoding.num_freqs_position},
            {"L_d", m.encoding.num_freqs_direction},
            {"include_input", m.encoding.include_input},
            {"view_dependent", m.field.view_dependent},
            {"position_scale", m.field.position_scale},
            {"rematerialize", m.field.rematerialize}}},
          {"sampling",
           {{"n_coarse", m.sampling.n_coarse},
            {"n_fine", m.sampling.n_fine},
            {"perturb", m.sampling.perturb},
            {"separate_fine_network", m.sampling.separate_fine_network},
            {"chunk_rays", m.sampling.chunk_rays}}}};
}

render::ModelConfig model_from_json(const nlohmann::json& j, const std::string& path,
                                    const render::ModelConfig& defaults) {
  render::ModelConfig m = defaults;
  Section top(j, path);
  Section f(top.sub("field"), top.path("field"));
  f.get("depth", m.field.depth);
  f.get("width", m.field.width);
  f.get("skip_layers", m.field.skip_layers);
  f.get("L_x", m.encoding.num_freqs_position);
  f.get("L_d", m.encoding.num_freqs_direction);
  f.get("include_input", m.encoding.include_input);
  f.get("view_dependent", m.field.view_dependent);
  f.get("position_scale", m.field.position_scale);
  f.get("rematerialize", m.field.rematerialize);
  f.sub("regime");  // preset selector, handled by the caller
  f.finish();
  Section s(top.sub("sampling"), top.path("sampling"));
  s.get("n_coarse", m.sampling.n_coarse);
  s.get("n_fine", m.sampling.n_fine);
  s.get("perturb", m.sampling.perturb);
  s.get("separate_fine_network", m.sampling.separate_fine_network);
  s.get("chunk_rays", m.sampling.chunk_rays);
  s.finish();
  top.finish();
  rethrow_with_path(top.path("field"), [&] {
    m.field.validate();
    m.encoding.validate();
  });
  rethrow_with_path(top.path("sampling"), [&] { m.sampling.validate(); });
  return m;
}

nlohmann::json train_to_json(const trainer::TrainConfig& t) {
  nlohmann::json pd = {{"kind", t.pose_dist.kind == trainer::PoseDistKind::Hemisphere ? "hemisphere" : "interpolate"},
                       {"look_at", {t.pose_dist.look_at.x(), t.pose_dist.look_at.y(), t.pose_dist.look_at.z()}},
                       {"up", {t.pose_dist.up.x(), t.pose_dist.up.y(), t.pose_dist.up.z()}}};
  pd["radius_min"] = t.pose_dist.radius_min ? nlohmann::json(*t.pose_dist.radius_min) : nlohmann::json();
  pd["radius_max"] = t.pose_dist.radius_max ? nlohmann::json(*t.pose_dist.radius_max) : nlohmann::json();
  return {{"num_iters", t.num_iters},
          {"ray_batch_size", t.ray_batch_size},
          {"sc_interval", t.sc_interval},
          {"sc_weight", t.sc_weight},
          {"sc_render_stride", t.sc_render_stride},
          {"lr_init", t.lr_init},
          {"lr_decay_steps", t.lr_decay_steps},
          {"finetune_iters", t.finetune_iters},
          {"seed", t.seed},
          {"sc_perturb", t.sc_perturb},
          {"pose_dist", pd},
          {"restart_on_degenerate", t.restart_on_degenerate},
          {"degenerate_check_iter", t.degenerate_check_iter}};
}

trainer::TrainConfig train_from_json(const nlohmann::json& j, const std::string& path,
                                     const trainer::TrainConfig& defaults) {
  trainer::TrainConfig t = defaults;
  Section s(j, path);
  s.get("num_iters", t.num_iters);
  s.get("ray_batch_size", t.ray_batch_size);
  s.get("sc_interval", t.sc_interval);
  s.get("sc_weight", t.sc_weight);
  s.get("sc_render_stride", t.sc_render_stride);
  s.get("lr_init", t.lr_init);
  s.get("lr_decay_steps", t.lr_decay_steps);
  s.get("finetune_iters", t.finetune_iters);
  s.get("seed", t.seed);
  s.get("sc_perturb", t.sc_perturb);
  s.get("restart_on_degenerate", t.restart_on_degenerate);
  s.get("degenerate_check_iter", t.degenerate_check_iter);
  Section pd(s.sub("pose_dist"), s.path("pose_dist"));
  std::string kind = t.pose_dist.kind == trainer::PoseDistKind::Hemisphere ? "hemisphere" : "interpolate";
  pd.get("kind", kind);
  if (kind == "hemisphere") {
    t.pose_dist.kind = trainer::PoseDistKind::Hemisphere;
  } else if (kind == "interpolate") {
    t.pose_dist.kind = trainer::PoseDistKind::Interpolate;
  } else {
    throw ValidationError(pd.path("kind") + ": expected \"hemisphere\" or \"interpolate\", got \"" + kind + "\"");
  }
  pd.get("radius_min", t.pose_dist.radius_min);
  pd.get("radius_max", t.pose_dist.radius_max);
  pd.get("look_at", t.pose_dist.look_at);
  pd.get("up", t.pose_dist.up);
  pd.finish();
  s.finish();
  rethrow_with_path(path, [&] { t.validate(); });
  return t;
}

trainer::TrainConfig RunConfig::default_train(Regime r) {
  trainer::TrainConfig t;
  t.lr_init = regime_lr(r);
  return t;
}

void RunConfig::validate() const {
  if (scene.path.empty()) throw ValidationError("scene.path: required");
  if (!(scene.near > 0.0) || !(scene.far > scene.near)) throw ValidationError("scene: need 0 < near < far");
  for (float c : scene.background) {
    if (!(c >= 0.0f && c <= 1.0f)) throw ValidationError("scene.background: components must lie in [0, 1]");
  }
  if (scene.downsample && *scene.downsample < 1) throw ValidationError("scene.downsample: must be >= 1");
  if (scene.views && *scene.views < 1) throw ValidationError("scene.views: must be >= 1");
  if (encoder.kind != "baseline" && encoder.kind != "vit") {
    throw ValidationError("encoder.kind: expected \"baseline\" or \"vit\", got \"" + encoder.kind + "\"");
  }
  if (encoder.kind == "vit" && train.sc_weight > 0.0f && (!encoder.weights_path || encoder.weights_path->empty())) {
    throw ValidationError("encoder.weights_path: required when encoder.kind is \"vit\" and train.sc_weight > 0");
  }
  if (encoder.kind == "baseline" && encoder.dim < 2) throw ValidationError("encoder.D: must be >= 2");
  if (output.dir.empty()) throw ValidationError("output.dir: required");
  if (output.checkpoint_every < 0) throw ValidationError("output.checkpoint_every: must be >= 0");
  train.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  nlohmann::json sc = {{"path", scene.path},
                       {"near", scene.near},
                       {"far", scene.far},
                       {"background", scene.background},
                       {"subsample_seed", scene.subsample_seed}};
  sc["test_path"] = scene.test_path ? nlohmann::json(*scene.test_path) : nlohmann::json();
  sc["downsample"] = scene.downsample ? nlohmann::json(*scene.downsample) : nlohmann::json();
  sc["views"] = scene.views ? nlohmann::json(*scene.views) : nlohmann::json();
  j["scene"] = sc;
  const nlohmann::json m = model_to_json(model);
  j["field"] = m["field"];
  j["field"]["regime"] = to_string(regime);
  j["sampling"] = m["sampling"];
  j["train"] = train_to_json(train);
  nlohmann::json enc = {{"kind", encoder.kind}, {"seed", encoder.seed}, {"D", encoder.dim}};
  enc["weights_path"] = encoder.weights_path ? nlohmann::json(*encoder.weights_path) : nlohmann::json();
  j["encoder"] = enc;
  j["output"] = {{"dir", output.dir}, {"checkpoint_every", output.checkpoint_every}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig rc;
  Section top(j, "");

  Section sc(top.sub("scene"), "scene");
  sc.get("path", rc.scene.path);
  sc.get("test_path", rc.scene.test_path);
  sc.get("near", rc.scene.near);
  sc.get("far", rc.scene.far);
  sc.get("background", rc.scene.background);
  sc.get("downsample", rc.scene.downsample);
  sc.get("views", rc.scene.views);
  sc.get("subsample_seed", rc.scene.subsample_seed);
  sc.finish();

  const nlohmann::json& field = top.sub("field");
  std::string regime = to_string(rc.regime);
  if (field.is_object() && field.contains("regime")) {
    if (!field["regime"].is_string()) throw ValidationError("field.regime: expected a string");
    regime = field["regime"].get<std::string>();
  }
  rc.regime = regime_from_string(regime);
  nlohmann::json model = nlohmann::json::object();
  model["field"] = field;
  if (top.has("sampling")) model["sampling"] = top.sub("sampling");
  top.sub("sampling");
  rc.model = model_from_json(model, "", regime_preset(rc.regime));
  rc.train = train_from_json(top.sub("train"), "train", default_train(rc.regime));

  Section enc(top.sub("encoder"), "encoder");
  enc.get("kind", rc.encoder.kind);
  enc.get("weights_path", rc.encoder.weights_path);
  enc.get("seed", rc.encoder.seed);
  enc.get("D", rc.encoder.dim);
  enc.finish();

  Section out(top.sub("output"), "output");
  out.get("dir", rc.output.dir);
  out.get("checkpoint_every", rc.output.checkpoint_every);
  out.finish();

  top.finish();
  rc.validate();
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in '" + path + "': " + e.what());
  }
  return from_json(j);
}

scene::LoadOptions load_options(const SceneSection& s) {
  scene::LoadOptions o;
  o.near = s.near;
  o.far = s.far;
  o.background = s.background;
  o.downsample = s.downsample;
  return o;
}

std::shared_ptr<semantic::Encoder> make_encoder(const EncoderSection& e) {
  if (e.kind == "vit") {
    if (!e.weights_path) throw ValidationError("encoder.weights_path: required for kind \"vit\"");
    return semantic::load_vit(*e.weights_path);
  }
  if (e.kind != "baseline") throw ValidationError("encoder.kind: unknown encoder '" + e.kind + "'");
  return std::make_shared<semantic::BaselineEncoder>(e.seed, e.dim);
}

}  // namespace dietfield::config
