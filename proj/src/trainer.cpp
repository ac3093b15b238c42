#include "dietfield/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "dietfield/config.hpp"
#include "dietfield/container.hpp"
#include "dietfield/losses.hpp"

namespace dietfield::trainer {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

void TrainConfig::validate() const {
  if (num_iters < 0) throw ValidationError("train.num_iters must be >= 0");
  if (ray_batch_size < 1) throw ValidationError("train.ray_batch_size must be >= 1");
  if (sc_interval < 1) throw ValidationError("train.sc_interval must be >= 1");
  if (!(sc_weight >= 0.0f) || !std::isfinite(sc_weight)) throw ValidationError("train.sc_weight must be >= 0");
  if (sc_render_stride < 1) throw ValidationError("train.sc_render_stride must be >= 1");
  if (!(lr_init > 0.0)) throw ValidationError("train.lr_init must be positive");
  if (!(lr_decay_steps > 0.0)) throw ValidationError("train.lr_decay_steps must be positive");
  if (finetune_iters < 0) throw ValidationError("train.finetune_iters must be >= 0");
  if (degenerate_check_iter < 1) throw ValidationError("train.degenerate_check_iter must be >= 1");
  if (pose_dist.radius_min && pose_dist.radius_max && !(*pose_dist.radius_min > 0.0 && *pose_dist.radius_max >= *pose_dist.radius_min)) {
    throw ValidationError("train.pose_dist: need 0 < radius_min <= radius_max");
  }
}

namespace {

bool has_fine_network(const render::ModelConfig& model) {
  return model.sampling.n_fine > 0 && model.sampling.separate_fine_network;
}

void init_params(TrainState& s, const render::ModelConfig& model) {
  s.coarse = field::init_params(model.field, model.encoding, s.init_seed);
  s.fine.reset();
  if (has_fine_network(model)) {
    s.fine = field::init_params(model.field, model.encoding, Rng::derive(s.init_seed, 1).next_u64());
  }
  s.adam = optim::AdamState{};
}

// Optimizer-side view: "coarse/<name>" and "fine/<name>".
diff::NamedTensors flatten(const TrainState& s) {
  diff::NamedTensors out;
  for (const auto& [k, v] : s.coarse) out.emplace("coarse/" + k, v);
  if (s.fine) {
    for (const auto& [k, v] : *s.fine) out.emplace("fine/" + k, v);
  }
  return out;
}

void unflatten(const diff::NamedTensors& flat, TrainState& s) {
  for (auto& [k, v] : s.coarse) v = flat.at("coarse/" + k);
  if (s.fine) {
    for (auto& [k, v] : *s.fine) v = flat.at("fine/" + k);
  }
}

}  // namespace

TrainState init_state(const render::ModelConfig& model, const TrainConfig& config) {
  TrainState s;
  s.init_seed = config.seed;
  init_params(s, model);
  s.rng = Rng::derive(config.seed, 0);
  return s;
}

// --- log ----------------------------------------------------------------------------------------

nlohmann::json LogEntry::to_json() const {
  nlohmann::json j = {{"iter", iter}, {"mse", mse}};
  if (mse_coarse) j["mse_coarse"] = *mse_coarse;
  if (sc) j["sc"] = *sc;
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  j["phase"] = phase;
  if (restarted) j["restarted"] = true;
  return j;
}

bool LogEntry::same_as(const LogEntry& o) const {
  return iter == o.iter && mse == o.mse && mse_coarse == o.mse_coarse && sc == o.sc && lr == o.lr &&
         phase == o.phase && restarted == o.restarted;
}

std::int64_t TrainLog::sc_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries) n += e.sc.has_value();
  return n;
}

bool TrainLog::same_as(const TrainLog& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].same_as(other.entries[i])) return false;
  }
  return true;
}

void TrainLog::write_jsonl(std::ostream& out) const {
  for (const auto& e : entries) out << e.to_json().dump() << '\n';
}

// --- trainer ------------------------------------------------------------------------------------

std::vector<semantic::Embedding> precompute_target_embeddings(const scene::SceneDataset& dataset,
                                                              const semantic::Encoder& encoder) {
  std::vector<semantic::Embedding> out;
  out.reserve(dataset.views.size());
  for (const auto& v : dataset.views) out.push_back(encoder.embed(v.image));
  return out;
}

Trainer::Trainer(const scene::SceneDataset& dataset, render::ModelConfig model, TrainConfig config,
                 std::shared_ptr<const semantic::Encoder> encoder)
    : dataset_(dataset), model_(std::move(model)), config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  model_.field.validate();
  model_.encoding.validate();
  model_.sampling.validate();
  if (dataset_.views.empty()) throw ValidationError("train: dataset has no views");
  if (config_.sc_weight > 0.0f) {
    if (!encoder_) throw ValidationError("train: sc_weight > 0 requires an encoder");
    targets_ = precompute_target_embeddings(dataset_, *encoder_);
  }
  std::vector<scene::Pose> cameras;
  for (const auto& v : dataset_.views) cameras.push_back(v.pose);
  const auto& pd = config_.pose_dist;
  if (pd.kind == PoseDistKind::Hemisphere) {
    posedist::Hemisphere h = posedist::hemisphere_for(cameras, pd.look_at, pd.up);
    if (pd.radius_min) h.radius_min = *pd.radius_min;
    if (pd.radius_max) h.radius_max = *pd.radius_max;
    h.validate();
    pose_dist_ = h;
  } else {
    posedist::Interpolation d{cameras, pd.look_at, pd.up};
    if (config_.sc_weight > 0.0f) d.validate();
    pose_dist_ = d;
  }
}

render::Bounds Trainer::bounds() const { return {dataset_.near, dataset_.far, dataset_.background}; }

LogEntry Trainer::step(TrainState& state, bool semantic) const {
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t it = state.iteration + 1;
  LogEntry entry;
  entry.iter = it;
  entry.lr = optim::decayed_lr(config_.lr_init, config_.lr_decay_steps, it - 1);
  // Draw from a copy so a failed step leaves the state untouched.
  Rng rng = state.rng;

  const auto& k = dataset_.intrinsics;
  const std::int64_t hw = static_cast<std::int64_t>(k.height) * k.width;
  const std::uint64_t total = static_cast<std::uint64_t>(hw) * dataset_.views.size();
  const std::int64_t batch = config_.ray_batch_size;
  scene::RayBundle rays;
  Tensor origins(Shape{batch, 3}), dirs(Shape{batch, 3}), target(Shape{batch, 3});
  float* po = origins.mutable_data();
  float* pd = dirs.mutable_data();
  float* pt = target.mutable_data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const std::uint64_t idx = rng.below(total);
    const auto& view = dataset_.views[idx / static_cast<std::uint64_t>(hw)];
    const std::int64_t p = static_cast<std::int64_t>(idx % static_cast<std::uint64_t>(hw));
    const std::int64_t i = p / k.width, j = p % k.width;
    const Eigen::Vector3d d = scene::pixel_direction(k, view.pose, i + 0.5, j + 0.5);
    const Eigen::Vector3d o = view.pose.origin();
    for (int c = 0; c < 3; ++c) {
      po[b * 3 + c] = static_cast<float>(o[c]);
      pd[b * 3 + c] = static_cast<float>(d[c]);
      pt[b * 3 + c] = view.image[p * 3 + c];
    }
  }
  rays.origins = origins;
  rays.directions = dirs;

  Tape tape;
  render::ModelVars vars{field::as_parameters(tape, state.coarse), std::nullopt};
  if (state.fine) vars.fine = field::as_parameters(tape, *state.fine);
  const render::RayRender r = render::render_rays(tape, vars, model_, rays, bounds(), rng.next_u64());
  Var gt = tape.constant(target);
  Var mse = losses::mse_rays(r.output.rgb, gt);
  entry.mse = mse.value().item();
  Var loss = mse;
  if (r.coarse) {
    Var mc = losses::mse_rays(r.coarse->rgb, gt);
    entry.mse_coarse = mc.value().item();
    loss = loss + mc;
  }

  if (semantic && config_.sc_weight > 0.0f && it % config_.sc_interval == 0) {
    const std::size_t v = static_cast<std::size_t>(rng.below(dataset_.views.size()));
    const scene::Pose pose = posedist::sample_pose(pose_dist_, rng);
    render::ModelConfig sc_model = model_;
    sc_model.sampling.perturb = config_.sc_perturb;
    Var image = render::render_image(tape, vars, sc_model, k, pose, config_.sc_render_stride, bounds(), rng.next_u64());
    Var sc = losses::sc_cosine(tape.constant(targets_[v]), encoder_->encode(tape, image), config_.sc_weight);
    entry.sc = sc.value().item();
    loss = loss + sc;
  }

  if (!std::isfinite(loss.value().item())) throw DivergenceError(it, "non-finite loss");
  const diff::Gradients grads = tape.backward(loss);
  diff::NamedTensors flat_grads;
  for (const auto& [name, v] : vars.coarse) flat_grads.emplace("coarse/" + name, grads.of(v));
  if (vars.fine) {
    for (const auto& [name, v] : *vars.fine) flat_grads.emplace("fine/" + name, grads.of(v));
  }
  diff::NamedTensors params = flatten(state);
  optim::AdamState adam = state.adam;
  try {
    optim::adam_update(params, flat_grads, adam, entry.lr);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(it, e.what());
  }
  unflatten(params, state);
  state.adam = std::move(adam);
  state.rng = rng;
  state.iteration = it;

  if (config_.restart_on_degenerate && it == config_.degenerate_check_iter && degenerate(state)) {
    state.init_seed += 1;
    init_params(state, model_);
    ++state.restarts;
    entry.restarted = true;
  }
  entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return entry;
}

bool Trainer::degenerate(const TrainState& state) const {
  render::ModelConfig probe = model_;
  probe.sampling.perturb = false;
  const auto rays = scene::camera_rays(dataset_.intrinsics, dataset_.views.front().pose);
  const auto out = render::render_values(state.coarse, state.fine ? &*state.fine : nullptr, probe, rays, bounds(), 0);
  std::int64_t opaque = 0;
  for (float a : out.acc.values()) opaque += a > 0.99f;
  return static_cast<double>(opaque) > 0.95 * static_cast<double>(out.acc.size());
}

void Trainer::run(TrainState& state, std::int64_t until, TrainLog& log, const std::string& phase,
                  const std::function<void(const TrainState&, const LogEntry&)>& on_step) const {
  const bool semantic = phase != "finetune";
  while (state.iteration < until) {
    LogEntry e = step(state, semantic);
    e.phase = phase;
    log.entries.push_back(e);
    if (on_step) on_step(state, e);
  }
}

TrainResult train(const scene::SceneDataset& dataset, const render::ModelConfig& model, const TrainConfig& config,
                  std::shared_ptr<const semantic::Encoder> encoder) {
  Trainer t(dataset, model, config, std::move(encoder));
  TrainResult r{init_state(model, config), {}};
  t.run(r.state, config.num_iters, r.log);
  return r;
}

void finetune_mse(TrainState& state, TrainLog& log, const scene::SceneDataset& dataset,
                  const render::ModelConfig& model, const TrainConfig& config) {
  TrainConfig c = config;
  c.sc_weight = 0.0f;
  Trainer t(dataset, model, c, nullptr);
  t.run(state, state.iteration + config.finetune_iters, log, "finetune");
}

// --- checkpoints --------------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const TrainState& s = ck.state;
  nlohmann::json header = {{"iteration", s.iteration},
                           {"init_seed", s.init_seed},
                           {"restarts", s.restarts},
                           {"rng", s.rng.serialize()},
                           {"adam_step", s.adam.step},
                           {"has_fine", s.fine.has_value()},
                           {"model", config::model_to_json(ck.model)},
                           {"train", config::train_to_json(ck.config)},
                           {"metadata", ck.metadata}};
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [k, v] : flatten(s)) {
    tensors.emplace_back("param/" + k, v);
    auto m = s.adam.m.find(k);
    auto vv = s.adam.v.find(k);
    if (m != s.adam.m.end()) tensors.emplace_back("adam.m/" + k, m->second);
    if (vv != s.adam.v.end()) tensors.emplace_back("adam.v/" + k, vv->second);
  }
  io::write_container(path, kCheckpointMagic, kCheckpointVersion, header, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const io::ContainerContents c = io::read_container(path, kCheckpointMagic, kCheckpointVersion);
  const std::string where = "checkpoint '" + path.string() + "'";
  Checkpoint ck;
  try {
    const auto& h = c.header;
    ck.model = config::model_from_json(h.at("model"), "model");
    ck.config = config::train_from_json(h.at("train"), "train");
    ck.state.iteration = h.at("iteration").get<std::int64_t>();
    ck.state.init_seed = h.at("init_seed").get<std::uint64_t>();
    ck.state.restarts = h.at("restarts").get<int>();
    ck.state.rng = Rng::deserialize(h.at("rng").get<std::string>());
    ck.state.adam.step = h.at("adam_step").get<std::int64_t>();
    if (h.at("has_fine").get<bool>()) ck.state.fine.emplace();
    ck.metadata = h.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": bad header: " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(where + ": " + e.what());
  }
  const auto shapes = field::param_shapes(ck.model.field, ck.model.encoding);
  auto load_net = [&](const std::string& prefix, field::FieldParams& net) {
    for (const auto& [name, shape] : shapes) {
      const Tensor* t = c.find("param/" + prefix + "/" + name);
      if (!t) throw FormatError(where + ": missing tensor 'param/" + prefix + "/" + name + "'");
      if (t->shape() != shape) {
        throw FormatError(where + ": tensor 'param/" + prefix + "/" + name + "' has shape " +
                          diff::shape_string(t->shape()) + ", expected " + diff::shape_string(shape));
      }
      net.emplace(name, *t);
      const std::string key = prefix + "/" + name;
      const Tensor* m = c.find("adam.m/" + key);
      const Tensor* v = c.find("adam.v/" + key);
      if (ck.state.adam.step > 0 && (!m || !v)) throw FormatError(where + ": missing Adam moments for '" + key + "'");
      if (m) ck.state.adam.m.emplace(key, *m);
      if (v) ck.state.adam.v.emplace(key, *v);
    }
  };
  load_net("coarse", ck.state.coarse);
  if (ck.state.fine) load_net("fine", *ck.state.fine);
  return ck;
}

}  // namespace dietfield::trainer
