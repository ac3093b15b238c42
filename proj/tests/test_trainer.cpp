#include <atomic>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dietfield/adam.hpp"
#include "dietfield/error.hpp"
#include "dietfield/fixture.hpp"
#include "dietfield/trainer.hpp"
#include "test_util.hpp"

using namespace dietfield;
using namespace dietfield::diff;
using namespace dietfield::trainer;

namespace {

scene::SceneDataset small_dataset(int views, int size, std::uint64_t seed = 0) {
  fixture::FixtureSpec spec;
  spec.size = size;
  spec.views = views;
  spec.seed = seed;
  spec.supersample = 1;
  scene::SceneDataset ds;
  ds.camera_angle_x = spec.camera_angle_x;
  ds.intrinsics = scene::CameraIntrinsics::from_fov(size, size, spec.camera_angle_x);
  int i = 0;
  for (const scene::Pose& pose : fixture::fixture_poses(spec)) {
    scene::PosedImage v;
    v.file_path = "./r_" + std::to_string(i++);
    v.pose = pose;
    v.image = fixture::render_view_rgb(spec.kind, ds.intrinsics, pose, 1, ds.background);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

render::ModelConfig tiny_model(bool fine = false) {
  render::ModelConfig m;
  m.field.depth = 2;
  m.field.width = 32;
  m.field.skip_layers = {};
  m.field.view_dependent = false;
  m.encoding.num_freqs_position = 4;
  m.encoding.num_freqs_direction = 0;
  m.sampling.n_coarse = 16;
  m.sampling.n_fine = fine ? 8 : 0;
  m.sampling.separate_fine_network = fine;
  return m;
}

TrainConfig tiny_config(std::int64_t iters, float lambda, std::int64_t k = 10) {
  TrainConfig c;
  c.num_iters = iters;
  c.ray_batch_size = 64;
  c.sc_interval = k;
  c.sc_weight = lambda;
  c.sc_render_stride = 4;
  c.lr_init = 5e-3;
  c.seed = 3;
  return c;
}

// Counts encode() calls.
class CountingEncoder final : public semantic::Encoder {
 public:
  CountingEncoder() : inner_(1, 16) {}
  Var encode(Tape& tape, Var image) const override {
    ++calls;
    return inner_.encode(tape, image);
  }
  int dim() const override { return inner_.dim(); }
  std::string describe() const override { return "counting"; }
  mutable std::atomic<int> calls{0};

 private:
  semantic::BaselineEncoder inner_;
};

bool same_params(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    if (!b.count(k) || !v.identical(b.at(k))) return false;
  }
  return true;
}

bool same_state(const TrainState& a, const TrainState& b) {
  return same_params(a.coarse, b.coarse) && a.fine.has_value() == b.fine.has_value() &&
         (!a.fine || same_params(*a.fine, *b.fine)) && same_params(a.adam.m, b.adam.m) &&
         same_params(a.adam.v, b.adam.v) && a.adam.step == b.adam.step && a.rng == b.rng &&
         a.iteration == b.iteration && a.init_seed == b.init_seed;
}

}  // namespace

TEST_CASE("adam matches a scalar oracle") {
  NamedTensors p{{"w", Tensor(Shape{1}, 0.5f)}};
  optim::AdamState st;
  optim::adam_update(p, {{"w", Tensor(Shape{1}, 1.0f)}}, st, 1e-3);
  CHECK(p.at("w")[0] == static_cast<float>(0.5 - 1e-3 / (1.0 + 1e-8)));
  CHECK(st.step == 1);

  // Several steps with varying gradients against an independent double implementation.
  NamedTensors q{{"w", Tensor(Shape{2}, {0.1f, -0.2f})}};
  optim::AdamState s2;
  double theta[2] = {0.1f, -0.2f}, m[2] = {0, 0}, v[2] = {0, 0};
  Rng rng(4);
  for (int t = 1; t <= 20; ++t) {
    const float g[2] = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal() * 1e-3)};
    optim::adam_update(q, {{"w", Tensor(Shape{2}, {g[0], g[1]})}}, s2, 1e-2);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      theta[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(std::abs(q.at("w")[i] - theta[i]) <= 1e-6);
    }
  }
}

TEST_CASE("adam edge cases") {
  NamedTensors p{{"a", testutil::random_tensor({3, 2}, 1)}};
  const Tensor before = p.at("a");
  optim::AdamState st;
  optim::adam_update(p, {{"a", Tensor(Shape{3, 2}, 0.0f)}}, st, 0.1);
  CHECK(p.at("a").identical(before));
  optim::adam_update(p, {}, st, 0.1);  // missing gradient counts as zero
  CHECK(p.at("a").identical(before));

  NamedTensors s{{"x", Tensor(Shape{1}, 0.0f)}};
  optim::AdamState ss;
  optim::adam_update(s, {{"x", Tensor(Shape{1}, 2.0f)}}, ss, 0.01);
  const float first = s.at("x")[0];
  optim::adam_update(s, {{"x", Tensor(Shape{1}, 2.0f)}}, ss, 0.01);
  CHECK(first < 0.0f);
  CHECK(s.at("x")[0] < first);

  NamedTensors bad{{"x", Tensor(Shape{1}, 0.0f)}};
  optim::AdamState sb;
  CHECK_THROWS_AS(optim::adam_update(bad, {{"x", Tensor(Shape{1}, std::nanf(""))}}, sb, 0.1), NonFiniteError);
  CHECK(sb.step == 0);
  CHECK(bad.at("x")[0] == 0.0f);
  CHECK_THROWS_AS(optim::adam_update(bad, {{"x", Tensor(Shape{2}, 0.0f)}}, sb, 0.1), ShapeError);
}

TEST_CASE("learning rate schedule") {
  CHECK(optim::decayed_lr(5e-4, 250000, 0) == doctest::Approx(5e-4));
  CHECK(optim::decayed_lr(5e-4, 250000, 250000) == doctest::Approx(5e-5));
  double prev = 1.0;
  for (std::int64_t it = 1; it < 5000; it += 97) {
    const double lr = optim::decayed_lr(1e-3, 1000, it);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("target embeddings") {
  scene::SceneDataset ds = small_dataset(8, 16);
  ds.views[3].image = ds.views[1].image;
  const semantic::BaselineEncoder enc(2, 16);
  const auto targets = precompute_target_embeddings(ds, enc);
  REQUIRE(targets.size() == 8);
  for (const auto& t : targets) {
    double n = 0.0;
    for (float v : t.values()) n += static_cast<double>(v) * v;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(targets[3].identical(targets[1]));
  CHECK(precompute_target_embeddings(ds, enc)[5].identical(targets[5]));
}

TEST_CASE("semantic loss cadence") {
  const scene::SceneDataset ds = small_dataset(3, 12);
  SUBCASE("lambda = 0 never calls the encoder") {
    auto enc = std::make_shared<CountingEncoder>();
    const TrainResult r = train(ds, tiny_model(), tiny_config(30, 0.0f), enc);
    CHECK(enc->calls == 0);
    CHECK(r.log.sc_count() == 0);
    CHECK(r.log.entries.size() == 30);
  }
  SUBCASE("every K-th iteration") {
    auto enc = std::make_shared<CountingEncoder>();
    const TrainResult r = train(ds, tiny_model(), tiny_config(100, 0.1f, 16), enc);
    CHECK(r.log.sc_count() == 6);
    CHECK(enc->calls == 3 + 6);  // targets, then one rendered view per SC step
    for (const auto& e : r.log.entries) CHECK(e.sc.has_value() == (e.iter % 16 == 0));
  }
  SUBCASE("encoder required when lambda > 0") {
    CHECK_THROWS_AS(Trainer(ds, tiny_model(), tiny_config(10, 0.1f), nullptr), ValidationError);
  }
}

TEST_CASE("training reduces the ray loss") {
  const scene::SceneDataset ds = small_dataset(4, 16);
  TrainConfig c = tiny_config(2000, 0.0f);
  c.ray_batch_size = 128;
  const TrainResult r = train(ds, tiny_model(), c, nullptr);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    first += r.log.entries[static_cast<std::size_t>(i)].mse / 50.0;
    last += r.log.entries[r.log.entries.size() - 1 - static_cast<std::size_t>(i)].mse / 50.0;
  }
  INFO("first " << first << " last " << last);
  CHECK(last < 0.5 * first);
}

TEST_CASE("coarse and fine networks both train") {
  const scene::SceneDataset ds = small_dataset(2, 8);
  const TrainResult r = train(ds, tiny_model(true), tiny_config(5, 0.0f), nullptr);
  REQUIRE(r.state.fine.has_value());
  for (const auto& e : r.log.entries) CHECK(e.mse_coarse.has_value());
  const TrainState init = init_state(tiny_model(true), tiny_config(5, 0.0f));
  CHECK_FALSE(same_params(init.fine.value(), *r.state.fine));
  CHECK_FALSE(same_params(init.coarse, r.state.coarse));
}

TEST_CASE("runs are deterministic") {
  const scene::SceneDataset ds = small_dataset(3, 12);
  auto enc = std::make_shared<semantic::BaselineEncoder>(1, 16);
  const TrainResult a = train(ds, tiny_model(true), tiny_config(25, 0.1f, 5), enc);
  const TrainResult b = train(ds, tiny_model(true), tiny_config(25, 0.1f, 5), enc);
  CHECK(a.log.same_as(b.log));
  CHECK(same_state(a.state, b.state));
  TrainConfig other = tiny_config(25, 0.1f, 5);
  other.seed = 4;
  CHECK_FALSE(train(ds, tiny_model(true), other, enc).log.same_as(a.log));

  double prev = 1.0;
  for (const auto& e : a.log.entries) {
    CHECK(e.lr <= prev);
    prev = e.lr;
  }
  std::ostringstream out;
  a.log.write_jsonl(out);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 25);
}

TEST_CASE("fine-tuning") {
  const scene::SceneDataset ds = small_dataset(3, 12);
  auto enc = std::make_shared<semantic::BaselineEncoder>(1, 16);
  TrainConfig c = tiny_config(10, 0.1f, 2);
  TrainResult r = train(ds, tiny_model(), c, enc);
  const TrainState before = r.state;
  finetune_mse(r.state, r.log, ds, tiny_model(), c);  // finetune_iters = 0
  CHECK(same_state(before, r.state));
  CHECK(r.log.entries.size() == 10);

  c.finetune_iters = 12;
  finetune_mse(r.state, r.log, ds, tiny_model(), c);
  CHECK(r.state.iteration == 22);
  REQUIRE(r.log.entries.size() == 22);
  for (std::size_t i = 10; i < 22; ++i) {
    CHECK(r.log.entries[i].phase == "finetune");
    CHECK_FALSE(r.log.entries[i].sc.has_value());
  }
}

TEST_CASE("checkpoints") {
  testutil::TempDir dir("ckpt");
  const scene::SceneDataset ds = small_dataset(3, 12);
  auto enc = std::make_shared<semantic::BaselineEncoder>(1, 16);
  const render::ModelConfig model = tiny_model(true);
  const TrainConfig config = tiny_config(10, 0.1f, 3);

  SUBCASE("initial parameters are stored exactly") {
    Checkpoint ck{init_state(model, config), model, config, {{"note", "x"}}};
    save_checkpoint(dir / "init.dnrf", ck);
    const Checkpoint back = load_checkpoint(dir / "init.dnrf");
    CHECK(same_state(back.state, ck.state));
    CHECK(back.metadata["note"] == "x");
    CHECK(back.config.sc_interval == 3);
    CHECK(back.model.sampling.n_fine == 8);
  }
  SUBCASE("resume is bit-identical") {
    const Trainer trainer(ds, model, config, enc);
    TrainState whole = init_state(model, config);
    TrainLog whole_log;
    trainer.run(whole, 10, whole_log);

    TrainState part = init_state(model, config);
    TrainLog part_log;
    trainer.run(part, 5, part_log);
    save_checkpoint(dir / "mid.dnrf", Checkpoint{part, model, config, {}});
    TrainState resumed = load_checkpoint(dir / "mid.dnrf").state;
    trainer.run(resumed, 10, part_log);
    CHECK(same_state(whole, resumed));
    CHECK(whole_log.same_as(part_log));
  }
  SUBCASE("corrupt files are rejected") {
    save_checkpoint(dir / "ok.dnrf", Checkpoint{init_state(model, config), model, config, {}});
    const std::string bytes = io::read_file(dir / "ok.dnrf");
    io::write_file(dir / "short.dnrf", bytes.substr(0, bytes.size() - 100));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.dnrf"), FormatError);
    std::string wrong = bytes;
    wrong[4] = 2;
    io::write_file(dir / "version.dnrf", wrong);
    CHECK_THROWS_AS(load_checkpoint(dir / "version.dnrf"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.dnrf"), IoError);
  }
}

TEST_CASE("restart on degenerate renderings") {
  const scene::SceneDataset ds = small_dataset(2, 8);
  TrainConfig c = tiny_config(4, 0.0f);
  c.lr_init = 1e-6;
  c.restart_on_degenerate = true;
  c.degenerate_check_iter = 2;
  const render::ModelConfig model = tiny_model();
  const Trainer trainer(ds, model, c, nullptr);
  TrainState s = init_state(model, c);
  s.coarse.at("sigma.bias") = Tensor(Shape{1}, 40.0f);  // opaque everywhere
  TrainLog log;
  trainer.run(s, 4, log);
  CHECK(s.restarts == 1);
  CHECK(s.init_seed == c.seed + 1);
  CHECK(s.iteration == 4);
  CHECK(log.entries[1].restarted);
  CHECK_FALSE(log.entries[0].restarted);

  // A healthy init is left alone.
  TrainState h = init_state(model, c);
  TrainLog hl;
  trainer.run(h, 4, hl);
  CHECK(h.restarts == 0);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.sc_interval = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.sc_weight = -1.0f;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.ray_batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.finetune_iters = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
