#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"

#include "dietfield/cli.hpp"
#include "dietfield/container.hpp"
#include "dietfield/image_io.hpp"
#include "dietfield/metrics.hpp"
#include "dietfield/posedist.hpp"
#include "dietfield/trainer.hpp"

namespace dietfield::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json psnr_json(double v) { return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v); }

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_file(path, j.dump(2) + "\n"); }

nlohmann::json scene_metadata(const scene::SceneDataset& ds) {
  return {{"height", ds.intrinsics.height}, {"width", ds.intrinsics.width},
          {"focal", ds.intrinsics.focal},   {"camera_angle_x", ds.camera_angle_x},
          {"near", ds.near},                {"far", ds.far},
          {"background", ds.background}};
}

struct LoadedModel {
  trainer::Checkpoint ck;
  scene::CameraIntrinsics intrinsics;
  render::Bounds bounds;
  render::ModelConfig model;  // deterministic sampling
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.ck = trainer::load_checkpoint(path);
  const auto& meta = m.ck.metadata;
  if (!meta.contains("scene")) throw FormatError("checkpoint '" + path.string() + "' lacks scene metadata");
  const auto& s = meta["scene"];
  m.intrinsics.height = s.at("height").get<int>();
  m.intrinsics.width = s.at("width").get<int>();
  m.intrinsics.focal = s.at("focal").get<double>();
  m.intrinsics.validate();
  m.bounds.near = s.at("near").get<double>();
  m.bounds.far = s.at("far").get<double>();
  m.bounds.background = s.at("background").get<scene::Rgb>();
  m.model = m.ck.model;
  m.model.sampling.perturb = false;
  return m;
}

diff::Tensor render_pose(const LoadedModel& m, const scene::Pose& pose, int stride) {
  const auto& st = m.ck.state;
  return render::render_image_values(st.coarse, st.fine ? &*st.fine : nullptr, m.model, m.intrinsics, pose, stride,
                                     m.bounds, 0);
}

// Ground truth subsampled on the same strided grid.
diff::Tensor strided(const diff::Tensor& image, int stride) {
  if (stride == 1) return image;
  const std::int64_t h = image.dim(0), w = image.dim(1);
  const std::int64_t gh = (h + stride - 1) / stride, gw = (w + stride - 1) / stride;
  diff::Tensor out(diff::Shape{gh, gw, 3});
  float* po = out.mutable_data();
  for (std::int64_t i = 0; i < gh; ++i) {
    for (std::int64_t j = 0; j < gw; ++j) {
      for (int c = 0; c < 3; ++c) po[(i * gw + j) * 3 + c] = image[((i * stride) * w + j * stride) * 3 + c];
    }
  }
  return out;
}

nlohmann::json evaluate(const scene::SceneDataset& ds, const std::function<diff::Tensor(const scene::PosedImage&)>& predict,
                        const std::string& split) {
  nlohmann::json views = nlohmann::json::array();
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const auto& view = ds.views[v];
    const diff::Tensor pred = predict(view);
    const double p = metrics::psnr(pred, view.image);
    const double s = metrics::ssim(pred, view.image);
    sum_psnr += p;
    sum_ssim += s;
    views.push_back({{"index", v}, {"file_path", view.file_path}, {"psnr", psnr_json(p)}, {"ssim", s}});
  }
  const double n = static_cast<double>(ds.views.size());
  return {{"split", split}, {"views", views}, {"mean_psnr", psnr_json(sum_psnr / n)}, {"mean_ssim", sum_ssim / n}};
}

}  // namespace

int cmd_make_fixture(const fixture::FixtureSpec& spec, const fs::path& out_dir) {
  fixture::write_fixture(spec, out_dir);
  std::cout << "wrote " << spec.views << " views of " << fixture::to_string(spec.kind) << " to " << out_dir.string()
            << "\n";
  return 0;
}

int cmd_train(const config::RunConfig& rc, const TrainOptions& options) {
  rc.validate();
  const fs::path out = rc.output.dir;
  fs::create_directories(out);
  write_json(out / "effective_config.json", rc.to_json());

  scene::SceneDataset ds = scene::load_scene(rc.scene.path, config::load_options(rc.scene));
  if (rc.scene.views) ds = scene::subsample_views(ds, static_cast<std::size_t>(*rc.scene.views), rc.scene.subsample_seed);
  std::shared_ptr<semantic::Encoder> encoder;
  if (rc.train.sc_weight > 0.0f) encoder = config::make_encoder(rc.encoder);

  trainer::Checkpoint ck;
  ck.model = rc.model;
  ck.config = rc.train;
  ck.metadata = {{"scene", scene_metadata(ds)}};
  if (options.resume) {
    trainer::Checkpoint prev = trainer::load_checkpoint(*options.resume);
    ck.state = std::move(prev.state);
  } else {
    ck.state = trainer::init_state(rc.model, rc.train);
  }

  const auto started = std::chrono::system_clock::now();
  std::ofstream log_file(out / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!log_file) throw IoError("cannot write '" + (out / "train_log.jsonl").string() + "'");
  trainer::TrainLog log;
  auto on_step = [&](const trainer::TrainState& s, const trainer::LogEntry& e) {
    log_file << e.to_json().dump() << '\n';
    if (rc.output.checkpoint_every > 0 && s.iteration % rc.output.checkpoint_every == 0) {
      trainer::Checkpoint snap{s, ck.model, ck.config, ck.metadata};
      trainer::save_checkpoint(out / "checkpoints" / ("ckpt_" + std::to_string(s.iteration) + ".dnrf"), snap);
    }
    if (!options.quiet && (e.iter % 100 == 0 || e.sc)) {
      if (e.iter % 100 == 0) {
        std::cout << e.phase << " iter " << e.iter << " mse " << e.mse << (e.sc ? " sc " + std::to_string(*e.sc) : "")
                  << " lr " << e.lr << "\n";
      }
    }
  };
  try {
    trainer::Trainer t(ds, rc.model, rc.train, encoder);
    t.run(ck.state, rc.train.num_iters, log, "train", on_step);
    if (rc.train.finetune_iters > 0) {
      trainer::TrainConfig ft = rc.train;
      ft.sc_weight = 0.0f;
      trainer::Trainer f(ds, rc.model, ft, nullptr);
      const std::int64_t target = std::max(ck.state.iteration, rc.train.num_iters) + rc.train.finetune_iters;
      f.run(ck.state, target, log, "finetune", on_step);
    }
  } catch (const trainer::DivergenceError& e) {
    log_file.flush();
    trainer::save_checkpoint(out / "diverged.dnrf", ck);
    std::cerr << "training diverged: " << e.what() << "; state before the failing iteration saved to "
              << (out / "diverged.dnrf").string() << "\n";
    return 3;
  }
  trainer::save_checkpoint(out / "checkpoint.dnrf", ck);

  if (rc.scene.test_path) {
    scene::SceneDataset test = scene::load_scene(*rc.scene.test_path, config::load_options(rc.scene));
    const LoadedModel m = load_model(out / "checkpoint.dnrf");
    write_json(out / "eval.json", evaluate(test, [&](const scene::PosedImage& v) { return render_pose(m, v.pose, 1); }, "test"));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::system_clock::now() - started).count();
  write_json(out / "metadata.json", {{"started", timestamp()}, {"seconds", seconds}, {"restarts", ck.state.restarts}});
  if (!options.quiet) std::cout << "finished at iteration " << ck.state.iteration << "; outputs in " << out.string() << "\n";
  return 0;
}

int cmd_render(const RenderOptions& o) {
  if (o.stride < 1) throw ValidationError("render: stride must be >= 1");
  const LoadedModel m = load_model(o.checkpoint);
  fs::create_directories(o.out_dir);
  if (o.scene) {
    scene::LoadOptions lo;
    lo.near = m.bounds.near;
    lo.far = m.bounds.far;
    lo.background = m.bounds.background;
    const scene::SceneDataset ds = scene::load_scene(*o.scene, lo);
    nlohmann::json records = nlohmann::json::array();
    for (std::size_t v = 0; v < ds.views.size(); ++v) {
      const diff::Tensor img = render_pose(m, ds.views[v].pose, o.stride);
      io::write_png(o.out_dir / ("view_" + std::to_string(v) + ".png"), io::to_rgb8(img));
      const double p = ds.intrinsics.height == m.intrinsics.height && ds.intrinsics.width == m.intrinsics.width
                           ? metrics::psnr(img, strided(ds.views[v].image, o.stride))
                           : std::nan("");
      records.push_back({{"index", v}, {"file_path", ds.views[v].file_path}, {"psnr", psnr_json(p)}});
      std::cout << "view " << v << " psnr " << p << "\n";
    }
    write_json(o.out_dir / "render_metrics.json", records);
    return 0;
  }
  if (o.orbit_frames < 1) throw ValidationError("render: give --scene or --orbit N with N >= 1");
  nlohmann::json poses = nlohmann::json::array();
  const double elevation = o.orbit_elevation_deg * std::numbers::pi / 180.0;
  for (int k = 0; k < o.orbit_frames; ++k) {
    const double azimuth = 2.0 * std::numbers::pi * k / o.orbit_frames;
    const scene::Pose pose =
        posedist::orbit_pose(azimuth, elevation, o.orbit_radius, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
    const std::string name = "frame_" + std::to_string(k);
    io::write_png(o.out_dir / (name + ".png"), io::to_rgb8(render_pose(m, pose, o.stride)));
    poses.push_back({{"file_path", "./" + name},
                     {"azimuth_deg", 360.0 * k / o.orbit_frames},
                     {"transform_matrix", scene::pose_to_json(pose)}});
  }
  write_json(o.out_dir / "poses.json", poses);
  return 0;
}

int cmd_eval(const EvalOptions& o) {
  nlohmann::json result;
  if (o.ground_truth_as_prediction) {
    const scene::SceneDataset ds = scene::load_scene(o.scene);
    result = evaluate(ds, [](const scene::PosedImage& v) { return v.image; }, o.split);
  } else {
    const LoadedModel m = load_model(o.checkpoint);
    scene::LoadOptions lo;
    lo.near = m.bounds.near;
    lo.far = m.bounds.far;
    lo.background = m.bounds.background;
    const scene::SceneDataset ds = scene::load_scene(o.scene, lo);
    if (ds.intrinsics.height != m.intrinsics.height || ds.intrinsics.width != m.intrinsics.width) {
      throw ValidationError("eval: dataset resolution differs from the checkpoint's training resolution");
    }
    scene::CameraIntrinsics k = ds.intrinsics;
    LoadedModel mm = m;
    mm.intrinsics = k;
    result = evaluate(ds, [&](const scene::PosedImage& v) { return render_pose(mm, v.pose, 1); }, o.split);
  }
  write_json(o.out, result);
  std::cout << "mean psnr " << result["mean_psnr"].dump() << " mean ssim " << result["mean_ssim"].dump() << "\n";
  return 0;
}

int cmd_embed_analysis(const EmbedOptions& o) {
  if (o.scenes.empty()) throw ValidationError("embed-analysis: give at least one --scene");
  std::vector<scene::SceneDataset> datasets;
  for (const auto& p : o.scenes) datasets.push_back(scene::load_scene(p));
  std::vector<metrics::NamedScene> named;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    std::string name = o.scenes[i].filename().string();
    if (name.empty()) name = o.scenes[i].parent_path().filename().string();
    named.push_back({name + "#" + std::to_string(i), &datasets[i]});
  }
  const auto encoder = config::make_encoder(o.encoder);
  const auto report = metrics::embedding_similarity_report(named, *encoder, o.pairs, o.seed, o.bins);
  fs::create_directories(o.out_dir);
  nlohmann::json j = report.to_json();
  j["encoder"] = encoder->describe();
  write_json(o.out_dir / "similarity.json", j);
  std::ostringstream csv;
  report.write_csv(csv);
  io::write_file(o.out_dir / "similarity.csv", csv.str());
  for (const auto& g : report.groups) {
    std::cout << g.scene_a << " / " << g.scene_b << ": mean cosine " << g.mean_cosine << "\n";
  }
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"dietfield: few-shot radiance field training with semantic consistency"};
  app.require_subcommand(1);

  // make-fixture
  auto* mf = app.add_subcommand("make-fixture", "Render a procedural scene into a transforms.json dataset");
  fixture::FixtureSpec spec;
  std::string kind = "textured-cube", mf_config, mf_out;
  std::optional<std::uint64_t> mf_seed;
  mf->add_option("--config", mf_config, "JSON fixture spec (keys: scene, size, views, radius_min, radius_max, camera_angle_x, supersample, seed)");
  mf->add_option("--scene", kind, "textured-cube | two-sphere")->capture_default_str();
  mf->add_option("--size", spec.size, "Image size in pixels (square)")->capture_default_str();
  mf->add_option("--views", spec.views, "Number of views")->capture_default_str();
  mf->add_option("--radius-min", spec.radius_min, "Minimum camera distance")->capture_default_str();
  mf->add_option("--radius-max", spec.radius_max, "Maximum camera distance")->capture_default_str();
  mf->add_option("--supersample", spec.supersample, "Rays per pixel along each axis")->capture_default_str();
  mf->add_option("--seed", mf_seed, "Pose seed (default 0)");
  mf->add_option("--out", mf_out, "Output directory")->required();

  // train
  const std::string defaults = [] {
    config::RunConfig rc;
    rc.scene.path = "<required>";
    return rc.to_json().dump(2);
  }();
  auto* tr = app.add_subcommand("train", "Train a radiance field from a RunConfig JSON");
  tr->footer("Config keys and defaults (simplified regime shown; field.regime = \"full\" switches the presets):\n" +
             defaults);
  std::string tr_config, tr_out, tr_resume;
  std::optional<std::uint64_t> tr_seed;
  bool quiet = false;
  tr->add_option("--config", tr_config, "RunConfig JSON")->required();
  tr->add_option("--seed", tr_seed, "Override train.seed");
  tr->add_option("--out", tr_out, "Override output.dir");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint");
  tr->add_flag("--quiet", quiet, "Suppress progress output");

  // render
  auto* rd = app.add_subcommand("render", "Render PNGs from a checkpoint");
  RenderOptions ro;
  std::string rd_scene;
  rd->add_option("--checkpoint", ro.checkpoint, "Checkpoint file")->required();
  rd->add_option("--scene", rd_scene, "Render at this dataset's poses and report PSNR");
  rd->add_option("--orbit", ro.orbit_frames, "Number of orbit frames (azimuth 360 k / N)");
  rd->add_option("--radius", ro.orbit_radius, "Orbit radius")->capture_default_str();
  rd->add_option("--elevation", ro.orbit_elevation_deg, "Orbit elevation in degrees")->capture_default_str();
  rd->add_option("--stride", ro.stride, "Pixel stride")->capture_default_str();
  rd->add_option("--out", ro.out_dir, "Output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR / SSIM of a checkpoint on held-out views");
  EvalOptions eo;
  ev->add_option("--checkpoint", eo.checkpoint, "Checkpoint file");
  ev->add_option("--scene", eo.scene, "Dataset directory with held-out views")->required();
  ev->add_option("--split", eo.split, "Split label written to the report")->capture_default_str();
  ev->add_option("--out", eo.out, "Metrics JSON path")->required();
  ev->add_flag("--ground-truth-as-prediction", eo.ground_truth_as_prediction, "Debug: score the dataset against itself");

  // embed-analysis
  auto* ea = app.add_subcommand("embed-analysis", "Embedding cosine similarity vs camera distance across views");
  EmbedOptions emb;
  std::optional<std::uint64_t> ea_seed;
  ea->add_option("--scene", emb.scenes, "Dataset directory (repeatable)")->required();
  ea->add_option("--encoder", emb.encoder.kind, "baseline | vit")->capture_default_str();
  ea->add_option("--weights", emb.encoder.weights_path, "ViT weight container");
  ea->add_option("--encoder-seed", emb.encoder.seed, "Baseline encoder seed")->capture_default_str();
  ea->add_option("--dim", emb.encoder.dim, "Baseline embedding size")->capture_default_str();
  ea->add_option("--pairs", emb.pairs, "View pairs per scene pair")->capture_default_str();
  ea->add_option("--bins", emb.bins, "Histogram bins over [-1, 1]")->capture_default_str();
  ea->add_option("--seed", ea_seed, "Pair sampling seed (default 0)");
  ea->add_option("--out", emb.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*mf) {
      if (!mf_config.empty()) {
        try {
          spec = fixture::FixtureSpec::from_json(nlohmann::json::parse(io::read_file(mf_config)));
        } catch (const nlohmann::json::exception& e) {
          throw FormatError("malformed fixture spec '" + mf_config + "': " + e.what());
        }
      } else {
        spec.kind = fixture::scene_kind_from_string(kind);
      }
      if (mf_seed) spec.seed = *mf_seed;
      spec.validate();
      return cmd_make_fixture(spec, mf_out);
    }
    if (*tr) {
      config::RunConfig rc = config::RunConfig::load(tr_config);
      if (tr_seed) rc.train.seed = *tr_seed;
      if (!tr_out.empty()) rc.output.dir = tr_out;
      TrainOptions to;
      if (!tr_resume.empty()) to.resume = tr_resume;
      to.quiet = quiet;
      return cmd_train(rc, to);
    }
    if (*rd) {
      if (!rd_scene.empty()) ro.scene = rd_scene;
      return cmd_render(ro);
    }
    if (*ev) {
      if (!eo.ground_truth_as_prediction && eo.checkpoint.empty()) {
        throw ValidationError("eval: --checkpoint is required unless --ground-truth-as-prediction is set");
      }
      return cmd_eval(eo);
    }
    if (*ea) {
      if (ea_seed) emb.seed = *ea_seed;
      return cmd_embed_analysis(emb);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dietfield::cli
