#include "dietfield/semantic.hpp"

#include <cmath>

#include "dietfield/error.hpp"
#include "dietfield/rng.hpp"

namespace dietfield::semantic {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

void check_image(Var image, const std::string& who) {
  if (image.value().rank() != 3 || image.dim(2) != 3) {
    throw ShapeError(who + ": expected an H x W x 3 image, got " + diff::shape_string(image.shape()));
  }
  diff::assert_finite(image.value(), who + " input image");
}

std::string block(int i, const char* rest) { return "blocks." + std::to_string(i) + "." + rest; }

}  // namespace

Embedding Encoder::embed(const Tensor& image) const {
  Tape tape;
  return encode(tape, tape.constant(image)).value();
}

// --- ViT ----------------------------------------------------------------------------------------

void ViTSpec::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("vit spec: ") + name + " must be >= 1");
  };
  positive(image_resolution, "image_resolution");
  positive(patch_size, "patch_size");
  positive(hidden_dim, "hidden_dim");
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(output_dim, "output_dim");
  if (image_resolution % patch_size != 0) {
    throw ValidationError("vit spec: image_resolution " + std::to_string(image_resolution) +
                          " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (hidden_dim % num_heads != 0) {
    throw ValidationError("vit spec: hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                          std::to_string(num_heads));
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw ValidationError("vit spec: std entries must be positive");
  }
  if (resize_filter != "bilinear" && resize_filter != "area") {
    throw ValidationError("vit spec: unsupported resize_filter '" + resize_filter + "'");
  }
  if (activation != "gelu" && activation != "quick_gelu") {
    throw ValidationError("vit spec: unsupported activation '" + activation + "'");
  }
}

nlohmann::json ViTSpec::to_json() const {
  return {{"image_resolution", image_resolution},
          {"patch_size", patch_size},
          {"hidden_dim", hidden_dim},
          {"num_layers", num_layers},
          {"num_heads", num_heads},
          {"mlp_ratio", mlp_ratio},
          {"output_dim", output_dim},
          {"mean", mean},
          {"std", std},
          {"resize_filter", resize_filter},
          {"activation", activation},
          {"ln_pre", ln_pre}};
}

ViTSpec ViTSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("vit spec: header 'spec' must be an object");
  ViTSpec s;
  try {
    s.image_resolution = j.at("image_resolution").get<int>();
    s.patch_size = j.at("patch_size").get<int>();
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.num_layers = j.at("num_layers").get<int>();
    s.num_heads = j.at("num_heads").get<int>();
    s.mlp_ratio = j.value("mlp_ratio", 4);
    s.output_dim = j.at("output_dim").get<int>();
    if (j.contains("mean")) s.mean = j.at("mean").get<std::array<float, 3>>();
    if (j.contains("std")) s.std = j.at("std").get<std::array<float, 3>>();
    s.resize_filter = j.value("resize_filter", std::string("bilinear"));
    s.activation = j.value("activation", std::string("gelu"));
    s.ln_pre = j.value("ln_pre", true);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vit spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::map<std::string, Shape> vit_shapes(const ViTSpec& spec) {
  const std::int64_t h = spec.hidden_dim, p = spec.patch_size, mlp = static_cast<std::int64_t>(spec.mlp_ratio) * h;
  std::map<std::string, Shape> s;
  s["embed.patch.weight"] = {p * p * 3, h};
  s["embed.class_token"] = {h};
  s["embed.position"] = {spec.tokens(), h};
  if (spec.ln_pre) {
    s["ln_pre.weight"] = {h};
    s["ln_pre.bias"] = {h};
  }
  for (int i = 0; i < spec.num_layers; ++i) {
    s[block(i, "ln1.weight")] = {h};
    s[block(i, "ln1.bias")] = {h};
    s[block(i, "attn.qkv.weight")] = {h, 3 * h};
    s[block(i, "attn.qkv.bias")] = {3 * h};
    s[block(i, "attn.out.weight")] = {h, h};
    s[block(i, "attn.out.bias")] = {h};
    s[block(i, "ln2.weight")] = {h};
    s[block(i, "ln2.bias")] = {h};
    s[block(i, "mlp.fc1.weight")] = {h, mlp};
    s[block(i, "mlp.fc1.bias")] = {mlp};
    s[block(i, "mlp.fc2.weight")] = {mlp, h};
    s[block(i, "mlp.fc2.bias")] = {h};
  }
  s["ln_post.weight"] = {h};
  s["ln_post.bias"] = {h};
  s["proj.weight"] = {h, spec.output_dim};
  return s;
}

ViTEncoder::ViTEncoder(ViTSpec spec, WeightStore weights) : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  for (const auto& [name, shape] : vit_shapes(spec_)) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw FormatError("vit weights: missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("vit weights: tensor '" + name + "' has shape " + diff::shape_string(it->second.shape()) +
                       ", expected " + diff::shape_string(shape));
    }
    diff::assert_finite(it->second, "vit tensor '" + name + "'");
  }
}

std::string ViTEncoder::describe() const {
  return "vit(res " + std::to_string(spec_.image_resolution) + ", patch " + std::to_string(spec_.patch_size) +
         ", width " + std::to_string(spec_.hidden_dim) + ", layers " + std::to_string(spec_.num_layers) + ", D " +
         std::to_string(spec_.output_dim) + ")";
}

Var ViTEncoder::patch_tokens(Tape& tape, Var image) const {
  check_image(image, "vit encode");
  const std::int64_t res = spec_.image_resolution;
  Var x = image;
  if (image.dim(0) != res || image.dim(1) != res) {
    const bool area = spec_.resize_filter == "area";
    x = diff::resample(x, area ? diff::area_weights(image.dim(0), res) : diff::bilinear_weights(image.dim(0), res),
                       area ? diff::area_weights(image.dim(1), res) : diff::bilinear_weights(image.dim(1), res));
  }
  const Tensor mean(Shape{3}, {spec_.mean[0], spec_.mean[1], spec_.mean[2]});
  const Tensor inv_std(Shape{3}, {1.0f / spec_.std[0], 1.0f / spec_.std[1], 1.0f / spec_.std[2]});
  x = (x - tape.constant(mean)) * tape.constant(inv_std);
  return diff::matmul(diff::patchify(x, spec_.patch_size), tape.constant(weights_.at("embed.patch.weight")));
}

Var ViTEncoder::encode(Tape& tape, Var image) const {
  auto w = [&](const std::string& name) { return tape.constant(weights_.at(name)); };
  const std::int64_t hidden = spec_.hidden_dim;
  const std::int64_t heads = spec_.num_heads, dh = hidden / heads;

  Var tokens = patch_tokens(tape, image);
  Var cls = diff::reshape(w("embed.class_token"), {1, hidden});
  Var h = diff::concat({cls, tokens}, 0) + w("embed.position");
  if (spec_.ln_pre) h = diff::layer_norm(h, w("ln_pre.weight"), w("ln_pre.bias"));

  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int i = 0; i < spec_.num_layers; ++i) {
    Var a = diff::layer_norm(h, w(block(i, "ln1.weight")), w(block(i, "ln1.bias")));
    Var qkv = diff::matmul(a, w(block(i, "attn.qkv.weight"))) + w(block(i, "attn.qkv.bias"));
    std::vector<Var> outs;
    for (std::int64_t k = 0; k < heads; ++k) {
      Var q = diff::slice(qkv, 1, k * dh, (k + 1) * dh);
      Var kk = diff::slice(qkv, 1, hidden + k * dh, hidden + (k + 1) * dh);
      Var v = diff::slice(qkv, 1, 2 * hidden + k * dh, 2 * hidden + (k + 1) * dh);
      Var att = diff::softmax(diff::matmul(q, kk, false, true) * scale);
      outs.push_back(diff::matmul(att, v));
    }
    Var merged = heads == 1 ? outs[0] : diff::concat(outs, 1);
    h = h + diff::matmul(merged, w(block(i, "attn.out.weight"))) + w(block(i, "attn.out.bias"));

    Var m = diff::layer_norm(h, w(block(i, "ln2.weight")), w(block(i, "ln2.bias")));
    m = diff::matmul(m, w(block(i, "mlp.fc1.weight"))) + w(block(i, "mlp.fc1.bias"));
    m = spec_.activation == "quick_gelu" ? diff::quick_gelu(m) : diff::gelu(m);
    h = h + diff::matmul(m, w(block(i, "mlp.fc2.weight"))) + w(block(i, "mlp.fc2.bias"));
  }
  Var cls_out = diff::layer_norm(diff::slice(h, 0, 0, 1), w("ln_post.weight"), w("ln_post.bias"));
  Var e = diff::matmul(cls_out, w("proj.weight"));
  return diff::l2_normalize(diff::reshape(e, {spec_.output_dim}));
}

WeightStore random_vit_weights(const ViTSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  WeightStore out;
  for (const auto& [name, shape] : vit_shapes(spec)) {
    Tensor t(shape);
    auto values = t.mutable_values();
    const bool norm_gain = name.find("ln") != std::string::npos && name.ends_with(".weight");
    if (norm_gain) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (name.ends_with(".bias")) {
      // zero
    } else {
      const double sd = shape.size() == 2 ? 1.0 / std::sqrt(static_cast<double>(shape[0])) : 0.02;
      for (float& v : values) v = static_cast<float>(sd * rng.normal());
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void make_test_weights(const ViTSpec& spec, std::uint64_t seed, const std::filesystem::path& path) {
  const WeightStore weights = random_vit_weights(spec, seed);
  std::vector<std::pair<std::string, Tensor>> ordered(weights.begin(), weights.end());
  io::write_container(path, kVitMagic, kVitVersion, {{"spec", spec.to_json()}}, ordered);
}

std::shared_ptr<ViTEncoder> load_vit(const std::filesystem::path& path) {
  const io::ContainerContents c = io::read_container(path, kVitMagic, kVitVersion);
  if (!c.header.contains("spec")) throw FormatError("'" + path.string() + "': header lacks 'spec'");
  ViTSpec spec = ViTSpec::from_json(c.header["spec"]);
  WeightStore weights;
  for (const auto& [name, t] : c.tensors) weights.emplace(name, t);
  return std::make_shared<ViTEncoder>(std::move(spec), std::move(weights));
}

ViTSpec toy_vit_spec() {
  ViTSpec s;
  s.image_resolution = 32;
  s.patch_size = 8;
  s.hidden_dim = 64;
  s.num_layers = 2;
  s.num_heads = 4;
  s.mlp_ratio = 4;
  s.output_dim = 32;
  return s;
}

// --- baseline -----------------------------------------------------------------------------------

namespace {
constexpr std::int64_t kPool = 4;
}

BaselineEncoder::BaselineEncoder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim < 2) throw ValidationError("baseline encoder: D must be >= 2");
  const std::int64_t in = kPool * kPool * 3;
  projection_ = Tensor(Shape{in, dim});
  Rng rng(seed);
  const double sd = 2.0 / std::sqrt(static_cast<double>(in));
  for (float& v : projection_.mutable_values()) v = static_cast<float>(sd * rng.normal());
}

Var BaselineEncoder::encode(Tape& tape, Var image) const {
  check_image(image, "baseline encode");
  Var pooled = diff::resample(image, diff::area_weights(image.dim(0), kPool), diff::area_weights(image.dim(1), kPool));
  Var flat = diff::reshape(pooled - tape.constant(Tensor::scalar(0.5f)), {1, kPool * kPool * 3});
  Var e = diff::tanh(diff::matmul(flat, tape.constant(projection_)));
  return diff::l2_normalize(diff::reshape(e, {dim_}));
}

std::string BaselineEncoder::describe() const {
  return "baseline(seed " + std::to_string(seed_) + ", D " + std::to_string(dim_) + ")";
}

}  // namespace dietfield::semantic
