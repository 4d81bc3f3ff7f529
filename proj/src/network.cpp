#include "phaseforge/network.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "phaseforge/io.hpp"
#include "phaseforge/ops.hpp"

namespace phaseforge::net {

namespace {

constexpr Real kNormEps = Real(1e-5);

std::string dims(std::size_t h, std::size_t w, std::size_t c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

std::string scale_mode_name(optics::ScaleMode m) {
  return m == optics::ScaleMode::Decimate ? "decimate" : "box-filter-decimate";
}

optics::ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "decimate") return optics::ScaleMode::Decimate;
  if (s == "box-filter-decimate") return optics::ScaleMode::BoxFilterDecimate;
  throw ConfigError("unknown scale mode '" + s + "' (expected decimate or box-filter-decimate)");
}

using ShapeList = std::vector<std::pair<std::string, Shape>>;

void add_conv_block(ShapeList& out, const std::string& p, std::size_t cin, std::size_t cout) {
  // No conv bias: the instance norm right after it would cancel it.
  out.emplace_back(p + ".conv.w", Shape{3, 3, cin, cout});
  out.emplace_back(p + ".norm.g", Shape{cout});
  out.emplace_back(p + ".norm.b", Shape{cout});
}

std::size_t ffb_reduced(std::size_t ctot) { return std::max<std::size_t>(1, ctot / 4); }

void add_hub(ShapeList& out, const ModelConfig& cfg, const std::string& p, std::size_t c, bool skip) {
  for (std::size_t k = 0; k < cfg.k; ++k) {
    const std::string pk = p + ".pub.k" + std::to_string(k);
    for (std::size_t l = 0; l < cfg.g_depth; ++l) {
      const std::size_t cin = l == 0 ? 2 : cfg.g_width;
      const std::size_t cout = l + 1 == cfg.g_depth ? 2 : cfg.g_width;
      out.emplace_back(pk + ".g" + std::to_string(l) + ".w", Shape{3, 3, cin, cout});
      out.emplace_back(pk + ".g" + std::to_string(l) + ".b", Shape{cout});
    }
    out.emplace_back(pk + ".beta", Shape{1});
  }
  for (int i = 0; i < 3; ++i) add_conv_block(out, p + ".frb.cb" + std::to_string(i), c - 2, c - 2);
  const std::size_t ctot = skip ? 3 * c : 2 * c;
  const std::size_t r = ffb_reduced(ctot);
  out.emplace_back(p + ".ffb.fc1.w", Shape{ctot, r});
  out.emplace_back(p + ".ffb.fc1.b", Shape{r});
  out.emplace_back(p + ".ffb.fc2.w", Shape{r, ctot});
  out.emplace_back(p + ".ffb.fc2.b", Shape{ctot});
  add_conv_block(out, p + ".ffb.fuse", ctot, c);
}

}  // namespace

void ModelConfig::validate() const {
  if (scales < 1) throw ConfigError("model: scales must be >= 1");
  if (channels < 3) throw ConfigError("model: C must be >= 3 (PUB takes 2 channels, FRB the rest)");
  if (g_depth < 1 || g_width < 1) throw ConfigError("model: g_k needs at least one layer and channel");
  if (n == 0 || scales > 30 || n % (std::size_t{1} << (scales - 1)) != 0)
    throw ConfigError("model: N=" + std::to_string(n) + " must be divisible by 2^(scales-1)");
  for (std::size_t s = 0; s < scales; ++s)
    if (m % scale_size(s) != 0)
      throw ConfigError("model: M=" + std::to_string(m) + " is not a multiple of scale size " +
                        std::to_string(scale_size(s)));
  if (!(leaky_slope >= 0)) throw ConfigError("model: leaky slope must be >= 0");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.n = 128;
  c.m = 768;
  c.channels = 64;
  c.scales = 3;
  c.k = 5;
  c.g_depth = 8;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n", c.n},
                     {"m", c.m},
                     {"channels", c.channels},
                     {"scales", c.scales},
                     {"k", c.k},
                     {"g_depth", c.g_depth},
                     {"g_width", c.g_width},
                     {"leaky_slope", c.leaky_slope},
                     {"scale_mode", scale_mode_name(c.scale_mode)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n = j.value("n", d.n);
  c.m = j.value("m", d.m);
  c.channels = j.value("channels", d.channels);
  c.scales = j.value("scales", d.scales);
  c.k = j.value("k", d.k);
  c.g_depth = j.value("g_depth", d.g_depth);
  c.g_width = j.value("g_width", d.g_width);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.scale_mode = parse_scale_mode(j.value("scale_mode", scale_mode_name(d.scale_mode)));
  c.seed = j.value("seed", d.seed);
}

std::string config_hash(const ModelConfig& c) { return io::fnv1a_hex(nlohmann::json(c).dump()); }

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ShapeList out;
  const std::size_t c0 = cfg.scale_channels(0);
  out.emplace_back("init.proj.w", Shape{1, 1, 1, c0});
  out.emplace_back("init.proj.b", Shape{c0});
  add_hub(out, cfg, "init.hub", c0, false);
  for (std::size_t s = 1; s < cfg.scales; ++s) {
    const std::string p = "ds" + std::to_string(s);
    add_conv_block(out, p + ".cb0", cfg.scale_channels(s - 1), cfg.scale_channels(s));
    add_conv_block(out, p + ".cb1", cfg.scale_channels(s), cfg.scale_channels(s));
    add_conv_block(out, p + ".cb2", cfg.scale_channels(s), cfg.scale_channels(s));
  }
  for (std::size_t s = 0; s < cfg.scales; ++s) {
    add_hub(out, cfg, "hub" + std::to_string(s), cfg.scale_channels(s), s + 1 < cfg.scales);
    if (s + 1 < cfg.scales)
      add_conv_block(out, "us" + std::to_string(s) + ".cb", cfg.scale_channels(s + 1), cfg.scale_channels(s));
  }
  add_conv_block(out, "pp.cb", c0, c0);
  out.emplace_back("pp.out.w", Shape{3, 3, c0, 2});
  out.emplace_back("pp.out.b", Shape{2});
  std::sort(out.begin(), out.end());
  return out;
}

ModelState init_state(const ModelConfig& cfg, std::uint64_t seed) {
  const auto shapes = parameter_shapes(cfg);
  ModelState state;
  std::mt19937_64 rng(seed);
  // Fan-in of the layer a bias belongs to comes from its weight.
  std::map<std::string, std::size_t> fan_in;
  for (const auto& [name, shape] : shapes) {
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
      const std::string layer = name.substr(0, name.size() - 2);
      fan_in[layer] = shape.size() == 4 ? shape[0] * shape[1] * shape[2] : shape[0];
    }
  }
  auto ends_with = [](const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (const auto& [name, shape] : shapes) {
    Tensor t(shape);
    if (ends_with(name, ".beta") || ends_with(name, ".norm.g")) {
      t.fill(1);
    } else if (ends_with(name, ".norm.b")) {
      t.fill(0);
    } else {
      // He-uniform with the LeakyReLU gain for weights so the deep g_k stacks keep their
      // signal; plain 1/sqrt(fan_in) for biases.
      const std::string layer = name.substr(0, name.size() - 2);
      const double fan = double(fan_in.at(layer));
      const double slope = cfg.leaky_slope;
      const double bound = ends_with(name, ".w") ? std::sqrt(6.0 / ((1 + slope * slope) * fan)) : 1.0 / std::sqrt(fan);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.data()) v = Real(u(rng));
    }
    state.emplace(name, std::move(t));
  }
  return state;
}

std::vector<std::string> shape_trace(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::string> out;
  const std::size_t top = cfg.scales - 1;
  out.push_back("init " + dims(cfg.n, cfg.n, cfg.scale_channels(0)));
  for (std::size_t s = 1; s <= top; ++s)
    out.push_back("ds" + std::to_string(s) + " " + dims(cfg.scale_size(s), cfg.scale_size(s), cfg.scale_channels(s)));
  out.push_back("hub" + std::to_string(top) + " " +
                dims(cfg.scale_size(top), cfg.scale_size(top), cfg.scale_channels(top)));
  for (std::size_t s = top; s-- > 0;) {
    const std::string d = dims(cfg.scale_size(s), cfg.scale_size(s), cfg.scale_channels(s));
    out.push_back("us" + std::to_string(s) + " " + d);
    out.push_back("hub" + std::to_string(s) + " " + d);
  }
  out.push_back("pp " + dims(cfg.n, cfg.n, 2));
  return out;
}

Tensor init_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t({n, n, 1});
  for (auto& v : t.data()) v = Real(normal(rng));
  return t;
}

std::vector<Tensor> scale_intensities(const ModelConfig& cfg, const optics::IntensityMeasurement& meas) {
  if (meas.config.m != cfg.m || meas.data.size() != cfg.m * cfg.m)
    throw ConfigError("model expects a " + std::to_string(cfg.m) + "x" + std::to_string(cfg.m) +
                      " measurement, got M=" + std::to_string(meas.config.m));
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < cfg.scales; ++s) out.push_back(optics::scale_convert(meas, cfg.scale_size(s), cfg.scale_mode));
  return out;
}

Builder::Builder(ad::Tape& tape, const ModelConfig& cfg, const ModelState& state, Probe* probe)
    : tape_(tape), cfg_(cfg), state_(state), probe_(probe) {}

ad::Var Builder::param(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  auto st = state_.find(name);
  if (st == state_.end()) throw ConfigError("model state lacks parameter '" + name + "'");
  ad::Var v = tape_.parameter(name, st->second);
  vars_.emplace(name, v);
  return v;
}

ad::Var Builder::conv_block(ad::Var x, const std::string& p, int stride) {
  if (stride > 1 && (x.shape()[0] % std::size_t(stride) || x.shape()[1] % std::size_t(stride)))
    throw ConfigError(p + ": spatial size " + shape_string(x.shape()) + " not divisible by stride " +
                      std::to_string(stride));
  const ad::Var w = param(p + ".conv.w");
  ad::Var y = ad::conv2d(x, w, tape_.constant(Tensor({w.shape()[3]})), stride);
  y = ad::instance_norm(y, param(p + ".norm.g"), param(p + ".norm.b"), kNormEps);
  return ad::leaky_relu(y, Real(cfg_.leaky_slope));
}

ad::Var Builder::ds_block(ad::Var x, const std::string& p) {
  x = conv_block(x, p + ".cb0", 2);
  x = conv_block(x, p + ".cb1", 1);
  return conv_block(x, p + ".cb2", 1);
}

ad::Var Builder::us_block(ad::Var x, const std::string& p) {
  if (x.shape()[2] % 2 != 0) throw ConfigError(p + ": channel count must be even");
  return conv_block(ad::upsample_nearest2x(x), p + ".cb", 1);
}

ad::Var Builder::pub(ad::Var u, const Tensor& intensity, const std::string& p) {
  const Shape& sh = u.shape();
  if (intensity.rank() != 2 || intensity.dim(0) != sh[0] || intensity.dim(1) != sh[1])
    throw ConfigError(p + ": intensity " + shape_string(intensity.shape()) + " does not match field " +
                      shape_string(sh));
  for (std::size_t k = 0; k < cfg_.k; ++k) {
    const std::string pk = p + ".k" + std::to_string(k);
    ad::Var projected = ad::magnitude_project(u, intensity);
    if (probe_) probe_->projections.push_back({p, k, projected.value(), intensity});
    ad::Var g = projected;
    for (std::size_t l = 0; l < cfg_.g_depth; ++l) {
      const std::string pl = pk + ".g" + std::to_string(l);
      g = ad::conv2d(g, param(pl + ".w"), param(pl + ".b"), 1);
      if (l + 1 < cfg_.g_depth) g = ad::leaky_relu(g, Real(cfg_.leaky_slope));
    }
    u = ad::add(g, ad::scale_by(u, param(pk + ".beta")));
  }
  return u;
}

ad::Var Builder::frb(ad::Var v, const std::string& p) {
  for (int i = 0; i < 3; ++i) v = conv_block(v, p + ".cb" + std::to_string(i), 1);
  return v;
}

ad::Var Builder::ffb(ad::Var stack, const std::string& p, std::size_t scale) {
  const std::size_t ctot = stack.shape()[2];
  const ad::Var w1 = param(p + ".fc1.w");
  if (w1.shape()[0] != ctot)
    throw ConfigError(p + ": stack has " + std::to_string(ctot) + " channels, layer expects " +
                      std::to_string(w1.shape()[0]));
  ad::Var a = ad::global_avg_pool(stack);
  a = ad::leaky_relu(ad::dense(a, w1, param(p + ".fc1.b")), Real(cfg_.leaky_slope));
  a = ad::sigmoid(ad::dense(a, param(p + ".fc2.w"), param(p + ".fc2.b")));
  ad::Var gated = ad::channel_gate(stack, a);
  if (probe_) probe_->attention.push_back({p, scale, a.value(), gated.value()});
  return conv_block(gated, p + ".fuse", 1);
}

ad::Var Builder::hub(ad::Var x, const Tensor& intensity, const ad::Var* skip, const std::string& p,
                     std::size_t scale) {
  const std::size_t c = x.shape()[2];
  if (c < 3) throw ConfigError(p + ": HUB needs at least 3 channels");
  ad::Var u = pub(ad::slice_channels(x, 0, 2), intensity, p + ".pub");
  ad::Var v = frb(ad::slice_channels(x, 2, c), p + ".frb");
  std::vector<ad::Var> parts{x, u, v};
  if (skip) parts.push_back(*skip);
  return ffb(ad::concat_channels(parts), p + ".ffb", scale);
}

ad::Var Builder::init_block(const Tensor& intensity, std::uint64_t noise_seed) {
  ad::Var noise = tape_.constant(init_noise(cfg_.n, noise_seed));
  ad::Var x = ad::conv2d(noise, param("init.proj.w"), param("init.proj.b"), 1);
  return hub(x, intensity, nullptr, "init.hub", 0);
}

ad::Var Builder::forward(const optics::IntensityMeasurement& meas, std::uint64_t noise_seed) {
  cfg_.validate();
  const std::vector<Tensor> S = scale_intensities(cfg_, meas);
  const std::size_t top = cfg_.scales - 1;
  std::vector<ad::Var> skips(cfg_.scales);
  ad::Var x = init_block(S[0], noise_seed);
  skips[0] = x;
  for (std::size_t s = 1; s <= top; ++s) {
    x = ds_block(x, "ds" + std::to_string(s));
    skips[s] = x;
  }
  x = hub(x, S[top], nullptr, "hub" + std::to_string(top), top);
  for (std::size_t s = top; s-- > 0;) {
    x = us_block(x, "us" + std::to_string(s));
    x = hub(x, S[s], &skips[s], "hub" + std::to_string(s), s);
  }
  x = conv_block(x, "pp.cb", 1);
  return ad::conv2d(x, param("pp.out.w"), param("pp.out.b"), 1);
}

ComplexField predict(const ModelConfig& cfg, const ModelState& state, const optics::IntensityMeasurement& meas,
                     Probe* probe) {
  return predict(cfg, state, meas, cfg.seed, probe);
}

ComplexField predict(const ModelConfig& cfg, const ModelState& state, const optics::IntensityMeasurement& meas,
                     std::uint64_t noise_seed, Probe* probe) {
  ad::Tape tape;
  Builder b(tape, cfg, state, probe);
  return ComplexField::from_channels(b.forward(meas, noise_seed).value());
}

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelState& state,
                     std::uint64_t step) {
  const auto shapes = parameter_shapes(cfg);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, shape] : shapes) {
    auto it = state.find(name);
    if (it == state.end()) throw ConfigError("checkpoint: state lacks parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw ConfigError("checkpoint: parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(shape));
    io::save_npy(dir / (name + ".npy"), it->second);
    params.push_back({{"name", name}, {"shape", shape}, {"file", name + ".npy"}});
  }
  nlohmann::json manifest{{"format_version", 1},
                          {"config", cfg},
                          {"config_hash", config_hash(cfg)},
                          {"step", step},
                          {"parameters", params}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw IoError("checkpoint manifest '" + manifest_path.string() + "' not found");
  nlohmann::json manifest;
  Checkpoint ck;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path));
    ck.config = manifest.at("config").get<ModelConfig>();
    ck.step = manifest.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (manifest.value("config_hash", std::string()) != config_hash(ck.config))
    throw IoError("checkpoint '" + dir.string() + "': config hash does not match its config");
  for (const auto& [name, shape] : parameter_shapes(ck.config)) {
    Tensor t = io::load_npy(dir / (name + ".npy")).to_tensor();
    if (t.shape() != shape)
      throw IoError("checkpoint parameter '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(shape));
    ck.state.emplace(name, std::move(t));
  }
  return ck;
}

}  // namespace phaseforge::net
