#include "phaseforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>

#include "phaseforge/io.hpp"
#include "phaseforge/parallel.hpp"

namespace phaseforge::data {

Mode parse_mode(const std::string& name) {
  if (name == "correlated") return Mode::Correlated;
  if (name == "uncorrelated") return Mode::Uncorrelated;
  if (name == "phase-only") return Mode::PhaseOnly;
  throw ConfigError("unknown dataset mode '" + name + "' (expected correlated, uncorrelated or phase-only)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Correlated: return "correlated";
    case Mode::Uncorrelated: return "uncorrelated";
    case Mode::PhaseOnly: return "phase-only";
  }
  return "?";
}

Source parse_source(const std::string& name) {
  if (name == "builtin-shapes") return Source::BuiltinShapes;
  if (name == "image-directory") return Source::ImageDirectory;
  throw ConfigError("unknown image source '" + name + "' (expected builtin-shapes or image-directory)");
}

std::string to_string(Source s) { return s == Source::BuiltinShapes ? "builtin-shapes" : "image-directory"; }

ComplexField synth_complex(const Tensor& raw_a, const Tensor* raw_b, Mode mode) {
  if (raw_a.rank() != 2) throw ConfigError("synth_complex: expects an (N, N) image");
  if (mode == Mode::Uncorrelated) {
    if (!raw_b) throw ConfigError("synth_complex: uncorrelated mode needs a second image");
    require_same_shape(raw_a, *raw_b, "synth_complex");
  }
  const Tensor& phase_src = mode == Mode::Uncorrelated ? *raw_b : raw_a;
  ComplexField x(raw_a.dim(0), raw_a.dim(1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mag = mode == Mode::PhaseOnly ? 1.0 : double(raw_a[i]);
    const double phi = 2 * std::numbers::pi * double(phase_src[i]);
    x.re[i] = Real(mag * std::cos(phi));
    x.im[i] = Real(mag * std::sin(phi));
  }
  return x;
}

Tensor resize_bilinear(const Tensor& image, std::size_t n) {
  if (image.rank() != 2) throw ConfigError("resize_bilinear: expects an (H, W) image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({n, n});
  const double sy = double(h) / double(n), sx = double(w) / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = std::clamp((double(i) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const std::size_t y0 = std::size_t(y), y1 = std::min(y0 + 1, h - 1);
    const double fy = y - double(y0);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = std::clamp((double(j) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const std::size_t x0 = std::size_t(x), x1 = std::min(x0 + 1, w - 1);
      const double fx = x - double(x0);
      const double top = (1 - fx) * image.at(y0, x0) + fx * image.at(y0, x1);
      const double bottom = (1 - fx) * image.at(y1, x0) + fx * image.at(y1, x1);
      out.at(i, j) = Real((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

Tensor min_max_scale(const Tensor& image) {
  double lo = image[0], hi = image[0];
  for (auto v : image.data()) {
    lo = std::min(lo, double(v));
    hi = std::max(hi, double(v));
  }
  Tensor out(image.shape());
  if (hi > lo)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Real((double(image[i]) - lo) / (hi - lo));
  return out;
}

Tensor builtin_image(std::size_t n, std::mt19937_64& rng) {
  // Shapes on a zero background, like object datasets with a dark surround. The shared
  // background keeps a phase-only image's global phase pinned at zero.
  const std::size_t r = std::max<std::size_t>(4 * n, 32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor canvas({r, r});
  const double lo = 0.1 * r, span = 0.8 * r;
  const int shapes = 2 + int(u(rng) * 4);
  for (int s = 0; s < shapes; ++s) {
    // Fill is either flat or a linear gradient across the shape.
    const double value = 0.2 + 0.8 * u(rng);
    const double slope = u(rng) < 0.5 ? 0.0 : (u(rng) - 0.5);
    const double angle = 2 * std::numbers::pi * u(rng);
    auto fill = [&](std::size_t i, std::size_t j) {
      const double t = (std::cos(angle) * double(i) + std::sin(angle) * double(j)) / double(r);
      canvas.at(i, j) = Real(std::clamp(value + slope * t, 0.05, 1.0));
    };
    if (u(rng) < 0.5) {
      double a = lo + u(rng) * span, b = lo + u(rng) * span, c = lo + u(rng) * span, d = lo + u(rng) * span;
      if (a > b) std::swap(a, b);
      if (c > d) std::swap(c, d);
      for (std::size_t i = std::size_t(a); i < std::size_t(b); ++i)
        for (std::size_t j = std::size_t(c); j < std::size_t(d); ++j) fill(i, j);
    } else {
      const double ci = lo + u(rng) * span, cj = lo + u(rng) * span, rad = (0.08 + 0.2 * u(rng)) * r;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          if (std::hypot(double(i) - ci, double(j) - cj) <= rad) fill(i, j);
    }
  }
  return min_max_scale(resize_bilinear(canvas, n));
}

void DatasetManifest::validate() const {
  if (format_version != kFormatVersion)
    throw IoError("dataset format version " + std::to_string(format_version) + " is not supported (expected " +
                  std::to_string(kFormatVersion) + "); regenerate it with `phaseforge synth`");
  optics.validate();
  if (train_ids.empty() || test_ids.empty()) throw ConfigError("dataset: train and test counts must be >= 1");
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"format_version", m.format_version},
                     {"mode", to_string(m.mode)},
                     {"optics", m.optics},
                     {"defocus", m.defocus},
                     {"source", m.source},
                     {"seed", m.seed},
                     {"scaling", m.scaling},
                     {"counts", {{"train", m.train_ids.size()}, {"test", m.test_ids.size()}}},
                     {"train_ids", m.train_ids},
                     {"test_ids", m.test_ids},
                     {"skipped", m.skipped}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kFormatVersion) return;  // validate() reports the mismatch
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.optics = j.at("optics").get<optics::OpticsConfig>();
  m.defocus = j.value("defocus", true);
  m.source = j.value("source", std::string());
  m.seed = j.value("seed", std::uint64_t{0});
  m.scaling = j.value("scaling", m.scaling);
  m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  m.skipped = j.value("skipped", std::vector<std::string>{});
}

namespace {

std::string sample_id(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, index);
  return buf;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace

void save_sample(const fs::path& root, const Sample& s) {
  io::save_npy(root / (s.id + ".gt.npy"), s.gt.to_channels());
  const std::size_t m = s.meas.config.m;
  io::save_npy_u16(root / (s.id + ".meas.npy"), {m, m}, s.meas.data);
}

DatasetManifest generate_dataset(const GenerateOptions& opts, const fs::path& out_dir) {
  opts.optics.validate();
  if (opts.count < 2) throw ConfigError("synth: count must be >= 2 (one train and one test sample)");
  const std::size_t n = opts.optics.n;
  const std::size_t test = opts.test_count ? opts.test_count : std::max<std::size_t>(1, opts.count / 8);
  if (test >= opts.count) throw ConfigError("synth: test count must be smaller than count");

  DatasetManifest manifest;
  manifest.mode = opts.mode;
  manifest.optics = opts.optics;
  manifest.defocus = opts.defocus;
  manifest.seed = opts.seed;

  // Raw [0, 1] images, one (or two, for uncorrelated mode) per sample.
  std::vector<Tensor> raw_a, raw_b;
  if (opts.source == Source::BuiltinShapes) {
    manifest.source = "builtin-shapes";
    raw_a.resize(opts.count);
    raw_b.resize(opts.mode == Mode::Uncorrelated ? opts.count : 0);
    parallel_for(opts.count, resolve_threads(opts.threads), [&](std::size_t i) {
      auto rng = sample_rng(opts.seed, i);
      raw_a[i] = builtin_image(n, rng);
      if (!raw_b.empty()) raw_b[i] = builtin_image(n, rng);
    });
  } else {
    manifest.source = "image-directory:" + opts.image_dir.string();
    if (!fs::is_directory(opts.image_dir))
      throw IoError("image directory '" + opts.image_dir.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(opts.image_dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Tensor> loaded;
    for (const auto& f : files) {
      if (loaded.size() == opts.count + (opts.mode == Mode::Uncorrelated ? 1 : 0)) break;
      try {
        loaded.push_back(min_max_scale(resize_bilinear(io::load_netpbm(f), n)));
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping " << f.filename().string() << ": " << e.what() << "\n";
        manifest.skipped.push_back(f.filename().string());
      }
    }
    if (loaded.size() < opts.count)
      throw IoError("image directory '" + opts.image_dir.string() + "' has " + std::to_string(loaded.size()) +
                    " readable images, " + std::to_string(opts.count) + " requested");
    for (std::size_t i = 0; i < opts.count; ++i) {
      raw_a.push_back(loaded[i]);
      if (opts.mode == Mode::Uncorrelated) raw_b.push_back(loaded[(i + 1) % loaded.size()]);
    }
  }

  const std::size_t train = opts.count - test;
  std::vector<Sample> samples(opts.count);
  for (std::size_t i = 0; i < opts.count; ++i) {
    samples[i].id = i < train ? sample_id("train", i) : sample_id("test", i - train);
    (i < train ? manifest.train_ids : manifest.test_ids).push_back(samples[i].id);
  }
  fs::create_directories(out_dir);
  parallel_for(opts.count, resolve_threads(opts.threads), [&](std::size_t i) {
    Sample& s = samples[i];
    s.mode = opts.mode;
    s.gt = synth_complex(raw_a[i], raw_b.empty() ? nullptr : &raw_b[i], opts.mode);
    s.meas = optics::forward_measure(s.gt, opts.optics, opts.defocus);
    save_sample(out_dir, s);
  });
  io::write_file_atomic(out_dir / "manifest.json", nlohmann::json(manifest).dump(2) + "\n");
  return manifest;
}

Dataset::Dataset(fs::path root, DatasetManifest manifest, bool verify)
    : root_(std::move(root)), manifest_(std::move(manifest)), verify_(verify) {
  std::sort(manifest_.train_ids.begin(), manifest_.train_ids.end());
  std::sort(manifest_.test_ids.begin(), manifest_.test_ids.end());
}

const std::vector<std::string>& Dataset::ids(Split split) const {
  return split == Split::Train ? manifest_.train_ids : manifest_.test_ids;
}

Sample Dataset::load(const std::string& id) const {
  const std::size_t n = manifest_.optics.n, m = manifest_.optics.m;
  Sample s;
  s.id = id;
  s.mode = manifest_.mode;
  try {
    const Tensor gt = io::load_npy(root_ / (id + ".gt.npy")).to_tensor();
    if (gt.shape() != Shape{n, n, 2})
      throw IoError("ground truth has shape " + shape_string(gt.shape()) + ", expected " +
                    shape_string({n, n, 2}));
    s.gt = ComplexField::from_channels(gt);
    const io::NpyArray meas = io::load_npy(root_ / (id + ".meas.npy"));
    if (meas.shape != Shape{m, m})
      throw IoError("measurement has shape " + shape_string(meas.shape) + ", expected " + shape_string({m, m}));
    s.meas.data = meas.to_u16();
    s.meas.config = manifest_.optics;
  } catch (const std::exception& e) {
    throw IoError("sample '" + id + "' in '" + root_.string() + "': " + e.what());
  }
  if (verify_) {
    const auto expect = optics::forward_measure(s.gt, manifest_.optics, manifest_.defocus);
    if (expect.data != s.meas.data)
      throw IoError("sample '" + id + "': stored measurement does not match its ground truth");
  }
  return s;
}

Dataset load_dataset(const fs::path& root, bool verify) {
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("dataset manifest '" + manifest_path.string() + "' not found");
  DatasetManifest manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path)).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest '" + manifest_path.string() + "': " + e.what());
  }
  manifest.validate();
  return Dataset(root, std::move(manifest), verify);
}

}  // namespace phaseforge::data
