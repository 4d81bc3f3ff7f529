#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "phaseforge/complex_field.hpp"
#include "phaseforge/optics.hpp"

namespace phaseforge::data {

namespace fs = std::filesystem;

enum class Mode { Correlated, Uncorrelated, PhaseOnly };
enum class Source { BuiltinShapes, ImageDirectory };

Mode parse_mode(const std::string& name);
std::string to_string(Mode m);
Source parse_source(const std::string& name);
std::string to_string(Source s);

inline constexpr int kFormatVersion = 1;

/// Builds x = mag o exp(2 pi i phase) from [0, 1] images. raw_b is required (and only
/// used) in uncorrelated mode.
ComplexField synth_complex(const Tensor& raw_a, const Tensor* raw_b, Mode mode);

/// Bilinear resampling (pixel-centre aligned) of an (H, W) image to n x n.
Tensor resize_bilinear(const Tensor& image, std::size_t n);
/// Per-image min-max scaling to [0, 1]; a constant image maps to zeros.
Tensor min_max_scale(const Tensor& image);
/// Procedural test image: 2-5 flat or gradient-filled rectangles and discs on a zero background,
/// rendered at 4n, resized to n x n and min-max scaled.
Tensor builtin_image(std::size_t n, std::mt19937_64& rng);

struct Sample {
  std::string id;
  ComplexField gt;
  optics::IntensityMeasurement meas;
  Mode mode = Mode::PhaseOnly;
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  Mode mode = Mode::PhaseOnly;
  optics::OpticsConfig optics;
  bool defocus = true;
  std::string source;
  std::uint64_t seed = 0;
  std::string scaling = "per-image min-max";
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> skipped;

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct GenerateOptions {
  Source source = Source::BuiltinShapes;
  fs::path image_dir;
  Mode mode = Mode::PhaseOnly;
  optics::OpticsConfig optics;
  bool defocus = true;
  /// Total samples; the test split takes test_count of them (0 selects max(1, count / 8)).
  std::size_t count = 64;
  std::size_t test_count = 0;
  std::uint64_t seed = 0;
  int threads = 0;
};

/// Writes manifest.json, {id}.gt.npy and {id}.meas.npy into out_dir. Output depends only
/// on the options, never on thread count or time.
DatasetManifest generate_dataset(const GenerateOptions& opts, const fs::path& out_dir);

enum class Split { Train, Test };

class Dataset {
 public:
  Dataset(fs::path root, DatasetManifest manifest, bool verify);

  const DatasetManifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }
  const std::vector<std::string>& ids(Split split) const;
  std::size_t size(Split split) const { return ids(split).size(); }

  Sample load(const std::string& id) const;
  Sample load(Split split, std::size_t index) const { return load(ids(split).at(index)); }

 private:
  fs::path root_;
  DatasetManifest manifest_;
  bool verify_;
};

/// Reads and checks manifest.json; samples are loaded lazily. With verify set, every load
/// re-runs the forward model and requires an exact integer match.
Dataset load_dataset(const fs::path& root, bool verify = false);

/// Saves one sample's arrays (used by the generator and by tests).
void save_sample(const fs::path& root, const Sample& s);

}  // namespace phaseforge::data
