#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "phaseforge/autodiff.hpp"
#include "phaseforge/complex_field.hpp"
#include "phaseforge/optics.hpp"

namespace phaseforge::net {

struct ModelConfig {
  std::size_t n = 16;
  std::size_t m = 64;
  std::size_t channels = 8;  // C at the finest scale; scale s carries C * 2^s
  std::size_t scales = 2;
  std::size_t k = 3;         // unwinding layers per PUB
  std::size_t g_depth = 8;   // convolutions inside each g_k
  std::size_t g_width = 32;  // hidden width of g_k
  double leaky_slope = 0.2;
  optics::ScaleMode scale_mode = optics::ScaleMode::BoxFilterDecimate;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t scale_size(std::size_t s) const { return n >> s; }
  std::size_t scale_channels(std::size_t s) const { return channels << s; }

  static ModelConfig desk();
  static ModelConfig full();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
/// FNV-1a 64 over the canonical JSON of the config, as 16 hex digits.
std::string config_hash(const ModelConfig& c);

/// Named learnable tensors, ordered by name.
using ModelState = std::map<std::string, Tensor>;

/// Every parameter name and shape; a pure function of the config.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg);
/// Fan-in uniform weights and biases, instance-norm affine (1, 0), beta_k = 1.
ModelState init_state(const ModelConfig& cfg, std::uint64_t seed);

/// Symbolic shape trace of the forward pass, one line per stage.
std::vector<std::string> shape_trace(const ModelConfig& cfg);

/// Intermediate values captured during a forward pass (for tests and inspection).
struct Probe {
  struct Projection {
    std::string block;
    std::size_t layer = 0;
    Tensor projected;  // (H, W, 2) after magnitude_project
    Tensor intensity;  // S used at this scale
  };
  struct Attention {
    std::string block;
    std::size_t scale = 0;
    Tensor weights;  // (Ctot) sigmoid outputs
    Tensor gated;    // (H, W, Ctot) gated stack fed to the fusion conv_block
  };
  std::vector<Projection> projections;
  std::vector<Attention> attention;
};

/// Records PPRNet blocks on a tape. Parameters are registered on first use under
/// their state names, so tape.gradients() is keyed like ModelState.
class Builder {
 public:
  Builder(ad::Tape& tape, const ModelConfig& cfg, const ModelState& state, Probe* probe = nullptr);

  ad::Var param(const std::string& name);

  /// conv2d 3x3 -> instance_norm -> leaky_relu.
  ad::Var conv_block(ad::Var x, const std::string& prefix, int stride);
  /// Three conv_blocks with strides 2, 1, 1; channels double.
  ad::Var ds_block(ad::Var x, const std::string& prefix);
  /// Nearest x2 upsampling, then one conv_block halving channels.
  ad::Var us_block(ad::Var x, const std::string& prefix);
  /// K unwinding layers: u' = P_S(u), u <- g_k(u') + beta_k u.
  ad::Var pub(ad::Var u, const Tensor& intensity, const std::string& prefix);
  /// Three channel-preserving conv_blocks.
  ad::Var frb(ad::Var v, const std::string& prefix);
  /// Channel attention over the stack, then a fusing conv_block.
  ad::Var ffb(ad::Var stack, const std::string& prefix, std::size_t scale);
  ad::Var hub(ad::Var x, const Tensor& intensity, const ad::Var* skip, const std::string& prefix,
              std::size_t scale);
  /// N(0, 1) noise image -> 1x1 conv to C channels -> HUB without skip.
  ad::Var init_block(const Tensor& intensity, std::uint64_t noise_seed);
  /// Full network; returns the (N, N, 2) estimate.
  ad::Var forward(const optics::IntensityMeasurement& meas, std::uint64_t noise_seed);

 private:
  ad::Tape& tape_;
  const ModelConfig& cfg_;
  const ModelState& state_;
  Probe* probe_;
  std::map<std::string, ad::Var> vars_;
};

/// Standard-normal (n, n, 1) image drawn from the seed.
Tensor init_noise(std::size_t n, std::uint64_t seed);

/// Per-scale intensity constraints S_s = scale_convert(meas, N / 2^s).
std::vector<Tensor> scale_intensities(const ModelConfig& cfg, const optics::IntensityMeasurement& meas);

/// Inference with a fixed noise seed (defaults to cfg.seed).
ComplexField predict(const ModelConfig& cfg, const ModelState& state, const optics::IntensityMeasurement& meas,
                     Probe* probe = nullptr);
ComplexField predict(const ModelConfig& cfg, const ModelState& state, const optics::IntensityMeasurement& meas,
                     std::uint64_t noise_seed, Probe* probe = nullptr);

struct Checkpoint {
  ModelConfig config;
  ModelState state;
  std::uint64_t step = 0;
};

/// One NPY per parameter plus manifest.json (config, config hash, names, shapes, step).
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelState& state,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace phaseforge::net
