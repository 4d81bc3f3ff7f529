#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phaseforge/autodiff.hpp"
#include "phaseforge/data.hpp"
#include "phaseforge/network.hpp"

namespace phaseforge::train {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t epochs = 20;
  double gamma = 0.1;  // TV weight
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0: only the final one).
  std::size_t checkpoint_every = 0;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 10.0;
  int threads = 1;
  /// Reuse the evaluation noise seed for every training forward instead of resampling.
  bool fixed_noise = false;

  void validate() const;
  static TrainConfig desk() { return TrainConfig{}; }
  static TrainConfig full();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// (1 / 2N^2) sum over pixels of |d re| + |d im|. est and gt are (N, N, 2).
ad::Var loss_pixel(ad::Var est, const Tensor& gt);
/// (1 / 2N^2) sum over both channels of squared forward differences, each taken only
/// where the neighbour exists (no wrap).
ad::Var loss_tv(ad::Var est);
ad::Var loss_total(ad::Var est, const Tensor& gt, double gamma);

double loss_pixel(const ComplexField& est, const ComplexField& gt);
double loss_tv(const ComplexField& est);

/// Bias-corrected Adam with per-parameter moments.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update of every parameter that has a gradient; increments the step count.
  void step(net::ModelState& params, const std::map<std::string, Tensor>& grads);
  std::uint64_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0, pixel = 0, tv = 0;
  /// Mean phase PSNR on the test split with the fixed evaluation noise seed.
  double val_psnr = 0;
};

/// Thrown when a loss or gradient turns non-finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  net::ModelState state;
  std::vector<EpochStats> history;
  std::uint64_t steps = 0;
};

struct TrainOptions {
  /// Output directory for loss.csv and checkpoints; nothing is written when empty.
  std::filesystem::path out_dir;
  /// Limit on training samples used (0: all).
  std::size_t max_train = 0;
  /// Skip held-out evaluation (val_psnr is then NaN).
  bool skip_validation = false;
  /// Starting parameters (e.g. a loaded checkpoint); init_state(model, model.seed) when null.
  const net::ModelState* initial = nullptr;
  std::function<void(const EpochStats&)> on_epoch;
};

/// Noise seed for one training forward; resampled for every (epoch, sample).
std::uint64_t training_noise_seed(std::uint64_t seed, std::size_t epoch, std::size_t index);

TrainResult train(const data::Dataset& dataset, const net::ModelConfig& model, const TrainConfig& cfg,
                  const TrainOptions& options = {});

std::string loss_csv(const std::vector<EpochStats>& history);

}  // namespace phaseforge::train
