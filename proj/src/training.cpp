#include "phaseforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "phaseforge/io.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/ops.hpp"
#include "phaseforge/parallel.hpp"

namespace phaseforge::train {

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train: learning rate must be positive");
  if (batch < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(gamma >= 0)) throw ConfigError("train: gamma must be >= 0");
  if (!(clip_norm >= 0)) throw ConfigError("train: clip norm must be >= 0 (0 disables)");
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.lr = 1e-4;
  c.batch = 24;
  c.epochs = 160;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},       {"batch", c.batch},
                     {"epochs", c.epochs}, {"gamma", c.gamma},
                     {"seed", c.seed},   {"checkpoint_every", c.checkpoint_every},
                     {"clip_norm", c.clip_norm}, {"fixed_noise", c.fixed_noise}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.gamma = j.value("gamma", d.gamma);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.fixed_noise = j.value("fixed_noise", d.fixed_noise);
}

namespace {

void require_field(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(2) != 2 || t.dim(0) != t.dim(1))
    throw ConfigError(std::string(what) + ": expected an (N, N, 2) field, got " + shape_string(t.shape()));
}

}  // namespace

ad::Var loss_pixel(ad::Var est, const Tensor& gt) {
  const Tensor& x = est.value();
  require_field(x, "loss_pixel");
  require_same_shape(x, gt, "loss_pixel");
  const std::size_t n = x.dim(0);
  const double norm = 1.0 / (2.0 * double(n * n));
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(double(x[i]) - double(gt[i]));
  return est.tape->record(Tensor::scalar(Real(acc * norm)), {est},
                          [est, gt, norm](const Tensor& g, std::vector<Tensor*>& grads) {
                            if (!grads[0]) return;
                            const Tensor& x = est.value();
                            for (std::size_t i = 0; i < x.size(); ++i) {
                              const Real d = x[i] - gt[i];
                              const Real sign = d > 0 ? Real(1) : d < 0 ? Real(-1) : Real(0);
                              (*grads[0])[i] += g[0] * Real(norm) * sign;
                            }
                          });
}

ad::Var loss_tv(ad::Var est) {
  const Tensor& x = est.value();
  require_field(x, "loss_tv");
  const std::size_t n = x.dim(0);
  if (n < 2) throw ConfigError("loss_tv: N must be >= 2");
  const double norm = 1.0 / (2.0 * double(n * n));
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < 2; ++c) {
        if (j + 1 < n) {
          const double d = double(x.at(i, j + 1, c)) - x.at(i, j, c);
          acc += d * d;
        }
        if (i + 1 < n) {
          const double d = double(x.at(i + 1, j, c)) - x.at(i, j, c);
          acc += d * d;
        }
      }
  return est.tape->record(Tensor::scalar(Real(acc * norm)), {est},
                          [est, n, norm](const Tensor& g, std::vector<Tensor*>& grads) {
                            if (!grads[0]) return;
                            const Tensor& x = est.value();
                            Tensor& gx = *grads[0];
                            const Real k = Real(2 * norm) * g[0];
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                for (std::size_t c = 0; c < 2; ++c) {
                                  if (j + 1 < n) {
                                    const Real d = x.at(i, j + 1, c) - x.at(i, j, c);
                                    gx.at(i, j + 1, c) += k * d;
                                    gx.at(i, j, c) -= k * d;
                                  }
                                  if (i + 1 < n) {
                                    const Real d = x.at(i + 1, j, c) - x.at(i, j, c);
                                    gx.at(i + 1, j, c) += k * d;
                                    gx.at(i, j, c) -= k * d;
                                  }
                                }
                          });
}

ad::Var loss_total(ad::Var est, const Tensor& gt, double gamma) {
  ad::Var pixel = loss_pixel(est, gt);
  if (gamma == 0) return pixel;
  return ad::add(pixel, ad::scale(loss_tv(est), Real(gamma)));
}

double loss_pixel(const ComplexField& est, const ComplexField& gt) {
  ad::Tape tape;
  return loss_pixel(tape.constant(est.to_channels()), gt.to_channels()).value()[0];
}

double loss_tv(const ComplexField& est) {
  ad::Tape tape;
  return loss_tv(tape.constant(est.to_channels())).value()[0];
}

void Adam::step(net::ModelState& params, const std::map<std::string, Tensor>& grads) {
  ++t_;
  const double c1 = 1 - std::pow(beta1_, double(t_));
  const double c2 = 1 - std::pow(beta2_, double(t_));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("adam: gradient for unknown parameter '" + name + "'");
    Tensor& p = it->second;
    require_same_shape(p, g, "adam");
    auto [mit, fresh] = moments_.try_emplace(name);
    if (fresh) mit->second = {Tensor(p.shape()), Tensor(p.shape())};
    Tensor& m = mit->second.m;
    Tensor& v = mit->second.v;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = Real(beta1_ * m[i] + (1 - beta1_) * gi);
      v[i] = Real(beta2_ * v[i] + (1 - beta2_) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      p[i] = Real(p[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

std::uint64_t training_noise_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch), std::uint32_t(index),
                    0x401eu};
  std::mt19937_64 rng(seq);
  return rng();
}

namespace {

struct SampleOutcome {
  double loss = 0, pixel = 0, tv = 0;
  std::map<std::string, Tensor> grads;
};

double state_norm(const net::ModelState& st) {
  double acc = 0;
  for (const auto& [name, t] : st)
    for (Real v : t.data()) acc += double(v) * v;
  return std::sqrt(acc);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string loss_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,pixel,tv,val_psnr\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.pixel) + "," + fmt(e.tv) + "," +
           fmt(e.val_psnr) + "\n";
  return out;
}

TrainResult train(const data::Dataset& dataset, const net::ModelConfig& model, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  model.validate();
  const auto& manifest = dataset.manifest();
  if (manifest.optics.n != model.n || manifest.optics.m != model.m)
    throw ConfigError("train: dataset has N=" + std::to_string(manifest.optics.n) + ", M=" +
                      std::to_string(manifest.optics.m) + " but the model expects N=" + std::to_string(model.n) +
                      ", M=" + std::to_string(model.m));
  std::size_t count = dataset.size(data::Split::Train);
  if (options.max_train > 0) count = std::min(count, options.max_train);
  if (count == 0) throw ConfigError("train: dataset has no training samples");

  std::vector<data::Sample> samples(count);
  std::vector<Tensor> targets(count);
  for (std::size_t i = 0; i < count; ++i) {
    samples[i] = dataset.load(data::Split::Train, i);
    targets[i] = samples[i].gt.to_channels();
  }
  std::vector<data::Sample> held_out;
  if (!options.skip_validation)
    for (std::size_t i = 0; i < dataset.size(data::Split::Test); ++i)
      held_out.push_back(dataset.load(data::Split::Test, i));

  TrainResult result;
  if (options.initial) {
    const auto shapes = net::parameter_shapes(model);
    if (options.initial->size() != shapes.size())
      throw ConfigError("train: initial state does not match the model config");
    for (const auto& [name, shape] : shapes) {
      auto it = options.initial->find(name);
      if (it == options.initial->end() || it->second.shape() != shape)
        throw ConfigError("train: initial state lacks or misshapes parameter '" + name + "'");
    }
    result.state = *options.initial;
  } else {
    result.state = net::init_state(model, model.seed);
  }
  Adam adam(cfg.lr);
  const int threads = resolve_threads(cfg.threads);
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  std::vector<std::size_t> order(count);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::seed_seq seq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), std::uint32_t(epoch), 0x5b0ffu};
    std::mt19937_64 shuffle_rng(seq);
    for (std::size_t i = count; i > 1; --i) {
      const std::size_t j = std::size_t(shuffle_rng() % i);
      std::swap(order[i - 1], order[j]);
    }

    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < count; start += cfg.batch) {
      const std::size_t size = std::min(cfg.batch, count - start);
      std::vector<SampleOutcome> outcomes(size);
      parallel_for(size, threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        ad::Tape tape;
        net::Builder builder(tape, model, result.state);
        ad::Var est = builder.forward(samples[idx].meas,
                                       cfg.fixed_noise ? model.seed : training_noise_seed(cfg.seed, epoch, idx));
        ad::Var pixel = loss_pixel(est, targets[idx]);
        ad::Var tv = loss_tv(est);
        ad::Var total = cfg.gamma == 0 ? pixel : ad::add(pixel, ad::scale(tv, Real(cfg.gamma)));
        tape.backward(total);
        outcomes[b] = {total.value()[0], pixel.value()[0], tv.value()[0], tape.gradients()};
      });

      // Index-ordered reduction keeps the sum independent of scheduling.
      std::map<std::string, Tensor> grads;
      for (std::size_t b = 0; b < size; ++b) {
        const auto& o = outcomes[b];
        if (!std::isfinite(o.loss)) {
          std::string ids;
          for (std::size_t k = 0; k < size; ++k) ids += (k ? "," : "") + samples[order[start + k]].id;
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " in batch [" + ids +
                              "] (sample " + samples[order[start + b]].id + "), parameter norm " +
                              fmt(state_norm(result.state)));
        }
        stats.train_loss += o.loss;
        stats.pixel += o.pixel;
        stats.tv += o.tv;
        for (const auto& [name, g] : o.grads) {
          auto [it, fresh] = grads.try_emplace(name, g);
          if (!fresh)
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
      }
      double norm2 = 0;
      for (auto& [name, g] : grads)
        for (auto& v : g.data()) {
          v /= Real(size);
          norm2 += double(v) * v;
        }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm))
        throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch) + " (batch starting with " +
                            samples[order[start]].id + "), parameter norm " + fmt(state_norm(result.state)));
      if (cfg.clip_norm > 0 && norm > cfg.clip_norm) {
        const Real k = Real(cfg.clip_norm / norm);
        for (auto& [name, g] : grads)
          for (auto& v : g.data()) v *= k;
      }
      adam.step(result.state, grads);
    }
    stats.train_loss /= double(count);
    stats.pixel /= double(count);
    stats.tv /= double(count);

    if (held_out.empty()) {
      stats.val_psnr = std::numeric_limits<double>::quiet_NaN();
    } else {
      std::vector<double> scores(held_out.size());
      parallel_for(held_out.size(), threads, [&](std::size_t i) {
        const ComplexField est = net::predict(model, result.state, held_out[i].meas);
        scores[i] = metrics::score(est, held_out[i].gt).psnr_phase;
      });
      double acc = 0;
      for (double s : scores) acc += s;
      stats.val_psnr = acc / double(scores.size());
    }
    result.history.push_back(stats);
    result.steps = adam.steps();

    if (!options.out_dir.empty()) {
      io::write_file_atomic(options.out_dir / "loss.csv", loss_csv(result.history));
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
        std::ostringstream name;
        name << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
        net::save_checkpoint(options.out_dir / "checkpoints" / name.str(), model, result.state, adam.steps());
      }
    }
    if (options.on_epoch) options.on_epoch(stats);
  }
  if (!options.out_dir.empty())
    net::save_checkpoint(options.out_dir / "checkpoint", model, result.state, adam.steps());
  return result;
}

}  // namespace phaseforge::train
