#include "phaseforge/selftest.hpp"

#include <cmath>
#include <random>

#include "phaseforge/data.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/gradcheck.hpp"
#include "phaseforge/network.hpp"
#include "phaseforge/ops.hpp"
#include "phaseforge/training.hpp"

namespace phaseforge::selftest {

namespace {

constexpr double kPrimitiveTol = 1e-4;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = Real(u(rng));
  return t;
}

optics::IntensityMeasurement desk_measurement(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto cfg = optics::OpticsConfig::desk_scale();
  const ComplexField x = data::synth_complex(data::builtin_image(cfg.n, rng), nullptr, data::Mode::PhaseOnly);
  return optics::forward_measure(x, cfg, true);
}

}  // namespace

std::vector<Check> gradient_checks(std::uint64_t seed) {
  using ad::Tape;
  using ad::Var;
  std::mt19937_64 rng(seed);
  // Shapes are drawn small and random so the checks cover odd and even extents.
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  auto rt = [&](Shape s) { return uniform(std::move(s), rng); };
  const std::size_t h = dim(rng), w = dim(rng), c = dim(rng);
  const Tensor intensity = uniform({h, w}, rng, 0.1, 3.0);
  const Tensor gt = rt({h + 1, h + 1, 2});

  struct Case {
    const char* name;
    ad::GraphBuilder build;
    std::vector<Tensor> inputs;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }, {rt({h, w}), rt({h, w})}},
      {"sub", [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }, {rt({h, w}), rt({h, w})}},
      {"mul", [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }, {rt({h, w}), rt({h, w})}},
      {"scale", [](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], Real(-1.7)); }, {rt({h * w})}},
      {"scale_by", [](Tape&, const std::vector<Var>& v) { return ad::scale_by(v[0], v[1]); },
       {rt({h, w, 2}), rt({1})}},
      {"leaky_relu", [](Tape&, const std::vector<Var>& v) { return ad::leaky_relu(v[0], Real(0.2)); },
       {rt({h, w, c})}},
      {"sigmoid", [](Tape&, const std::vector<Var>& v) { return ad::sigmoid(v[0]); }, {rt({h * c})}},
      {"sqrt", [](Tape&, const std::vector<Var>& v) { return ad::sqrt(v[0]); }, {uniform({h, w}, rng, 0.5, 2)}},
      {"sum", [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }, {rt({h, w})}},
      {"conv2d", [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2], 1); },
       {rt({h, w, c}), rt({3, 3, c, 2}), rt({2})}},
      {"conv2d stride 2", [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2], 2); },
       {rt({2 * h, 2 * w, 2}), rt({3, 3, 2, c}), rt({c})}},
      {"instance_norm",
       [](Tape&, const std::vector<Var>& v) { return ad::instance_norm(v[0], v[1], v[2], Real(1e-5)); },
       {rt({h + 1, w + 1, c}), rt({c}), rt({c})}},
      {"concat_channels", [](Tape&, const std::vector<Var>& v) { return ad::concat_channels({v[0], v[1]}); },
       {rt({h, w, 2}), rt({h, w, c})}},
      {"slice_channels", [c](Tape&, const std::vector<Var>& v) { return ad::slice_channels(v[0], 1, c); },
       {rt({h, w, c})}},
      {"upsample_nearest2x", [](Tape&, const std::vector<Var>& v) { return ad::upsample_nearest2x(v[0]); },
       {rt({h, w, 2})}},
      {"global_avg_pool", [](Tape&, const std::vector<Var>& v) { return ad::global_avg_pool(v[0]); },
       {rt({h, w, c})}},
      {"dense", [](Tape&, const std::vector<Var>& v) { return ad::dense(v[0], v[1], v[2]); },
       {rt({c}), rt({c, 3}), rt({3})}},
      {"channel_gate", [](Tape&, const std::vector<Var>& v) { return ad::channel_gate(v[0], v[1]); },
       {rt({h, w, c}), rt({c})}},
      {"fft2", [](Tape&, const std::vector<Var>& v) { return ad::fft2(v[0]); }, {rt({h, w, 2})}},
      {"ifft2", [](Tape&, const std::vector<Var>& v) { return ad::ifft2(v[0]); }, {rt({h, w, 2})}},
      {"magnitude_project",
       [intensity](Tape&, const std::vector<Var>& v) { return ad::magnitude_project(v[0], intensity); },
       {rt({h, w, 2})}},
      {"loss_pixel", [gt](Tape&, const std::vector<Var>& v) { return train::loss_pixel(v[0], gt); },
       {rt({h + 1, h + 1, 2})}},
      {"loss_tv", [](Tape&, const std::vector<Var>& v) { return train::loss_tv(v[0]); }, {rt({h + 1, h + 1, 2})}},
      {"loss_total", [gt](Tape&, const std::vector<Var>& v) { return train::loss_total(v[0], gt, 0.1); },
       {rt({h + 1, h + 1, 2})}},
  };
  std::vector<Check> out;
  std::uint64_t case_seed = seed * 1000;
  for (const auto& cs : cases) {
    const auto r = ad::check_gradient(cs.build, cs.inputs, case_seed++);
    out.push_back({std::string("gradient ") + cs.name, r.max_relative_error, kPrimitiveTol});
  }
  return out;
}

std::vector<Check> model_gradient_check(std::uint64_t seed, std::size_t parameters) {
  const net::ModelConfig cfg = net::ModelConfig::desk();
  const net::ModelState st = net::init_state(cfg, seed);
  const auto meas = desk_measurement(seed + 1);
  std::mt19937_64 rng(seed + 2);
  const Tensor v = uniform({cfg.n, cfg.n, 2}, rng);
  auto objective = [&](const net::ModelState& s) {
    const Tensor y = net::predict(cfg, s, meas, 1).to_channels();
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += double(y[i]) * v[i];
    return acc;
  };
  ad::Tape tape;
  net::Builder b(tape, cfg, st);
  tape.backward(ad::sum(ad::mul(b.forward(meas, 1), tape.constant(v))));
  const auto grads = tape.gradients();
  const auto shapes = net::parameter_shapes(cfg);
  std::vector<Check> out;
  for (std::size_t k = 0; k < parameters; ++k) {
    const std::string name = shapes[std::uniform_int_distribution<std::size_t>(0, shapes.size() - 1)(rng)].first;
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, st.at(name).size() - 1)(rng);
    const double h = 1e-8;  // the composed model is sharply curved near kinks; 1e-6 truncates visibly
    net::ModelState plus = st, minus = st;
    plus.at(name)[idx] += Real(h);
    minus.at(name)[idx] -= Real(h);
    const double numeric = (objective(plus) - objective(minus)) / (2 * h);
    const double err = std::abs(grads.at(name)[idx] - numeric) / std::max(std::abs(numeric), 1e-3);
    out.push_back({"model gradient " + name + "[" + std::to_string(idx) + "]", err, 1e-3});
  }
  return out;
}

Check projection_exactness(std::uint64_t seed) {
  const net::ModelConfig cfg = net::ModelConfig::desk();
  net::Probe probe;
  net::predict(cfg, net::init_state(cfg, seed), desk_measurement(seed + 1), seed + 2, &probe);
  double worst = 0;
  for (const auto& p : probe.projections) {
    const ComplexField U = fft::fft2(ComplexField::from_channels(p.projected));
    double err = 0, peak = 0;
    for (std::size_t i = 0; i < p.intensity.size(); ++i) {
      const double s = p.intensity[i];
      err = std::max(err, std::abs(double(U.re[i]) * U.re[i] + double(U.im[i]) * U.im[i] - s));
      peak = std::max(peak, s);
    }
    worst = std::max(worst, err / peak);
  }
  if (probe.projections.empty()) worst = INFINITY;
  return {"projection exactness (" + std::to_string(probe.projections.size()) + " projections)", worst, 1e-10};
}

Check scale_identity(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t h : {4, 8, 16}) {
    optics::OpticsConfig cfg;
    cfg.n = h;
    cfg.m = 4 * h;
    const ComplexField u(uniform({h, h}, rng), uniform({h, h}, rng));
    const Tensor full = optics::intensity(u, cfg, false);
    // The central window sits at offset (M - N) / 2, which shifts the phase but not |.|^2.
    const Tensor reduced = optics::scale_convert(full, h, optics::ScaleMode::Decimate);
    const ComplexField U = fft::fft2(u);
    double err = 0, peak = 0;
    for (std::size_t i = 0; i < h * h; ++i) {
      const double ref = double(U.re[i]) * U.re[i] + double(U.im[i]) * U.im[i];
      err = std::max(err, std::abs(reduced[i] - ref));
      peak = std::max(peak, ref);
    }
    worst = std::max(worst, err / peak);
  }
  return {"scale conversion identity", worst, 1e-10};
}

std::vector<Check> run_all(std::uint64_t seed) {
  std::vector<Check> out = gradient_checks(seed);
  for (auto& c : model_gradient_check(seed)) out.push_back(c);
  out.push_back(projection_exactness(seed));
  out.push_back(scale_identity(seed));
  return out;
}

}  // namespace phaseforge::selftest
