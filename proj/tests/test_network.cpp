#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "phaseforge/data.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/gradcheck.hpp"
#include "phaseforge/network.hpp"
#include "phaseforge/ops.hpp"

using namespace phaseforge;
using namespace phaseforge::net;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n = 8;
  c.m = 32;
  c.channels = 4;
  c.scales = 2;
  c.k = 2;
  c.g_depth = 2;
  c.g_width = 4;
  return c;
}

optics::IntensityMeasurement measurement(std::size_t n, std::size_t m, std::uint64_t seed) {
  optics::OpticsConfig o = optics::OpticsConfig::desk_scale();
  o.n = n;
  o.m = m;
  std::mt19937_64 rng(seed);
  const ComplexField x = data::synth_complex(data::builtin_image(n, rng), nullptr, data::Mode::PhaseOnly);
  return optics::forward_measure(x, o, true);
}

Tensor run(ad::Tape& tape, const ModelConfig& cfg, const ModelState& st,
           const std::function<ad::Var(Builder&)>& f, Probe* probe = nullptr) {
  Builder b(tape, cfg, st, probe);
  return f(b).value();
}

double fft_intensity_error(const Tensor& projected, const Tensor& s) {
  ComplexField u = ComplexField::from_channels(projected);
  ComplexField U = fft::fft2(u);
  double err = 0, peak = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double inten = double(U.re[i]) * U.re[i] + double(U.im[i]) * U.im[i];
    err = std::max(err, std::abs(inten - double(s[i])));
    peak = std::max(peak, double(s[i]));
  }
  return err / peak;
}

}  // namespace

TEST_CASE("config invariants") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK_NOTHROW(ModelConfig::full().validate());
  ModelConfig c = ModelConfig::desk();
  c.channels = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.m = 60;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.n = 12;
  c.scales = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ModelConfig f = ModelConfig::full();
  ModelConfig back = nlohmann::json(f).get<ModelConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(f));
  CHECK(config_hash(back) == config_hash(f));
  CHECK(config_hash(f) != config_hash(ModelConfig::desk()));
  CHECK(config_hash(f).size() == 16);
}

TEST_CASE("shape contracts") {
  const ModelConfig cfg = ModelConfig::desk();
  const ModelState st = init_state(cfg, 1);
  std::mt19937_64 rng(2);
  ad::Tape tape;
  Builder b(tape, cfg, st);
  ad::Var x = tape.constant(oracle::random_tensor({16, 16, 8}, rng));
  CHECK(b.conv_block(x, "pp.cb", 1).shape() == Shape{16, 16, 8});
  ad::Var d = b.ds_block(x, "ds1");
  CHECK(d.shape() == Shape{8, 8, 16});
  CHECK(b.us_block(d, "us0").shape() == Shape{16, 16, 8});
  CHECK(b.frb(ad::slice_channels(x, 2, 8), "hub0.frb").shape() == Shape{16, 16, 6});
  CHECK_THROWS_AS(b.conv_block(tape.constant(Tensor({15, 15, 8})), "pp.cb", 2), ConfigError);
  CHECK_THROWS_AS(b.param("nope"), ConfigError);

  // Two ds blocks (3-scale config) take 16x16x8 to 4x4x32.
  ModelConfig three = cfg;
  three.scales = 3;
  const ModelState st3 = init_state(three, 1);
  ad::Tape tape3;
  Builder b3(tape3, three, st3);
  ad::Var x3 = tape3.constant(x.value());
  CHECK(b3.ds_block(b3.ds_block(x3, "ds1"), "ds2").shape() == Shape{4, 4, 32});
  CHECK(b3.us_block(tape3.constant(Tensor({4, 4, 32})), "us1").shape() == Shape{8, 8, 16});

  const auto trace = shape_trace(cfg);
  CHECK(trace == std::vector<std::string>{"init 16x16x8", "ds1 8x8x16", "hub1 8x8x16", "us0 16x16x8",
                                          "hub0 16x16x8", "pp 16x16x2"});
  // Full config: 4C = 256 channels at the coarsest HUB.
  const auto full = shape_trace(ModelConfig::full());
  CHECK(std::find(full.begin(), full.end(), "hub2 32x32x256") != full.end());
  CHECK(std::find(full.begin(), full.end(), "us1 64x64x128") != full.end());
}

TEST_CASE("forward shape over a grid of configs") {
  for (std::size_t scales : {1, 2, 3})
    for (std::size_t c : {3, 4, 6})
      for (std::size_t k : {0, 1, 2}) {
        ModelConfig cfg;
        cfg.n = 8;
        cfg.m = 32;
        cfg.channels = c;
        cfg.scales = scales;
        cfg.k = k;
        cfg.g_depth = 2;
        cfg.g_width = 3;
        const auto meas = measurement(8, 32, 3);
        const ComplexField out = predict(cfg, init_state(cfg, 4), meas);
        CHECK(out.rows() == 8);
        CHECK(out.cols() == 8);
        const auto trace = shape_trace(cfg);
        CHECK(trace.size() == 2 + 3 * (scales - 1) + 1);
      }
}

TEST_CASE("PUB") {
  const ModelConfig cfg = tiny();
  std::mt19937_64 rng(5);
  Tensor u0 = oracle::random_tensor({8, 8, 2}, rng);
  Tensor s = oracle::random_tensor({8, 8}, rng, 0.1, 3);

  SUBCASE("K = 0 is the identity") {
    ModelConfig k0 = cfg;
    k0.k = 0;
    const ModelState st = init_state(k0, 1);
    ad::Tape tape;
    CHECK(run(tape, k0, st, [&](Builder& b) { return b.pub(tape.constant(u0), s, "hub0.pub"); }) == u0);
  }
  SUBCASE("every internal projection meets the constraint") {
    const ModelState st = init_state(cfg, 1);
    ad::Tape tape;
    Probe probe;
    run(tape, cfg, st, [&](Builder& b) { return b.pub(tape.constant(u0), s, "hub0.pub"); }, &probe);
    REQUIRE(probe.projections.size() == cfg.k);
    for (const auto& p : probe.projections) CHECK(fft_intensity_error(p.projected, s) < 1e-10);
  }
  SUBCASE("identity g with beta = 0 equals a single projection") {
    // A 3x3 kernel with a centred unit tap per channel makes each g layer the identity.
    ModelConfig id = cfg;
    id.g_depth = 1;
    ModelState st = init_state(id, 1);
    for (std::size_t k = 0; k < id.k; ++k) {
      const std::string pk = "hub0.pub.k" + std::to_string(k);
      Tensor& w = st.at(pk + ".g0.w");
      w.fill(0);
      w[((1 * 3 + 1) * 2 + 0) * 2 + 0] = 1;
      w[((1 * 3 + 1) * 2 + 1) * 2 + 1] = 1;
      st.at(pk + ".g0.b").fill(0);
      st.at(pk + ".beta").fill(0);
    }
    ad::Tape tape;
    Tensor out = run(tape, id, st, [&](Builder& b) { return b.pub(tape.constant(u0), s, "hub0.pub"); });
    const ComplexField once = optics::magnitude_project(ComplexField::from_channels(u0), s);
    CHECK(max_abs_diff(ComplexField::from_channels(out), once) < 1e-12);
  }
  SUBCASE("intensity shape mismatch") {
    const ModelState st = init_state(cfg, 1);
    ad::Tape tape;
    Builder b(tape, cfg, st);
    CHECK_THROWS_AS(b.pub(tape.constant(u0), Tensor({4, 4}), "hub0.pub"), ConfigError);
  }
}

TEST_CASE("FRB and FFB") {
  const ModelConfig cfg = tiny();
  std::mt19937_64 rng(6);
  SUBCASE("zero input with zero biases gives zero") {
    const ModelState st = init_state(cfg, 1);
    ad::Tape tape;
    CHECK(run(tape, cfg, st, [&](Builder& b) { return b.frb(tape.constant(Tensor({8, 8, 2})), "hub0.frb"); })
              .max_abs() == 0.0);
  }
  SUBCASE("attention weights in (0,1) and skip widens the stack") {
    const ModelState st = init_state(cfg, 1);
    ad::Tape tape;
    Probe probe;
    Builder b(tape, cfg, st, &probe);
    ad::Var x = tape.constant(oracle::random_tensor({8, 8, 4}, rng));
    ad::Var skip = tape.constant(oracle::random_tensor({8, 8, 4}, rng));
    CHECK(b.hub(x, oracle::random_tensor({8, 8}, rng, 0.1, 1), &skip, "hub0", 0).shape() == Shape{8, 8, 4});
    CHECK(b.hub(b.ds_block(x, "ds1"), oracle::random_tensor({4, 4}, rng, 0.1, 1), nullptr, "hub1", 1).shape() ==
          Shape{4, 4, 8});
    REQUIRE(probe.attention.size() == 2);
    CHECK(probe.attention[0].weights.size() == 12);
    CHECK(probe.attention[1].weights.size() == 16);
    for (const auto& a : probe.attention)
      for (auto w : a.weights.data()) {
        CHECK(w > 0);
        CHECK(w < 1);
      }
    // hub0 expects a skip; omitting it is a configuration error.
    CHECK_THROWS_AS(b.hub(x, Tensor({8, 8}, 1.0), nullptr, "hub0", 0), ConfigError);
  }
  SUBCASE("duplicated channels share their pooled descriptor") {
    Tensor t = oracle::random_tensor({4, 4, 2}, rng);
    ad::Tape tape;
    ad::Var v = tape.constant(t);
    ad::Var pooled = ad::global_avg_pool(ad::concat_channels({v, v}));
    CHECK(pooled.value()[0] == pooled.value()[2]);
    CHECK(pooled.value()[1] == pooled.value()[3]);
  }
}

TEST_CASE("ds block responds to a single input pixel") {
  const ModelConfig cfg = tiny();
  const ModelState st = init_state(cfg, 1);
  std::mt19937_64 rng(7);
  Tensor x = oracle::random_tensor({8, 8, 4}, rng);
  ad::Tape t1;
  const Tensor a = run(t1, cfg, st, [&](Builder& b) { return b.ds_block(t1.constant(x), "ds1"); });
  x.at(3, 5, 1) += 0.5;
  ad::Tape t2;
  const Tensor b = run(t2, cfg, st, [&](Builder& bb) { return bb.ds_block(t2.constant(x), "ds1"); });
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(double(a[i] - b[i])));
  CHECK(diff > 1e-6);
}

TEST_CASE("block gradients match finite differences") {
  const ModelConfig cfg = tiny();
  const ModelState st = init_state(cfg, 1);
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor({8, 8, 4}, rng);
  const Tensor s = oracle::random_tensor({8, 8}, rng, 0.1, 2);

  // Differentiate w.r.t. the input feature map; parameters stay fixed.
  struct Case {
    const char* name;
    std::function<ad::Var(Builder&, ad::Var)> f;
    Tensor input;
  };
  std::vector<Case> cases{
      {"conv_block", [](Builder& b, ad::Var v) { return b.conv_block(v, "pp.cb", 1); }, x},
      {"conv_block stride 2", [](Builder& b, ad::Var v) { return b.conv_block(v, "ds1.cb0", 2); }, x},
      {"us_block", [](Builder& b, ad::Var v) { return b.us_block(v, "us0"); },
       oracle::random_tensor({4, 4, 8}, rng)},
      {"frb", [](Builder& b, ad::Var v) { return b.frb(v, "hub1.frb"); }, oracle::random_tensor({8, 8, 6}, rng)},
      {"ffb", [](Builder& b, ad::Var v) { return b.ffb(v, "hub0.ffb", 0); },
       oracle::random_tensor({8, 8, 12}, rng)},
      {"pub", [&](Builder& b, ad::Var v) { return b.pub(v, s, "hub0.pub"); }, oracle::random_tensor({8, 8, 2}, rng)},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto r = ad::check_gradient(
        [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
          Builder b(tape, cfg, st);
          return c.f(b, v[0]);
        },
        {c.input}, seed++, 1e-6, 40);
    CHECK(r.max_relative_error < 1e-4);
  }

  SUBCASE("conv weight gradient") {
    auto r = ad::check_gradient(
        [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
          ad::Var y = ad::conv2d(tape.constant(x), v[0], tape.constant(Tensor({4})), 1);
          return ad::leaky_relu(ad::instance_norm(y, tape.constant(Tensor({4}, 1.0)), tape.constant(Tensor({4})),
                                                  Real(1e-5)),
                                Real(0.2));
        },
        {st.at("pp.cb.conv.w")}, 200, 1e-6, 60);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("full model") {
  const ModelConfig cfg = ModelConfig::desk();
  const ModelState st = init_state(cfg, 11);
  const auto meas = measurement(cfg.n, cfg.m, 12);

  SUBCASE("every internal projection meets its scale's constraint") {
    Probe probe;
    predict(cfg, st, meas, 3, &probe);
    // init hub + hub1 + hub0, K each.
    REQUIRE(probe.projections.size() == 3 * cfg.k);
    for (const auto& p : probe.projections) {
      CAPTURE(p.block);
      CHECK(fft_intensity_error(p.projected, p.intensity) < 1e-10);
    }
    // Different noise seeds change the init but not the constraint.
    Probe other;
    predict(cfg, st, meas, 4, &other);
    CHECK(!(other.projections[0].projected == probe.projections[0].projected));
    for (const auto& p : other.projections) CHECK(fft_intensity_error(p.projected, p.intensity) < 1e-10);
  }

  SUBCASE("deterministic for fixed state and seed") {
    CHECK(predict(cfg, st, meas, 5) == predict(cfg, st, meas, 5));
    CHECK(!(predict(cfg, st, meas, 5) == predict(cfg, st, meas, 6)));
    CHECK(init_noise(16, 9) == init_noise(16, 9));
    CHECK(init_state(cfg, 11) == st);
  }

  SUBCASE("measurement size mismatch") {
    const auto wrong = measurement(16, 128, 1);
    CHECK_THROWS_AS(predict(cfg, st, wrong), ConfigError);
  }

  SUBCASE("every parameter receives gradient") {
    ad::Tape tape;
    Builder b(tape, cfg, st);
    std::mt19937_64 rng(13);
    ad::Var out = b.forward(meas, 1);
    ad::Var loss = ad::sum(ad::mul(out, tape.constant(oracle::random_tensor({16, 16, 2}, rng))));
    tape.backward(loss);
    const auto grads = tape.gradients();
    std::set<std::string> names;
    for (const auto& [name, shape] : parameter_shapes(cfg)) names.insert(name);
    std::set<std::string> seen;
    for (const auto& [name, g] : grads) {
      seen.insert(name);
      CAPTURE(name);
      CHECK(g.max_abs() > 0);
    }
    CHECK(seen == names);
  }

  SUBCASE("finite-difference spot check on sampled parameters") {
    std::mt19937_64 rng(14);
    const Tensor v = oracle::random_tensor({16, 16, 2}, rng);
    auto objective = [&](const ModelState& s) {
      const Tensor y = predict(cfg, s, meas, 1).to_channels();
      double acc = 0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += double(y[i]) * v[i];
      return acc;
    };
    ad::Tape tape;
    Builder b(tape, cfg, st);
    tape.backward(ad::sum(ad::mul(b.forward(meas, 1), tape.constant(v))));
    const auto grads = tape.gradients();
    const auto shapes = parameter_shapes(cfg);
    std::uniform_int_distribution<std::size_t> pick(0, shapes.size() - 1);
    for (int trial = 0; trial < 5; ++trial) {
      const std::string name = shapes[pick(rng)].first;
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, st.at(name).size() - 1)(rng);
      const double h = 1e-8;
      ModelState plus = st, minus = st;
      plus.at(name)[idx] += Real(h);
      minus.at(name)[idx] -= Real(h);
      const double numeric = (objective(plus) - objective(minus)) / (2 * h);
      const double analytic = grads.at(name)[idx];
      CAPTURE(name);
      CHECK(std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-3) < 1e-3);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "phaseforge_test_ckpt";
  fs::remove_all(dir);
  const ModelConfig cfg = tiny();
  const ModelState st = init_state(cfg, 21);
  save_checkpoint(dir, cfg, st, 42);
  Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.step == 42);
  CHECK(ck.state == st);
  CHECK(config_hash(ck.config) == config_hash(cfg));
  const auto meas = measurement(cfg.n, cfg.m, 22);
  CHECK(predict(ck.config, ck.state, meas) == predict(cfg, st, meas));

  ModelState missing = st;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(save_checkpoint(dir / "bad", cfg, missing, 0), ConfigError);
  fs::remove(dir / "pp.out.b.npy");
  CHECK_THROWS_WITH_AS(load_checkpoint(dir), doctest::Contains("pp.out.b"), IoError);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "nothing"), doctest::Contains("manifest.json"), IoError);
  fs::remove_all(dir);
}
