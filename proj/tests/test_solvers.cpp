#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "phaseforge/fft.hpp"
#include "phaseforge/solvers.hpp"

using namespace phaseforge;
using namespace phaseforge::solvers;
using Plane = PlaneOperators::Plane;

namespace {

optics::OpticsConfig geometry(std::size_t n, std::size_t m) {
  optics::OpticsConfig c;
  c.n = n;
  c.m = m;
  return c;
}

SolverConfig config(Method method, int iterations, int restarts = 1, std::uint64_t seed = 0) {
  SolverConfig c;
  c.method = method;
  c.iterations = iterations;
  c.restarts = restarts;
  c.seed = seed;
  return c;
}

ComplexField shifted(const ComplexField& x, std::size_t di, std::size_t dj) {
  const std::size_t h = x.rows(), w = x.cols();
  ComplexField out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out.set((i + di) % h, (j + dj) % w, x.get(i, j));
  return out;
}

double plane_diff(const Plane& a, const Plane& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  return worst;
}

}  // namespace

TEST_CASE("config validation and json") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.relaxation() == 0.9);
  c.method = Method::RAAR;
  CHECK(c.relaxation() == 0.87);
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SolverConfig{};
  c.restarts = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SolverConfig{};
  c.beta = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_method("admm"), ConfigError);

  c = config(Method::WF, 17, 4, 99);
  c.constraint = Constraint::PhaseOnly;
  nlohmann::json j = c;
  SolverConfig back = j.get<SolverConfig>();
  CHECK(back.method == Method::WF);
  CHECK(back.iterations == 17);
  CHECK(back.restarts == 4);
  CHECK(back.seed == 99);
  CHECK(back.constraint == Constraint::PhaseOnly);
}

TEST_CASE("every solver leaves the truth fixed") {
  std::mt19937_64 rng(21);
  for (bool defocused : {false, true}) {
    const ComplexField x = oracle::random_field(16, 16, rng);
    const Problem p = Problem::from_object(x, geometry(16, 64), defocused);
    for (Method m : {Method::GS, Method::HIO, Method::RAAR, Method::WF}) {
      CAPTURE(to_string(m));
      SolverResult r = solve(p, config(m, 20), &x);
      CHECK(r.trace.front() < 1e-10);
      CHECK(r.trace.back() < 1e-10);
      CHECK(max_abs_diff(r.estimate, x) < 1e-10);
    }
  }
}

TEST_CASE("GS residual never increases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const ComplexField x = oracle::random_field(16, 16, rng);
    const Problem p = Problem::from_object(x, geometry(16, 64), seed % 2 == 1);
    SolverResult r = gs_solve(p, config(Method::GS, 200, 1, seed));
    for (std::size_t t = 1; t < r.trace.size(); ++t) CHECK(r.trace[t] <= r.trace[t - 1] + 1e-12);
  }
}

TEST_CASE("zero start: the first GS step is the inverse DFT of the magnitude, cropped") {
  std::mt19937_64 rng(5);
  const ComplexField x = oracle::random_field(4, 4, rng);
  const Problem p = Problem::from_object(x, geometry(4, 16), false);
  std::vector<oracle::cplx> mag(256);
  for (std::size_t i = 0; i < 256; ++i) mag[i] = std::sqrt(double(p.intensity[i]));
  const auto back = oracle::naive_dft2(mag, 16, 16, true);
  const ComplexField zero(4, 4);
  SolverResult r = gs_solve(p, config(Method::GS, 1), &zero);
  CHECK(r.trace.front() == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(std::abs(oracle::cplx(r.estimate.get(i, j)) - back[(i + 6) * 16 + j + 6]) < 1e-12);
}

TEST_CASE("HIO with zero feedback is GS") {
  std::mt19937_64 rng(6);
  const ComplexField x = oracle::random_field(16, 16, rng);
  const Problem p = Problem::from_object(x, geometry(16, 64), true);
  SolverConfig hio = config(Method::HIO, 50, 1, 3);
  hio.beta = 0;
  SolverResult a = solve(p, hio);
  SolverResult b = solve(p, config(Method::GS, 50, 1, 3));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t t = 0; t < a.trace.size(); ++t) CHECK(a.trace[t] == doctest::Approx(b.trace[t]).epsilon(1e-12));
  CHECK(max_abs_diff(a.estimate, b.estimate) < 1e-12);
}

TEST_CASE("HIO recovers a real nonnegative image") {
  std::mt19937_64 rng(7);
  const ComplexField x(oracle::random_tensor({16, 16}, rng, 0, 1), Tensor({16, 16}));
  const Problem p = Problem::from_object(x, geometry(16, 64), false);
  SolverConfig c = config(Method::HIO, 1000, 10, 11);
  c.constraint = Constraint::RealNonnegative;
  SolverResult r = solve(p, c);
  MESSAGE("best HIO residual " << r.trace.back());
  CHECK(r.trace.back() < 1e-2);
  CHECK(r.restart_scores.size() == 10);
}

TEST_CASE("RAAR at beta = 1 is the averaged alternating reflections step") {
  std::mt19937_64 rng(8);
  const ComplexField x = oracle::random_field(8, 8, rng);
  const Problem p = Problem::from_object(x, geometry(8, 32), true);
  for (Constraint c : {Constraint::None, Constraint::RealNonnegative, Constraint::PhaseOnly}) {
    PlaneOperators ops(p, c);
    const Plane y = ops.embed(oracle::random_field(8, 8, rng));
    const Plane pm = ops.project_measurement(y);
    Plane rm(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) rm[k] = 2.0 * pm[k] - y[k];
    const Plane ps = ops.project_object(rm);
    Plane aar(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) aar[k] = 0.5 * (y[k] + 2.0 * ps[k] - rm[k]);
    CHECK(plane_diff(ops.raar_update(y, 1.0), aar) < 1e-12);
  }
}

TEST_CASE("RAAR matches or beats GS on most random complex images") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const ComplexField x = oracle::random_field(16, 16, rng);
    const Problem p = Problem::from_object(x, geometry(16, 64), false);
    const double raar = solve(p, config(Method::RAAR, 300, 1, seed)).trace.back();
    const double gs = solve(p, config(Method::GS, 300, 1, seed)).trace.back();
    wins += raar <= gs;
  }
  MESSAGE("RAAR <= GS in " << wins << " of 10");
  CHECK(wins >= 7);
}

TEST_CASE("projections") {
  std::mt19937_64 rng(9);
  const Problem p = Problem::from_object(oracle::random_field(8, 8, rng), geometry(8, 32), true);
  SUBCASE("object projection is idempotent and honours each constraint") {
    for (Constraint c : {Constraint::None, Constraint::RealNonnegative, Constraint::PhaseOnly}) {
      PlaneOperators ops(p, c);
      Plane y(32 * 32);
      for (auto& v : y) v = {Real(std::normal_distribution<>()(rng)), Real(std::normal_distribution<>()(rng))};
      const Plane once = ops.project_object(y);
      CHECK(plane_diff(ops.project_object(once), once) < 1e-12);
      const ComplexField obj = ops.extract(once);
      for (std::size_t i = 0; i < obj.size(); ++i) {
        if (c == Constraint::RealNonnegative) {
          CHECK(obj.re[i] >= 0);
          CHECK(std::abs(obj.im[i]) < 1e-12);
        }
        if (c == Constraint::PhaseOnly) CHECK(std::abs(std::hypot(obj.re[i], obj.im[i]) - 1) < 1e-12);
      }
      // Nothing survives outside the window.
      CHECK(std::abs(once[0]) == 0.0);
    }
  }
  SUBCASE("measurement projection lands on the measured magnitudes") {
    PlaneOperators ops(p, Constraint::None);
    Plane y(32 * 32);
    for (auto& v : y) v = {Real(std::normal_distribution<>()(rng)), Real(std::normal_distribution<>()(rng))};
    CHECK(ops.residual(ops.project_measurement(y)) < 1e-12);
  }
}

TEST_CASE("Wirtinger flow") {
  SUBCASE("gradient vanishes at the truth") {
    std::mt19937_64 rng(10);
    const ComplexField x = oracle::random_field(16, 16, rng);
    const Problem p = Problem::from_object(x, geometry(16, 64), true);
    const ComplexField g = wf_gradient(p, x);
    CHECK(std::sqrt(double(squared_norm(g))) < 1e-9);
  }
  SUBCASE("gradient matches central differences of the objective") {
    std::mt19937_64 rng(11);
    const Problem p = Problem::from_object(oracle::random_field(4, 4, rng), geometry(4, 16), true);
    const ComplexField x = oracle::random_field(4, 4, rng);
    const ComplexField g = wf_gradient(p, x);
    const double h = 1e-6;
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int part = 0; part < 2; ++part) {
        ComplexField plus = x, minus = x;
        (part ? plus.im : plus.re)[i] += h;
        (part ? minus.im : minus.re)[i] -= h;
        const double fd = (wf_objective(p, plus) - wf_objective(p, minus)) / (2 * h);
        const double an = 2.0 * (part ? g.im[i] : g.re[i]);
        worst = std::max(worst, std::abs(fd - an));
        scale = std::max(scale, std::abs(fd));
      }
    CHECK(worst / scale < 1e-5);
  }
  SUBCASE("small fixed step never increases the objective") {
    std::mt19937_64 rng(12);
    const Problem p = Problem::from_object(oracle::random_field(8, 8, rng), geometry(8, 32), false);
    SolverConfig c = config(Method::WF, 200, 1, 4);
    c.wf_fixed_mu = 1e-3 * c.wf_mu_max;
    SolverResult r = solve(p, c);
    REQUIRE(r.objective.size() == 201);
    for (std::size_t t = 1; t < r.objective.size(); ++t) CHECK(r.objective[t] <= r.objective[t - 1]);
    CHECK(r.objective.back() < r.objective.front());
  }
  SUBCASE("scheduled run reduces the residual") {
    std::mt19937_64 rng(13);
    const Problem p = Problem::from_object(oracle::random_field(8, 8, rng), geometry(8, 32), true);
    SolverResult r = wf_solve(p, config(Method::WF, 500, 2, 1));
    CHECK(r.trace.back() < r.trace.front());
  }
}

TEST_CASE("align_trivial") {
  std::mt19937_64 rng(14);
  const ComplexField ref = oracle::random_field(16, 16, rng);
  SUBCASE("global phase") {
    ComplexField c(16, 16);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) c.set(i, j, ref.get(i, j) * std::polar(Real(1), Real(1.3)));
    CHECK(max_abs_diff(align_trivial(c, ref), ref) < 1e-10);
  }
  SUBCASE("circular shift") {
    CHECK(max_abs_diff(align_trivial(shifted(ref, 3, 5), ref), ref) < 1e-10);
  }
  SUBCASE("conjugate twin") {
    ComplexField c(16, 16);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) c.set(i, j, std::conj(ref.get((16 - i) % 16, (16 - j) % 16)));
    CHECK(max_abs_diff(align_trivial(c, ref), ref) < 1e-10);
  }
  SUBCASE("all three at once") {
    ComplexField c(16, 16);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        c.set(i, j, std::conj(ref.get((16 - i) % 16, (16 - j) % 16)) * std::polar(Real(1), Real(-2.0)));
    CHECK(max_abs_diff(align_trivial(shifted(c, 7, 1), ref), ref) < 1e-10);
  }
  SUBCASE("correlation never decreases") {
    for (int t = 0; t < 20; ++t) {
      const ComplexField c = oracle::random_field(16, 16, rng);
      CHECK(correlation(align_trivial(c, ref), ref) >= correlation(c, ref));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(align_trivial(ComplexField(4, 4), ref), ConfigError);
  }
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(15);
  const Problem p = Problem::from_object(oracle::random_field(16, 16, rng), geometry(16, 64), true);
  for (Method m : {Method::GS, Method::HIO, Method::RAAR, Method::WF}) {
    SolverConfig c = config(m, 30, 3, 77);
    SolverResult a = solve(p, c);
    c.threads = 3;
    SolverResult b = solve(p, c);
    CHECK(a.trace == b.trace);
    CHECK(a.estimate == b.estimate);
    CHECK(a.best_restart == b.best_restart);
  }
}

TEST_CASE("restart selection") {
  std::mt19937_64 rng(16);
  const ComplexField x = oracle::random_field(16, 16, rng);
  const Problem p = Problem::from_object(x, geometry(16, 64), true);
  SolverConfig c = config(Method::HIO, 40, 4, 5);
  SolverResult r = solve(p, c);
  for (double s : r.restart_scores) CHECK(r.restart_scores[std::size_t(r.best_restart)] <= s);
  c.selection = Selection::Psnr;
  CHECK_THROWS_AS(solve(p, c), UsageError);
  SolverResult q = solve(p, c, nullptr, &x);
  for (double s : q.restart_scores) CHECK(q.restart_scores[std::size_t(q.best_restart)] >= s);
}

TEST_CASE("trace csv") {
  CHECK(trace_csv({1.0, 0.5}) == "iteration,residual\n0,1\n1,0.5\n");
}
