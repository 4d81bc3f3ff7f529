#include "phaseforge/solvers.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "phaseforge/fft.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/parallel.hpp"

namespace phaseforge::solvers {

using Plane = PlaneOperators::Plane;

Method parse_method(const std::string& name) {
  if (name == "gs") return Method::GS;
  if (name == "hio") return Method::HIO;
  if (name == "raar") return Method::RAAR;
  if (name == "wf") return Method::WF;
  throw ConfigError("unknown solver method '" + name + "' (expected gs, hio, raar or wf)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::GS: return "gs";
    case Method::HIO: return "hio";
    case Method::RAAR: return "raar";
    case Method::WF: return "wf";
  }
  return "?";
}

Constraint parse_constraint(const std::string& name) {
  if (name == "none") return Constraint::None;
  if (name == "real-nonnegative") return Constraint::RealNonnegative;
  if (name == "phase-only") return Constraint::PhaseOnly;
  throw ConfigError("unknown constraint '" + name +
                    "' (expected none, real-nonnegative or phase-only)");
}

std::string to_string(Constraint c) {
  switch (c) {
    case Constraint::None: return "none";
    case Constraint::RealNonnegative: return "real-nonnegative";
    case Constraint::PhaseOnly: return "phase-only";
  }
  return "?";
}

void SolverConfig::validate() const {
  if (iterations < 1) throw ConfigError("solver: iterations must be >= 1");
  if (restarts < 1) throw ConfigError("solver: restarts must be >= 1");
  if (beta >= 0 && beta > 1) throw ConfigError("solver: beta must lie in [0, 1]");
  if (!(wf_mu_max > 0) || !(wf_t0 > 0)) throw ConfigError("solver: WF schedule must be positive");
  if (wf_fixed_mu && !(*wf_fixed_mu > 0)) throw ConfigError("solver: fixed WF step must be positive");
}

double SolverConfig::relaxation() const {
  if (beta >= 0) return beta;
  return method == Method::RAAR ? 0.87 : 0.9;
}

void to_json(nlohmann::json& j, const SolverConfig& c) {
  j = nlohmann::json{{"method", to_string(c.method)},
                     {"iterations", c.iterations},
                     {"restarts", c.restarts},
                     {"beta", c.relaxation()},
                     {"wf_mu_max", c.wf_mu_max},
                     {"wf_t0", c.wf_t0},
                     {"constraint", to_string(c.constraint)},
                     {"selection", c.selection == Selection::Psnr ? "psnr" : "residual"},
                     {"seed", c.seed}};
  if (c.wf_fixed_mu) j["wf_fixed_mu"] = *c.wf_fixed_mu;
}

void from_json(const nlohmann::json& j, SolverConfig& c) {
  SolverConfig d;
  c.method = parse_method(j.value("method", to_string(d.method)));
  c.iterations = j.value("iterations", d.iterations);
  c.restarts = j.value("restarts", d.restarts);
  c.beta = j.value("beta", d.beta);
  c.wf_mu_max = j.value("wf_mu_max", d.wf_mu_max);
  c.wf_t0 = j.value("wf_t0", d.wf_t0);
  if (j.contains("wf_fixed_mu")) c.wf_fixed_mu = j.at("wf_fixed_mu").get<double>();
  c.constraint = parse_constraint(j.value("constraint", to_string(d.constraint)));
  const std::string sel = j.value("selection", std::string("residual"));
  if (sel != "residual" && sel != "psnr") throw ConfigError("unknown selection '" + sel + "'");
  c.selection = sel == "psnr" ? Selection::Psnr : Selection::Residual;
  c.seed = j.value("seed", d.seed);
}

Problem Problem::from_measurement(const optics::IntensityMeasurement& meas, bool defocused) {
  meas.config.validate();
  Problem p;
  p.intensity = optics::measured_intensity(meas);
  p.n = meas.config.n;
  if (defocused) p.defocus = optics::defocus_kernel(meas.config);
  return p;
}

Problem Problem::from_object(const ComplexField& x, const optics::OpticsConfig& cfg, bool defocused) {
  optics::OpticsConfig c = cfg;
  c.gain = 1;
  Problem p;
  p.intensity = optics::intensity(x, c, defocused);
  p.n = cfg.n;
  if (defocused) p.defocus = optics::defocus_kernel(cfg);
  return p;
}

PlaneOperators::PlaneOperators(const Problem& problem, Constraint constraint)
    : n_(problem.n), m_(problem.m()), offset_(0), constraint_(constraint), defocus_(problem.defocus) {
  if (problem.intensity.rank() != 2 || problem.intensity.dim(1) != m_)
    throw ConfigError("solver: intensity must be square");
  if (n_ == 0 || n_ > m_) throw ConfigError("solver: support must fit inside the measurement");
  if (defocus_ && (defocus_->rows() != n_ || defocus_->cols() != n_))
    throw ConfigError("solver: defocus kernel must be N x N");
  offset_ = (m_ - n_) / 2;
  magnitude_.resize(problem.intensity.size());
  for (std::size_t i = 0; i < magnitude_.size(); ++i) {
    const Real v = problem.intensity[i];
    if (v < 0) throw DomainError("solver: negative intensity");
    magnitude_[i] = std::sqrt(v);
  }
}

Plane PlaneOperators::project_measurement(const Plane& y) const {
  Plane f = y;
  fft::transform2d(f, m_, m_, false);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Real a = std::abs(f[i]);
    f[i] = a < kEpsMag ? Complex(magnitude_[i], 0) : f[i] * (magnitude_[i] / a);
  }
  fft::transform2d(f, m_, m_, true);
  return f;
}

Complex PlaneOperators::constrain(Complex v) const {
  switch (constraint_) {
    case Constraint::None: return v;
    case Constraint::RealNonnegative: return {std::max(v.real(), Real(0)), 0};
    case Constraint::PhaseOnly: {
      const Real a = std::abs(v);
      return a < kEpsMag ? Complex(1, 0) : v / a;
    }
  }
  return v;
}

Plane PlaneOperators::project_object(const Plane& y) const {
  Plane out(m_ * m_, Complex(0));
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) {
      const std::size_t k = (i + offset_) * m_ + j + offset_;
      if (constraint_ == Constraint::None) {
        out[k] = y[k];
        continue;
      }
      const Complex h = defocus_ ? defocus_->get(i, j) : Complex(1, 0);
      out[k] = constrain(y[k] * std::conj(h)) * h;
    }
  return out;
}

double PlaneOperators::residual(const Plane& y) const {
  Plane f = y;
  fft::transform2d(f, m_, m_, false);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = double(std::abs(f[i])) - double(magnitude_[i]);
    num += d * d;
    den += double(magnitude_[i]) * double(magnitude_[i]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

Plane PlaneOperators::embed(const ComplexField& x) const {
  if (x.rows() != n_ || x.cols() != n_) throw ConfigError("solver: object must be N x N");
  Plane y(m_ * m_, Complex(0));
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) {
      const Complex h = defocus_ ? defocus_->get(i, j) : Complex(1, 0);
      y[(i + offset_) * m_ + j + offset_] = x.get(i, j) * h;
    }
  return y;
}

ComplexField PlaneOperators::extract(const Plane& y) const {
  ComplexField x(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) {
      const Complex h = defocus_ ? defocus_->get(i, j) : Complex(1, 0);
      x.set(i, j, y[(i + offset_) * m_ + j + offset_] * std::conj(h));
    }
  return x;
}

Plane PlaneOperators::hio_update(const Plane& y, const Plane& projected, double beta) const {
  const Real b = Real(beta);
  Plane out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) out[k] = y[k] - b * projected[k];
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) {
      const std::size_t k = (i + offset_) * m_ + j + offset_;
      const Complex h = defocus_ ? defocus_->get(i, j) : Complex(1, 0);
      const Complex prev = y[k] * std::conj(h);
      const Complex proj = projected[k] * std::conj(h);
      Complex next;
      switch (constraint_) {
        case Constraint::None: next = proj; break;
        case Constraint::PhaseOnly: next = constrain(proj); break;
        case Constraint::RealNonnegative: {
          const Real re = proj.real() >= 0 ? proj.real() : prev.real() - b * proj.real();
          next = Complex(re, prev.imag() - b * proj.imag());
          break;
        }
      }
      out[k] = next * h;
    }
  return out;
}

Plane PlaneOperators::raar_update(const Plane& x, double beta) const {
  const Real b = Real(beta);
  const Plane pm = project_measurement(x);
  Plane rm(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) rm[k] = Real(2) * pm[k] - x[k];
  const Plane ps = project_object(rm);
  Plane out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const Complex rs = Real(2) * ps[k] - rm[k];
    out[k] = b / Real(2) * (x[k] + rs) + (Real(1) - b) * pm[k];
  }
  return out;
}

double residual(const Problem& problem, const ComplexField& x) {
  PlaneOperators ops(problem, Constraint::None);
  return ops.residual(ops.embed(x));
}

namespace {

std::mt19937_64 restart_rng(std::uint64_t seed, int restart) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(restart)};
  return std::mt19937_64(seq);
}

// Complex Gaussian object whose energy matches the measurement (Parseval).
ComplexField random_start(const Problem& problem, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ComplexField x(problem.n, problem.n);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.re[i] = Real(normal(rng));
    x.im[i] = Real(normal(rng));
  }
  const double m2 = double(problem.m()) * double(problem.m());
  const double target = double(problem.intensity.sum()) / m2;
  const double have = squared_norm(x);
  const Real s = Real(have > 0 ? std::sqrt(target / have) : 0.0);
  x.re *= s;
  x.im *= s;
  return x;
}

SolverResult run_projection(const Problem& problem, const SolverConfig& cfg, const ComplexField& start) {
  PlaneOperators ops(problem, cfg.constraint);
  const double beta = cfg.relaxation();
  SolverResult r;
  r.trace.reserve(std::size_t(cfg.iterations) + 1);
  Plane y = ops.project_object(ops.embed(start));
  Plane estimate = y;
  r.trace.push_back(ops.residual(estimate));
  for (int t = 1; t <= cfg.iterations; ++t) {
    switch (cfg.method) {
      case Method::GS:
        y = ops.project_object(ops.project_measurement(y));
        estimate = y;
        break;
      case Method::HIO: {
        const Plane projected = ops.project_measurement(y);
        estimate = ops.project_object(projected);
        y = ops.hio_update(y, projected, beta);
        break;
      }
      case Method::RAAR:
        estimate = ops.project_object(ops.project_measurement(y));
        y = ops.raar_update(y, beta);
        break;
      case Method::WF: break;
    }
    r.trace.push_back(ops.residual(estimate));
  }
  r.estimate = ops.extract(estimate);
  return r;
}

SolverResult run_wf(const Problem& problem, const SolverConfig& cfg, const ComplexField& start) {
  PlaneOperators ops(problem, Constraint::None);
  SolverResult r;
  ComplexField x = start;
  const double norm0 = squared_norm(start);
  const double inv_norm = norm0 > 0 ? 1.0 / norm0 : 0.0;
  r.trace.push_back(ops.residual(ops.embed(x)));
  r.objective.push_back(wf_objective(problem, x));
  for (int t = 1; t <= cfg.iterations; ++t) {
    const double mu = cfg.wf_fixed_mu ? *cfg.wf_fixed_mu
                                      : std::min(1.0 - std::exp(-double(t) / cfg.wf_t0), cfg.wf_mu_max);
    const ComplexField g = wf_gradient(problem, x);
    const Real step = Real(mu * inv_norm);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.re[i] -= step * g.re[i];
      x.im[i] -= step * g.im[i];
    }
    r.trace.push_back(ops.residual(ops.embed(x)));
    r.objective.push_back(wf_objective(problem, x));
  }
  r.estimate = x;
  return r;
}

}  // namespace

SolverResult solve(const Problem& problem, const SolverConfig& cfg, const ComplexField* initial,
                   const ComplexField* reference) {
  cfg.validate();
  if (cfg.selection == Selection::Psnr && !reference)
    throw UsageError("solver: PSNR selection needs a reference image");
  std::vector<SolverResult> runs(std::size_t(cfg.restarts));
  parallel_for(runs.size(), resolve_threads(cfg.threads), [&](std::size_t k) {
    auto rng = restart_rng(cfg.seed, int(k));
    const ComplexField start = initial ? *initial : random_start(problem, rng);
    runs[k] = cfg.method == Method::WF ? run_wf(problem, cfg, start)
                                       : run_projection(problem, cfg, start);
  });
  std::vector<double> scores(runs.size());
  for (std::size_t k = 0; k < runs.size(); ++k) {
    if (cfg.selection == Selection::Psnr) {
      const auto s = metrics::score(align_trivial(runs[k].estimate, *reference), *reference);
      scores[k] = 0.5 * (s.psnr_mag + s.psnr_phase);
    } else {
      scores[k] = runs[k].trace.back();
    }
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    const bool better = cfg.selection == Selection::Psnr ? scores[k] > scores[best]
                                                         : scores[k] < scores[best];
    if (better) best = k;
  }
  SolverResult out = std::move(runs[best]);
  out.best_restart = int(best);
  out.restart_scores = std::move(scores);
  return out;
}

SolverResult gs_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial) {
  cfg.method = Method::GS;
  return solve(problem, cfg, initial);
}

SolverResult hio_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial) {
  cfg.method = Method::HIO;
  return solve(problem, cfg, initial);
}

SolverResult raar_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial) {
  cfg.method = Method::RAAR;
  return solve(problem, cfg, initial);
}

SolverResult wf_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial) {
  cfg.method = Method::WF;
  return solve(problem, cfg, initial);
}

double wf_objective(const Problem& problem, const ComplexField& x) {
  PlaneOperators ops(problem, Constraint::None);
  Plane f = ops.embed(x);
  const std::size_t m = ops.m();
  fft::transform2d(f, m, m, false);
  double acc = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double r = double(std::norm(f[i])) - double(problem.intensity[i]);
    acc += r * r;
  }
  return acc / (4.0 * double(m) * double(m));
}

ComplexField wf_gradient(const Problem& problem, const ComplexField& x) {
  PlaneOperators ops(problem, Constraint::None);
  Plane f = ops.embed(x);
  const std::size_t m = ops.m();
  fft::transform2d(f, m, m, false);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] *= std::norm(f[i]) - problem.intensity[i];
  // A^H = conj(h) o crop o M^2 ifft; combined with the 1/(2 M^2) factor that leaves ifft / 2.
  fft::transform2d(f, m, m, true);
  ComplexField g = ops.extract(f);
  g.re *= Real(0.5);
  g.im *= Real(0.5);
  return g;
}

double correlation(const ComplexField& candidate, const ComplexField& reference) {
  if (candidate.rows() != reference.rows() || candidate.cols() != reference.cols())
    throw ConfigError("correlation: shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i)
    acc += double(reference.re[i]) * double(candidate.re[i]) +
           double(reference.im[i]) * double(candidate.im[i]);
  return acc;
}

ComplexField align_trivial(const ComplexField& candidate, const ComplexField& reference) {
  const std::size_t h = reference.rows(), w = reference.cols();
  if (candidate.rows() != h || candidate.cols() != w)
    throw ConfigError("align_trivial: candidate and reference shapes differ");
  const ComplexField ref_f = fft::fft2(reference);

  ComplexField twin(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      twin.set(i, j, std::conj(candidate.get((h - i) % h, (w - j) % w)));

  const ComplexField* best_variant = &candidate;
  std::size_t best_i = 0, best_j = 0;
  Complex best_c(0);
  double best_mag = -1;
  for (const ComplexField* variant : std::array<const ComplexField*, 2>{&candidate, &twin}) {
    // corr[s] = sum_n ref[n] conj(v[n - s]) = ifft(REF o conj(V)).
    ComplexField v_f = fft::fft2(*variant);
    ComplexField prod(h, w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) prod.set(i, j, ref_f.get(i, j) * std::conj(v_f.get(i, j)));
    const ComplexField corr = fft::ifft2(prod);
    for (std::size_t si = 0; si < h; ++si)
      for (std::size_t sj = 0; sj < w; ++sj) {
        const Complex c = corr.get(si, sj);
        const double mag = std::abs(c);
        if (mag <= best_mag * (1 + 1e-12)) continue;
        best_mag = mag;
        best_c = c;
        best_variant = variant;
        best_i = si;
        best_j = sj;
      }
  }
  const Complex rot = best_mag > 0 ? best_c / Real(best_mag) : Complex(1, 0);
  ComplexField best(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      best.set(i, j, rot * best_variant->get((i + h - best_i) % h, (j + w - best_j) % w));
  // Never return something less correlated than the input.
  return correlation(best, reference) >= correlation(candidate, reference) ? best : candidate;
}

std::string trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,residual\n";
  for (std::size_t t = 0; t < trace.size(); ++t) os << t << ',' << trace[t] << '\n';
  return os.str();
}

}  // namespace phaseforge::solvers
