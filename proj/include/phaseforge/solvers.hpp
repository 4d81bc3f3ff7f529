#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "phaseforge/complex_field.hpp"
#include "phaseforge/optics.hpp"

namespace phaseforge::solvers {

enum class Method { GS, HIO, RAAR, WF };
/// Amplitude prior applied inside the support window.
enum class Constraint { None, RealNonnegative, PhaseOnly };
/// How the best restart is chosen: measurement residual, or PSNR against a reference.
enum class Selection { Residual, Psnr };

Method parse_method(const std::string& name);
std::string to_string(Method m);
Constraint parse_constraint(const std::string& name);
std::string to_string(Constraint c);

struct SolverConfig {
  Method method = Method::HIO;
  int iterations = 1500;
  int restarts = 3;
  /// Relaxation; a negative value selects the method default (HIO 0.9, RAAR 0.87).
  double beta = -1;
  double wf_mu_max = 0.4;
  double wf_t0 = 330;
  /// When set, WF uses this constant mu instead of the warm-up schedule.
  std::optional<double> wf_fixed_mu;
  Constraint constraint = Constraint::None;
  Selection selection = Selection::Residual;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  double relaxation() const;
};

void to_json(nlohmann::json& j, const SolverConfig& c);
void from_json(const nlohmann::json& j, SolverConfig& c);

/// The data a solver fits: gain-free M x M intensity, object size, and the known
/// defocus kernel multiplying the object (absent for an in-focus capture).
struct Problem {
  Tensor intensity;
  std::size_t n = 0;
  std::optional<ComplexField> defocus;

  std::size_t m() const { return intensity.dim(0); }

  static Problem from_measurement(const optics::IntensityMeasurement& meas, bool defocused);
  /// Noiseless, unquantized problem generated from a known object.
  static Problem from_object(const ComplexField& x, const optics::OpticsConfig& cfg, bool defocused);
};

struct SolverResult {
  ComplexField estimate;
  /// Fourier-magnitude residual of the object-domain estimate; entry t is after t iterations.
  std::vector<double> trace;
  /// WF objective per iteration (empty for projection methods).
  std::vector<double> objective;
  int best_restart = 0;
  std::vector<double> restart_scores;
};

/// Projections and helpers on the M x M measurement plane. The support is the central
/// N x N window; the amplitude constraint acts on the object x where the window holds x o h.
class PlaneOperators {
 public:
  PlaneOperators(const Problem& problem, Constraint constraint);

  using Plane = std::vector<Complex>;

  /// Keeps the phase of DFT(y), replaces its magnitude with the measured one.
  Plane project_measurement(const Plane& y) const;
  /// Zero outside the window, amplitude constraint on the object inside.
  Plane project_object(const Plane& y) const;
  /// ||DFT(y)| - sqrt(X)||_2 / ||sqrt(X)||_2.
  double residual(const Plane& y) const;

  Plane embed(const ComplexField& x) const;
  ComplexField extract(const Plane& y) const;

  /// One hybrid input-output step given the current input y and projected = P_M(y).
  Plane hio_update(const Plane& y, const Plane& projected, double beta) const;
  /// One relaxed averaged alternating reflections step.
  Plane raar_update(const Plane& x, double beta) const;

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }

 private:
  Complex constrain(Complex object_value) const;

  std::size_t n_, m_, offset_;
  Constraint constraint_;
  std::vector<Real> magnitude_;
  std::optional<ComplexField> defocus_;
};

double residual(const Problem& problem, const ComplexField& x);

SolverResult solve(const Problem& problem, const SolverConfig& cfg,
                   const ComplexField* initial = nullptr, const ComplexField* reference = nullptr);

SolverResult gs_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial = nullptr);
SolverResult hio_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial = nullptr);
SolverResult raar_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial = nullptr);
SolverResult wf_solve(const Problem& problem, SolverConfig cfg, const ComplexField* initial = nullptr);

/// f(x) = 1/(4 M^2) * sum (|DFT_M(pad(x o h))|^2 - X)^2.
double wf_objective(const Problem& problem, const ComplexField& x);
/// Wirtinger derivative df/d(conj x); the real gradient is 2 Re and 2 Im of it.
ComplexField wf_gradient(const Problem& problem, const ComplexField& x);

/// Removes global phase, circular shift and the conjugate-reflected twin, returning the
/// variant of candidate best correlated with reference.
ComplexField align_trivial(const ComplexField& candidate, const ComplexField& reference);

/// Re <reference, candidate>.
double correlation(const ComplexField& candidate, const ComplexField& reference);

/// "iteration,residual" rows, one per trace entry.
std::string trace_csv(const std::vector<double>& trace);

}  // namespace phaseforge::solvers
