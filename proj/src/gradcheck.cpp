#include "phaseforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "phaseforge/ops.hpp"

namespace phaseforge::ad {

namespace {

double adjoint_loss(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                    const Tensor& probe) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  const Tensor& out = build(tape, leaves).value();
  double acc = 0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += double(out[i]) * double(probe[i]);
  return acc;
}

}  // namespace

GradCheckResult check_gradient(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                               std::uint64_t seed, double step,
                               std::size_t max_entries_per_input) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var out = build(tape, leaves);
  Tensor probe(out.shape());
  for (auto& v : probe.data()) v = Real(normal(rng));
  Var loss = sum(mul(out, tape.constant(probe)));
  tape.backward(loss);

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]);
    std::vector<std::size_t> entries(inputs[k].size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_entries_per_input && entries.size() > max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries_per_input);
      std::sort(entries.begin(), entries.end());
    }
    double max_diff = 0, max_numeric = 0;
    std::vector<Tensor> perturbed = inputs;
    for (std::size_t idx : entries) {
      const Real original = inputs[k][idx];
      perturbed[k][idx] = original + Real(step);
      const double up = adjoint_loss(build, perturbed, probe);
      perturbed[k][idx] = original - Real(step);
      const double down = adjoint_loss(build, perturbed, probe);
      perturbed[k][idx] = original;
      const double numeric = (up - down) / (2 * step);
      max_diff = std::max(max_diff, std::abs(numeric - double(analytic[idx])));
      max_numeric = std::max(max_numeric, std::abs(numeric));
    }
    result.checked_entries += entries.size();
    const double rel = max_diff / std::max(max_numeric, 1e-8);
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  return result;
}

}  // namespace phaseforge::ad
