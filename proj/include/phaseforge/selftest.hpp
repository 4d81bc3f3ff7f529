#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace phaseforge::selftest {

struct Check {
  std::string name;
  double value = 0;  // measured error
  double tolerance = 0;
  bool passed() const { return value < tolerance; }
};

/// Finite-difference checks of every differentiable primitive and both losses.
std::vector<Check> gradient_checks(std::uint64_t seed);
/// Forward/backward spot check of the desk model on a few random parameters.
std::vector<Check> model_gradient_check(std::uint64_t seed, std::size_t parameters = 5);
/// Worst ||fft2(u')|^2 - S|_inf / max(S) after every PUB projection in a desk forward pass.
Check projection_exactness(std::uint64_t seed);
/// Decimated unquantized padded-field intensity against |DFT_H(u)|^2, for M = 4H.
Check scale_identity(std::uint64_t seed);

/// Everything above, in a fixed order.
std::vector<Check> run_all(std::uint64_t seed);

}  // namespace phaseforge::selftest
