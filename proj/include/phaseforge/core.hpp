#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phaseforge {

#ifdef PHASEFORGE_FLOAT32
using Real = float;
#else
using Real = double;
#endif

/// Magnitudes below this are treated as zero (sqrt gradient clamp, zero-phase fallback).
inline constexpr double kEpsMag = 1e-12;

/// Inconsistent shapes or hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside an operation's mathematical domain (e.g. negative intensity).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse, such as calling backward on a non-scalar node.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Failure reading or writing persisted data.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace phaseforge
