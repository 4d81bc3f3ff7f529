#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "phaseforge/complex_field.hpp"

namespace phaseforge::optics {

/// Acquisition geometry for a single defocused Fourier intensity capture.
struct OpticsConfig {
  double wavelength = 632.8e-9;   // meters
  double defocus_distance = 0.03;  // meters
  double pixel_pitch = 8e-6;       // meters
  std::size_t n = 16;              // object size (pixels)
  std::size_t m = 64;              // measurement size (pixels)
  int bit_depth = 12;
  double gain = 1.0;

  /// Throws ConfigError on any violated invariant (N < M/2, M % N == 0, even N, ...).
  void validate() const;

  /// N = 16, M = 64, pitch scaled so the defocus chirp spans the object as it does at N = 128.
  static OpticsConfig desk_scale();
  /// Pitch giving an n-pixel object the normalized chirp of the 128-pixel geometry.
  static double desk_pitch(std::size_t n) { return 8e-6 * std::sqrt(128.0 / double(n)); }
  static OpticsConfig full_scale();

  std::uint32_t max_count() const { return (std::uint32_t{1} << bit_depth) - 1; }
};

void to_json(nlohmann::json& j, const OpticsConfig& c);
void from_json(const nlohmann::json& j, OpticsConfig& c);

/// Quantized M x M intensity capture, row-major.
struct IntensityMeasurement {
  std::vector<std::uint16_t> data;
  OpticsConfig config;

  std::size_t size() const { return config.m; }
  std::uint16_t at(std::size_t i, std::size_t j) const { return data[i * config.m + j]; }
};

enum class ScaleMode { Decimate, BoxFilterDecimate };

/// Quadratic-phase kernel exp(j pi (p^2 + q^2) / (lambda L)) on the centered N x N grid.
ComplexField defocus_kernel(const OpticsConfig& cfg);

/// Central zero padding of an N x N field into M x M (offset (M - N) / 2 on each axis).
ComplexField pad_center(const ComplexField& x, std::size_t m);
/// Inverse of pad_center: the central n x n window.
ComplexField crop_center(const ComplexField& y, std::size_t n);

/// g * |DFT_M(pad(x o h))|^2 before saturation and rounding.
Tensor intensity(const ComplexField& x, const OpticsConfig& cfg, bool apply_defocus);

/// Saturating, rounding camera model applied to intensity().
IntensityMeasurement forward_measure(const ComplexField& x, const OpticsConfig& cfg,
                                     bool apply_defocus);

/// Reduces an M x M intensity to H x H (M % H == 0), dividing out the exposure gain.
/// Decimate samples every r-th bin; BoxFilterDecimate averages r x r blocks first.
Tensor scale_convert(const Tensor& intensity, std::size_t target, ScaleMode mode, double gain = 1.0);
Tensor scale_convert(const IntensityMeasurement& meas, std::size_t target, ScaleMode mode);

/// The measurement as a real tensor divided by the gain (no resampling).
Tensor measured_intensity(const IntensityMeasurement& meas);

/// Replaces |fft2(u)| by sqrt(S) keeping the phase; zero phase where |fft2(u)| < kEpsMag.
ComplexField magnitude_project(const ComplexField& u, const Tensor& s);

}  // namespace phaseforge::optics
