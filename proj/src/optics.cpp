#include "phaseforge/optics.hpp"

#include <cmath>
#include <numbers>

#include "phaseforge/fft.hpp"
#include "phaseforge/ops.hpp"

namespace phaseforge::optics {

void OpticsConfig::validate() const {
  if (!(wavelength > 0) || !(defocus_distance > 0) || !(pixel_pitch > 0))
    throw ConfigError("optics: wavelength, defocus distance and pixel pitch must be positive");
  if (!(gain > 0)) throw ConfigError("optics: gain must be positive");
  if (bit_depth < 1 || bit_depth > 16) throw ConfigError("optics: bit depth must be in [1, 16]");
  if (n == 0 || n % 2 != 0) throw ConfigError("optics: image size N must be even and positive");
  if (!(2 * n < m))
    throw ConfigError("optics: oversampling requires N < M/2 (N=" + std::to_string(n) +
                      ", M=" + std::to_string(m) + ")");
  if (m % n != 0) throw ConfigError("optics: M must be an integer multiple of N");
}

OpticsConfig OpticsConfig::desk_scale() {
  // Same normalized chirp delta^2 N / (lambda L) as the 128-pixel hardware geometry.
  OpticsConfig c;
  c.pixel_pitch = desk_pitch(c.n);
  return c;
}

OpticsConfig OpticsConfig::full_scale() {
  OpticsConfig c;
  c.n = 128;
  c.m = 768;
  return c;
}

void to_json(nlohmann::json& j, const OpticsConfig& c) {
  j = nlohmann::json{{"wavelength", c.wavelength},   {"defocus_distance", c.defocus_distance},
                     {"pixel_pitch", c.pixel_pitch}, {"n", c.n},
                     {"m", c.m},                     {"bit_depth", c.bit_depth},
                     {"gain", c.gain}};
}

void from_json(const nlohmann::json& j, OpticsConfig& c) {
  OpticsConfig d;
  c.wavelength = j.value("wavelength", d.wavelength);
  c.defocus_distance = j.value("defocus_distance", d.defocus_distance);
  c.pixel_pitch = j.value("pixel_pitch", d.pixel_pitch);
  c.n = j.value("n", d.n);
  c.m = j.value("m", d.m);
  c.bit_depth = j.value("bit_depth", d.bit_depth);
  c.gain = j.value("gain", d.gain);
}

ComplexField defocus_kernel(const OpticsConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n;
  const double coeff = std::numbers::pi / (cfg.wavelength * cfg.defocus_distance);
  ComplexField h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (double(i) - double(n / 2)) * cfg.pixel_pitch;
    for (std::size_t j = 0; j < n; ++j) {
      const double q = (double(j) - double(n / 2)) * cfg.pixel_pitch;
      const double phase = coeff * (p * p + q * q);
      h.set(i, j, Complex(Real(std::cos(phase)), Real(std::sin(phase))));
    }
  }
  return h;
}

ComplexField pad_center(const ComplexField& x, std::size_t m) {
  const std::size_t n = x.rows();
  if (x.cols() != n || m < n) throw ConfigError("pad_center: expects square field with N <= M");
  const std::size_t o = (m - n) / 2;
  ComplexField y(m, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      y.re.at(i + o, j + o) = x.re.at(i, j);
      y.im.at(i + o, j + o) = x.im.at(i, j);
    }
  return y;
}

ComplexField crop_center(const ComplexField& y, std::size_t n) {
  const std::size_t m = y.rows();
  if (y.cols() != m || n > m) throw ConfigError("crop_center: expects square field with N <= M");
  const std::size_t o = (m - n) / 2;
  ComplexField x(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) x.set(i, j, y.get(i + o, j + o));
  return x;
}

Tensor intensity(const ComplexField& x, const OpticsConfig& cfg, bool apply_defocus) {
  cfg.validate();
  if (x.rows() != cfg.n || x.cols() != cfg.n)
    throw ConfigError("forward model: object must be " + std::to_string(cfg.n) + "x" +
                      std::to_string(cfg.n));
  ComplexField y = x;
  if (apply_defocus) {
    const ComplexField h = defocus_kernel(cfg);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const Complex v = Complex(x.re[i], x.im[i]) * Complex(h.re[i], h.im[i]);
      y.re[i] = v.real();
      y.im[i] = v.imag();
    }
  }
  auto plane = pad_center(y, cfg.m).to_complex();
  fft::transform2d(plane, cfg.m, cfg.m, false);
  Tensor out({cfg.m, cfg.m});
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = Real(cfg.gain) * std::norm(plane[i]);
  return out;
}

IntensityMeasurement forward_measure(const ComplexField& x, const OpticsConfig& cfg,
                                     bool apply_defocus) {
  const Tensor raw = intensity(x, cfg, apply_defocus);
  IntensityMeasurement meas;
  meas.config = cfg;
  meas.data.resize(raw.size());
  const double cap = cfg.max_count();
  for (std::size_t i = 0; i < raw.size(); ++i)
    meas.data[i] = std::uint16_t(std::min(std::round(double(raw[i])), cap));
  return meas;
}

Tensor measured_intensity(const IntensityMeasurement& meas) {
  const std::size_t m = meas.config.m;
  if (meas.data.size() != m * m) throw ConfigError("measurement data does not match its config");
  Tensor out({m, m});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Real(meas.data[i] / meas.config.gain);
  return out;
}

Tensor scale_convert(const Tensor& intensity, std::size_t target, ScaleMode mode, double gain) {
  if (intensity.rank() != 2 || intensity.dim(0) != intensity.dim(1))
    throw ConfigError("scale_convert: expects a square intensity");
  const std::size_t m = intensity.dim(0);
  if (target == 0 || m % target != 0)
    throw ConfigError("scale_convert: measurement size " + std::to_string(m) +
                      " is not a multiple of " + std::to_string(target));
  const std::size_t r = m / target;
  Tensor out({target, target});
  for (std::size_t a = 0; a < target; ++a)
    for (std::size_t b = 0; b < target; ++b) {
      double v;
      if (mode == ScaleMode::Decimate) {
        v = intensity.at(a * r, b * r);
      } else {
        double acc = 0;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < r; ++j) acc += intensity.at(a * r + i, b * r + j);
        v = acc / double(r * r);
      }
      out.at(a, b) = Real(v / gain);
    }
  return out;
}

Tensor scale_convert(const IntensityMeasurement& meas, std::size_t target, ScaleMode mode) {
  Tensor raw({meas.config.m, meas.config.m});
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = Real(meas.data[i]);
  return scale_convert(raw, target, mode, meas.config.gain);
}

ComplexField magnitude_project(const ComplexField& u, const Tensor& s) {
  ad::Tape tape;
  ad::Var out = ad::magnitude_project(tape.constant(u.to_channels()), s);
  return ComplexField::from_channels(out.value());
}

}  // namespace phaseforge::optics
