#include "phaseforge/metrics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace phaseforge::metrics {

double psnr(const Tensor& est, const Tensor& gt, double peak) {
  require_same_shape(est, gt, "psnr");
  double sse = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = double(est[i]) - double(gt[i]);
    sse += d * d;
  }
  const double mse = sse / double(gt.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& est, const Tensor& gt, double dynamic_range, std::size_t window,
            double k1, double k2) {
  require_same_shape(est, gt, "ssim");
  if (gt.rank() != 2) throw ConfigError("ssim: expects a 2-D image");
  const std::size_t h = gt.dim(0), w = gt.dim(1);
  if (h < window || w < window) throw ConfigError("ssim: image smaller than the window");
  const double c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
  const double c2 = (k2 * dynamic_range) * (k2 * dynamic_range);
  const double np = double(window * window);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + window <= h; ++i)
    for (std::size_t j = 0; j + window <= w; ++j) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t a = 0; a < window; ++a)
        for (std::size_t b = 0; b < window; ++b) {
          const double x = est.at(i + a, j + b), y = gt.at(i + a, j + b);
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
      const double mx = sx / np, my = sy / np;
      // Sample (N - 1) covariance.
      const double vx = (sxx - np * mx * mx) / (np - 1);
      const double vy = (syy - np * my * my) / (np - 1);
      const double cxy = (sxy - np * mx * my) / (np - 1);
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / double(count);
}

double mae(const Tensor& est, const Tensor& gt) {
  require_same_shape(est, gt, "mae");
  double acc = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) acc += std::abs(double(est[i]) - double(gt[i]));
  return acc / double(gt.size());
}

Tensor magnitude(const ComplexField& x) {
  Tensor out({x.rows(), x.cols()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(x.re[i], x.im[i]);
  return out;
}

Tensor shifted_phase(const ComplexField& x) {
  constexpr double two_pi = 2 * std::numbers::pi;
  Tensor out({x.rows(), x.cols()});
  for (std::size_t i = 0; i < out.size(); ++i) {
    double p = std::atan2(double(x.im[i]), double(x.re[i])) + std::numbers::pi;
    if (p >= two_pi) p -= two_pi;
    out[i] = Real(p);
  }
  return out;
}

double magnitude_peak(const Tensor& gt_magnitude) {
  double peak = 0;
  for (auto v : gt_magnitude.data()) peak = std::max(peak, double(v));
  return peak > 0 ? peak : 1.0;
}

FieldScores score(const ComplexField& est, const ComplexField& gt) {
  const Tensor em = magnitude(est), gm = magnitude(gt);
  const Tensor ep = shifted_phase(est), gp = shifted_phase(gt);
  const double peak = magnitude_peak(gm);
  constexpr double phase_peak = 2 * std::numbers::pi;
  FieldScores s;
  s.psnr_mag = psnr(em, gm, peak);
  s.psnr_phase = psnr(ep, gp, phase_peak);
  const std::size_t window = std::min<std::size_t>(7, std::min(gt.rows(), gt.cols()));
  s.ssim_mag = ssim(em, gm, peak, window);
  s.ssim_phase = ssim(ep, gp, phase_peak, window);
  s.mae_mag = mae(em, gm);
  s.mae_phase = mae(ep, gp);
  return s;
}

}  // namespace phaseforge::metrics
