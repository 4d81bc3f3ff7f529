#pragma once

#include "phaseforge/complex_field.hpp"

namespace phaseforge::metrics {

/// 10 log10(peak^2 / MSE); +infinity when MSE is zero.
double psnr(const Tensor& est, const Tensor& gt, double peak);
/// Mean SSIM over all valid window x window positions with uniform weights.
double ssim(const Tensor& est, const Tensor& gt, double dynamic_range, std::size_t window = 7,
            double k1 = 0.01, double k2 = 0.03);
double mae(const Tensor& est, const Tensor& gt);

Tensor magnitude(const ComplexField& x);
/// arg(x) + pi wrapped to [0, 2 pi).
Tensor shifted_phase(const ComplexField& x);

/// Peak for the magnitude channel: max(gt), or 1 for an all-zero reference.
double magnitude_peak(const Tensor& gt_magnitude);

struct FieldScores {
  double psnr_mag = 0, psnr_phase = 0;
  double ssim_mag = 0, ssim_phase = 0;
  double mae_mag = 0, mae_phase = 0;
};

FieldScores score(const ComplexField& est, const ComplexField& gt);

}  // namespace phaseforge::metrics
