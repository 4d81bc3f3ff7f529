#pragma once

// Independent reference implementations used only by tests. Nothing here calls into the
// library's transform or autodiff code paths.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "phaseforge/complex_field.hpp"
#include "phaseforge/tensor.hpp"

namespace oracle {

using phaseforge::ComplexField;
using phaseforge::Real;
using phaseforge::Shape;
using phaseforge::Tensor;
using cplx = std::complex<double>;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = Real(u(rng));
  return t;
}

inline ComplexField random_field(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return ComplexField(random_tensor({rows, cols}, rng), random_tensor({rows, cols}, rng));
}

/// Direct O(H^2 W^2) double-sum DFT.
inline std::vector<cplx> naive_dft2(const std::vector<cplx>& x, std::size_t H, std::size_t W,
                                    bool inverse = false) {
  std::vector<cplx> out(H * W);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t l = 0; l < W; ++l) {
      cplx acc = 0;
      for (std::size_t m = 0; m < H; ++m)
        for (std::size_t n = 0; n < W; ++n) {
          const double a = sign * 2 * std::numbers::pi *
                           (double((k * m) % H) / double(H) + double((l * n) % W) / double(W));
          acc += x[m * W + n] * cplx(std::cos(a), std::sin(a));
        }
      out[k * W + l] = inverse ? acc / double(H * W) : acc;
    }
  return out;
}

inline std::vector<cplx> as_complex(const ComplexField& f) {
  std::vector<cplx> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = {f.re[i], f.im[i]};
  return out;
}

/// Central zero padding of an N x N field into an M x M plane, offset (M - N) / 2.
inline std::vector<cplx> pad_center(const std::vector<cplx>& x, std::size_t N, std::size_t M) {
  std::vector<cplx> out(M * M);
  const std::size_t o = (M - N) / 2;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) out[(i + o) * M + j + o] = x[i * N + j];
  return out;
}

/// Nested-loop "same"-padded cross-correlation, (H, W, Cin) x (kh, kw, Cin, Cout).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  Tensor out({Ho, Wo, cout});
  for (std::size_t oi = 0; oi < Ho; ++oi)
    for (std::size_t oj = 0; oj < Wo; ++oj)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = b[o];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t c = 0; c < kw; ++c)
            for (std::size_t ch = 0; ch < cin; ++ch) {
              const long ii = long(oi * stride + a) - long(kh / 2);
              const long jj = long(oj * stride + c) - long(kw / 2);
              if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
              acc += x.at(std::size_t(ii), std::size_t(jj), ch) *
                     w[((a * kw + c) * cin + ch) * cout + o];
            }
        out.at(oi, oj, o) = Real(acc);
      }
  return out;
}

/// Mean absolute difference, (1 / 2N^2) normalization over both channels.
inline double loss_pixel(const ComplexField& a, const ComplexField& b) {
  const std::size_t n = a.rows();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      acc += std::abs(double(a.re.at(i, j)) - b.re.at(i, j)) + std::abs(double(a.im.at(i, j)) - b.im.at(i, j));
  return acc / (2.0 * double(n * n));
}

inline double loss_tv(const ComplexField& x) {
  const std::size_t n = x.rows();
  double acc = 0;
  for (const Tensor* ch : {&x.re, &x.im}) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j + 1 < n; ++j) acc += std::pow(double(ch->at(i, j + 1)) - ch->at(i, j), 2);
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j < n; ++j) acc += std::pow(double(ch->at(i + 1, j)) - ch->at(i, j), 2);
  }
  return acc / (2.0 * double(n * n));
}

inline double psnr(const Tensor& a, const Tensor& b, double peak) {
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(double(a[i]) - b[i], 2);
  const double mse = se / double(a.size());
  return mse == 0 ? INFINITY : 10 * std::log10(peak * peak / mse);
}

inline double mae(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a[i]) - b[i]);
  return acc / double(a.size());
}

/// Sliding-window SSIM: uniform weights, sample (n - 1) variances, valid positions only.
inline double ssim(const Tensor& x, const Tensor& y, double range, std::size_t win, double k1 = 0.01,
                   double k2 = 0.03) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  const double c1 = std::pow(k1 * range, 2), c2 = std::pow(k2 * range, 2);
  const double n = double(win * win);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + win <= H; ++i)
    for (std::size_t j = 0; j + win <= W; ++j) {
      double mx = 0, my = 0;
      for (std::size_t a = 0; a < win; ++a)
        for (std::size_t b = 0; b < win; ++b) {
          mx += x.at(i + a, j + b);
          my += y.at(i + a, j + b);
        }
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t a = 0; a < win; ++a)
        for (std::size_t b = 0; b < win; ++b) {
          const double dx = x.at(i + a, j + b) - mx, dy = y.at(i + a, j + b) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      vx /= n - 1;
      vy /= n - 1;
      cxy /= n - 1;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / double(count);
}

}  // namespace oracle
