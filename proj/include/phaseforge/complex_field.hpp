#pragma once

#include <complex>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge {

using Complex = std::complex<Real>;

/// Complex image stored as separate real and imaginary (H, W) planes.
struct ComplexField {
  Tensor re;
  Tensor im;

  ComplexField() = default;
  ComplexField(std::size_t rows, std::size_t cols)
      : re({rows, cols}), im({rows, cols}) {}
  ComplexField(Tensor re_, Tensor im_);

  std::size_t rows() const { return re.dim(0); }
  std::size_t cols() const { return re.dim(1); }
  std::size_t size() const { return re.size(); }

  Complex get(std::size_t i, std::size_t j) const { return {re.at(i, j), im.at(i, j)}; }
  void set(std::size_t i, std::size_t j, Complex z) {
    re.at(i, j) = z.real();
    im.at(i, j) = z.imag();
  }

  std::vector<Complex> to_complex() const;
  static ComplexField from_complex(const std::vector<Complex>& values, std::size_t rows,
                                   std::size_t cols);

  /// (H, W, 2) tensor with channel 0 = re, channel 1 = im.
  Tensor to_channels() const;
  static ComplexField from_channels(const Tensor& channels);

  friend bool operator==(const ComplexField&, const ComplexField&) = default;
};

/// Max |a - b| over all entries.
Real max_abs_diff(const ComplexField& a, const ComplexField& b);
Real squared_norm(const ComplexField& u);

}  // namespace phaseforge
