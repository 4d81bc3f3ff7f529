#include "phaseforge/complex_field.hpp"

#include <algorithm>
#include <cmath>

namespace phaseforge {

ComplexField::ComplexField(Tensor re_, Tensor im_) : re(std::move(re_)), im(std::move(im_)) {
  if (re.rank() != 2) throw ConfigError("ComplexField planes must be rank 2");
  require_same_shape(re, im, "ComplexField");
}

std::vector<Complex> ComplexField::to_complex() const {
  std::vector<Complex> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {re[i], im[i]};
  return out;
}

ComplexField ComplexField::from_complex(const std::vector<Complex>& values, std::size_t rows,
                                        std::size_t cols) {
  if (values.size() != rows * cols) throw ConfigError("from_complex: size mismatch");
  ComplexField f(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    f.re[i] = values[i].real();
    f.im[i] = values[i].imag();
  }
  return f;
}

Tensor ComplexField::to_channels() const {
  Tensor out({rows(), cols(), 2});
  for (std::size_t i = 0; i < size(); ++i) {
    out[2 * i] = re[i];
    out[2 * i + 1] = im[i];
  }
  return out;
}

ComplexField ComplexField::from_channels(const Tensor& channels) {
  if (channels.rank() != 3 || channels.dim(2) != 2)
    throw ConfigError("from_channels expects an (H, W, 2) tensor, got " +
                      shape_string(channels.shape()));
  ComplexField f(channels.dim(0), channels.dim(1));
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.re[i] = channels[2 * i];
    f.im[i] = channels[2 * i + 1];
  }
  return f;
}

Real max_abs_diff(const ComplexField& a, const ComplexField& b) {
  require_same_shape(a.re, b.re, "max_abs_diff");
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(Complex(a.re[i] - b.re[i], a.im[i] - b.im[i])));
  return m;
}

Real squared_norm(const ComplexField& u) {
  Real s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u.re[i] * u.re[i] + u.im[i] * u.im[i];
  return s;
}

}  // namespace phaseforge
