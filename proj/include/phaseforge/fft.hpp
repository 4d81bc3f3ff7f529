#pragma once

#include <cstddef>
#include <span>

#include "phaseforge/complex_field.hpp"

namespace phaseforge::fft {

/// In-place 1-D DFT of any length (FFTW). Forward is unnormalized; inverse scales by 1/n.
void transform(std::span<Complex> data, bool inverse);

/// In-place 2-D DFT over a row-major rows x cols buffer, same normalization as transform().
void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse);

ComplexField fft2(const ComplexField& field);
ComplexField ifft2(const ComplexField& field);

}  // namespace phaseforge::fft
