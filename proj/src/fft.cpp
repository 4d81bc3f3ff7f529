#include "phaseforge/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace phaseforge::fft {

namespace {

#ifdef PHASEFORGE_FLOAT32
using fftw_complex_t = fftwf_complex;
using fftw_plan_t = fftwf_plan;
#define PF_FFTW(name) fftwf_##name
#else
using fftw_complex_t = fftw_complex;
using fftw_plan_t = fftw_plan;
#define PF_FFTW(name) fftw_##name
#endif

// FFTW planning is not thread-safe, execution of an existing plan on new arrays is.
// FFTW_ESTIMATE keeps plans (and therefore results) independent of timing.
fftw_plan_t plan_for(std::size_t rows, std::size_t cols, bool inverse) {
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan_t> cache;
  std::lock_guard lock(mutex);
  const auto key = std::make_tuple(rows, cols, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<Complex> scratch(rows * cols);
  auto* buf = reinterpret_cast<fftw_complex_t*>(scratch.data());
  fftw_plan_t plan = PF_FFTW(plan_dft_2d)(int(rows), int(cols), buf, buf,
                                          inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                          FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, plan);
  return plan;
}

void execute(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse) {
  auto* buf = reinterpret_cast<fftw_complex_t*>(data.data());
  PF_FFTW(execute_dft)(plan_for(rows, cols, inverse), buf, buf);
  if (inverse) {
    const Real scale = Real(1) / Real(rows * cols);
    for (auto& v : data) v *= scale;
  }
}

}  // namespace

void transform(std::span<Complex> data, bool inverse) {
  if (data.size() <= 1) return;
  execute(data, 1, data.size(), inverse);
}

void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse) {
  if (data.size() != rows * cols) throw ConfigError("transform2d: buffer size mismatch");
  if (data.empty()) return;
  execute(data, rows, cols, inverse);
}

ComplexField fft2(const ComplexField& field) {
  auto buf = field.to_complex();
  transform2d(buf, field.rows(), field.cols(), false);
  return ComplexField::from_complex(buf, field.rows(), field.cols());
}

ComplexField ifft2(const ComplexField& field) {
  auto buf = field.to_complex();
  transform2d(buf, field.rows(), field.cols(), true);
  return ComplexField::from_complex(buf, field.rows(), field.cols());
}

}  // namespace phaseforge::fft
