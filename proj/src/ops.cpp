#include "phaseforge/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "phaseforge/fft.hpp"

namespace phaseforge::ad {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) +
                      " tensor, got " + shape_string(t.shape()));
}

template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape->record(std::move(out), {x},
                        [x, df](const Tensor& g, std::vector<Tensor*>& grads) {
                          if (!grads[0]) return;
                          const Tensor& xv = x.value();
                          Tensor& gx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i]);
                        });
}

std::vector<Complex> to_buffer(const Tensor& field) {
  std::vector<Complex> buf(field.size() / 2);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {field[2 * i], field[2 * i + 1]};
  return buf;
}

Tensor from_buffer(const std::vector<Complex>& buf, const Shape& shape) {
  Tensor out(shape);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out[2 * i] = buf[i].real();
    out[2 * i + 1] = buf[i].imag();
  }
  return out;
}

void require_complex_field(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(2) != 2)
    throw ConfigError(std::string(what) + ": expected (H, W, 2) field, got " +
                      shape_string(t.shape()));
}

// Real-valued (re, im) gradient of a linear complex map y = s * DFT^{+/-}(x):
// grad_x = conj-adjoint applied to grad_y.
Var dft_op(Var field, bool inverse) {
  const Tensor& v = field.value();
  require_complex_field(v, inverse ? "ifft2" : "fft2");
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  auto buf = to_buffer(v);
  fft::transform2d(buf, rows, cols, inverse);
  return field.tape->record(
      from_buffer(buf, v.shape()), {field},
      [rows, cols, inverse](const Tensor& g, std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        auto gb = to_buffer(g);
        // Adjoint of the unnormalized forward DFT is (H W) * inverse DFT; adjoint of the
        // normalized inverse DFT is forward DFT / (H W).
        fft::transform2d(gb, rows, cols, !inverse);
        const Real factor = inverse ? Real(1) / Real(rows * cols) : Real(rows * cols);
        Tensor& gx = *grads[0];
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gx[2 * i] += gb[i].real() * factor;
          gx[2 * i + 1] += gb[i].imag() * factor;
        }
      });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a, b}, [](const Tensor& g, std::vector<Tensor*>& grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [](const Tensor& g, std::vector<Tensor*>& grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(std::move(out), {a, b},
                        [a, b](const Tensor& g, std::vector<Tensor*>& grads) {
                          const Tensor& av = a.value();
                          const Tensor& bv = b.value();
                          if (grads[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                          if (grads[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                        });
}

Var scale(Var a, Real factor) {
  Tensor out = a.value();
  out *= factor;
  return a.tape->record(std::move(out), {a},
                        [factor](const Tensor& g, std::vector<Tensor*>& grads) {
                          if (!grads[0]) return;
                          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
                        });
}

Var scale_by(Var x, Var s) {
  if (s.value().size() != 1) throw ConfigError("scale_by: scale must hold one element");
  const Tensor& xv = x.value();
  const Real sv = s.value()[0];
  Tensor out = xv;
  out *= sv;
  return x.tape->record(std::move(out), {x, s},
                        [x, sv](const Tensor& g, std::vector<Tensor*>& grads) {
                          const Tensor& xv = x.value();
                          if (grads[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += sv * g[i];
                          if (grads[1]) {
                            Real acc = 0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                            (*grads[1])[0] += acc;
                          }
                        });
}

Var leaky_relu(Var x, Real slope) {
  return unary(
      x, [slope](Real v) { return v > 0 ? v : slope * v; },
      [slope](Real v) { return v > 0 ? Real(1) : slope; });
}

Var sigmoid(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const Real v = xv[i];
    out[i] = v >= 0 ? Real(1) / (Real(1) + std::exp(-v)) : std::exp(v) / (Real(1) + std::exp(v));
  }
  const int out_id = int(x.tape->size());
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x},
                      [tape, out_id](const Tensor& g, std::vector<Tensor*>& grads) {
                        if (!grads[0]) return;
                        const Tensor& y = tape->value(Var{tape, out_id});
                        for (std::size_t i = 0; i < g.size(); ++i)
                          (*grads[0])[i] += g[i] * y[i] * (Real(1) - y[i]);
                      });
}

Var sqrt(Var x) {
  for (Real v : x.value().data())
    if (v < 0) throw DomainError("sqrt of negative value");
  return unary(
      x, [](Real v) { return std::sqrt(v); },
      [](Real v) { return Real(0.5) / std::sqrt(std::max(v, Real(kEpsMag))); });
}

Var sum(Var x) {
  const Shape shape = x.value().shape();
  return x.tape->record(Tensor::scalar(x.value().sum()), {x},
                        [](const Tensor& g, std::vector<Tensor*>& grads) {
                          if (!grads[0]) return;
                          for (auto& v : grads[0]->data()) v += g[0];
                        });
}

Var conv2d(Var input, Var weight, Var bias, int stride) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  if (w.dim(2) != cin)
    throw ConfigError("conv2d: weight expects " + std::to_string(w.dim(2)) +
                      " input channels, input has " + std::to_string(cin));
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  if (b.size() != cout) throw ConfigError("conv2d: bias length must equal output channels");

  const std::size_t s = std::size_t(stride);
  const std::size_t Ho = (H + s - 1) / s, Wo = (W + s - 1) / s;
  const long ph = long(kh / 2), pw = long(kw / 2);
  const std::size_t P = Ho * Wo, K = kh * kw * cin;

  auto cols = std::make_shared<std::vector<Real>>(P * K, Real(0));
  for (std::size_t oi = 0; oi < Ho; ++oi) {
    for (std::size_t oj = 0; oj < Wo; ++oj) {
      Real* row = cols->data() + (oi * Wo + oj) * K;
      for (std::size_t a = 0; a < kh; ++a) {
        const long ii = long(oi * s) + long(a) - ph;
        if (ii < 0 || ii >= long(H)) continue;
        for (std::size_t c = 0; c < kw; ++c) {
          const long jj = long(oj * s) + long(c) - pw;
          if (jj < 0 || jj >= long(W)) continue;
          const Real* src = x.data().data() + (std::size_t(ii) * W + std::size_t(jj)) * cin;
          std::copy(src, src + cin, row + (a * kw + c) * cin);
        }
      }
    }
  }

  Tensor out({Ho, Wo, cout});
  {
    ConstMatrixMap colm(cols->data(), long(P), long(K));
    ConstMatrixMap wm(w.data().data(), long(K), long(cout));
    MatrixMap om(out.data().data(), long(P), long(cout));
    om.noalias() = colm * wm;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t o = 0; o < cout; ++o) out[p * cout + o] += b[o];
  }

  return input.tape->record(
      std::move(out), {input, weight, bias},
      [cols, weight, H, W, cin, kh, kw, cout, s, Ho, Wo, ph, pw, P, K](const Tensor& g,
                                                                 std::vector<Tensor*>& grads) {
        ConstMatrixMap gm(g.data().data(), long(P), long(cout));
        if (grads[1]) {
          MatrixMap gw(grads[1]->data().data(), long(K), long(cout));
          ConstMatrixMap colm(cols->data(), long(P), long(K));
          gw.noalias() += colm.transpose() * gm;
        }
        if (grads[2]) {
          Tensor& gb = *grads[2];
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t o = 0; o < cout; ++o) gb[o] += g[p * cout + o];
        }
        if (grads[0]) {
          RowMatrix dcols{long(P), long(K)};
          const Tensor& w = weight.value();
          ConstMatrixMap wm(w.data().data(), long(K), long(cout));
          dcols.noalias() = gm * wm.transpose();
          Tensor& gx = *grads[0];
          for (std::size_t oi = 0; oi < Ho; ++oi) {
            for (std::size_t oj = 0; oj < Wo; ++oj) {
              const Real* row = dcols.data() + (oi * Wo + oj) * K;
              for (std::size_t a = 0; a < kh; ++a) {
                const long ii = long(oi * s) + long(a) - ph;
                if (ii < 0 || ii >= long(H)) continue;
                for (std::size_t c = 0; c < kw; ++c) {
                  const long jj = long(oj * s) + long(c) - pw;
                  if (jj < 0 || jj >= long(W)) continue;
                  Real* dst = &gx[(std::size_t(ii) * W + std::size_t(jj)) * cin];
                  const Real* src = row + (a * kw + c) * cin;
                  for (std::size_t ch = 0; ch < cin; ++ch) dst[ch] += src[ch];
                }
              }
            }
          }
        }
      });
}

Var instance_norm(Var input, Var gamma, Var beta, Real eps) {
  const Tensor& x = input.value();
  require_rank(x, 3, "instance_norm");
  if (!(eps > 0)) throw ConfigError("instance_norm: eps must be positive");
  const std::size_t C = x.dim(2), n = x.dim(0) * x.dim(1);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (gv.size() != C || bv.size() != C)
    throw ConfigError("instance_norm: gamma/beta length must equal channel count");

  Tensor xhat(x.shape());
  std::vector<Real> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    Real mean = 0;
    for (std::size_t p = 0; p < n; ++p) mean += x[p * C + c];
    mean /= Real(n);
    Real var = 0;
    for (std::size_t p = 0; p < n; ++p) {
      const Real d = x[p * C + c] - mean;
      var += d * d;
    }
    var /= Real(n);
    inv_std[c] = Real(1) / std::sqrt(var + eps);
    for (std::size_t p = 0; p < n; ++p) xhat[p * C + c] = (x[p * C + c] - mean) * inv_std[c];
  }
  Tensor out(x.shape());
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = gv[c] * xhat[p * C + c] + bv[c];

  return input.tape->record(
      std::move(out), {input, gamma, beta},
      [xhat = std::move(xhat), inv_std, gamma, C, n](const Tensor& g, std::vector<Tensor*>& grads) {
        const Tensor& gv = gamma.value();
        for (std::size_t c = 0; c < C; ++c) {
          Real sum_g = 0, sum_gx = 0;
          for (std::size_t p = 0; p < n; ++p) {
            sum_g += g[p * C + c];
            sum_gx += g[p * C + c] * xhat[p * C + c];
          }
          if (grads[1]) (*grads[1])[c] += sum_gx;
          if (grads[2]) (*grads[2])[c] += sum_g;
          if (grads[0]) {
            // d xhat = g * gamma; dx = inv_std/n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
            const Real k = gv[c] * inv_std[c] / Real(n);
            for (std::size_t p = 0; p < n; ++p)
              (*grads[0])[p * C + c] +=
                  k * (Real(n) * g[p * C + c] - sum_g - xhat[p * C + c] * sum_gx);
          }
        }
      });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const Tensor& first = parts[0].value();
  require_rank(first, 3, "concat_channels");
  const std::size_t H = first.dim(0), W = first.dim(1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& v : parts) {
    const Tensor& t = v.value();
    require_rank(t, 3, "concat_channels");
    if (t.dim(0) != H || t.dim(1) != W)
      throw ConfigError("concat_channels: spatial mismatch " + shape_string(first.shape()) +
                        " vs " + shape_string(t.shape()));
    widths.push_back(t.dim(2));
    total += t.dim(2);
  }
  Tensor out({H, W, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t c = 0; c < widths[k]; ++c) out[p * total + offset + c] = t[p * widths[k] + c];
    offset += widths[k];
  }
  return parts[0].tape->record(
      std::move(out), parts, [widths, total, H, W](const Tensor& g, std::vector<Tensor*>& grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (grads[k])
            for (std::size_t p = 0; p < H * W; ++p)
              for (std::size_t c = 0; c < widths[k]; ++c)
                (*grads[k])[p * widths[k] + c] += g[p * total + off + c];
          off += widths[k];
        }
      });
}

Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "slice_channels");
  const std::size_t C = xv.dim(2);
  if (begin >= end || end > C) throw ConfigError("slice_channels: invalid channel range");
  const std::size_t n = xv.dim(0) * xv.dim(1), w = end - begin;
  Tensor out({xv.dim(0), xv.dim(1), w});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < w; ++c) out[p * w + c] = xv[p * C + begin + c];
  return x.tape->record(std::move(out), {x},
                        [n, w, C, begin](const Tensor& g, std::vector<Tensor*>& grads) {
                          if (!grads[0]) return;
                          for (std::size_t p = 0; p < n; ++p)
                            for (std::size_t c = 0; c < w; ++c)
                              (*grads[0])[p * C + begin + c] += g[p * w + c];
                        });
}

Var upsample_nearest2x(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "upsample_nearest2x");
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  Tensor out({2 * H, 2 * W, C});
  for (std::size_t i = 0; i < 2 * H; ++i)
    for (std::size_t j = 0; j < 2 * W; ++j)
      for (std::size_t c = 0; c < C; ++c) out.at(i, j, c) = xv.at(i / 2, j / 2, c);
  return x.tape->record(std::move(out), {x}, [H, W, C](const Tensor& g, std::vector<Tensor*>& grads) {
    if (!grads[0]) return;
    Tensor& gx = *grads[0];
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j)
        for (std::size_t c = 0; c < C; ++c) gx.at(i / 2, j / 2, c) += g.at(i, j, c);
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "global_avg_pool");
  const std::size_t n = xv.dim(0) * xv.dim(1), C = xv.dim(2);
  Tensor out({C});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += xv[p * C + c];
  out *= Real(1) / Real(n);
  return x.tape->record(std::move(out), {x}, [n, C](const Tensor& g, std::vector<Tensor*>& grads) {
    if (!grads[0]) return;
    const Real inv = Real(1) / Real(n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < C; ++c) (*grads[0])[p * C + c] += g[c] * inv;
  });
}

Var dense(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(w, 2, "dense weight");
  const std::size_t n = w.dim(0), m = w.dim(1);
  if (xv.size() != n) throw ConfigError("dense: input length does not match weight rows");
  if (b.size() != m) throw ConfigError("dense: bias length does not match weight columns");
  Tensor out({m});
  for (std::size_t o = 0; o < m; ++o) {
    Real acc = b[o];
    for (std::size_t i = 0; i < n; ++i) acc += xv[i] * w[i * m + o];
    out[o] = acc;
  }
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, n, m](const Tensor& g, std::vector<Tensor*>& grads) {
                          const Tensor& xv = x.value();
                          const Tensor& w = weight.value();
                          if (grads[0])
                            for (std::size_t i = 0; i < n; ++i) {
                              Real acc = 0;
                              for (std::size_t o = 0; o < m; ++o) acc += w[i * m + o] * g[o];
                              (*grads[0])[i] += acc;
                            }
                          if (grads[1])
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t o = 0; o < m; ++o) (*grads[1])[i * m + o] += xv[i] * g[o];
                          if (grads[2]) *grads[2] += g;
                        });
}

Var channel_gate(Var x, Var gate) {
  const Tensor& xv = x.value();
  const Tensor& gv = gate.value();
  require_rank(xv, 3, "channel_gate");
  const std::size_t n = xv.dim(0) * xv.dim(1), C = xv.dim(2);
  if (gv.size() != C) throw ConfigError("channel_gate: gate length must equal channel count");
  Tensor out(xv.shape());
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = xv[p * C + c] * gv[c];
  return x.tape->record(std::move(out), {x, gate},
                        [x, gate, n, C](const Tensor& g, std::vector<Tensor*>& grads) {
                          const Tensor& xv = x.value();
                          const Tensor& gv = gate.value();
                          if (grads[0])
                            for (std::size_t p = 0; p < n; ++p)
                              for (std::size_t c = 0; c < C; ++c)
                                (*grads[0])[p * C + c] += g[p * C + c] * gv[c];
                          if (grads[1])
                            for (std::size_t p = 0; p < n; ++p)
                              for (std::size_t c = 0; c < C; ++c)
                                (*grads[1])[c] += g[p * C + c] * xv[p * C + c];
                        });
}

Var fft2(Var field) { return dft_op(field, false); }
Var ifft2(Var field) { return dft_op(field, true); }

Var magnitude_project(Var field, const Tensor& intensity) {
  const Tensor& v = field.value();
  require_complex_field(v, "magnitude_project");
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  if (intensity.rank() != 2 || intensity.dim(0) != rows || intensity.dim(1) != cols)
    throw ConfigError("magnitude_project: constraint shape " + shape_string(intensity.shape()) +
                      " does not match field " + shape_string(v.shape()));
  for (Real s : intensity.data())
    if (s < 0) throw DomainError("magnitude_project: negative intensity in constraint");

  auto spectrum = to_buffer(v);
  fft::transform2d(spectrum, rows, cols, false);
  std::vector<Complex> projected(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const Real mag = std::abs(spectrum[i]);
    const Real target = std::sqrt(intensity[i]);
    projected[i] = mag < Real(kEpsMag) ? Complex(target, 0) : spectrum[i] * (target / mag);
  }
  fft::transform2d(projected, rows, cols, true);

  Tensor sqrt_s(intensity.shape());
  for (std::size_t i = 0; i < sqrt_s.size(); ++i) sqrt_s[i] = std::sqrt(intensity[i]);

  return field.tape->record(
      from_buffer(projected, v.shape()), {field},
      [spectrum = std::move(spectrum), sqrt_s, rows, cols](const Tensor& g,
                                                          std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        // Through the inverse DFT: grad wrt projected spectrum = DFT(g) / (H W).
        auto gb = to_buffer(g);
        fft::transform2d(gb, rows, cols, false);
        const Real inv_n = Real(1) / Real(rows * cols);
        // Through z -> s z/|z|: the Jacobian is s/|z| times the projection onto the
        // direction orthogonal to z, which is symmetric on R^2.
        for (std::size_t i = 0; i < gb.size(); ++i) {
          const Real mag = std::abs(spectrum[i]);
          if (mag < Real(kEpsMag)) {
            gb[i] = 0;
            continue;
          }
          const Complex unit = spectrum[i] / mag;
          const Complex gw = gb[i] * inv_n;
          const Real radial = unit.real() * gw.real() + unit.imag() * gw.imag();
          gb[i] = (gw - unit * radial) * (sqrt_s[i] / mag);
        }
        // Through the forward DFT: adjoint is (H W) * inverse DFT.
        fft::transform2d(gb, rows, cols, true);
        const Real n = Real(rows * cols);
        Tensor& gx = *grads[0];
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gx[2 * i] += gb[i].real() * n;
          gx[2 * i + 1] += gb[i].imag() * n;
        }
      });
}

}  // namespace phaseforge::ad
