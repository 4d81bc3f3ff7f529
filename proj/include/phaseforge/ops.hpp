#pragma once

#include <vector>

#include "phaseforge/autodiff.hpp"

// Differentiable primitives. Feature maps are (H, W, C); complex fields on the tape are
// (H, W, 2) with channel 0 holding the real part and channel 1 the imaginary part.
namespace phaseforge::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
/// s * x for a learnable single-element s.
Var scale_by(Var x, Var s);
Var leaky_relu(Var x, Real slope);
Var sigmoid(Var x);
/// Elementwise square root; the derivative uses max(x, kEpsMag) so zero entries stay finite.
Var sqrt(Var x);
Var sum(Var x);

/// Cross-correlation with zero "same" padding. weight is (kh, kw, Cin, Cout), kh and kw odd.
/// Output is (ceil(H/stride), ceil(W/stride), Cout).
Var conv2d(Var input, Var weight, Var bias, int stride);

/// Per-channel normalization over H x W (biased variance) followed by gamma * x + beta.
Var instance_norm(Var input, Var gamma, Var beta, Real eps);

Var concat_channels(const std::vector<Var>& parts);
/// Channels [begin, end) of an (H, W, C) tensor.
Var slice_channels(Var x, std::size_t begin, std::size_t end);
Var upsample_nearest2x(Var x);
/// (H, W, C) -> (C) arithmetic mean per channel.
Var global_avg_pool(Var x);
/// Fully connected layer: x (n), weight (n, m), bias (m) -> (m).
Var dense(Var x, Var weight, Var bias);
/// Multiplies every channel c of x (H, W, C) by gate[c].
Var channel_gate(Var x, Var gate);

/// Unnormalized 2-D DFT of an (H, W, 2) complex field.
Var fft2(Var field);
/// Inverse 2-D DFT with 1/(H W) scaling.
Var ifft2(Var field);

/// Replaces the Fourier magnitude of field (H, W, 2) by sqrt(intensity) keeping its phase.
/// Bins with |U| < kEpsMag take phase 0. intensity is constant data.
Var magnitude_project(Var field, const Tensor& intensity);

}  // namespace phaseforge::ad
