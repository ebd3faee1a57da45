// Differentiable layers used by the registration networks.

#pragma once

#include "sofpi/autodiff.hpp"

namespace sofpi {

/// Cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,k,k] and
/// zero padding. Differentiable with respect to input and kernel.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);

/// Adds bias[c] to every pixel of channel c of a [C,H,W] tensor.
Var add_channel_bias(const Var& x, const Var& bias);

/// x if x >= 0, otherwise slope * x.
Var leaky_relu(const Var& x, double slope);

/// 1 / (1 + exp(-x)).
Var sigmoid(const Var& x);

/// Nearest-neighbour 2x upsampling of [C,H,W] to [C,2H,2W].
Var upsample_nearest2x(const Var& x);

// Eager reference versions shared by tests and diagnostics.
double sigmoid(double x);

}  // namespace sofpi
