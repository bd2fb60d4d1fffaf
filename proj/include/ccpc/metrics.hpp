// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "ccpc/tensor.hpp"

namespace ccpc::metrics {

inline constexpr double kPsnrCap = 100.0;

/// Mean squared error over all elements.
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// 10 log10(1 / mse), capped at kPsnrCap when mse is 0.
double psnr_from_mse(double mse);

/// PSNR after clamping to [0, 1] and rounding both images to 8 bits.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat);

/// Maps to [0, 1] through round(clamp(v) * 255) / 255.
template <typename T>
Tensor<T> to_8bit(const Tensor<T>& x);

/// Five-scale MS-SSIM (11-tap Gaussian, sigma 1.5, K1 0.01, K2 0.03, data
/// range 1, weights 0.0448 0.2856 0.3001 0.2363 0.1333), averaged over
/// batch and channels. Inputs are used as given (no 8-bit rounding). With
/// `grad` the derivative of the score with respect to `y` is written there.
/// Throws DimensionError if min(H, W) < 160 or the shapes differ.
template <typename T>
double ms_ssim(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>* grad = nullptr);

struct RdPoint {
  double bpp = 0;
  double psnr = 0;
  double msssim = 0;
  double bits_g1_share = 0;
};

/// Bjontegaard rate difference of `a` relative to `b` in percent, using a
/// cubic fit of ln(bpp) against PSNR over the overlapping PSNR range.
/// Negative means `a` needs fewer bits. Throws InvalidParamsError with fewer
/// than 4 points per curve or without overlap.
double bd_rate(std::span<const RdPoint> a, std::span<const RdPoint> b);

/// Least-squares polynomial coefficients (ascending powers).
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y,
                            int degree);

}  // namespace ccpc::metrics
