#pragma once

#include "hvrnn/tensor.hpp"

namespace hvrnn::eval {

// Frame metrics, computed in double over (C,H,W) tensors with values in
// [0, 1] and a dynamic range of 1.0.

double mse(const Tensor<float>& a, const Tensor<float>& b);

// -10*log10(mse), capped at 100 dB so identical frames stay finite.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2,
// averaged over valid window positions and channels. ssim(x, x) == 1.0
// exactly. Requires spatial size >= 11.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace hvrnn::eval
