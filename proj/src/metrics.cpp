#include <array>
#include <cmath>

#include "hvrnn/metrics.hpp"
#include "hvrnn/errors.hpp"

namespace hvrnn::eval {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin * kWin>& gaussian_window() {
    static const std::array<double, kWin * kWin> w = [] {
        std::array<double, kWin> g{};
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            g[std::size_t(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += g[std::size_t(i)];
        }
        for (auto& v : g) v /= sum;
        std::array<double, kWin * kWin> out{};
        for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) out[std::size_t(i * kWin + j)] = g[std::size_t(i)] * g[std::size_t(j)];
        return out;
    }();
    return w;
}

void check_frames(const Tensor<float>& a, const Tensor<float>& b, const char* op) {
    if (!a.same_shape(b))
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
    if (a.rank() != 3) throw ContractViolation(std::string(op) + ": expects (C,H,W) frames");
}

}  // namespace

double mse(const Tensor<float>& a, const Tensor<float>& b) {
    check_frames(a, b, "mse");
    double s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.numel());
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    double m = mse(a, b);
    if (m <= 0) return 100.0;
    return std::min(100.0, -10.0 * std::log10(m));
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    check_frames(a, b, "ssim");
    std::int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < kWin || W < kWin)
        throw ContractViolation("ssim: frames must be at least 11x11, got " + shape_str(a.shape()));
    const auto& win = gaussian_window();
    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t c = 0; c < C; ++c) {
        const float* pa = a.data() + c * H * W;
        const float* pb = b.data() + c * H * W;
        for (std::int64_t y = 0; y + kWin <= H; ++y)
            for (std::int64_t x = 0; x + kWin <= W; ++x) {
                double mu1 = 0, mu2 = 0, e11 = 0, e22 = 0, e12 = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        double wv = win[std::size_t(i * kWin + j)];
                        double v1 = pa[(y + i) * W + x + j];
                        double v2 = pb[(y + i) * W + x + j];
                        mu1 += wv * v1;
                        mu2 += wv * v2;
                        e11 += wv * (v1 * v1);
                        e22 += wv * (v2 * v2);
                        e12 += wv * (v1 * v2);  // symmetric in (a, b) at the ulp level
                    }
                double s11 = e11 - mu1 * mu1;
                double s22 = e22 - mu2 * mu2;
                double s12 = e12 - mu1 * mu2;
                double num = (2.0 * mu1 * mu2 + kC1) * (2.0 * s12 + kC2);
                double den = (mu1 * mu1 + mu2 * mu2 + kC1) * (s11 + s22 + kC2);
                total += num / den;
                ++count;
            }
    }
    return total / double(count);
}

}  // namespace hvrnn::eval
