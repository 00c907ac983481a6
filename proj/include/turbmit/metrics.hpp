#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "turbmit/core.hpp"

namespace turbmit {

inline double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DataError("metrics: image shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

/// Peak signal-to-noise ratio in dB; +infinity for identical images.
inline double psnr(const Image& a, const Image& b, double peak = 255.0) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

/// Mean structural similarity with the reference settings: 11x11 Gaussian
/// window (sigma 1.5), population statistics, stabilizers (0.01 peak)^2 and
/// (0.03 peak)^2.  The mean is taken over pixels whose window lies fully
/// inside the image, matching common reference implementations that crop the
/// filter-radius border.
inline double ssim(const Image& a, const Image& b, double peak = 255.0) {
    if (!a.same_shape(b)) throw DataError("metrics: image shapes differ");
    constexpr int kRadius = 5;
    const int h = a.height, w = a.width;
    if (h < 2 * kRadius + 1 || w < 2 * kRadius + 1)
        throw DataError("metrics: image too small for the SSIM window");

    double kernel[2 * kRadius + 1];
    double ksum = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i) {
        kernel[i + kRadius] = std::exp(-0.5 * (i * i) / (1.5 * 1.5));
        ksum += kernel[i + kRadius];
    }
    for (double& k : kernel) k /= ksum;

    // Separable filtering of the five moment planes, valid region only.
    const int vw = w - 2 * kRadius;
    const int vh = h - 2 * kRadius;
    std::vector<double> row(static_cast<std::size_t>(h) * vw * 5);
    auto rowv = [&](int plane, int y, int x) -> double& {
        return row[(static_cast<std::size_t>(plane) * h + y) * vw + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < vw; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i <= 2 * kRadius; ++i) {
                const double va = a.at(y, x + i);
                const double vb = b.at(y, x + i);
                const double k = kernel[i];
                sa += k * va;
                sb += k * vb;
                saa += k * va * va;
                sbb += k * vb * vb;
                sab += k * va * vb;
            }
            rowv(0, y, x) = sa;
            rowv(1, y, x) = sb;
            rowv(2, y, x) = saa;
            rowv(3, y, x) = sbb;
            rowv(4, y, x) = sab;
        }
    }

    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    for (int y = 0; y < vh; ++y) {
        for (int x = 0; x < vw; ++x) {
            double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
            for (int i = 0; i <= 2 * kRadius; ++i) {
                const double k = kernel[i];
                ma += k * rowv(0, y + i, x);
                mb += k * rowv(1, y + i, x);
                maa += k * rowv(2, y + i, x);
                mbb += k * rowv(3, y + i, x);
                mab += k * rowv(4, y + i, x);
            }
            const double va = maa - ma * ma;
            const double vb = mbb - mb * mb;
            const double cov = mab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return total / (static_cast<double>(vh) * vw);
}

}  // namespace turbmit
