#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "turbmit/core.hpp"

namespace turbmit {

/// Row-major complex raster for frequency-domain work.
struct ComplexImage {
    int height = 0;
    int width = 0;
    std::vector<std::complex<double>> data;

    ComplexImage() = default;
    ComplexImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w) {}

    std::complex<double>& at(int y, int x) {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    const std::complex<double>& at(int y, int x) const {
        return data[static_cast<std::size_t>(y) * width + x];
    }
};

namespace fft {

// FFTW planning is not thread-safe; plans are cached per shape/direction
// under a mutex and executed through the new-array interface (FFTW_UNALIGNED
// so std::vector storage is acceptable).
namespace detail {

class PlanCache {
  public:
    static PlanCache& instance() {
        static PlanCache c;
        return c;
    }

    fftw_plan get(int h, int w, int sign) {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto key = std::make_tuple(h, w, sign);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        std::vector<std::complex<double>> scratch(static_cast<std::size_t>(h) * w);
        fftw_plan p = fftw_plan_dft_2d(
            h, w, reinterpret_cast<fftw_complex*>(scratch.data()),
            reinterpret_cast<fftw_complex*>(scratch.data()), sign,
            FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, p);
        return p;
    }

  private:
    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

/// In-place 2D DFT.  `forward` uses the engineering sign convention
/// (negative exponent); the inverse is unnormalized, callers divide by h*w.
inline void transform(ComplexImage& img, bool forward) {
    fftw_plan p = detail::PlanCache::instance().get(img.height, img.width,
                                                    forward ? FFTW_FORWARD : FFTW_BACKWARD);
    auto* ptr = reinterpret_cast<fftw_complex*>(img.data.data());
    fftw_execute_dft(p, ptr, ptr);
}

inline ComplexImage forward(const Image& img) {
    ComplexImage c(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) c.data[i] = img.data[i];
    transform(c, true);
    return c;
}

/// Normalized inverse transform; returns the real part.
inline Image inverse_real(ComplexImage c) {
    transform(c, false);
    Image out(c.height, c.width);
    const double norm = 1.0 / (static_cast<double>(c.height) * c.width);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = c.data[i].real() * norm;
    return out;
}

/// DFT index -> signed frequency index (wrap-around ordering).
inline int signed_index(int k, int n) { return k <= n / 2 ? k : k - n; }

/// Circular shift moving the zero-frequency bin to (h/2, w/2).
inline Image center(const Image& img) {
    Image out(img.height, img.width);
    const int sy = img.height / 2;
    const int sx = img.width / 2;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at((y + sy) % img.height, (x + sx) % img.width) = img.at(y, x);
    return out;
}

inline Image magnitude(const ComplexImage& c) {
    Image out(c.height, c.width);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::abs(c.data[i]);
    return out;
}

}  // namespace fft
}  // namespace turbmit
