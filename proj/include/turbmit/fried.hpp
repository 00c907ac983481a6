#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "turbmit/core.hpp"
#include "turbmit/fft.hpp"
#include "turbmit/mitigation.hpp"
#include "turbmit/otf.hpp"
#include "turbmit/regmodel.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Spectral-ratio Fried parameter estimation: the magnitude spectrum of the
// (registered) frame average divided by the mean single-frame magnitude
// spectrum isolates the residual-tilt Gaussian, whose width maps to r0.
// Registration-induced tilt correction is compensated through alpha.
// ---------------------------------------------------------------------------

struct RegistrationSpec {
    enum class Kind { None, Global, Bma };
    Kind kind = Kind::None;
    int patch_half_width = 100;      // M for block matching
    double error_to_signal = 0.0;    // epsilon; 1/12 models integer-pixel BMA
    int search_radius = 8;           // BMA search extent
    int image_half_extent = 0;       // global registration; 0 = derive from frames

    void validate() const {
        if (patch_half_width < 0) throw DataError("registration: M must be >= 0");
        if (error_to_signal < 0.0 || !std::isfinite(error_to_signal))
            throw DataError("registration: error-to-signal ratio must be finite and >= 0");
    }
};

/// Separable 2D Tukey (cosine-tapered) window; taper 0 is rectangular,
/// taper 1 is the Hann limit.  Peak value 1.
inline Image tukey_window_2d(int h, int w, double taper) {
    if (taper < 0.0 || taper > 1.0) throw DataError("tukey: taper must be in [0, 1]");
    if (h < 1 || w < 1) throw DataError("tukey: empty window");
    auto axis = [taper](int n) {
        std::vector<double> v(n, 1.0);
        if (n == 1 || taper == 0.0) return v;
        const double edge = taper * (n - 1) / 2.0;
        for (int i = 0; i < n; ++i) {
            const double x = static_cast<double>(i);
            if (x < edge) {
                v[i] = 0.5 * (1.0 + std::cos(std::numbers::pi * (x / edge - 1.0)));
            } else if (x > (n - 1) - edge) {
                v[i] = 0.5 * (1.0 + std::cos(std::numbers::pi * ((x - (n - 1)) / edge + 1.0)));
            }
        }
        return v;
    };
    const std::vector<double> wy = axis(h);
    const std::vector<double> wx = axis(w);
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = wy[y] * wx[x];
    return out;
}

namespace detail {

inline Image windowed_magnitude_spectrum(const Image& img, const Image& window,
                                         bool power_spectrum) {
    Image tapered(img.height, img.width);
    for (std::size_t i = 0; i < tapered.data.size(); ++i)
        tapered.data[i] = img.data[i] * window.data[i];
    ComplexImage F = fft::forward(tapered);
    Image mag(img.height, img.width);
    for (std::size_t i = 0; i < mag.data.size(); ++i)
        mag.data[i] = power_spectrum ? std::norm(F.data[i]) : std::abs(F.data[i]);
    return fft::center(mag);
}

}  // namespace detail

/// Mean single-frame magnitude spectrum, FFT-centered.  Frames are windowed
/// before the transform; accumulation order is fixed regardless of the
/// worker count.
inline Image mean_short_exposure_spectrum(const std::vector<Image>& frames, const Image& window,
                                          bool power_spectrum = false) {
    if (frames.empty()) throw DataError("spectrum: no frames");
    Image acc(frames[0].height, frames[0].width);
    const std::size_t batch = 8;
    std::vector<Image> slots(std::min(batch, frames.size()));
    for (std::size_t base = 0; base < frames.size(); base += batch) {
        const std::size_t n = std::min(batch, frames.size() - base);
        parallel_for(n, [&](std::size_t i) {
            if (!frames[base + i].same_shape(acc))
                throw DataError("spectrum: frame dimensions differ");
            slots[i] = detail::windowed_magnitude_spectrum(frames[base + i], window,
                                                           power_spectrum);
        });
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += slots[i].data[j];
    }
    const double inv = 1.0 / static_cast<double>(frames.size());
    for (double& v : acc.data) v *= inv;
    if (!(acc.at(acc.height / 2, acc.width / 2) > 0.0))
        throw DataError("spectrum: degenerate (all-zero) frame stack");
    return acc;
}

/// Magnitude spectrum of the camera-motion-compensated frame average,
/// FFT-centered.  Registration of the frames follows `reg.kind`.
inline Image long_exposure_spectrum(const ImageSequence& seq, const RegistrationSpec& reg,
                                    const Image& window, bool power_spectrum = false) {
    seq.validate(1);
    reg.validate();
    Image mean;
    switch (reg.kind) {
        case RegistrationSpec::Kind::None:
            mean = fuse(seq.frames);
            break;
        case RegistrationSpec::Kind::Global: {
            const Image proto = fuse(seq.frames);
            std::vector<Image> aligned(seq.frames.size());
            std::atomic<int> ambiguous{0};
            parallel_for(seq.frames.size(), [&](std::size_t i) {
                const GlobalShift s = global_register(seq.frames[i], proto);
                ambiguous += s.low_confidence;
                aligned[i] = dewarp_rigid(seq.frames[i], s.dy, s.dx);
            });
            if (int n = ambiguous.load(); n > 0)
                warn("register: ambiguous correlation peak on " + std::to_string(n) +
                     " frame(s)");
            mean = fuse(aligned);
            break;
        }
        case RegistrationSpec::Kind::Bma: {
            const Image proto = fuse(seq.frames);
            std::vector<Image> aligned(seq.frames.size());
            parallel_for(seq.frames.size(), [&](std::size_t i) {
                const ShiftField f = bma_register(seq.frames[i], proto, reg.patch_half_width,
                                                  reg.search_radius);
                aligned[i] = dewarp(seq.frames[i], f);
            });
            mean = fuse(aligned);
            break;
        }
    }
    return detail::windowed_magnitude_spectrum(mean, window, power_spectrum);
}

/// Elementwise long/short ratio with a validity mask.  Bins where the short
/// spectrum falls below 1e-9 of its DC value are invalid; ratios are clamped
/// to at most 1.5 and non-positive values are marked invalid.
struct RatioField {
    Image ratio;
    Image valid;  // 1.0 valid, 0.0 invalid
};

inline RatioField spectral_ratio(const Image& long_spec, const Image& short_spec) {
    if (!long_spec.same_shape(short_spec)) throw DataError("ratio: spectrum shapes differ");
    const double dc = short_spec.at(short_spec.height / 2, short_spec.width / 2);
    const double floor = 1e-9 * dc;
    RatioField out;
    out.ratio = Image(long_spec.height, long_spec.width);
    out.valid = Image(long_spec.height, long_spec.width);
    for (std::size_t i = 0; i < out.ratio.data.size(); ++i) {
        if (short_spec.data[i] <= floor) continue;
        const double r = long_spec.data[i] / short_spec.data[i];
        if (r <= 0.0) continue;
        out.ratio.data[i] = std::min(r, 1.5);
        out.valid.data[i] = 1.0;
    }
    return out;
}

/// Median ratio per integer-radius annulus of the centered FFT grid.  Radii
/// are normalized against the larger dimension so square and non-square
/// grids bin consistently; rings with fewer than 8 valid samples are
/// dropped (which removes the DC bin).
struct RadialProfile {
    std::vector<double> radius_cyc_per_px;
    std::vector<double> radius_cyc_per_m;
    std::vector<double> median_ratio;
    std::vector<int> sample_count;
};

inline RadialProfile radial_median_profile(const RatioField& field, double pixel_pitch_m) {
    const int h = field.ratio.height, w = field.ratio.width;
    const int n = std::max(h, w);
    const int cy = h / 2, cx = w / 2;
    std::vector<std::vector<double>> rings(n / 2 + 2);
    for (int y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y - cy) / h;
        for (int x = 0; x < w; ++x) {
            if (field.valid.at(y, x) == 0.0) continue;
            const double fx = static_cast<double>(x - cx) / w;
            const int ring = static_cast<int>(std::lround(std::hypot(fx, fy) * n));
            if (ring < static_cast<int>(rings.size()))
                rings[ring].push_back(field.ratio.at(y, x));
        }
    }
    RadialProfile out;
    for (std::size_t ring = 0; ring < rings.size(); ++ring) {
        auto& samples = rings[ring];
        if (samples.size() < 8) continue;
        auto mid = samples.begin() + samples.size() / 2;
        std::nth_element(samples.begin(), mid, samples.end());
        double med = *mid;
        if (samples.size() % 2 == 0) {
            const double lo = *std::max_element(samples.begin(), mid);
            med = 0.5 * (med + lo);
        }
        const double cpp = static_cast<double>(ring) / n;
        out.radius_cyc_per_px.push_back(cpp);
        out.radius_cyc_per_m.push_back(cpp / pixel_pitch_m);
        out.median_ratio.push_back(med);
        out.sample_count.push_back(static_cast<int>(samples.size()));
    }
    return out;
}

/// Least-squares fit of exp(-rho^2 / (2 sigma^2)) to the profile over
/// [band_lo, band_hi] (cycles/m).  Initialized from a log-domain regression;
/// iterated Gauss-Newton on the linear ratio with uniform weights.
struct GaussianFit {
    double sigma = 0.0;
    double residual_rms = 0.0;
    int bins_used = 0;
};

inline GaussianFit fit_gaussian_sigma(const RadialProfile& profile, double band_lo_cyc_per_m,
                                      double band_hi_cyc_per_m, double exclude_below = 0.0) {
    std::vector<double> x2;  // rho^2
    std::vector<double> y;
    for (std::size_t i = 0; i < profile.radius_cyc_per_m.size(); ++i) {
        const double rho = profile.radius_cyc_per_m[i];
        const double v = profile.median_ratio[i];
        if (rho < band_lo_cyc_per_m || rho > band_hi_cyc_per_m) continue;
        if (v <= 0.0) continue;        // excluded; values above 1 retained as noise
        if (v < exclude_below) continue;  // below the estimated coherence floor
        x2.push_back(rho * rho);
        y.push_back(v);
    }
    if (x2.size() < 5)
        throw DataError("gaussian fit: fewer than 5 usable bins in the fit band");

    // Log-domain initialization on the decaying part of the profile.
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x2.size(); ++i) {
        if (y[i] >= 0.999 || y[i] < 1e-6) continue;
        sxx += x2[i] * x2[i];
        sxy += x2[i] * (-std::log(y[i]));
    }
    if (!(sxx > 0.0) || !(sxy > 0.0))
        throw NumericalError("gaussian fit: profile does not decay over the fit band");
    double beta = sxy / sxx;  // model exp(-beta rho^2)

    auto sse = [&](double b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x2.size(); ++i) {
            const double r = std::exp(-b * x2[i]) - y[i];
            acc += r * r;
        }
        return acc;
    };
    double current = sse(beta);
    for (int iter = 0; iter < 200; ++iter) {
        double jr = 0.0, jj = 0.0;
        for (std::size_t i = 0; i < x2.size(); ++i) {
            const double m = std::exp(-beta * x2[i]);
            jr += x2[i] * m * (y[i] - m);
            jj += x2[i] * x2[i] * m * m;
        }
        if (!(jj > 0.0)) break;
        double step = jr / jj;
        // Backtracking keeps beta positive and the SSE non-increasing.
        double next_beta = beta + step;
        double next = std::numeric_limits<double>::infinity();
        for (int halve = 0; halve < 25; ++halve) {
            if (next_beta > 0.0) {
                next = sse(next_beta);
                if (next <= current) break;
            }
            step *= 0.5;
            next_beta = beta + step;
        }
        if (!(next <= current)) break;
        const bool done = std::abs(step) <= 1e-14 * beta;
        beta = next_beta;
        current = next;
        if (done) break;
    }
    if (!(beta > 0.0))
        throw NumericalError("gaussian fit: degenerate width");

    GaussianFit fit;
    fit.sigma = 1.0 / std::sqrt(2.0 * beta);
    fit.residual_rms = std::sqrt(current / static_cast<double>(x2.size()));
    fit.bins_used = static_cast<int>(x2.size());
    return fit;
}

/// Inverts the residual-tilt Gaussian width to the Fried parameter:
///   r0 = [6.88 (lambda l sigma_G)^2 (1 - alpha) / D^(1/3)]^(3/5).
inline double r0_from_sigma(double sigma_g_cyc_per_m, double alpha, const OpticalConfig& cfg) {
    if (!(sigma_g_cyc_per_m > 0.0)) throw DataError("r0 from sigma: sigma must be positive");
    if (alpha >= 1.0)
        throw DataError("r0 from sigma: alpha must be < 1 (no tilt blur left to measure)");
    const double ls = cfg.wavelength_m * cfg.focal_length_m * sigma_g_cyc_per_m;
    return std::pow(6.88 * ls * ls * (1.0 - alpha) / std::cbrt(cfg.aperture_diameter_m),
                    3.0 / 5.0);
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

struct EstimatorOptions {
    double tukey_taper = 0.25;
    double band_lo_cyc_per_px = 0.02;
    double band_hi_cyc_per_px = 0.35;
    bool power_spectrum = false;        // average |F|^2 instead of |F|
    bool subtract_noise_floor = false;  // high-frequency spectrum floor removal
    // Handling of the finite-stack ratio floor inside the fit: bins below
    // floor_exclusion_factor x floor are dropped, and retained bins can be
    // corrected by removing the floor in quadrature (incoherent residual).
    double floor_exclusion_factor = 2.0;
    bool floor_quadrature_subtract = true;
    QuadratureSpec quad{};
};

struct SpectralRatioResult {
    RatioField field;
    RadialProfile profile;
    double sigma_g_cyc_per_m = 0.0;
    double alpha_used = 0.0;
    double r0_m = 0.0;
    double band_lo_cyc_per_px = 0.0;
    double band_hi_cyc_per_px = 0.0;
    double fit_residual_rms = 0.0;
    double ratio_floor_estimate = 0.0;  // finite-stack coherence floor of the ratio
};

namespace detail {

/// Median short-spectrum level in the outermost annulus band; used as a
/// crude white-noise floor estimate.
inline double noise_floor_estimate(const Image& spec_centered) {
    const int h = spec_centered.height, w = spec_centered.width;
    const int n = std::max(h, w);
    const int cy = h / 2, cx = w / 2;
    std::vector<double> tail;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fy = static_cast<double>(y - cy) / h;
            const double fx = static_cast<double>(x - cx) / w;
            const double r = std::hypot(fx, fy);
            if (r >= 0.45 && r <= 0.5) tail.push_back(spec_centered.at(y, x));
        }
    if (tail.size() < 16) return 0.0;
    auto mid = tail.begin() + tail.size() / 2;
    std::nth_element(tail.begin(), mid, tail.end());
    return *mid;
}

}  // namespace detail

/// Alpha for the chosen registration: none = 0 (no tilt correction), block
/// matching = the patch-model factor for M, global = the image-average of
/// the per-pixel global factors.  Constant-profile invariance makes the
/// internal profile level immaterial.
inline double registration_alpha(const OpticalConfig& optics, const RegistrationSpec& reg,
                                 int frame_height, int frame_width, const QuadratureSpec& q = {}) {
    switch (reg.kind) {
        case RegistrationSpec::Kind::None:
            return 0.0;
        case RegistrationSpec::Kind::Bma:
            return tilt_correction_factor(optics, Cn2Profile::constant(1e-15),
                                          reg.patch_half_width, reg.error_to_signal, q);
        case RegistrationSpec::Kind::Global: {
            int half = reg.image_half_extent;
            if (half <= 0) half = (std::min(frame_height, frame_width) - 1) / 2;
            return global_alpha_map(optics, Cn2Profile::constant(1e-15), half,
                                    reg.error_to_signal, q)
                .average;
        }
    }
    return 0.0;
}

inline SpectralRatioResult estimate_r0(const ImageSequence& seq, const RegistrationSpec& reg,
                                       const EstimatorOptions& opts = {}) {
    seq.validate(2);
    reg.validate();
    const int h = seq.frames[0].height, w = seq.frames[0].width;
    const Image window = tukey_window_2d(h, w, opts.tukey_taper);

    Image short_spec = mean_short_exposure_spectrum(seq.frames, window, opts.power_spectrum);
    Image long_spec = long_exposure_spectrum(seq, reg, window, opts.power_spectrum);
    if (opts.subtract_noise_floor) {
        const double floor_short = detail::noise_floor_estimate(short_spec);
        const double floor_long = detail::noise_floor_estimate(long_spec);
        for (double& v : short_spec.data) v = std::max(v - floor_short, 0.0);
        for (double& v : long_spec.data) v = std::max(v - floor_long, 0.0);
    }

    SpectralRatioResult out;
    out.field = spectral_ratio(long_spec, short_spec);
    out.profile = radial_median_profile(out.field, seq.optics.pixel_pitch_m);
    out.alpha_used = registration_alpha(seq.optics, reg, h, w, opts.quad);

    // Averaging K frames leaves the magnitude ratio with a ~1/sqrt(K)
    // coherence floor where the model Gaussian has decayed away; bins at the
    // floor carry no width information and would drag the uniform-weight fit
    // wide.  The floor is read off the outermost rings and floor-dominated
    // bins are excluded (never bins above 0.5, so flat near-unity profiles
    // still reach the non-decay diagnosis).
    {
        std::vector<double> tail;
        for (std::size_t i = 0; i < out.profile.radius_cyc_per_px.size(); ++i) {
            const double cpp = out.profile.radius_cyc_per_px[i];
            if (cpp >= 0.40 && cpp <= 0.49) tail.push_back(out.profile.median_ratio[i]);
        }
        if (tail.size() >= 8) {
            auto mid = tail.begin() + tail.size() / 2;
            std::nth_element(tail.begin(), mid, tail.end());
            out.ratio_floor_estimate = *mid;
        }
    }

    RadialProfile fit_profile = out.profile;
    if (out.ratio_floor_estimate > 0.0) {
        const double floor = out.ratio_floor_estimate;
        const double cut = std::min(opts.floor_exclusion_factor * floor, 0.5);
        for (double& v : fit_profile.median_ratio) {
            if (v < cut) {
                v = 0.0;  // excluded by the fit's non-positive rule
            } else if (opts.floor_quadrature_subtract && v < 1.0) {
                v = std::sqrt(std::max(v * v - floor * floor, 0.0));
            }
        }
    }
    const double pitch = seq.optics.pixel_pitch_m;
    const GaussianFit fit = fit_gaussian_sigma(fit_profile, opts.band_lo_cyc_per_px / pitch,
                                               opts.band_hi_cyc_per_px / pitch);
    // A power-spectrum ratio is the squared magnitude ratio, so the fitted
    // Gaussian is narrower by sqrt(2).
    out.sigma_g_cyc_per_m = opts.power_spectrum ? fit.sigma * std::numbers::sqrt2 : fit.sigma;
    out.fit_residual_rms = fit.residual_rms;
    out.band_lo_cyc_per_px = opts.band_lo_cyc_per_px;
    out.band_hi_cyc_per_px = opts.band_hi_cyc_per_px;
    out.r0_m = r0_from_sigma(out.sigma_g_cyc_per_m, out.alpha_used, seq.optics);
    return out;
}

}  // namespace turbmit
