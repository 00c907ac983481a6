#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "turbmit/core.hpp"
#include "turbmit/fft.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Composite degradation OTF: diffraction x average short-exposure atmosphere
// x Gaussian residual-tilt blur.  All factors are radial in the focal-plane
// frequency rho (cycles per meter) and equal 1 at rho = 0.
// ---------------------------------------------------------------------------

/// Diffraction-limited OTF of a circular pupil; zero at and beyond the
/// cutoff 1/(lambda f#).
inline double otf_diffraction(double rho_cyc_per_m, const OpticalConfig& cfg) {
    if (rho_cyc_per_m < 0.0) throw DataError("otf: frequency must be >= 0");
    const double x = rho_cyc_per_m / cfg.cutoff_cyc_per_m();
    if (x >= 1.0) return 0.0;
    return (2.0 / std::numbers::pi) * (std::acos(x) - x * std::sqrt(1.0 - x * x));
}

/// Average short-exposure atmospheric OTF (near-field Kolmogorov form).
/// The bracket vanishes at the optical cutoff; it is clamped at zero so
/// frequencies marginally above cutoff cannot produce gains above 1.
inline double otf_short_exposure(double rho_cyc_per_m, const OpticalConfig& cfg, double r0_m) {
    if (!(r0_m > 0.0)) throw DataError("otf: r0 must be positive");
    const double s = cfg.wavelength_m * cfg.focal_length_m * rho_cyc_per_m;
    const double bracket = std::max(0.0, 1.0 - std::cbrt(s / cfg.aperture_diameter_m));
    return std::exp(-3.44 * std::pow(s / r0_m, 5.0 / 3.0) * bracket);
}

/// Long-exposure atmospheric OTF (tilt included).
inline double otf_long_exposure(double rho_cyc_per_m, const OpticalConfig& cfg, double r0_m) {
    if (!(r0_m > 0.0)) throw DataError("otf: r0 must be positive");
    const double s = cfg.wavelength_m * cfg.focal_length_m * rho_cyc_per_m;
    return std::exp(-3.44 * std::pow(s / r0_m, 5.0 / 3.0));
}

/// Spectral variance of the residual-tilt Gaussian:
///   sigma_G^2 = r0^(5/3) D^(1/3) / (6.88 (1-alpha) (lambda l)^2).
inline double tilt_otf_spectral_variance(const OpticalConfig& cfg, double r0_m, double alpha) {
    if (!(r0_m > 0.0)) throw DataError("otf: r0 must be positive");
    if (alpha > 1.0) throw DataError("otf: tilt correction factor must be <= 1");
    const double ll = cfg.wavelength_m * cfg.focal_length_m;
    return std::pow(r0_m, 5.0 / 3.0) * std::cbrt(cfg.aperture_diameter_m) /
           (6.88 * (1.0 - alpha) * ll * ll);
}

/// Spatial-domain variance paired with the spectral Gaussian; the product
/// sigma_g^2 sigma_G^2 = 1/(4 pi^2) exactly.
inline double tilt_psf_spatial_variance(const OpticalConfig& cfg, double r0_m, double alpha) {
    return 1.0 / (4.0 * std::numbers::pi * std::numbers::pi *
                  tilt_otf_spectral_variance(cfg, r0_m, alpha));
}

/// Gaussian residual-tilt OTF; alpha = 1 is the perfect-correction limit
/// (identically 1), alpha = 0 recovers the long-exposure blur.
inline double gaussian_tilt_otf(double rho_cyc_per_m, const OpticalConfig& cfg, double r0_m,
                                double alpha) {
    if (alpha > 1.0) throw DataError("otf: tilt correction factor must be <= 1");
    if (alpha == 1.0) return 1.0;
    const double s2 = tilt_otf_spectral_variance(cfg, r0_m, alpha);
    return std::exp(-rho_cyc_per_m * rho_cyc_per_m / (2.0 * s2));
}

/// Full degradation OTF: diffraction x short-exposure x residual tilt.
inline double otf_combined(double rho_cyc_per_m, const OpticalConfig& cfg, double r0_m,
                           double alpha) {
    const double d = otf_diffraction(rho_cyc_per_m, cfg);
    if (d == 0.0) return 0.0;
    return d * otf_short_exposure(rho_cyc_per_m, cfg, r0_m) *
           gaussian_tilt_otf(rho_cyc_per_m, cfg, r0_m, alpha);
}

/// Bound radial evaluator carrying the derived quantities.
struct OtfModel {
    OpticalConfig cfg;
    double r0_m = 0.0;
    double alpha = 0.0;
    double cutoff_cyc_per_m = 0.0;
    double sigma_g2_spectral = 0.0;  // cycles^2 / m^2
    double sigma_g2_spatial = 0.0;   // m^2

    OtfModel(const OpticalConfig& c, double r0, double a) : cfg(c), r0_m(r0), alpha(a) {
        cutoff_cyc_per_m = cfg.cutoff_cyc_per_m();
        if (alpha < 1.0) {
            sigma_g2_spectral = tilt_otf_spectral_variance(cfg, r0_m, alpha);
            sigma_g2_spatial = tilt_psf_spatial_variance(cfg, r0_m, alpha);
        } else if (alpha == 1.0) {
            sigma_g2_spectral = std::numeric_limits<double>::infinity();
            sigma_g2_spatial = 0.0;
        } else {
            throw DataError("otf model: alpha must be <= 1");
        }
    }

    double operator()(double rho_cyc_per_m) const {
        return otf_combined(rho_cyc_per_m, cfg, r0_m, alpha);
    }
};

// ---------------------------------------------------------------------------
// Wiener restoration transfer function
// ---------------------------------------------------------------------------

struct WienerConfig {
    double nsr = 0.0;  // constant noise-to-signal power ratio Gamma

    void validate() const {
        if (nsr < 0.0 || !std::isfinite(nsr)) throw DataError("wiener: NSR must be >= 0");
    }
};

/// H* / (|H|^2 + Gamma).  At Gamma = 0 this is exact inversion where H is
/// nonzero and 0 where it vanishes.
inline std::complex<double> wiener_gain(std::complex<double> h, double gamma) {
    const double p = std::norm(h);
    if (gamma == 0.0) return p > 0.0 ? std::conj(h) / p : std::complex<double>(0.0, 0.0);
    return std::conj(h) / (p + gamma);
}

inline std::vector<std::complex<double>> wiener_transfer(
    const std::vector<std::complex<double>>& otf, double gamma) {
    if (gamma < 0.0) throw DataError("wiener: NSR must be >= 0");
    std::vector<std::complex<double>> out(otf.size());
    for (std::size_t i = 0; i < otf.size(); ++i) out[i] = wiener_gain(otf[i], gamma);
    return out;
}

// ---------------------------------------------------------------------------
// Discrete sampling on FFT grids
// ---------------------------------------------------------------------------

/// Radial OTF sampled on the (h, w) DFT grid of an image with the given
/// pixel pitch; bin (0,0) is the zero frequency.
template <typename RadialFn>
ComplexImage sample_otf_grid(int h, int w, double pitch_m, RadialFn&& fn) {
    ComplexImage out(h, w);
    for (int y = 0; y < h; ++y) {
        const double fy = fft::signed_index(y, h) / (pitch_m * h);
        for (int x = 0; x < w; ++x) {
            const double fx = fft::signed_index(x, w) / (pitch_m * w);
            out.at(y, x) = fn(std::hypot(fx, fy));
        }
    }
    return out;
}

/// Spatial PSF from the radial OTF on an n x n grid: inverse transform of
/// the sampled OTF, centered, normalized to unit sum.  The grid must be able
/// to represent the optical cutoff (small slack for rounded pitch values).
inline Image psf_spatial(const OpticalConfig& cfg, double r0_m, double alpha, int n,
                         double pitch_m) {
    if (n < 8) throw DataError("psf: grid too small");
    const double nyquist = 0.5 / pitch_m;
    if (nyquist < cfg.cutoff_cyc_per_m() * (1.0 - 1e-3))
        throw DataError("psf: sampling pitch aliases the optical cutoff");
    ComplexImage otf = sample_otf_grid(n, n, pitch_m, [&](double rho) {
        return otf_combined(rho, cfg, r0_m, alpha);
    });
    Image psf = fft::inverse_real(std::move(otf));
    psf = fft::center(psf);
    double sum = 0.0;
    for (double v : psf.data) sum += v;
    if (!(sum > 0.0)) throw NumericalError("psf: degenerate transform");
    for (double& v : psf.data) v /= sum;
    return psf;
}

}  // namespace turbmit
