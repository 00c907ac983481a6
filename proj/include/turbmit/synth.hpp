#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "turbmit/autocorr2d.hpp"
#include "turbmit/core.hpp"
#include "turbmit/fft.hpp"
#include "turbmit/mitigation.hpp"
#include "turbmit/otf.hpp"
#include "turbmit/rng.hpp"
#include "turbmit/tilt_stats.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Statistical degradation synthesizer: correlated Gaussian tilt-field pairs
// with the model's 2D auto/cross-correlations, realized by spectral
// factorization of the 2x2 cross-spectral density on an enlarged torus.
//
// The tilt correlations decay too slowly to wrap onto a torus directly, so
// the target covariance is kept exact for every lag the cropped field can
// form and blended to an isotropic pedestal (a common random displacement)
// beyond that.  Residual negative eigenvalues are clamped and the spectra
// rescaled so the lag-zero variance is exact; the clamped power fraction is
// reported and bounded.
// ---------------------------------------------------------------------------

struct SynthConfig {
    OpticalConfig optics;
    Cn2Profile profile = Cn2Profile::constant(1e-15);
    int frame_count = 100;
    double noise_sigma = 1.0;      // additive Gaussian noise, intensity units
    std::uint64_t seed = 1;
    int spectral_grid = 0;         // 0 = auto: FFT-friendly >= 3x field, >= 512
    double max_clamped_power = 0.05;
    QuadratureSpec quad{};
};

namespace detail {

inline int pick_spectral_grid(int h, int w, int override_grid) {
    // 3.5x the field leaves enough taper room to keep the clamped spectral
    // power comfortably inside the validity bound.
    const int need = std::max(7 * std::max(h, w) / 2, 512);
    if (override_grid > 0) {
        if (override_grid < 2 * std::max(h, w))
            throw DataError("synth: spectral grid must be at least twice the field size");
        return override_grid;
    }
    for (int g : {512, 768, 1024, 1536, 2048, 3072, 4096, 6144, 8192})
        if (g >= need) return g;
    throw DataError("synth: field too large for spectral synthesis");
}

}  // namespace detail

/// Factorized cross-spectral density for one (optics, profile, field size)
/// combination; reusable across frames and seeds.
class TiltFieldSynthesizer {
  public:
    /// Radial-table construction used by the sequence synthesizer.
    TiltFieldSynthesizer(const OpticalConfig& cfg, const Cn2Profile& profile, int field_h,
                         int field_w, int grid_override = 0, double max_clamped_power = 0.05,
                         const QuadratureSpec& q = {})
        : h_(field_h), w_(field_w) {
        grid_ = detail::pick_spectral_grid(h_, w_, grid_override);
        const int a_lo = std::max(h_, w_) - 1;
        const int a_hi = static_cast<int>(0.485 * grid_);
        if (a_hi <= a_lo)
            throw DataError("synth: spectral grid leaves no room for the covariance taper");
        const double dmax = std::numbers::sqrt2 * a_hi;
        const TiltCorrelation1D corr = tabulate_correlations(cfg, profile, dmax, 0.25, q);
        build(corr, a_lo, a_hi, max_clamped_power);
    }

    /// Construction from a sampled lag grid (must cover the field extent;
    /// any margin beyond it widens the taper region).
    TiltFieldSynthesizer(const TiltAutocorr2D& corr, int field_h, int field_w,
                         int grid_override = 0, double max_clamped_power = 0.05)
        : h_(field_h), w_(field_w) {
        const int a_lo = std::max(h_, w_) - 1;
        if (corr.half_n1 < a_lo || corr.half_n2 < a_lo)
            throw DataError("synth: correlation grid does not cover the field extent");
        grid_ = detail::pick_spectral_grid(h_, w_, grid_override);
        // Taper as far out as the supplied grid allows; a grid with no
        // margin degenerates to a hard cutoff at the field extent.
        const int a_hi = std::min(static_cast<int>(0.485 * grid_),
                                  std::min(corr.half_n1, corr.half_n2));
        build_from_grid(corr, a_lo, a_hi, max_clamped_power);
    }

    double clamped_power_fraction() const { return clamped_power_fraction_; }
    double variance_rescale() const { return variance_rescale_; }
    int spectral_grid() const { return grid_; }

    /// Lag-zero variances the factorized spectra will deliver (x, y axis).
    std::pair<double, double> implied_axis_variances() const {
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < bxx_.size(); ++i) {
            sx += bxx_[i] * bxx_[i] + bxy_[i] * bxy_[i];
            sy += byy_[i] * byy_[i] + bxy_[i] * bxy_[i];
        }
        const double n = static_cast<double>(grid_) * grid_;
        return {sx / n, sy / n};
    }

    /// One zero-mean field pair (x tilt, y tilt) in pixels; identical seeds
    /// give identical fields.
    std::pair<Image, Image> generate(std::uint64_t seed) const {
        const int g = grid_;
        ComplexImage packed(g, g);
        Rng rng(seed);
        for (auto& v : packed.data) {
            const double re = rng.gaussian();
            const double im = rng.gaussian();
            v = {re, im};
        }
        fft::transform(packed, true);

        // Hermitian split recovers the spectra of the two real noise planes;
        // mixing with the real symmetric factor keeps the symmetry, so one
        // inverse transform returns both fields.
        ComplexImage mixed(g, g);
        for (int y = 0; y < g; ++y) {
            const int ym = (g - y) % g;
            for (int x = 0; x < g; ++x) {
                const int xm = (g - x) % g;
                const std::complex<double> c = packed.at(y, x);
                const std::complex<double> cm = std::conj(packed.at(ym, xm));
                const std::complex<double> w1 = 0.5 * (c + cm);
                const std::complex<double> w2 = std::complex<double>(0.0, -0.5) * (c - cm);
                const std::size_t i = static_cast<std::size_t>(y) * g + x;
                const std::complex<double> zx = bxx_[i] * w1 + bxy_[i] * w2;
                const std::complex<double> zy = bxy_[i] * w1 + byy_[i] * w2;
                mixed.at(y, x) = zx + std::complex<double>(0.0, 1.0) * zy;
            }
        }
        fft::transform(mixed, false);
        const double norm = 1.0 / (static_cast<double>(g) * g);
        Image fx(h_, w_), fy(h_, w_);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                const std::complex<double> v = mixed.at(y, x);
                fx.at(y, x) = v.real() * norm;
                fy.at(y, x) = v.imag() * norm;
            }
        return {std::move(fx), std::move(fy)};
    }

  private:
    void build(const TiltCorrelation1D& corr, int a_lo, int a_hi, double max_clamped_power) {
        const double pedestal = 0.5 * (corr.par_at(a_hi) + corr.perp_at(a_hi));
        fill_and_factor(a_lo, a_hi, pedestal, corr.sigma_t2_px2, max_clamped_power,
                        [&](int n1, int n2, double d) {
                            std::array<double, 3> v;
                            if (d == 0.0) {
                                v = {corr.sigma_t2_px2, corr.sigma_t2_px2, 0.0};
                                return v;
                            }
                            const double rp = corr.par_at(d);
                            const double rq = corr.perp_at(d);
                            const double c2 = static_cast<double>(n1) * n1 / (d * d);
                            v[0] = rp * c2 + rq * (1.0 - c2);
                            v[1] = rp * (1.0 - c2) + rq * c2;
                            v[2] = (rp - rq) * (static_cast<double>(n1) * n2) / (d * d);
                            return v;
                        });
    }

    void build_from_grid(const TiltAutocorr2D& corr, int a_lo, int a_hi,
                         double max_clamped_power) {
        const double pedestal = 0.5 * (corr.xx(a_hi, 0) + corr.xx(0, a_hi));
        fill_and_factor(a_lo, a_hi, pedestal, corr.sigma_t2_px2, max_clamped_power,
                        [&](int n1, int n2, double) {
                            return std::array<double, 3>{corr.xx(n1, n2), corr.yy(n1, n2),
                                                         corr.xy(n1, n2)};
                        });
    }

    template <typename Source>
    void fill_and_factor(int a_lo, int a_hi, double pedestal, double sigma_t2,
                         double max_clamped_power, Source&& source) {
        const int g = grid_;
        ComplexImage sxx(g, g), syy(g, g), sxy(g, g);
        for (int y = 0; y < g; ++y) {
            const int n1 = fft::signed_index(y, g);
            for (int x = 0; x < g; ++x) {
                const int n2 = fft::signed_index(x, g);
                const int cheb = std::max(std::abs(n1), std::abs(n2));
                double vxx = pedestal, vyy = pedestal, vxy = 0.0;
                if (cheb <= a_hi) {
                    const double d = std::hypot(static_cast<double>(n1),
                                                static_cast<double>(n2));
                    const auto v = source(n1, n2, d);
                    double taper = 1.0;
                    if (cheb > a_lo) {
                        const double t = static_cast<double>(cheb - a_lo) / (a_hi - a_lo);
                        taper = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
                    }
                    vxx = pedestal + taper * (v[0] - pedestal);
                    vyy = pedestal + taper * (v[1] - pedestal);
                    vxy = taper * v[2];
                }
                sxx.at(y, x) = vxx;
                syy.at(y, x) = vyy;
                sxy.at(y, x) = vxy;
            }
        }
        fft::transform(sxx, true);
        fft::transform(syy, true);
        fft::transform(sxy, true);

        const std::size_t total = static_cast<std::size_t>(g) * g;
        bxx_.resize(total);
        byy_.resize(total);
        bxy_.resize(total);
        double clamped = 0.0, power = 0.0;
        double var_implied = 0.0;
        std::vector<double> l1c(total), l2c(total), vx(total), vy(total);
        for (std::size_t i = 0; i < total; ++i) {
            const double a = sxx.data[i].real();
            const double c = syy.data[i].real();
            const double b = sxy.data[i].real();
            const double tr = a + c;
            const double disc = std::sqrt(std::max((a - c) * (a - c) + 4.0 * b * b, 0.0));
            const double e1 = 0.5 * (tr + disc);
            const double e2 = 0.5 * (tr - disc);
            power += std::abs(e1) + std::abs(e2);
            clamped += std::max(-e1, 0.0) + std::max(-e2, 0.0);
            const double e1c = std::max(e1, 0.0);
            const double e2c = std::max(e2, 0.0);
            // eigenvector of e1: (b, e1 - a), or (1, 0) in the diagonal case
            double ux = b, uy = e1 - a;
            const double n = std::hypot(ux, uy);
            if (n > 1e-300) {
                ux /= n;
                uy /= n;
            } else {
                ux = a >= c ? 1.0 : 0.0;
                uy = a >= c ? 0.0 : 1.0;
            }
            l1c[i] = e1c;
            l2c[i] = e2c;
            vx[i] = ux;
            vy[i] = uy;
            var_implied += 0.5 * (e1c + e2c);
        }
        clamped_power_fraction_ = power > 0.0 ? clamped / power : 0.0;
        if (clamped_power_fraction_ > max_clamped_power)
            throw NumericalError("synth: clamped spectral power fraction " +
                                 std::to_string(clamped_power_fraction_) +
                                 " exceeds limit (inconsistent correlation inputs)");

        // Exact lag-zero variance: r(0) = sum of eigenvalues / grid^2 per axis.
        var_implied /= static_cast<double>(total);
        variance_rescale_ = var_implied > 0.0 ? sigma_t2 / var_implied : 1.0;
        const double amp = std::sqrt(variance_rescale_);
        for (std::size_t i = 0; i < total; ++i) {
            const double s1 = amp * std::sqrt(l1c[i]);
            const double s2 = amp * std::sqrt(l2c[i]);
            bxx_[i] = s1 * vx[i] * vx[i] + s2 * vy[i] * vy[i];
            byy_[i] = s1 * vy[i] * vy[i] + s2 * vx[i] * vx[i];
            bxy_[i] = (s1 - s2) * vx[i] * vy[i];
        }
    }

    int h_, w_, grid_ = 0;
    double clamped_power_fraction_ = 0.0;
    double variance_rescale_ = 1.0;
    std::vector<double> bxx_, byy_, bxy_;
};

/// Spec'd single-shot form: one correlated field pair from a sampled lag
/// grid.  Building the factorization dominates; batch work should hold a
/// TiltFieldSynthesizer instead.
inline std::pair<Image, Image> synth_tilt_fields(const TiltAutocorr2D& corr, int field_h,
                                                 int field_w, std::uint64_t seed) {
    return TiltFieldSynthesizer(corr, field_h, field_w).generate(seed);
}

/// Backward-mapping warp: out(p) = img(p - field(p)), bilinear, replicated
/// borders.  A constant field is a rigid shift by that amount.
inline Image warp_image(const Image& img, const Image& field_x, const Image& field_y) {
    if (!img.same_shape(field_x) || !img.same_shape(field_y))
        throw DataError("warp: field dimensions differ from image");
    for (double v : field_x.data)
        if (!std::isfinite(v)) throw DataError("warp: non-finite field");
    for (double v : field_y.data)
        if (!std::isfinite(v)) throw DataError("warp: non-finite field");
    Image out(img.height, img.width);
    out.source_bit_depth = img.source_bit_depth;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x) = img.sample(y - field_y.at(y, x), x - field_x.at(y, x));
    return out;
}

struct SynthGroundTruth {
    double r0_m = 0.0;
    double sigma_t2_px2 = 0.0;
    double isoplanatic_angle_px = 0.0;
    double noise_sigma = 0.0;
    double clamped_power_fraction = 0.0;
    std::uint64_t seed = 0;
};

struct SynthResult {
    ImageSequence sequence;
    SynthGroundTruth truth;
};

/// Temporally independent degraded frames: per frame, a fresh tilt-field
/// pair warps the truth image, the diffraction + short-exposure OTF blurs
/// it, and white Gaussian noise is added.  Blur is applied as spatially
/// invariant within each frame.
inline SynthResult degrade_sequence(const Image& truth, const SynthConfig& scfg) {
    if (truth.height < 8 || truth.width < 8) throw DataError("synth: truth image too small");
    if (scfg.frame_count < 1) throw DataError("synth: need at least one frame");
    if (scfg.noise_sigma < 0.0) throw DataError("synth: noise sigma must be >= 0");

    SynthResult out;
    out.sequence.optics = scfg.optics;
    out.truth.seed = scfg.seed;
    out.truth.noise_sigma = scfg.noise_sigma;

    // Zero turbulence degenerates to diffraction-only blur with no warp.
    const bool turbulent = !scfg.profile.is_zero();
    std::unique_ptr<TiltFieldSynthesizer> synth;
    if (turbulent) {
        out.truth.r0_m = fried_parameter(scfg.optics, scfg.profile);
        out.truth.isoplanatic_angle_px = isoplanatic_angle(scfg.optics, scfg.profile).px;
        synth = std::make_unique<TiltFieldSynthesizer>(scfg.optics, scfg.profile, truth.height,
                                                       truth.width, scfg.spectral_grid,
                                                       scfg.max_clamped_power, scfg.quad);
        out.truth.clamped_power_fraction = synth->clamped_power_fraction();
        const auto v = detail::tilt_correlations_cached(
            scfg.optics, detail::make_shape(scfg.profile, scfg.optics.path_length_m), 0.0,
            scfg.quad);
        const double xi = scfg.optics.pixel_angle_rad;
        out.truth.sigma_t2_px2 = v.par / (xi * xi);
    } else {
        out.truth.r0_m = std::numeric_limits<double>::infinity();
        out.truth.isoplanatic_angle_px = std::numeric_limits<double>::infinity();
    }

    const ComplexImage blur_otf = sample_otf_grid(
        truth.height, truth.width, scfg.optics.pixel_pitch_m, [&](double rho) {
            const double d = otf_diffraction(rho, scfg.optics);
            return turbulent ? d * otf_short_exposure(rho, scfg.optics, out.truth.r0_m) : d;
        });

    out.sequence.frames.resize(scfg.frame_count);
    parallel_for(static_cast<std::size_t>(scfg.frame_count), [&](std::size_t k) {
        Image frame;
        if (turbulent) {
            auto [fx, fy] = synth->generate(Rng::substream(scfg.seed, 2 * k).next_u64());
            frame = warp_image(truth, fx, fy);
        } else {
            frame = truth;
        }
        ComplexImage F = fft::forward(frame);
        for (std::size_t i = 0; i < F.data.size(); ++i) F.data[i] *= blur_otf.data[i];
        frame = fft::inverse_real(std::move(F));
        if (scfg.noise_sigma > 0.0) {
            Rng noise = Rng::substream(scfg.seed, 2 * k + 1);
            for (double& v : frame.data) v += scfg.noise_sigma * noise.gaussian();
        }
        frame.source_bit_depth = truth.source_bit_depth;
        out.sequence.frames[k] = std::move(frame);
    });
    return out;
}

}  // namespace turbmit
