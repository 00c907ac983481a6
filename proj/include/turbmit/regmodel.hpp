#pragma once

#include <cmath>
#include <vector>

#include "turbmit/autocorr2d.hpp"
#include "turbmit/core.hpp"
#include "turbmit/fft.hpp"
#include "turbmit/tilt_stats.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Registration modeled as LSI filtering of the random tilt fields plus white
// measurement error.  Patch registration subtracts a (2M+1)^2 moving average
// of the tilt field; global registration subtracts the full-image average,
// which makes the residual filter position-dependent.
// ---------------------------------------------------------------------------

/// Square-support filter over lags [-half_width, half_width]^2.
struct TiltFilter {
    int half_width = 0;
    std::vector<double> taps;  // (2h+1)^2 row-major, index (n1+h)*(2h+1)+(n2+h)

    int side() const { return 2 * half_width + 1; }
    double tap(int n1, int n2) const {
        return taps[static_cast<std::size_t>(n1 + half_width) * side() + (n2 + half_width)];
    }
    double& tap_ref(int n1, int n2) {
        return taps[static_cast<std::size_t>(n1 + half_width) * side() + (n2 + half_width)];
    }
    double sum() const {
        double acc = 0.0;
        for (double t : taps) acc += t;
        return acc;
    }
};

/// Uniform moving-average over a (2M+1)^2 patch; taps sum to 1.
inline TiltFilter patch_filter(int M) {
    if (M < 0) throw DataError("patch filter: M must be >= 0");
    TiltFilter f;
    f.half_width = M;
    const int side = f.side();
    f.taps.assign(static_cast<std::size_t>(side) * side,
                  1.0 / (static_cast<double>(side) * side));
    return f;
}

/// Identity minus moving average: the residual tilt after patch registration.
/// Taps sum to 0 (rejects any uniform tilt).
inline TiltFilter residual_filter(int M) {
    TiltFilter f = patch_filter(M);
    for (double& t : f.taps) t = -t;
    f.tap_ref(0, 0) += 1.0;
    return f;
}

/// Residual filter for global registration at pixel position k: the delta
/// moves with the pixel while the average spans the whole image, so taps sum
/// to 0 but the filter is no longer spatially invariant.
inline TiltFilter global_residual_filter(int k1, int k2, int image_half_extent) {
    const int M = image_half_extent;
    if (std::abs(k1) > M || std::abs(k2) > M)
        throw DataError("global residual filter: pixel position outside image extent");
    TiltFilter f = patch_filter(M);
    for (double& t : f.taps) t = -t;
    f.tap_ref(-k1, -k2) += 1.0;
    return f;
}

enum class CorrField { XX, YY, TotalHalf };

namespace detail {

inline double corr_value(const TiltAutocorr2D& g, CorrField field, int n1, int n2) {
    switch (field) {
        case CorrField::XX: return g.xx(n1, n2);
        case CorrField::YY: return g.yy(n1, n2);
        case CorrField::TotalHalf: return 0.5 * g.t(n1, n2);
    }
    return 0.0;
}

/// Filter autocorrelation w(n) = sum_m h(m) h(m - n) over [-2h, 2h]^2.
/// Direct pair accumulation for small supports, FFT beyond that.
inline std::vector<double> filter_autocorr(const TiltFilter& h) {
    const int hw = h.half_width;
    const int wside = 4 * hw + 1;
    std::vector<double> w(static_cast<std::size_t>(wside) * wside, 0.0);
    const int side = h.side();
    if (static_cast<long>(side) * side <= 4096) {
        for (int a1 = -hw; a1 <= hw; ++a1)
            for (int a2 = -hw; a2 <= hw; ++a2) {
                const double ha = h.tap(a1, a2);
                if (ha == 0.0) continue;
                for (int b1 = -hw; b1 <= hw; ++b1)
                    for (int b2 = -hw; b2 <= hw; ++b2) {
                        const int n1 = a1 - b1, n2 = a2 - b2;
                        w[static_cast<std::size_t>(n1 + 2 * hw) * wside + (n2 + 2 * hw)] +=
                            ha * h.tap(b1, b2);
                    }
            }
        return w;
    }
    int p = 1;
    while (p < wside) p <<= 1;
    ComplexImage c(p, p);
    for (int a1 = -hw; a1 <= hw; ++a1)
        for (int a2 = -hw; a2 <= hw; ++a2)
            c.at((a1 + p) % p, (a2 + p) % p) = h.tap(a1, a2);
    fft::transform(c, true);
    for (auto& v : c.data) v = std::norm(v);
    fft::transform(c, false);
    const double norm = 1.0 / (static_cast<double>(p) * p);
    for (int n1 = -2 * hw; n1 <= 2 * hw; ++n1)
        for (int n2 = -2 * hw; n2 <= 2 * hw; ++n2)
            w[static_cast<std::size_t>(n1 + 2 * hw) * wside + (n2 + 2 * hw)] =
                c.at((n1 + p) % p, (n2 + p) % p).real() * norm;
    return w;
}

}  // namespace detail

/// Variance of a tilt field processed by `h` with additive white measurement
/// error: sigma_e^2 + sum_n (h*h)(n) r(n).  The correlation grid must cover
/// lags out to twice the filter half width.
inline double filtered_variance(const TiltAutocorr2D& corr, CorrField field,
                                const TiltFilter& h, double sigma_e2_px2) {
    const int hw = h.half_width;
    if (corr.half_n1 < 2 * hw || corr.half_n2 < 2 * hw)
        throw DataError("filtered variance: correlation grid extent " +
                        std::to_string(corr.half_n1) + " < required " + std::to_string(2 * hw));
    const std::vector<double> w = detail::filter_autocorr(h);
    const int wside = 4 * hw + 1;
    double acc = 0.0;
    for (int n1 = -2 * hw; n1 <= 2 * hw; ++n1)
        for (int n2 = -2 * hw; n2 <= 2 * hw; ++n2) {
            const double wv = w[static_cast<std::size_t>(n1 + 2 * hw) * wside + (n2 + 2 * hw)];
            if (wv != 0.0) acc += wv * detail::corr_value(corr, field, n1, n2);
        }
    return sigma_e2_px2 + acc;
}

namespace detail {

/// Horizontal-axis correlation sampled on the lag grid [-E, E]^2 with prefix
/// sums for O(1) box queries.  Shared by the patch, residual, and per-pixel
/// variance computations.
struct RxxLagGrid {
    int extent;
    std::vector<double> values;   // (2E+1)^2
    std::vector<double> prefix;   // (2E+2)^2 inclusive prefix sums

    RxxLagGrid(const TiltCorrelation1D& corr, int E) : extent(E) {
        const int side = 2 * E + 1;
        values.resize(static_cast<std::size_t>(side) * side);
        parallel_for(static_cast<std::size_t>(side), [&](std::size_t row) {
            const int n1 = static_cast<int>(row) - E;
            for (int n2 = -E; n2 <= E; ++n2)
                values[row * side + (n2 + E)] = autocorr_xx(LagVector{n1, n2}, corr);
        });
        prefix.assign(static_cast<std::size_t>(side + 1) * (side + 1), 0.0);
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j)
                prefix[(i + 1) * static_cast<std::size_t>(side + 1) + (j + 1)] =
                    values[static_cast<std::size_t>(i) * side + j] +
                    prefix[static_cast<std::size_t>(i) * (side + 1) + (j + 1)] +
                    prefix[(i + 1) * static_cast<std::size_t>(side + 1) + j] -
                    prefix[static_cast<std::size_t>(i) * (side + 1) + j];
    }

    double value(int n1, int n2) const {
        const int side = 2 * extent + 1;
        return values[static_cast<std::size_t>(n1 + extent) * side + (n2 + extent)];
    }

    /// Sum of values over lags [a1, b1] x [a2, b2] (inclusive, grid coords).
    double box_sum(int a1, int b1, int a2, int b2) const {
        const int side = 2 * extent + 1;
        const int i0 = a1 + extent, i1 = b1 + extent;
        const int j0 = a2 + extent, j1 = b2 + extent;
        const std::size_t s = static_cast<std::size_t>(side + 1);
        return prefix[(i1 + 1) * s + (j1 + 1)] - prefix[i0 * s + (j1 + 1)] -
               prefix[(i1 + 1) * s + j0] + prefix[i0 * s + j0];
    }

    /// Triangular-weighted sum over [-2M, 2M]^2: the box-filter
    /// autocorrelation has closed form (2M+1-|n1|)(2M+1-|n2|).
    double patch_weighted_sum(int M) const {
        const int side = 2 * extent + 1;
        double acc = 0.0;
        for (int n1 = -2 * M; n1 <= 2 * M; ++n1) {
            const double w1 = (2 * M + 1) - std::abs(n1);
            const double* row = &values[static_cast<std::size_t>(n1 + extent) * side];
            double inner = 0.0;
            for (int n2 = -2 * M; n2 <= 2 * M; ++n2)
                inner += ((2 * M + 1) - std::abs(n2)) * row[n2 + extent];
            acc += w1 * inner;
        }
        return acc;
    }
};

struct PatchVarianceTerms {
    double sigma_t2;   // r_xx(0)
    double mean_box;   // mean of r_xx over [-M, M]^2
    double mean_pair;  // triangular-weighted mean over [-2M, 2M]^2
};

inline PatchVarianceTerms patch_terms(const OpticalConfig& cfg, const Cn2Profile& profile,
                                      int M, const QuadratureSpec& q) {
    if (M < 0) throw DataError("patch statistics: M must be >= 0");
    const double dmax = 2.0 * M * std::numbers::sqrt2;
    const TiltCorrelation1D corr = tabulate_correlations(cfg, profile, dmax, 0.25, q);
    const RxxLagGrid grid(corr, 2 * M);
    PatchVarianceTerms t;
    t.sigma_t2 = corr.sigma_t2_px2;
    const double count = static_cast<double>(2 * M + 1) * (2 * M + 1);
    t.mean_box = grid.box_sum(-M, M, -M, M) / count;
    t.mean_pair = grid.patch_weighted_sum(M) / (count * count);
    return t;
}

}  // namespace detail

/// Variance of the patch-average tilt estimate, px^2.
inline double patch_tilt_variance(const OpticalConfig& cfg, const Cn2Profile& profile, int M,
                                  double sigma_e2_px2 = 0.0, const QuadratureSpec& q = {}) {
    const auto t = detail::patch_terms(cfg, profile, M, q);
    return sigma_e2_px2 + t.mean_pair;
}

/// Variance of the tilt remaining after ideal patch registration, px^2.
inline double residual_tilt_variance(const OpticalConfig& cfg, const Cn2Profile& profile, int M,
                                     double sigma_e2_px2 = 0.0, const QuadratureSpec& q = {}) {
    const auto t = detail::patch_terms(cfg, profile, M, q);
    return sigma_e2_px2 + t.sigma_t2 - 2.0 * t.mean_box + t.mean_pair;
}

/// Tilt correction factor alpha = 1 - sigma_R^2 / sigma_T^2 with the
/// measurement error supplied as the error-to-signal ratio epsilon.
/// May be negative (registration that adds more error than it removes);
/// returned unclamped with a warning.
inline double tilt_correction_factor(const OpticalConfig& cfg, const Cn2Profile& profile, int M,
                                     double epsilon = 0.0, const QuadratureSpec& q = {}) {
    if (profile.is_zero())
        throw DataError("tilt correction factor: undefined for zero turbulence");
    const auto t = detail::patch_terms(cfg, profile, M, q);
    const double sigma_e2 = epsilon * t.sigma_t2;
    const double sigma_r2 = sigma_e2 + t.sigma_t2 - 2.0 * t.mean_box + t.mean_pair;
    const double alpha = 1.0 - sigma_r2 / t.sigma_t2;
    if (alpha < 0.0)
        warn("tilt correction factor is negative (" + std::to_string(alpha) +
             "); registration would increase tilt variance");
    return alpha;
}

/// Per-pixel tilt correction factors for global registration over a
/// (2M+1)^2 image.  The x and y factors are computed separately from their
/// own autocorrelations; for any profile the two maps are transposes.
struct AlphaMap {
    Image alpha_x;
    Image alpha_y;
    double average = 0.0;
    double peak = 0.0;
    double sigma_t2_px2 = 0.0;
};

inline AlphaMap global_alpha_map(const OpticalConfig& cfg, const Cn2Profile& profile,
                                 int image_half_extent, double epsilon = 0.0,
                                 const QuadratureSpec& q = {}) {
    if (profile.is_zero())
        throw DataError("global alpha map: undefined for zero turbulence");
    const int M = image_half_extent;
    const double dmax = 2.0 * M * std::numbers::sqrt2;
    const TiltCorrelation1D corr = tabulate_correlations(cfg, profile, dmax, 0.25, q);
    const detail::RxxLagGrid grid(corr, 2 * M);

    const double sigma_t2 = corr.sigma_t2_px2;
    const double count = static_cast<double>(2 * M + 1) * (2 * M + 1);
    const double mean_pair = grid.patch_weighted_sum(M) / (count * count);
    const double sigma_e2 = epsilon * sigma_t2;

    AlphaMap map;
    map.sigma_t2_px2 = sigma_t2;
    const int side = 2 * M + 1;
    map.alpha_x = Image(side, side);
    map.alpha_y = Image(side, side);

    // alpha at pixel k from the box of lags m + k, |m| <= M; x uses the grid
    // as built, y uses it transposed (r_yy(n1,n2) = r_xx(n2,n1)).
    long negatives = 0;
    for (int k1 = -M; k1 <= M; ++k1) {
        for (int k2 = -M; k2 <= M; ++k2) {
            const double sx = grid.box_sum(k1 - M, k1 + M, k2 - M, k2 + M) / count;
            const double sy = grid.box_sum(k2 - M, k2 + M, k1 - M, k1 + M) / count;
            const double rx = sigma_e2 + sigma_t2 - 2.0 * sx + mean_pair;
            const double ry = sigma_e2 + sigma_t2 - 2.0 * sy + mean_pair;
            const double ax = 1.0 - rx / sigma_t2;
            const double ay = 1.0 - ry / sigma_t2;
            map.alpha_x.at(k1 + M, k2 + M) = ax;
            map.alpha_y.at(k1 + M, k2 + M) = ay;
            negatives += (ax < 0.0) + (ay < 0.0);
        }
    }
    if (negatives > 0)
        warn("global alpha map has " + std::to_string(negatives) + " negative entries");
    map.average = 0.5 * (map.alpha_x.mean() + map.alpha_y.mean());
    map.peak = *std::max_element(map.alpha_x.data.begin(), map.alpha_x.data.end());
    map.peak = std::max(map.peak,
                        *std::max_element(map.alpha_y.data.begin(), map.alpha_y.data.end()));
    return map;
}

/// alpha versus the source-to-camera endpoint change of a linear profile
/// with fixed path mean.  delta = Cn^2(camera) - Cn^2(source).
struct AlphaSensitivityCurve {
    int M = 0;
    std::vector<double> delta;
    std::vector<double> alpha;
};

inline std::vector<AlphaSensitivityCurve> alpha_sensitivity(
    const OpticalConfig& cfg, double mean_cn2, const std::vector<double>& deltas,
    const std::vector<int>& patch_half_widths, double epsilon = 0.0,
    const QuadratureSpec& q = {}) {
    if (!(mean_cn2 > 0.0)) throw DataError("alpha sensitivity: mean profile must be positive");
    std::vector<AlphaSensitivityCurve> curves;
    curves.reserve(patch_half_widths.size());
    for (int M : patch_half_widths) {
        AlphaSensitivityCurve c;
        c.M = M;
        for (double d : deltas) {
            if (std::abs(d) > 2.0 * mean_cn2)
                throw DataError("alpha sensitivity: endpoint change drives Cn^2 negative");
            const Cn2Profile p =
                Cn2Profile::linear(mean_cn2 - 0.5 * d, mean_cn2 + 0.5 * d);
            c.delta.push_back(d);
            c.alpha.push_back(tilt_correction_factor(cfg, p, M, epsilon, q));
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

}  // namespace turbmit
