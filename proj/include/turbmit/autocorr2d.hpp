#pragma once

#include <cmath>
#include <vector>

#include "turbmit/core.hpp"
#include "turbmit/parallel.hpp"
#include "turbmit/tilt_stats.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Mapping of the parallel/perpendicular correlations onto wide-sense
// stationary 2D lag fields in pixel coordinates.  A lag n = (n1, n2) has
// distance d = hypot(n1, n2) and orientation phi = atan2(n2, n1); the axis
// autocorrelations are projections of the radial pair onto that orientation.
// ---------------------------------------------------------------------------

struct LagVector {
    int n1 = 0;
    int n2 = 0;

    double distance() const { return std::hypot(static_cast<double>(n1), static_cast<double>(n2)); }
    /// Orientation relative to the horizontal axis; meaningful for n != 0.
    double angle() const { return std::atan2(static_cast<double>(n2), static_cast<double>(n1)); }
};

namespace detail {

inline double cos2_phi(const LagVector& n) {
    const double d2 = static_cast<double>(n.n1) * n.n1 + static_cast<double>(n.n2) * n.n2;
    return d2 > 0.0 ? static_cast<double>(n.n1) * n.n1 / d2 : 1.0;
}

}  // namespace detail

/// Horizontal-axis tilt autocorrelation at integer lag n, px^2.
inline double autocorr_xx(const LagVector& n, const TiltCorrelation1D& corr) {
    if (n.n1 == 0 && n.n2 == 0) return corr.sigma_t2_px2;
    const double d = n.distance();
    const double c2 = detail::cos2_phi(n);
    return corr.par_at(d) * c2 + corr.perp_at(d) * (1.0 - c2);
}

/// Vertical-axis tilt autocorrelation; mirror of autocorr_xx with sin^2.
inline double autocorr_yy(const LagVector& n, const TiltCorrelation1D& corr) {
    return autocorr_xx(LagVector{n.n2, n.n1}, corr);
}

/// Cross-correlation between the axis tilts; zero on both axes.
inline double crosscorr_xy(const LagVector& n, const TiltCorrelation1D& corr) {
    if (n.n1 == 0 || n.n2 == 0) return 0.0;
    const double d = n.distance();
    const double cs = static_cast<double>(n.n1) * static_cast<double>(n.n2) / (d * d);
    return (corr.par_at(d) - corr.perp_at(d)) * cs;
}

/// Sampled lag fields over [-N1, N1] x [-N2, N2] in pixel^2 units.
struct TiltAutocorr2D {
    int half_n1 = 0;
    int half_n2 = 0;
    std::vector<double> r_xx;
    std::vector<double> r_yy;
    std::vector<double> r_xy;
    std::vector<double> r_t;
    double sigma_t2_px2 = 0.0;

    int stride() const { return 2 * half_n2 + 1; }
    std::size_t index(int n1, int n2) const {
        return static_cast<std::size_t>(n1 + half_n1) * stride() + (n2 + half_n2);
    }
    bool contains(int n1, int n2) const {
        return std::abs(n1) <= half_n1 && std::abs(n2) <= half_n2;
    }
    double xx(int n1, int n2) const { return r_xx[index(n1, n2)]; }
    double yy(int n1, int n2) const { return r_yy[index(n1, n2)]; }
    double xy(int n1, int n2) const { return r_xy[index(n1, n2)]; }
    double t(int n1, int n2) const { return r_t[index(n1, n2)]; }
};

/// Grid construction from an existing tabulation (must cover N*sqrt(2)).
inline TiltAutocorr2D build_autocorr_grid(const TiltCorrelation1D& corr, int half_extent) {
    TiltAutocorr2D g;
    g.half_n1 = g.half_n2 = half_extent;
    const int n = 2 * half_extent + 1;
    const std::size_t total = static_cast<std::size_t>(n) * n;
    g.r_xx.resize(total);
    g.r_yy.resize(total);
    g.r_xy.resize(total);
    g.r_t.resize(total);
    g.sigma_t2_px2 = corr.sigma_t2_px2;

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
        const int n1 = static_cast<int>(row) - half_extent;
        for (int n2 = -half_extent; n2 <= half_extent; ++n2) {
            const LagVector lag{n1, n2};
            const std::size_t i = g.index(n1, n2);
            g.r_xx[i] = autocorr_xx(lag, corr);
            g.r_yy[i] = autocorr_yy(lag, corr);
            g.r_xy[i] = crosscorr_xy(lag, corr);
            g.r_t[i] = g.r_xx[i] + g.r_yy[i];
        }
    });
    return g;
}

/// Builds all four lag fields over (2N+1)^2 lags from a fresh radial
/// tabulation (0.25 px grid, cubic interpolation between nodes).
inline TiltAutocorr2D build_autocorr_grid(const OpticalConfig& cfg, const Cn2Profile& profile,
                                          int half_extent, const QuadratureSpec& q = {},
                                          double step_px = 0.25) {
    if (half_extent < 0) throw DataError("autocorr grid: half extent must be >= 0");
    const double dmax = std::hypot(static_cast<double>(half_extent),
                                   static_cast<double>(half_extent));
    const TiltCorrelation1D corr = tabulate_correlations(cfg, profile, dmax, step_px, q);
    return build_autocorr_grid(corr, half_extent);
}

}  // namespace turbmit
