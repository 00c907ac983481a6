#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "turbmit/core.hpp"
#include "turbmit/parallel.hpp"
#include "turbmit/quadrature.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Two-source tilt correlations for spherical-wave propagation through a
// Kolmogorov path.  The correlations are triple integrals over path position
// z in [0, L], normalized aperture separation u in [0, 1], and aperture angle
// in [0, 2pi); they factor linearly in Cn^2, which the evaluation cache
// exploits by storing results for a unit-scaled profile shape.
// ---------------------------------------------------------------------------

/// Parallel/perpendicular/total correlation triplet in radians^2.
struct TiltCorrelationValues {
    double par = 0.0;
    double perp = 0.0;
    double total = 0.0;
};

namespace detail {

struct ProfileShape {
    double multiplier = 0.0;     // mean Cn^2 over the path
    std::uint64_t hash = 0;      // hash of the unit-normalized shape
    const Cn2Profile* profile;   // borrowed; shape evaluation uses value_at / multiplier
};

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    return h;
}

inline std::uint64_t hash_double(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    return bits;
}

inline ProfileShape make_shape(const Cn2Profile& profile, double path_length) {
    profile.validate_for_path(path_length);
    ProfileShape s;
    s.profile = &profile;
    s.multiplier = profile.mean_value(path_length);
    std::uint64_t h = static_cast<std::uint64_t>(profile.kind()) + 1;
    if (s.multiplier > 0.0) {
        for (double z : profile.sample_z())
            h = hash_combine(h, hash_double(z / path_length));
        for (double v : profile.sample_values())
            h = hash_combine(h, hash_double(v / s.multiplier));
    }
    s.hash = h;
    return s;
}

/// Integrand weights over the normalized aperture separation u.  `angular`
/// multiplies cos^2 (parallel) or sin^2 (perpendicular) of the aperture
/// angle; `isotropic` is shared; `total` belongs to the combined-axis kernel.
struct ApertureWeights {
    std::vector<double> isotropic;
    std::vector<double> angular;
    std::vector<double> total;
    std::vector<double> u;
    std::vector<double> w;

    explicit ApertureWeights(int n) {
        GaussLegendre gl(n, 0.0, 1.0);
        u = gl.nodes;
        w = gl.weights;
        isotropic.resize(n);
        angular.resize(n);
        total.resize(n);
        for (int i = 0; i < n; ++i) {
            const double ui = u[i];
            const double root = std::sqrt(1.0 - ui * ui);
            isotropic[i] = 0.125 * ui * std::acos(ui) +
                           ui * root * (ui * ui * ui / 12.0 - 5.0 * ui / 24.0);
            angular[i] = ui * root * (ui * ui * ui - ui) / 3.0;
            total[i] = ui * std::acos(ui) - ui * ui * (3.0 - 2.0 * ui * ui) * root;
        }
    }
};

/// Single fixed-node evaluation of all three correlation kinds at angular
/// separation `theta`, for the unit-normalized profile shape.
inline TiltCorrelationValues integrate_tilt_correlations(const OpticalConfig& cfg,
                                                         const ProfileShape& shape,
                                                         double theta,
                                                         const QuadratureSpec& q) {
    const double D = cfg.aperture_diameter_m;
    const double L = cfg.path_length_m;

    GaussLegendre glz(q.nz, 0.0, L);
    const ApertureWeights aw(q.nu);

    // Midpoint nodes over the aperture angle; the integrand is symmetric
    // about pi, so only half the circle is evaluated.
    const int nth = q.ntheta;
    const int half = nth / 2;
    std::vector<double> cos_th(half), cos2_th(half);
    for (int j = 0; j < half; ++j) {
        const double t = (j + 0.5) * (2.0 * std::numbers::pi / nth);
        cos_th[j] = std::cos(t);
        cos2_th[j] = cos_th[j] * cos_th[j];
    }
    const double wth = 2.0 * (2.0 * std::numbers::pi / nth);

    double acc_iso = 0.0, acc_cos = 0.0, acc_sin = 0.0, acc_tot = 0.0;
    for (int iz = 0; iz < q.nz; ++iz) {
        const double z = glz.nodes[iz];
        const double shape_value = shape.multiplier > 0.0
                                       ? shape.profile->value_at(z, L) / shape.multiplier
                                       : 0.0;
        const double wz = glz.weights[iz] * shape_value;
        if (wz == 0.0) continue;
        const double zr = z / L;
        const double c = (L - z) / D * theta;
        const double c2 = c * c;
        for (int iu = 0; iu < q.nu; ++iu) {
            const double a = aw.u[iu] * zr;
            const double base = a * a + c2;
            const double cross = 2.0 * a * c;
            double st = 0.0, stc = 0.0;
            for (int j = 0; j < half; ++j) {
                const double t = pow56(base + cross * cos_th[j]);
                st += t;
                stc += t * cos2_th[j];
            }
            st *= wth;
            stc *= wth;
            const double sts = st - stc;  // sin^2 = 1 - cos^2
            const double wu = aw.w[iu] * wz;
            acc_iso += wu * aw.isotropic[iu] * st;
            acc_cos += wu * aw.angular[iu] * stc;
            acc_sin += wu * aw.angular[iu] * sts;
            acc_tot += wu * aw.total[iu] * st;
        }
    }

    const double dm13 = std::pow(D, -1.0 / 3.0);
    const double coef_axis = (-2.91 / 8.0) * (64.0 / std::numbers::pi) *
                             (64.0 / std::numbers::pi) * dm13;
    const double coef_total = (-2.91 / 2.0) * (16.0 / std::numbers::pi) *
                              (16.0 / std::numbers::pi) * dm13;
    TiltCorrelationValues out;
    out.par = coef_axis * (acc_iso + acc_cos);
    out.perp = coef_axis * (acc_iso + acc_sin);
    out.total = coef_total * acc_tot;
    return out;
}

struct CorrCacheKey {
    double D, L, theta, rel_tol;
    std::uint64_t shape_hash;
    int nz, ntheta, nu;

    bool operator==(const CorrCacheKey& o) const {
        return D == o.D && L == o.L && theta == o.theta && rel_tol == o.rel_tol &&
               shape_hash == o.shape_hash && nz == o.nz && ntheta == o.ntheta && nu == o.nu;
    }
};

struct CorrCacheKeyHash {
    std::size_t operator()(const CorrCacheKey& k) const {
        std::uint64_t h = k.shape_hash;
        h = hash_combine(h, hash_double(k.D));
        h = hash_combine(h, hash_double(k.L));
        h = hash_combine(h, hash_double(k.theta));
        h = hash_combine(h, hash_double(k.rel_tol));
        h = hash_combine(h, (std::uint64_t(k.nz) << 42) ^ (std::uint64_t(k.ntheta) << 21) ^
                                std::uint64_t(k.nu));
        return static_cast<std::size_t>(h);
    }
};

struct CorrCache {
    std::mutex mutex;
    std::unordered_map<CorrCacheKey, TiltCorrelationValues, CorrCacheKeyHash> map;

    static CorrCache& instance() {
        static CorrCache cache;
        return cache;
    }
};

/// Cached, convergence-checked evaluation in rad^2 for the actual profile
/// (multiplier applied).  The doubling pass compares base and refined node
/// counts; disagreement beyond rel_tol raises NumericalError with both values.
inline TiltCorrelationValues tilt_correlations_cached(const OpticalConfig& cfg,
                                                      const ProfileShape& shape,
                                                      double theta,
                                                      const QuadratureSpec& q) {
    if (shape.multiplier == 0.0) return {};

    CorrCacheKey key{cfg.aperture_diameter_m, cfg.path_length_m, theta,
                     q.convergence_check ? q.rel_tol : 0.0, shape.hash,
                     q.nz, q.ntheta, q.nu};
    auto& cache = CorrCache::instance();
    {
        std::lock_guard<std::mutex> lock(cache.mutex);
        auto it = cache.map.find(key);
        if (it != cache.map.end()) {
            TiltCorrelationValues v = it->second;
            v.par *= shape.multiplier;
            v.perp *= shape.multiplier;
            v.total *= shape.multiplier;
            return v;
        }
    }

    TiltCorrelationValues fine = integrate_tilt_correlations(cfg, shape, theta, q);
    if (q.convergence_check) {
        const TiltCorrelationValues coarse = fine;
        fine = integrate_tilt_correlations(cfg, shape, theta, q.doubled());
        const double scale = std::max({std::abs(fine.par), std::abs(fine.perp),
                                       std::abs(fine.total), 1e-300});
        const double diff = std::max({std::abs(fine.par - coarse.par),
                                      std::abs(fine.perp - coarse.perp),
                                      std::abs(fine.total - coarse.total)});
        if (diff > q.rel_tol * scale) {
            NumericalError err("tilt correlation quadrature did not converge at separation " +
                                   std::to_string(theta) + " rad",
                               coarse.par, fine.par);
            throw err;
        }
    }

    {
        std::lock_guard<std::mutex> lock(cache.mutex);
        cache.map.emplace(key, fine);
    }
    fine.par *= shape.multiplier;
    fine.perp *= shape.multiplier;
    fine.total *= shape.multiplier;
    return fine;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scalar operations
// ---------------------------------------------------------------------------

/// Tilt correlation parallel to the source separation, rad^2.
inline double tilt_corr_parallel(const OpticalConfig& cfg, const Cn2Profile& profile,
                                 double theta_rad, const QuadratureSpec& q = {}) {
    if (theta_rad < 0.0) throw DataError("tilt correlation: separation must be >= 0");
    return detail::tilt_correlations_cached(cfg, detail::make_shape(profile, cfg.path_length_m),
                                            theta_rad, q)
        .par;
}

/// Tilt correlation perpendicular to the source separation, rad^2.
inline double tilt_corr_perp(const OpticalConfig& cfg, const Cn2Profile& profile,
                             double theta_rad, const QuadratureSpec& q = {}) {
    if (theta_rad < 0.0) throw DataError("tilt correlation: separation must be >= 0");
    return detail::tilt_correlations_cached(cfg, detail::make_shape(profile, cfg.path_length_m),
                                            theta_rad, q)
        .perp;
}

/// Combined-axis tilt correlation, rad^2; evaluated from its own kernel
/// rather than as par + perp so the two routes stay independently testable.
inline double tilt_corr_total(const OpticalConfig& cfg, const Cn2Profile& profile,
                              double theta_rad, const QuadratureSpec& q = {}) {
    if (theta_rad < 0.0) throw DataError("tilt correlation: separation must be >= 0");
    return detail::tilt_correlations_cached(cfg, detail::make_shape(profile, cfg.path_length_m),
                                            theta_rad, q)
        .total;
}

/// rad^2 -> pixel^2 units: r(x) = r_rad(xi * x) / xi^2.
inline double tilt_corr_to_px2(double corr_rad2, const OpticalConfig& cfg) {
    const double xi = cfg.pixel_angle_rad;
    return corr_rad2 / (xi * xi);
}

/// Angular separation -> separation in pixel spacings.
inline double separation_to_px(double theta_rad, const OpticalConfig& cfg) {
    return theta_rad / cfg.pixel_angle_rad;
}

inline double separation_from_px(double x_px, const OpticalConfig& cfg) {
    return x_px * cfg.pixel_angle_rad;
}

/// Spherical-wave Fried parameter:
///   r0 = [0.423 k^2 Int Cn^2(z) (z/L)^(5/3) dz]^(-3/5),  k = 2 pi / lambda.
inline double fried_parameter(const OpticalConfig& cfg, const Cn2Profile& profile) {
    profile.validate_for_path(cfg.path_length_m);
    if (profile.is_zero())
        throw DataError("fried parameter: zero-turbulence profile gives infinite r0");
    const double L = cfg.path_length_m;
    // Piecewise Gauss-Legendre; breakpoints at the profile samples.
    std::vector<double> breaks = {0.0, L};
    if (profile.kind() == Cn2Profile::Kind::Sampled) breaks = profile.sample_z();
    double integral = 0.0;
    for (std::size_t i = 1; i < breaks.size(); ++i) {
        GaussLegendre gl(32, breaks[i - 1], breaks[i]);
        for (int j = 0; j < 32; ++j) {
            const double z = gl.nodes[j];
            integral += gl.weights[j] * profile.value_at(z, L) * std::pow(z / L, 5.0 / 3.0);
        }
    }
    const double k = cfg.wavenumber();
    return std::pow(0.423 * k * k * integral, -3.0 / 5.0);
}

struct IsoplanaticAngle {
    double rad = 0.0;
    double px = 0.0;
};

/// Isoplanatic angle with the path weighted by distance from the aperture:
///   theta0 = [2.91 k^2 Int Cn^2(z) (L - z)^(5/3) dz]^(-3/5).
inline IsoplanaticAngle isoplanatic_angle(const OpticalConfig& cfg, const Cn2Profile& profile) {
    profile.validate_for_path(cfg.path_length_m);
    if (profile.is_zero())
        throw DataError("isoplanatic angle: zero-turbulence profile gives infinite angle");
    const double L = cfg.path_length_m;
    std::vector<double> breaks = {0.0, L};
    if (profile.kind() == Cn2Profile::Kind::Sampled) breaks = profile.sample_z();
    double integral = 0.0;
    for (std::size_t i = 1; i < breaks.size(); ++i) {
        GaussLegendre gl(32, breaks[i - 1], breaks[i]);
        for (int j = 0; j < 32; ++j) {
            const double z = gl.nodes[j];
            integral += gl.weights[j] * profile.value_at(z, L) * std::pow(L - z, 5.0 / 3.0);
        }
    }
    const double k = cfg.wavenumber();
    IsoplanaticAngle out;
    out.rad = std::pow(2.91 * k * k * integral, -3.0 / 5.0);
    out.px = out.rad / cfg.pixel_angle_rad;
    return out;
}

// ---------------------------------------------------------------------------
// Dense 1D tabulation
// ---------------------------------------------------------------------------

/// Tilt correlations tabulated on a uniform separation grid, pixel units
/// primary with the conversion factor retained.  Supports cubic interpolation
/// for the 2D autocorrelation mapping; no extrapolation beyond the grid.
struct TiltCorrelation1D {
    std::vector<double> separation_px;
    std::vector<double> r_par_px2;
    std::vector<double> r_perp_px2;
    std::vector<double> r_total_px2;
    double sigma_t2_px2 = 0.0;
    double sigma_t2_rad2 = 0.0;
    double pixel_angle_rad = 0.0;
    double step_px = 0.0;

    /// Largest separation interpolate() accepts (one interior node spare for
    /// the cubic stencil).
    double max_separation_px() const {
        return separation_px.size() >= 2 ? separation_px[separation_px.size() - 2] : 0.0;
    }

    double par_at(double d_px) const { return interpolate(r_par_px2, d_px); }
    double perp_at(double d_px) const { return interpolate(r_perp_px2, d_px); }
    double total_at(double d_px) const { return interpolate(r_total_px2, d_px); }

  private:
    /// Uniform-grid Catmull-Rom with even extension at zero separation.
    double interpolate(const std::vector<double>& y, double d) const {
        if (d < 0.0 || !(d <= max_separation_px()))
            throw DataError("tilt correlation: separation " + std::to_string(d) +
                            " px outside tabulated range");
        const double s = d / step_px;
        std::size_t j = static_cast<std::size_t>(s);
        if (j >= y.size() - 2 && j > 0) j = y.size() - 2;  // clamp at the spare node
        const double t = s - static_cast<double>(j);
        const auto pick = [&](std::ptrdiff_t i) {
            return i < 0 ? y[static_cast<std::size_t>(-i)] : y[static_cast<std::size_t>(i)];
        };
        const double p0 = pick(static_cast<std::ptrdiff_t>(j) - 1);
        const double p1 = y[j];
        const double p2 = y[j + 1];
        const double p3 = pick(static_cast<std::ptrdiff_t>(j) + 2);
        return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                      (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
    }
};

/// Tabulates parallel/perpendicular/total correlations over
/// [0, max_separation_px] at the given pixel step.  Grid points are evaluated
/// in parallel; quadrature failures propagate from the failing point.  Two
/// extra nodes pad the top so interpolation covers the requested range.
inline TiltCorrelation1D tabulate_correlations(const OpticalConfig& cfg,
                                               const Cn2Profile& profile,
                                               double max_separation_px, double step_px = 0.25,
                                               const QuadratureSpec& q = {}) {
    if (max_separation_px < 0.0 || step_px <= 0.0)
        throw DataError("tabulate correlations: need max >= 0 and step > 0");
    const auto shape = detail::make_shape(profile, cfg.path_length_m);
    const std::size_t n = static_cast<std::size_t>(std::ceil(max_separation_px / step_px)) + 3;

    TiltCorrelation1D out;
    out.pixel_angle_rad = cfg.pixel_angle_rad;
    out.step_px = step_px;
    out.separation_px.resize(n);
    out.r_par_px2.resize(n);
    out.r_perp_px2.resize(n);
    out.r_total_px2.resize(n);

    const double xi = cfg.pixel_angle_rad;
    parallel_for(n, [&](std::size_t i) {
        const double x = static_cast<double>(i) * step_px;
        const auto v = detail::tilt_correlations_cached(cfg, shape, x * xi, q);
        out.separation_px[i] = x;
        out.r_par_px2[i] = v.par / (xi * xi);
        out.r_perp_px2[i] = v.perp / (xi * xi);
        out.r_total_px2[i] = v.total / (xi * xi);
    });
    out.sigma_t2_px2 = out.r_par_px2[0];
    out.sigma_t2_rad2 = out.r_par_px2[0] * xi * xi;
    return out;
}

}  // namespace turbmit
