#include <gtest/gtest.h>

#include "support/test_common.hpp"
#include "turbmit/tilt_stats.hpp"

using namespace turbmit;
using testsupport::canonical_optics;
using testsupport::expect_rel_near;

namespace {

const OpticalConfig kOptics = canonical_optics();
const Cn2Profile kLevel1 = Cn2Profile::constant(0.1e-15);

double xi2() { return kOptics.pixel_angle_rad * kOptics.pixel_angle_rad; }

}  // namespace

TEST(OpticalConfig, DerivesAndValidates) {
    OpticalConfig cfg = kOptics;
    EXPECT_NEAR(cfg.f_number, 1.2 / 0.2034, 1e-9);
    EXPECT_NEAR(cfg.pixel_angle_rad, 1.5488e-6 / 1.2, 1e-15);

    OpticalConfig bad = cfg;
    bad.f_number = cfg.f_number * (1.0 + 1e-4);
    EXPECT_THROW(bad.validate(), DataError);

    OpticalConfig bad2 = cfg;
    bad2.pixel_angle_rad = cfg.pixel_angle_rad * (1.0 + 1e-4);
    EXPECT_THROW(bad2.validate(), DataError);

    OpticalConfig bad3 = cfg;
    bad3.wavelength_m = -1.0;
    EXPECT_THROW(bad3.validate(), DataError);
}

TEST(Cn2Profile, ValidationAndEvaluation) {
    EXPECT_THROW(Cn2Profile::constant(-1e-16), DataError);
    EXPECT_THROW(Cn2Profile::sampled({0.0, 1.0}, {1e-15}), DataError);
    EXPECT_THROW(Cn2Profile::sampled({0.0, 0.0}, {1e-15, 1e-15}), DataError);

    const Cn2Profile lin = Cn2Profile::linear(2e-15, 0.0);
    EXPECT_DOUBLE_EQ(lin.value_at(0.0, 7000.0), 2e-15);
    EXPECT_DOUBLE_EQ(lin.value_at(3500.0, 7000.0), 1e-15);
    EXPECT_NEAR(lin.mean_value(7000.0), 1e-15, 1e-25);

    const Cn2Profile samp = Cn2Profile::sampled({0.0, 3500.0, 7000.0}, {1e-15, 2e-15, 1e-15});
    EXPECT_DOUBLE_EQ(samp.value_at(1750.0, 7000.0), 1.5e-15);
    samp.validate_for_path(7000.0);
    EXPECT_THROW(samp.validate_for_path(8000.0), DataError);
}

TEST(TiltCorrelations, VarianceMatchesReferenceLevel1) {
    // Reference one-axis tilt variance 0.8147 px^2 at the first level.
    const double v = tilt_corr_parallel(kOptics, kLevel1, 0.0);
    expect_rel_near(v / xi2(), 0.8147, 0.01, "sigma_T^2");
}

TEST(TiltCorrelations, ZeroTurbulenceGivesZero) {
    const Cn2Profile zero = Cn2Profile::constant(0.0);
    EXPECT_EQ(tilt_corr_parallel(kOptics, zero, 0.0), 0.0);
    EXPECT_EQ(tilt_corr_perp(kOptics, zero, 50 * kOptics.pixel_angle_rad), 0.0);
    EXPECT_EQ(tilt_corr_total(kOptics, zero, 1e-5), 0.0);
}

TEST(TiltCorrelations, LinearInCn2) {
    const double base = tilt_corr_parallel(kOptics, kLevel1, 0.0);
    for (double mult : {2.0, 10.0, 20.0}) {
        const Cn2Profile scaled = Cn2Profile::constant(0.1e-15 * mult);
        const double v = tilt_corr_parallel(kOptics, scaled, 0.0);
        EXPECT_NEAR(v / (base * mult), 1.0, 1e-9) << "multiplier " << mult;
    }
}

TEST(TiltCorrelations, ParallelPerpendicularEqualAtZero) {
    const double par = tilt_corr_parallel(kOptics, kLevel1, 0.0);
    const double perp = tilt_corr_perp(kOptics, kLevel1, 0.0);
    const double total = tilt_corr_total(kOptics, kLevel1, 0.0);
    EXPECT_NEAR(par / perp, 1.0, 1e-6);
    EXPECT_NEAR(total / (2.0 * par), 1.0, 1e-6);
}

TEST(TiltCorrelations, PerpendicularHigherOffAxis) {
    const double theta = 100.0 * kOptics.pixel_angle_rad;
    const double par = tilt_corr_parallel(kOptics, kLevel1, theta);
    const double perp = tilt_corr_perp(kOptics, kLevel1, theta);
    EXPECT_GT(perp, par);
}

TEST(TiltCorrelations, TotalEqualsDirectionalSum) {
    // Two independent evaluation routes: the combined-axis kernel versus the
    // sum of the directional kernels.
    const double theta = 50.0 * kOptics.pixel_angle_rad;
    const double total = tilt_corr_total(kOptics, kLevel1, theta);
    const double sum = tilt_corr_parallel(kOptics, kLevel1, theta) +
                       tilt_corr_perp(kOptics, kLevel1, theta);
    EXPECT_NEAR(total / sum, 1.0, 1e-6);
}

TEST(TiltCorrelations, NegativeSeparationRejected) {
    EXPECT_THROW(tilt_corr_parallel(kOptics, kLevel1, -1e-6), DataError);
}

TEST(TiltCorrelations, QuadratureConvergenceAtDefaults) {
    // Doubling every node count moves the results by far less than 1e-4
    // relative at the canonical configuration.
    QuadratureSpec coarse;
    coarse.convergence_check = false;
    QuadratureSpec fine = coarse.doubled();
    for (double sep_px : {0.0, 50.0, 300.0}) {
        const double theta = sep_px * kOptics.pixel_angle_rad;
        const double a = tilt_corr_parallel(kOptics, kLevel1, theta, coarse);
        const double b = tilt_corr_parallel(kOptics, kLevel1, theta, fine);
        EXPECT_NEAR(a / b, 1.0, 1e-4) << "separation " << sep_px;
    }
}

TEST(PixelScaling, DefinitionalConversions) {
    EXPECT_DOUBLE_EQ(tilt_corr_to_px2(xi2(), kOptics), 1.0);
    const double r = 0.8147 * xi2();
    expect_rel_near(tilt_corr_to_px2(r, kOptics), 0.8147, 1e-12);
    // round trip px -> rad -> px
    const double x = 123.25;
    EXPECT_NEAR(separation_to_px(separation_from_px(x, kOptics), kOptics), x, 1e-12 * x);
}

TEST(FriedParameter, ReferenceValues) {
    expect_rel_near(fried_parameter(kOptics, kLevel1), 0.1901, 0.005, "r0 level 1");
    expect_rel_near(fried_parameter(kOptics, Cn2Profile::constant(2e-15)), 0.0315, 0.005,
                    "r0 level 6");
}

TEST(FriedParameter, PowerLawScaling) {
    const double r1 = fried_parameter(kOptics, kLevel1);
    const double c = 7.3;
    const double rc = fried_parameter(kOptics, Cn2Profile::constant(0.1e-15 * c));
    EXPECT_NEAR(rc / (r1 * std::pow(c, -3.0 / 5.0)), 1.0, 1e-9);
}

TEST(FriedParameter, ZeroProfileRejected) {
    EXPECT_THROW(fried_parameter(kOptics, Cn2Profile::constant(0.0)), DataError);
    EXPECT_THROW(isoplanatic_angle(kOptics, Cn2Profile::constant(0.0)), DataError);
}

TEST(IsoplanaticAngle, ReferenceValues) {
    expect_rel_near(isoplanatic_angle(kOptics, kLevel1).px, 6.6174, 0.01, "theta0 level 1");
    expect_rel_near(isoplanatic_angle(kOptics, Cn2Profile::constant(2e-15)).px, 1.0966, 0.01,
                    "theta0 level 6");
}

TEST(IsoplanaticAngle, PowerLawScaling) {
    const double t1 = isoplanatic_angle(kOptics, kLevel1).rad;
    const double c = 4.1;
    const double tc = isoplanatic_angle(kOptics, Cn2Profile::constant(0.1e-15 * c)).rad;
    EXPECT_NEAR(tc / (t1 * std::pow(c, -3.0 / 5.0)), 1.0, 1e-9);
}

TEST(RmsTilt, ConsistentWithVariance) {
    const double var_px2 = tilt_corr_to_px2(tilt_corr_parallel(kOptics, kLevel1, 0.0), kOptics);
    expect_rel_near(std::sqrt(var_px2), 0.9026, 1e-2, "rms tilt");
}

TEST(Tabulation, GridConsistency) {
    const TiltCorrelation1D tab = tabulate_correlations(kOptics, kLevel1, 20.0, 0.25);
    EXPECT_DOUBLE_EQ(tab.r_par_px2[0], tab.sigma_t2_px2);
    // total row equals the sum of the directional rows
    for (std::size_t i = 0; i < tab.separation_px.size(); i += 7) {
        EXPECT_NEAR(tab.r_total_px2[i] / (tab.r_par_px2[i] + tab.r_perp_px2[i]), 1.0, 1e-6);
    }
    // every tabulated value bounded by the zero-separation value
    for (std::size_t i = 0; i < tab.separation_px.size(); ++i) {
        EXPECT_LE(tab.r_par_px2[i], tab.sigma_t2_px2 * (1.0 + 1e-9));
        EXPECT_LE(tab.r_perp_px2[i], tab.sigma_t2_px2 * (1.0 + 1e-9));
    }
}

TEST(Tabulation, InterpolationMatchesDirectQuadrature) {
    const TiltCorrelation1D tab = tabulate_correlations(kOptics, kLevel1, 20.0, 0.25);
    // off-node separations; the cubic interpolant must track the quadrature
    // within the declared 1e-4 relative budget
    for (double d : {0.37, 3.141, 7.77, 12.9, 18.06}) {
        const double direct =
            tilt_corr_parallel(kOptics, kLevel1, d * kOptics.pixel_angle_rad) / xi2();
        EXPECT_NEAR(tab.par_at(d) / direct, 1.0, 1e-4) << "separation " << d;
    }
}

TEST(Tabulation, OutOfRangeRejected) {
    const TiltCorrelation1D tab = tabulate_correlations(kOptics, kLevel1, 10.0, 0.25);
    EXPECT_NO_THROW(tab.par_at(10.0));
    EXPECT_THROW(tab.par_at(10.8), DataError);
    EXPECT_THROW(tab.par_at(-0.5), DataError);
    EXPECT_THROW(tabulate_correlations(kOptics, kLevel1, -1.0), DataError);
    EXPECT_THROW(tabulate_correlations(kOptics, kLevel1, 10.0, 0.0), DataError);
}

TEST(Tabulation, LevelProportionality) {
    // The six standard levels are exact multiples of level 1 in the model.
    const double base = tilt_corr_parallel(kOptics, kLevel1, 0.0) / xi2();
    const double mults[6] = {1.0, 2.5, 5.0, 10.0, 15.0, 20.0};
    const double cn2s[6] = {0.1e-15, 0.25e-15, 0.5e-15, 1.0e-15, 1.5e-15, 2.0e-15};
    for (int i = 0; i < 6; ++i) {
        const double v = tilt_corr_parallel(kOptics, Cn2Profile::constant(cn2s[i]), 0.0) / xi2();
        EXPECT_NEAR(v / (base * mults[i]), 1.0, 1e-9) << "level " << i + 1;
    }
}

TEST(Quadrature, GaussLegendreExactForPolynomials) {
    const GaussLegendre gl(8, 0.0, 2.0);
    double acc = 0.0;
    for (int i = 0; i < 8; ++i) acc += gl.weights[i] * std::pow(gl.nodes[i], 7);
    EXPECT_NEAR(acc, std::pow(2.0, 8) / 8.0, 1e-12);  // integral of x^7 over [0,2]
}
