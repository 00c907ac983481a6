#include <gtest/gtest.h>

#include "support/test_common.hpp"
#include "turbmit/autocorr2d.hpp"

using namespace turbmit;
using testsupport::canonical_optics;

namespace {

const OpticalConfig kOptics = canonical_optics();
const Cn2Profile kLevel1 = Cn2Profile::constant(0.1e-15);

const TiltCorrelation1D& table() {
    static const TiltCorrelation1D tab = tabulate_correlations(kOptics, kLevel1, 16.0, 0.25);
    return tab;
}

}  // namespace

TEST(LagVector, Geometry) {
    EXPECT_DOUBLE_EQ((LagVector{0, 0}).distance(), 0.0);
    EXPECT_DOUBLE_EQ((LagVector{3, 4}).distance(), 5.0);
    EXPECT_DOUBLE_EQ((LagVector{0, 5}).angle(), std::numbers::pi / 2);
}

TEST(Autocorr, AxisCollapse) {
    // On-axis lags isolate a single radial function.
    EXPECT_DOUBLE_EQ(autocorr_xx({5, 0}, table()), table().par_at(5.0));
    EXPECT_DOUBLE_EQ(autocorr_xx({0, 5}, table()), table().perp_at(5.0));
    EXPECT_DOUBLE_EQ(autocorr_yy({5, 0}, table()), table().perp_at(5.0));
    EXPECT_DOUBLE_EQ(autocorr_yy({0, 5}, table()), table().par_at(5.0));
}

TEST(Autocorr, ZeroLagIsVariance) {
    EXPECT_DOUBLE_EQ(autocorr_xx({0, 0}, table()), table().sigma_t2_px2);
    EXPECT_DOUBLE_EQ(autocorr_yy({0, 0}, table()), table().sigma_t2_px2);
}

TEST(Autocorr, ProjectionWeightsAt345) {
    const double expected_xx = 0.36 * table().par_at(5.0) + 0.64 * table().perp_at(5.0);
    const double expected_yy = 0.64 * table().par_at(5.0) + 0.36 * table().perp_at(5.0);
    EXPECT_NEAR(autocorr_xx({3, 4}, table()), expected_xx, 1e-12 * expected_xx);
    EXPECT_NEAR(autocorr_yy({3, 4}, table()), expected_yy, 1e-12 * expected_yy);
}

TEST(Autocorr, AxisSwapSymmetry) {
    for (int n1 = -6; n1 <= 6; n1 += 2)
        for (int n2 = -5; n2 <= 5; ++n2)
            EXPECT_DOUBLE_EQ(autocorr_yy({n1, n2}, table()), autocorr_xx({n2, n1}, table()));
}

TEST(CrossCorr, ZeroOnAxes) {
    EXPECT_EQ(crosscorr_xy({7, 0}, table()), 0.0);
    EXPECT_EQ(crosscorr_xy({0, 7}, table()), 0.0);
    EXPECT_EQ(crosscorr_xy({0, 0}, table()), 0.0);
}

TEST(CrossCorr, DiagonalHalfDifference) {
    for (int k : {2, 5, 9}) {
        const double d = k * std::numbers::sqrt2;
        const double expected = 0.5 * (table().par_at(d) - table().perp_at(d));
        EXPECT_NEAR(crosscorr_xy({k, k}, table()), expected, 1e-12 * std::abs(expected) + 1e-18);
    }
}

TEST(CrossCorr, NonPositiveOffAxisForCanonicalOptics) {
    // The perpendicular correlation dominates here, so off-axis
    // cross-correlation in the first quadrant cannot be positive.
    for (int n1 = 1; n1 <= 10; ++n1)
        for (int n2 = 1; n2 <= 10; ++n2)
            EXPECT_LE(crosscorr_xy({n1, n2}, table()), 1e-15);
}

TEST(AutocorrGrid, InvariantsHold) {
    const TiltAutocorr2D g = build_autocorr_grid(table(), 8);
    EXPECT_DOUBLE_EQ(g.t(0, 0), 2.0 * g.sigma_t2_px2);
    for (int n1 = -8; n1 <= 8; ++n1)
        for (int n2 = -8; n2 <= 8; ++n2) {
            EXPECT_DOUBLE_EQ(g.t(n1, n2), g.xx(n1, n2) + g.yy(n1, n2));
            EXPECT_DOUBLE_EQ(g.xx(n1, n2), g.xx(-n1, -n2));
            EXPECT_DOUBLE_EQ(g.yy(n1, n2), g.yy(-n1, -n2));
            EXPECT_DOUBLE_EQ(g.xy(n1, n2), g.xy(-n1, -n2));
            EXPECT_DOUBLE_EQ(g.xx(n1, n2), g.yy(n2, n1));
        }
}

TEST(AutocorrGrid, RotationInvarianceOfTotal) {
    // Lags sharing a distance share the total correlation.
    const TiltAutocorr2D g = build_autocorr_grid(table(), 10);
    const double t34 = g.t(3, 4);
    const double t43 = g.t(4, 3);
    const double t50 = g.t(5, 0);
    const double t05 = g.t(0, 5);
    EXPECT_NEAR(t34 / t50, 1.0, 1e-9);
    EXPECT_NEAR(t43 / t50, 1.0, 1e-9);
    EXPECT_NEAR(t05 / t50, 1.0, 1e-9);
}

TEST(AutocorrGrid, SpotCheckAgainstDirectQuadrature) {
    // Independent route: the combined-axis kernel at the lag distance.
    const TiltAutocorr2D g = build_autocorr_grid(table(), 10);
    const double xi = kOptics.pixel_angle_rad;
    const int lags[][2] = {{1, 2}, {4, 4}, {7, 1}, {0, 9}, {6, 8}, {10, 0},
                           {2, 7}, {5, 5}, {9, 3}, {3, 1}};
    for (const auto& lag : lags) {
        const double d = std::hypot(lag[0], lag[1]);
        const double direct = tilt_corr_total(kOptics, kLevel1, xi * d) / (xi * xi);
        EXPECT_NEAR(g.t(lag[0], lag[1]) / direct, 1.0, 2e-4)
            << "lag (" << lag[0] << ", " << lag[1] << ")";
    }
}

TEST(AutocorrGrid, OutOfRangeLagRejected) {
    const TiltAutocorr2D g = build_autocorr_grid(table(), 4);
    EXPECT_TRUE(g.contains(4, -4));
    EXPECT_FALSE(g.contains(5, 0));
    // interpolation beyond the tabulated radial range must throw, not
    // extrapolate
    EXPECT_THROW(autocorr_xx({40, 40}, table()), DataError);
    EXPECT_THROW(build_autocorr_grid(kOptics, kLevel1, -1), DataError);
}
