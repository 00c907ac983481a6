#include <gtest/gtest.h>

#include "support/test_common.hpp"
#include "support/test_scene.hpp"
#include "turbmit/fried.hpp"
#include "turbmit/otf.hpp"
#include "turbmit/rng.hpp"

using namespace turbmit;
using testsupport::canonical_optics;
using testsupport::expect_rel_near;

namespace {

const OpticalConfig kOptics = canonical_optics();

RadialProfile gaussian_profile(double sigma_cyc_per_m, int bins, double pitch,
                               double noise_level = 0.0, Rng* rng = nullptr) {
    RadialProfile p;
    for (int i = 1; i <= bins; ++i) {
        const double cpp = static_cast<double>(i) / 512.0;
        const double rho = cpp / pitch;
        double v = std::exp(-rho * rho / (2.0 * sigma_cyc_per_m * sigma_cyc_per_m));
        if (rng) v *= 1.0 + noise_level * rng->gaussian();
        p.radius_cyc_per_px.push_back(cpp);
        p.radius_cyc_per_m.push_back(rho);
        p.median_ratio.push_back(v);
        p.sample_count.push_back(64);
    }
    return p;
}

}  // namespace

TEST(TukeyWindow, Limits) {
    const Image rect = tukey_window_2d(8, 8, 0.0);
    for (double v : rect.data) EXPECT_DOUBLE_EQ(v, 1.0);

    // taper 1 is the Hann limit
    const int n = 33;
    const Image hann = tukey_window_2d(n, 1, 1.0);
    for (int i = 0; i < n; ++i) {
        const double expected =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
        EXPECT_NEAR(hann.at(i, 0), expected, 1e-12);
    }
    EXPECT_THROW(tukey_window_2d(8, 8, 1.5), DataError);
}

TEST(TukeyWindow, FlipSymmetric) {
    const Image w = tukey_window_2d(21, 34, 0.25);
    for (int y = 0; y < w.height; ++y)
        for (int x = 0; x < w.width; ++x) {
            EXPECT_DOUBLE_EQ(w.at(y, x), w.at(w.height - 1 - y, x));
            EXPECT_DOUBLE_EQ(w.at(y, x), w.at(y, w.width - 1 - x));
        }
    EXPECT_DOUBLE_EQ(*std::max_element(w.data.begin(), w.data.end()), 1.0);
}

TEST(ShortSpectrum, IdenticalFramesAndScaling) {
    const Image scene = testsupport::make_scene(64, 64, 3);
    const Image window = tukey_window_2d(64, 64, 0.25);
    const std::vector<Image> frames(5, scene);
    const Image mean5 = mean_short_exposure_spectrum(frames, window);
    const Image one = mean_short_exposure_spectrum({scene}, window);
    for (std::size_t i = 0; i < mean5.data.size(); ++i)
        EXPECT_NEAR(mean5.data[i], one.data[i], 1e-9 * one.data[i] + 1e-12);

    Image scaled = scene;
    for (double& v : scaled.data) v *= 3.0;
    const Image spec_scaled = mean_short_exposure_spectrum({scaled}, window);
    for (std::size_t i = 0; i < spec_scaled.data.size(); i += 97)
        EXPECT_NEAR(spec_scaled.data[i], 3.0 * one.data[i], 1e-9 * one.data[i] + 1e-12);

    EXPECT_THROW(mean_short_exposure_spectrum({Image(32, 32, 0.0)}, tukey_window_2d(32, 32, 0.25)),
                 DataError);
}

TEST(ShortSpectrum, WhiteNoiseApproximatelyFlat) {
    Rng rng(99);
    std::vector<Image> frames;
    for (int k = 0; k < 24; ++k) {
        Image f(64, 64);
        for (double& v : f.data) v = rng.gaussian();
        frames.push_back(std::move(f));
    }
    const Image window = tukey_window_2d(64, 64, 0.0);
    const Image spec = mean_short_exposure_spectrum(frames, window);
    // compare ring medians away from DC; flat to ~15%
    RatioField unit;
    unit.ratio = spec;
    unit.valid = Image(64, 64, 1.0);
    const RadialProfile prof = radial_median_profile(unit, 1.0);
    double lo = 1e300, hi = 0.0;
    for (std::size_t i = 0; i < prof.median_ratio.size(); ++i) {
        if (prof.radius_cyc_per_px[i] < 0.08) continue;
        lo = std::min(lo, prof.median_ratio[i]);
        hi = std::max(hi, prof.median_ratio[i]);
    }
    EXPECT_LT(hi / lo, 1.35);
}

TEST(LongSpectrum, StaticFramesMatchShort) {
    const Image scene = testsupport::make_scene(64, 64, 4);
    const Image window = tukey_window_2d(64, 64, 0.25);
    ImageSequence seq;
    seq.optics = kOptics;
    seq.frames.assign(4, scene);
    RegistrationSpec none;
    const Image ls = long_exposure_spectrum(seq, none, window);
    const Image ss = mean_short_exposure_spectrum(seq.frames, window);
    for (std::size_t i = 0; i < ls.data.size(); i += 13)
        EXPECT_NEAR(ls.data[i], ss.data[i], 1e-9 * ss.data[i] + 1e-12);
}

TEST(LongSpectrum, GlobalRegistrationRecoversShiftedCopies) {
    const Image scene = testsupport::make_scene(96, 96, 5);
    const Image window = tukey_window_2d(96, 96, 0.25);
    ImageSequence seq;
    seq.optics = kOptics;
    const double shifts[][2] = {{0.0, 0.0}, {2.0, -1.0}, {-1.6, 0.8}, {0.4, 2.4}};
    for (const auto& s : shifts) seq.frames.push_back(dewarp_rigid(scene, s[0], s[1]));

    RegistrationSpec global;
    global.kind = RegistrationSpec::Kind::Global;
    const Image reg = long_exposure_spectrum(seq, global, window);
    const Image one = mean_short_exposure_spectrum({scene}, window);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < reg.data.size(); ++i) {
        num += (reg.data[i] - one.data[i]) * (reg.data[i] - one.data[i]);
        den += one.data[i] * one.data[i];
    }
    EXPECT_LT(std::sqrt(num / den), 0.01);  // 1% RMS

    // Without registration the shifted average loses high frequencies.
    RegistrationSpec none;
    const Image unreg = long_exposure_spectrum(seq, none, window);
    double hi_reg = 0.0, hi_unreg = 0.0;
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) {
            const double fy = (y - 48) / 96.0, fx = (x - 48) / 96.0;
            if (std::hypot(fx, fy) > 0.2) {
                hi_reg += reg.at(y, x);
                hi_unreg += unreg.at(y, x);
            }
        }
    EXPECT_LT(hi_unreg, 0.9 * hi_reg);
}

TEST(SpectralRatio, IdentityAndCancellation) {
    const Image scene = testsupport::make_scene(64, 64, 6);
    const Image window = tukey_window_2d(64, 64, 0.25);
    const Image spec = mean_short_exposure_spectrum({scene}, window);
    const RatioField unit = spectral_ratio(spec, spec);
    for (std::size_t i = 0; i < unit.ratio.data.size(); ++i)
        if (unit.valid.data[i] != 0.0) EXPECT_NEAR(unit.ratio.data[i], 1.0, 1e-12);

    // analytic cancellation: (H_alpha |Z|) / (H_1 |Z|) = G_alpha
    const double r0 = 0.0478;
    const double alpha = 0.3;
    Image num(64, 64), den(64, 64);
    const double pitch = kOptics.pixel_pitch_m;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const double fy = (y - 32) / (64.0 * pitch);
            const double fx = (x - 32) / (64.0 * pitch);
            const double rho = std::hypot(fx, fy);
            const double z = 1.0 + spec.at(y, x);
            den.at(y, x) = otf_combined(rho, kOptics, r0, 1.0) * z;
            num.at(y, x) = otf_combined(rho, kOptics, r0, alpha) * z;
        }
    const RatioField rf = spectral_ratio(num, den);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (rf.valid.at(y, x) == 0.0) continue;
            const double fy = (y - 32) / (64.0 * pitch);
            const double fx = (x - 32) / (64.0 * pitch);
            const double g = gaussian_tilt_otf(std::hypot(fx, fy), kOptics, r0, alpha);
            EXPECT_NEAR(rf.ratio.at(y, x), g, 1e-10);
        }

    // true zeros in the short spectrum invalidate bins
    Image zeroed = den;
    zeroed.at(5, 7) = 0.0;
    const RatioField masked = spectral_ratio(num, zeroed);
    EXPECT_EQ(masked.valid.at(5, 7), 0.0);
}

TEST(RadialProfile, IsotropicRecoveryAndRobustness) {
    const int n = 128;
    RatioField f;
    f.ratio = Image(n, n);
    f.valid = Image(n, n, 1.0);
    auto g = [](double r_bins) { return std::exp(-r_bins * r_bins / (2.0 * 900.0)); };
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            f.ratio.at(y, x) = g(std::hypot(y - n / 2, x - n / 2));
    // single outlier per ring cannot move the median
    f.ratio.at(n / 2, n / 2 + 10) = 1.5;
    const double pitch = 2e-6;
    const RadialProfile p = radial_median_profile(f, pitch);
    ASSERT_GT(p.median_ratio.size(), 20u);
    EXPECT_EQ(p.sample_count[0] >= 8, true);
    for (std::size_t i = 0; i < p.median_ratio.size(); ++i) {
        const double rb = p.radius_cyc_per_px[i] * n;
        if (rb > 40) break;
        EXPECT_NEAR(p.median_ratio[i], g(rb), 0.02) << "ring " << rb;
        EXPECT_DOUBLE_EQ(p.radius_cyc_per_m[i], p.radius_cyc_per_px[i] / pitch);
    }
}

TEST(RadialProfile, AnisotropicBounded) {
    const int n = 64;
    RatioField f;
    f.ratio = Image(n, n);
    f.valid = Image(n, n, 1.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double a = std::atan2(y - n / 2, x - n / 2);
            f.ratio.at(y, x) = 0.6 + 0.3 * std::cos(2.0 * a);
        }
    const RadialProfile p = radial_median_profile(f, 1.0);
    for (double v : p.median_ratio) {
        EXPECT_GE(v, 0.3 - 1e-12);
        EXPECT_LE(v, 0.9 + 1e-12);
    }
}

TEST(GaussianFit, NoiselessRecovery) {
    const double pitch = kOptics.pixel_pitch_m;
    for (double sigma : {3.5e4, 8.0e4, 1.2e5}) {
        const RadialProfile p = gaussian_profile(sigma, 200, pitch);
        const GaussianFit fit = fit_gaussian_sigma(p, 0.02 / pitch, 0.35 / pitch);
        expect_rel_near(fit.sigma, sigma, 1e-3, "noiseless sigma");
    }
}

TEST(GaussianFit, NoisyRecoveryMonteCarlo) {
    const double pitch = kOptics.pixel_pitch_m;
    const double sigma = 6.0e4;
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const RadialProfile p = gaussian_profile(sigma, 200, pitch, 0.01, &rng);
        const GaussianFit fit = fit_gaussian_sigma(p, 0.02 / pitch, 0.35 / pitch);
        worst = std::max(worst, std::abs(fit.sigma / sigma - 1.0));
    }
    EXPECT_LT(worst, 0.02);
}

TEST(GaussianFit, FailureModes) {
    const double pitch = kOptics.pixel_pitch_m;
    RadialProfile flat = gaussian_profile(1e5, 200, pitch);
    for (double& v : flat.median_ratio) v = 1.0;
    EXPECT_THROW(fit_gaussian_sigma(flat, 0.02 / pitch, 0.35 / pitch), NumericalError);

    const RadialProfile tiny = gaussian_profile(1e5, 3, pitch);
    EXPECT_THROW(fit_gaussian_sigma(tiny, 0.0, 1.0 / pitch), DataError);
}

TEST(R0FromSigma, RoundTripAndScaling) {
    // exact algebraic inverse of the spectral-width relation
    const double r0 = 0.0478;
    const double sigma = std::sqrt(tilt_otf_spectral_variance(kOptics, r0, 0.0));
    EXPECT_NEAR(r0_from_sigma(sigma, 0.0, kOptics) / r0, 1.0, 1e-12);

    // alpha rescales the estimate by (1 - alpha)^(3/5)
    const double base = r0_from_sigma(1.0e5, 0.0, kOptics);
    const double compensated = r0_from_sigma(1.0e5, 0.5252, kOptics);
    EXPECT_NEAR(compensated / base, 0.6397, 5e-4);

    expect_rel_near(r0_from_sigma(1.164e5, 0.0, kOptics), 0.1901, 2e-3, "r0(1.164e5)");
    EXPECT_THROW(r0_from_sigma(1.0e5, 1.0, kOptics), DataError);
    EXPECT_THROW(r0_from_sigma(0.0, 0.0, kOptics), DataError);
}

TEST(RegistrationAlpha, PerKind) {
    RegistrationSpec none;
    EXPECT_DOUBLE_EQ(registration_alpha(kOptics, none, 64, 64), 0.0);

    RegistrationSpec bma;
    bma.kind = RegistrationSpec::Kind::Bma;
    bma.patch_half_width = 5;
    bma.error_to_signal = 1.0 / 12.0;
    const double direct =
        tilt_correction_factor(kOptics, Cn2Profile::constant(1e-15), 5, 1.0 / 12.0);
    EXPECT_NEAR(registration_alpha(kOptics, bma, 64, 64), direct, 1e-12);

    RegistrationSpec global;
    global.kind = RegistrationSpec::Kind::Global;
    const double map_avg =
        global_alpha_map(kOptics, Cn2Profile::constant(1e-15), 10, 0.0).average;
    EXPECT_NEAR(registration_alpha(kOptics, global, 21, 21), map_avg, 1e-12);
}

TEST(EstimatePipeline, RigidShiftBlurClosedForm) {
    // Frames are rigid shifts of one scene drawn from a seeded Gaussian; the
    // stationary long/short ratio is then a Gaussian whose width follows
    // directly from the shift variance.
    const int n = 128;
    const Image scene = testsupport::make_scene(n, n, 8);
    ImageSequence seq;
    seq.optics = kOptics;
    Rng rng(31);
    const double shift_std = 1.6;
    double sum2 = 0.0;
    const int K = 48;
    for (int k = 0; k < K; ++k) {
        const double dy = shift_std * rng.gaussian();
        const double dx = shift_std * rng.gaussian();
        sum2 += 0.5 * (dy * dy + dx * dx);
        seq.frames.push_back(dewarp_rigid(scene, dy, dx));
    }
    const double realized_var = sum2 / K;  // per-axis sample variance

    RegistrationSpec none;
    EstimatorOptions opts;
    const SpectralRatioResult res = estimate_r0(seq, none, opts);
    const double sigma_m = std::sqrt(realized_var) * kOptics.pixel_pitch_m;
    const double expected_sigma_g = 1.0 / (2.0 * std::numbers::pi * sigma_m);
    EXPECT_NEAR(res.sigma_g_cyc_per_m / expected_sigma_g, 1.0, 0.06);
    EXPECT_GT(res.r0_m, 0.0);

    // intensity-scale invariance
    ImageSequence scaled = seq;
    for (Image& f : scaled.frames)
        for (double& v : f.data) v *= 7.25;
    const SpectralRatioResult res2 = estimate_r0(scaled, none, opts);
    EXPECT_NEAR(res2.r0_m / res.r0_m, 1.0, 1e-9);

    // purity: identical inputs give bit-identical outputs
    const SpectralRatioResult res3 = estimate_r0(seq, none, opts);
    EXPECT_EQ(res3.r0_m, res.r0_m);
    EXPECT_EQ(res3.sigma_g_cyc_per_m, res.sigma_g_cyc_per_m);

    // applying a larger alpha to the same data lowers the estimate
    const double r_a = r0_from_sigma(res.sigma_g_cyc_per_m, 0.0, kOptics);
    const double r_b = r0_from_sigma(res.sigma_g_cyc_per_m, 0.4, kOptics);
    const double r_c = r0_from_sigma(res.sigma_g_cyc_per_m, 0.8, kOptics);
    EXPECT_GT(r_a, r_b);
    EXPECT_GT(r_b, r_c);
}

TEST(EstimatePipeline, RequiresTwoFrames) {
    ImageSequence seq;
    seq.optics = kOptics;
    seq.frames.push_back(testsupport::make_scene(32, 32, 1));
    RegistrationSpec none;
    EXPECT_THROW(estimate_r0(seq, none), DataError);
}
