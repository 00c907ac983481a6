#include <gtest/gtest.h>

#include "support/test_common.hpp"
#include "support/test_scene.hpp"
#include "turbmit/synth.hpp"

using namespace turbmit;
using testsupport::canonical_optics;

namespace {

const OpticalConfig kOptics = canonical_optics();
const Cn2Profile kLevel4 = Cn2Profile::constant(1e-15);

const TiltFieldSynthesizer& synthesizer() {
    static const TiltFieldSynthesizer s(kOptics, kLevel4, 64, 64);
    return s;
}

}  // namespace

TEST(Synthesizer, ConstructionDiagnostics) {
    const TiltFieldSynthesizer& s = synthesizer();
    EXPECT_EQ(s.spectral_grid(), 512);
    EXPECT_LT(s.clamped_power_fraction(), 0.05);
    EXPECT_GT(s.clamped_power_fraction(), 0.0);
    const auto [vx, vy] = s.implied_axis_variances();
    const double sigma_t2 =
        tilt_corr_to_px2(tilt_corr_parallel(kOptics, kLevel4, 0.0), kOptics);
    // the factorization promises the exact lag-zero variance on average
    EXPECT_NEAR(0.5 * (vx + vy) / sigma_t2, 1.0, 1e-9);
}

TEST(Synthesizer, SeedReproducibilityAndVariation) {
    const auto [ax, ay] = synthesizer().generate(42);
    const auto [bx, by] = synthesizer().generate(42);
    ASSERT_EQ(ax.data.size(), bx.data.size());
    for (std::size_t i = 0; i < ax.data.size(); ++i) {
        EXPECT_EQ(ax.data[i], bx.data[i]);
        EXPECT_EQ(ay.data[i], by.data[i]);
    }
    const auto [cx, cy] = synthesizer().generate(43);
    double diff = 0.0;
    for (std::size_t i = 0; i < ax.data.size(); ++i) diff += std::abs(ax.data[i] - cx.data[i]);
    EXPECT_GT(diff, 1.0);
}

TEST(Synthesizer, OnAxisCrossCorrelationNearZero) {
    // r_xy vanishes on the axes; pooled empirical estimate stays within the
    // Monte-Carlo band.
    const int R = 80;
    double cross5 = 0.0, cross5_sq = 0.0, var = 0.0;
    for (int r = 0; r < R; ++r) {
        auto [fx, fy] = synthesizer().generate(500 + r);
        double c = 0.0, v = 0.0;
        std::size_t n = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x + 5 < 64; ++x) {
                c += fx.at(y, x) * fy.at(y, x + 5);
                v += fx.at(y, x) * fx.at(y, x);
                ++n;
            }
        cross5 += c / n;
        cross5_sq += (c / n) * (c / n);
        var += v / n;
    }
    cross5 /= R;
    cross5_sq /= R;
    var /= R;
    const double se = std::sqrt(std::max(cross5_sq - cross5 * cross5, 1e-30) / R);
    EXPECT_LT(std::abs(cross5), std::max(3.0 * se, 0.02 * var));
}

TEST(Synthesizer, TemporalIndependenceAcrossSubseeds) {
    // pooled lag-1 temporal correlation of per-pixel series
    const int K = 120;
    std::pair<Image, Image> prev = synthesizer().generate(Rng::substream(9, 0).next_u64());
    double num = 0.0, den = 0.0;
    for (int k = 1; k < K; ++k) {
        auto cur = synthesizer().generate(Rng::substream(9, 2 * k).next_u64());
        for (std::size_t i = 0; i < cur.first.data.size(); ++i) {
            num += prev.first.data[i] * cur.first.data[i];
            den += prev.first.data[i] * prev.first.data[i];
        }
        prev = std::move(cur);
    }
    EXPECT_LT(std::abs(num / den), 0.05);
}

TEST(Synthesizer, GridFormMatchesRadialForm) {
    // The sampled-lag-grid constructor feeds the same factorization; margin
    // beyond the field extent gives the covariance taper room to work.
    const TiltAutocorr2D grid = build_autocorr_grid(kOptics, kLevel4, 96);
    const TiltFieldSynthesizer from_grid(grid, 32, 32);
    EXPECT_LT(from_grid.clamped_power_fraction(), 0.05);
    const auto [fx, fy] = from_grid.generate(7);
    EXPECT_EQ(fx.height, 32);
    EXPECT_EQ(fy.width, 32);
    // a field pair from the one-shot helper matches the class output
    const auto [gx, gy] = synth_tilt_fields(grid, 32, 32, 7);
    for (std::size_t i = 0; i < fx.data.size(); ++i) {
        EXPECT_EQ(gx.data[i], fx.data[i]);
        EXPECT_EQ(gy.data[i], fy.data[i]);
    }
    // a minimal-margin grid cannot support a valid spectral factorization
    const TiltAutocorr2D tight = build_autocorr_grid(kOptics, kLevel4, 40);
    EXPECT_THROW(TiltFieldSynthesizer(tight, 40, 40), NumericalError);
    // grid must cover the field
    EXPECT_THROW(TiltFieldSynthesizer(tight, 64, 64), DataError);
}

TEST(WarpImage, IdentityConstantAndRoundTrip) {
    const Image scene = testsupport::make_scene(64, 64, 30);
    const Image zero(64, 64, 0.0);
    const Image same = warp_image(scene, zero, zero);
    for (std::size_t i = 0; i < scene.data.size(); ++i)
        EXPECT_DOUBLE_EQ(same.data[i], scene.data[i]);

    // constant field is a rigid shift: out(p) = img(p - v)
    const Image shifted = warp_image(scene, Image(64, 64, 2.0), Image(64, 64, 3.0));
    for (int y = 8; y < 56; ++y)
        for (int x = 8; x < 56; ++x)
            EXPECT_DOUBLE_EQ(shifted.at(y, x), scene.at(y - 3, x - 2));

    Image bad(64, 64, 0.0);
    bad.data[5] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(warp_image(scene, bad, zero), DataError);
    EXPECT_THROW(warp_image(scene, Image(32, 32, 0.0), zero), DataError);
}

TEST(WarpImage, WarpDewarpInteriorError) {
    // Smooth-field round trip on a band-limited scene (the approximation
    // degrades with the field gradient, so mild turbulence is used).
    Image scene(96, 96);
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x)
            scene.at(y, x) = 128.0 +
                             55.0 * std::sin(2.0 * std::numbers::pi * x / 36.0) *
                                 std::cos(2.0 * std::numbers::pi * y / 48.0) +
                             35.0 * std::cos(2.0 * std::numbers::pi * (x - y) / 60.0);
    auto [fx, fy] =
        TiltFieldSynthesizer(kOptics, Cn2Profile::constant(0.1e-15), 96, 96).generate(3);
    const Image warped = warp_image(scene, fx, fy);
    const Image restored = dewarp(warped, fy, fx);
    double acc = 0.0;
    std::size_t n = 0;
    const int margin = 10;
    for (int y = margin; y < 96 - margin; ++y)
        for (int x = margin; x < 96 - margin; ++x) {
            const double d = restored.at(y, x) - scene.at(y, x);
            acc += d * d;
            ++n;
        }
    EXPECT_LT(std::sqrt(acc / n), 0.015 * 235.0);
}

TEST(DegradeSequence, ZeroTurbulenceIsDiffractionOnly) {
    const Image scene = testsupport::make_scene(64, 64, 32);
    SynthConfig scfg;
    scfg.optics = kOptics;
    scfg.profile = Cn2Profile::constant(0.0);
    scfg.frame_count = 2;
    scfg.noise_sigma = 0.0;
    const SynthResult res = degrade_sequence(scene, scfg);
    EXPECT_TRUE(std::isinf(res.truth.r0_m));

    const ComplexImage otf = sample_otf_grid(64, 64, kOptics.pixel_pitch_m, [&](double rho) {
        return otf_diffraction(rho, kOptics);
    });
    ComplexImage F = fft::forward(scene);
    for (std::size_t i = 0; i < F.data.size(); ++i) F.data[i] *= otf.data[i];
    const Image expected = fft::inverse_real(std::move(F));
    for (std::size_t i = 0; i < expected.data.size(); ++i) {
        EXPECT_NEAR(res.sequence.frames[0].data[i], expected.data[i], 1e-9);
        EXPECT_EQ(res.sequence.frames[0].data[i], res.sequence.frames[1].data[i]);
    }
}

TEST(DegradeSequence, ReproducibleAndSeeded) {
    const Image scene = testsupport::make_scene(64, 64, 33);
    SynthConfig scfg;
    scfg.optics = kOptics;
    scfg.profile = kLevel4;
    scfg.frame_count = 3;
    scfg.seed = 123;
    const SynthResult a = degrade_sequence(scene, scfg);
    const SynthResult b = degrade_sequence(scene, scfg);
    for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < a.sequence.frames[k].data.size(); ++i)
            EXPECT_EQ(a.sequence.frames[k].data[i], b.sequence.frames[k].data[i]);

    scfg.seed = 124;
    const SynthResult c = degrade_sequence(scene, scfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < c.sequence.frames[0].data.size(); ++i)
        diff += std::abs(a.sequence.frames[0].data[i] - c.sequence.frames[0].data[i]);
    EXPECT_GT(diff, 1.0);

    EXPECT_EQ(a.truth.seed, 123u);
    EXPECT_GT(a.truth.sigma_t2_px2, 0.0);
    EXPECT_NEAR(a.truth.r0_m, 0.0478, 0.0005);
    EXPECT_THROW(degrade_sequence(Image(4, 4), scfg), DataError);
}

TEST(DegradeSequence, PerPixelTemporalShiftVariance) {
    // The warp fields seen by the frames carry the one-axis tilt variance.
    const int K = 160;
    const TiltFieldSynthesizer& s = synthesizer();
    const double sigma_t2 =
        tilt_corr_to_px2(tilt_corr_parallel(kOptics, kLevel4, 0.0), kOptics);
    double acc = 0.0;
    std::size_t n = 0;
    for (int k = 0; k < K; ++k) {
        auto [fx, fy] = s.generate(Rng::substream(77, 2 * k).next_u64());
        for (double v : fx.data) acc += v * v;
        for (double v : fy.data) acc += v * v;
        n += fx.data.size() + fy.data.size();
    }
    EXPECT_NEAR(acc / static_cast<double>(n) / sigma_t2, 1.0, 0.10);
}
