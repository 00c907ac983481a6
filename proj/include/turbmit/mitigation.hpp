#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "turbmit/core.hpp"
#include "turbmit/fft.hpp"
#include "turbmit/metrics.hpp"
#include "turbmit/otf.hpp"
#include "turbmit/parallel.hpp"
#include "turbmit/regmodel.hpp"

namespace turbmit {

/// Frame stack sharing one optical configuration.
struct ImageSequence {
    std::vector<Image> frames;
    OpticalConfig optics;

    void validate(std::size_t min_frames = 1) const {
        if (frames.size() < min_frames)
            throw DataError("sequence: need at least " + std::to_string(min_frames) + " frames");
        for (const Image& f : frames)
            if (!f.same_shape(frames.front()))
                throw DataError("sequence: frame dimensions differ");
        if (frames.front().height < 8 || frames.front().width < 8)
            throw DataError("sequence: frames must be at least 8x8");
    }
};

// ---------------------------------------------------------------------------
// Global (whole-frame) translational registration: integer normalized
// cross-correlation peak, then iterative gradient refinement to subpixel.
// The returned shift v satisfies frame(x) ~ reference(x - v); sampling the
// frame at x + v aligns it to the reference.
// ---------------------------------------------------------------------------

struct GlobalShift {
    double dx = 0.0;  // along width
    double dy = 0.0;  // along height
    bool low_confidence = false;  // second NCC peak within 1% of the best
    bool refined = true;          // false when gradient refinement diverged
};

namespace detail {

struct IntegralImage {
    int h, w;
    std::vector<double> sum;   // (h+1)x(w+1)
    std::vector<double> sum2;

    explicit IntegralImage(const Image& img) : h(img.height), w(img.width) {
        sum.assign(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
        sum2.assign(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = img.at(y, x);
                const std::size_t i = static_cast<std::size_t>(y + 1) * (w + 1) + (x + 1);
                sum[i] = v + sum[i - 1] + sum[i - (w + 1)] - sum[i - (w + 1) - 1];
                sum2[i] = v * v + sum2[i - 1] + sum2[i - (w + 1)] - sum2[i - (w + 1) - 1];
            }
    }

    // Inclusive rectangle [y0, y1] x [x0, x1].
    double box(const std::vector<double>& s, int y0, int y1, int x0, int x1) const {
        const std::size_t W1 = static_cast<std::size_t>(w + 1);
        return s[(y1 + 1) * W1 + (x1 + 1)] - s[y0 * W1 + (x1 + 1)] - s[(y1 + 1) * W1 + x0] +
               s[y0 * W1 + x0];
    }
    double box_sum(int y0, int y1, int x0, int x1) const { return box(sum, y0, y1, x0, x1); }
    double box_sum2(int y0, int y1, int x0, int x1) const { return box(sum2, y0, y1, x0, x1); }
};

/// Raw linear cross-correlation C(s) = sum_x frame(x + s) ref(x) for
/// |s_y| <= ry, |s_x| <= rx, via zero-padded FFTs.
inline std::vector<double> linear_crosscorr(const Image& frame, const Image& ref, int ry,
                                            int rx) {
    const int ph = frame.height + ry + 1;
    const int pw = frame.width + rx + 1;
    ComplexImage F(ph, pw), R(ph, pw);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            F.at(y, x) = frame.at(y, x);
            R.at(y, x) = ref.at(y, x);
        }
    fft::transform(F, true);
    fft::transform(R, true);
    for (std::size_t i = 0; i < F.data.size(); ++i)
        F.data[i] = F.data[i] * std::conj(R.data[i]);
    fft::transform(F, false);
    const double norm = 1.0 / (static_cast<double>(ph) * pw);
    // C(s) lives at padded index (s mod ph, s mod pw): frame correlated
    // against ref leaves shift s at bin s.
    std::vector<double> out(static_cast<std::size_t>(2 * ry + 1) * (2 * rx + 1));
    for (int sy = -ry; sy <= ry; ++sy)
        for (int sx = -rx; sx <= rx; ++sx) {
            const int by = (sy % ph + ph) % ph;
            const int bx = (sx % pw + pw) % pw;
            out[static_cast<std::size_t>(sy + ry) * (2 * rx + 1) + (sx + rx)] =
                F.at(by, bx).real() * norm;
        }
    return out;
}

}  // namespace detail

/// Integer-pixel ZNCC search.  `radius` 0 selects min(h, w)/4; radii that
/// would drop the overlap below 50% are rejected.
inline GlobalShift global_register_integer(const Image& frame, const Image& reference,
                                           int radius = 0) {
    if (!frame.same_shape(reference)) throw DataError("register: image shapes differ");
    const int h = frame.height, w = frame.width;
    if (radius <= 0) radius = std::max(1, std::min(h, w) / 4);
    const double overlap_frac = (1.0 - static_cast<double>(radius) / h) *
                                (1.0 - static_cast<double>(radius) / w);
    if (overlap_frac < 0.5)
        throw DataError("register: search radius leaves less than 50% overlap");

    const std::vector<double> cc = detail::linear_crosscorr(frame, reference, radius, radius);
    const detail::IntegralImage fi(frame), ri(reference);

    const int side = 2 * radius + 1;
    std::vector<double> ncc(static_cast<std::size_t>(side) * side,
                            -std::numeric_limits<double>::infinity());
    for (int sy = -radius; sy <= radius; ++sy) {
        for (int sx = -radius; sx <= radius; ++sx) {
            // Overlap rectangle in reference coordinates.
            const int y0 = std::max(0, -sy), y1 = std::min(h - 1, h - 1 - sy);
            const int x0 = std::max(0, -sx), x1 = std::min(w - 1, w - 1 - sx);
            const double n = static_cast<double>(y1 - y0 + 1) * (x1 - x0 + 1);
            const double sr = ri.box_sum(y0, y1, x0, x1);
            const double srr = ri.box_sum2(y0, y1, x0, x1);
            const double sf = fi.box_sum(y0 + sy, y1 + sy, x0 + sx, x1 + sx);
            const double sff = fi.box_sum2(y0 + sy, y1 + sy, x0 + sx, x1 + sx);
            const double c = cc[static_cast<std::size_t>(sy + radius) * side + (sx + radius)];
            const double num = c - sf * sr / n;
            const double den2 = (sff - sf * sf / n) * (srr - sr * sr / n);
            if (den2 <= 0.0) continue;
            ncc[static_cast<std::size_t>(sy + radius) * side + (sx + radius)] =
                num / std::sqrt(den2);
        }
    }

    int best = 0;
    for (int i = 1; i < side * side; ++i)
        if (ncc[i] > ncc[best]) best = i;
    const int by = best / side - radius;
    const int bx = best % side - radius;

    // Ambiguity: best peak vs the best value outside its 8-neighborhood.
    double second = -std::numeric_limits<double>::infinity();
    for (int sy = -radius; sy <= radius; ++sy)
        for (int sx = -radius; sx <= radius; ++sx) {
            if (std::abs(sy - by) <= 1 && std::abs(sx - bx) <= 1) continue;
            second = std::max(second, ncc[static_cast<std::size_t>(sy + radius) * side +
                                          (sx + radius)]);
        }
    GlobalShift out;
    out.dy = by;
    out.dx = bx;
    // Callers aggregate this flag; per-frame warnings would flood on long
    // low-texture stacks.
    out.low_confidence = std::isfinite(second) && ncc[best] > 0.0 &&
                         (ncc[best] - second) < 0.01 * std::abs(ncc[best]);
    return out;
}

/// Translational iterative-gradient refinement around an initial shift.
/// Gauss-Newton on the reference-image gradients with a backtracking line
/// search (the bilinearly sampled objective is only piecewise smooth, so an
/// undamped step oscillates around the optimum).  Returns `refined = false`
/// and the starting shift when 50 iterations do not converge.
inline GlobalShift refine_shift_gradient(const Image& frame, const Image& reference,
                                         GlobalShift start) {
    const int h = frame.height, w = frame.width;
    double vy = start.dy, vx = start.dx;
    bool converged = false;
    for (int iter = 0; iter < 50 && !converged; ++iter) {
        const int margin =
            static_cast<int>(std::ceil(std::max(std::abs(vy), std::abs(vx)))) + 3;
        const int y0 = margin, y1 = h - 1 - margin;
        const int x0 = margin, x1 = w - 1 - margin;
        if (y1 - y0 < 8 || x1 - x0 < 8)
            throw DataError("register: shift too large for the image interior");

        auto sse_at = [&](double sy, double sx) {
            double acc = 0.0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double e = frame.sample(y + sy, x + sx) - reference.at(y, x);
                    acc += e * e;
                }
            return acc;
        };

        double a11 = 0, a12 = 0, a22 = 0, g1 = 0, g2 = 0, current = 0;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double gx = 0.5 * (reference.at(y, x + 1) - reference.at(y, x - 1));
                const double gy = 0.5 * (reference.at(y + 1, x) - reference.at(y - 1, x));
                const double e = frame.sample(y + vy, x + vx) - reference.at(y, x);
                a11 += gx * gx;
                a12 += gx * gy;
                a22 += gy * gy;
                g1 += gx * e;
                g2 += gy * e;
                current += e * e;
            }
        }
        const double det = a11 * a22 - a12 * a12;
        if (std::abs(det) < 1e-12) break;
        double ddx = -(a22 * g1 - a12 * g2) / det;
        double ddy = -(-a12 * g1 + a11 * g2) / det;
        const double biggest = std::max(std::abs(ddx), std::abs(ddy));
        if (biggest > 1.5) {
            ddx *= 1.5 / biggest;
            ddy *= 1.5 / biggest;
        }
        bool accepted = false;
        for (int halve = 0; halve < 12; ++halve) {
            if (sse_at(vy + ddy, vx + ddx) <= current) {
                accepted = true;
                break;
            }
            ddx *= 0.5;
            ddy *= 0.5;
        }
        if (!accepted) {
            converged = true;  // no descent direction left at this resolution
            break;
        }
        vx += ddx;
        vy += ddy;
        converged = std::abs(ddx) < 1e-4 && std::abs(ddy) < 1e-4;
    }
    GlobalShift out = start;
    if (converged) {
        out.dx = vx;
        out.dy = vy;
        out.refined = true;
    } else {
        out.refined = false;
        warn("register: subpixel refinement did not converge; keeping integer shift");
    }
    return out;
}

/// Whole-frame registration: integer correlation peak plus subpixel
/// refinement.  Noiseless pure translations recover to better than 0.1 px.
inline GlobalShift global_register(const Image& frame, const Image& reference, int radius = 0) {
    return refine_shift_gradient(frame, reference, global_register_integer(frame, reference, radius));
}

// ---------------------------------------------------------------------------
// Block-matching registration
// ---------------------------------------------------------------------------

/// Per-block integer shifts on a regular tiling; block size (2M+1)^2 with
/// stride 2M+1 (edge blocks clamp to the image support).
struct ShiftField {
    int block_size = 0;
    std::vector<double> center_y;  // block center coordinates
    std::vector<double> center_x;
    int blocks_y = 0;
    int blocks_x = 0;
    std::vector<double> dy;  // per-block shifts, blocks_y x blocks_x
    std::vector<double> dx;
    int flat_blocks = 0;     // zero-variance blocks defaulted to zero shift
    bool subpixel = false;

    double block_dy(int by, int bx) const { return dy[static_cast<std::size_t>(by) * blocks_x + bx]; }
    double block_dx(int by, int bx) const { return dx[static_cast<std::size_t>(by) * blocks_x + bx]; }

    /// Bilinear interpolation of the block shifts to a dense per-pixel field
    /// (constant beyond the outer block centers).
    void to_dense(int h, int w, Image& field_y, Image& field_x) const {
        field_y = Image(h, w);
        field_x = Image(h, w);
        auto interp = [&](const std::vector<double>& v, double y, double x) {
            // locate in block-center coordinates
            auto locate = [](const std::vector<double>& centers, double p, int count) {
                if (count == 1) return std::pair<int, double>(0, 0.0);
                if (p <= centers.front()) return std::pair<int, double>(0, 0.0);
                if (p >= centers.back()) return std::pair<int, double>(count - 2, 1.0);
                int i = 0;
                while (i + 2 < count && centers[i + 1] <= p) ++i;
                return std::pair<int, double>(i, (p - centers[i]) / (centers[i + 1] - centers[i]));
            };
            const auto [iy, ty] = locate(center_y, y, blocks_y);
            const auto [ix, tx] = locate(center_x, x, blocks_x);
            auto at = [&](int by, int bx) {
                return v[static_cast<std::size_t>(by) * blocks_x + bx];
            };
            const int iy1 = blocks_y == 1 ? iy : iy + 1;
            const int ix1 = blocks_x == 1 ? ix : ix + 1;
            return (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix1)) +
                   ty * ((1 - tx) * at(iy1, ix) + tx * at(iy1, ix1));
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                field_y.at(y, x) = interp(dy, y, x);
                field_x.at(y, x) = interp(dx, y, x);
            }
    }
};

/// Exhaustive sum-of-absolute-differences search within +-S per block.
/// Candidate shifts are scanned in order of increasing magnitude so exact
/// ties resolve to the smallest displacement.
inline ShiftField bma_register(const Image& frame, const Image& prototype, int M, int S) {
    if (!frame.same_shape(prototype)) throw DataError("bma: image shapes differ");
    if (M < 1 || S < 1) throw DataError("bma: need M >= 1 and S >= 1");
    const int h = frame.height, w = frame.width;
    const int bs = 2 * M + 1;
    if (bs > h || bs > w) throw DataError("bma: block larger than the image");

    // Candidate offsets sorted by (|s|^2, sy, sx).
    std::vector<std::pair<int, int>> offsets;
    offsets.reserve(static_cast<std::size_t>(2 * S + 1) * (2 * S + 1));
    for (int sy = -S; sy <= S; ++sy)
        for (int sx = -S; sx <= S; ++sx) offsets.emplace_back(sy, sx);
    std::stable_sort(offsets.begin(), offsets.end(), [](auto a, auto b) {
        const int ra = a.first * a.first + a.second * a.second;
        const int rb = b.first * b.first + b.second * b.second;
        return ra != rb ? ra < rb : a < b;
    });

    ShiftField field;
    field.block_size = bs;
    field.blocks_y = (h + bs - 1) / bs;
    field.blocks_x = (w + bs - 1) / bs;
    field.dy.assign(static_cast<std::size_t>(field.blocks_y) * field.blocks_x, 0.0);
    field.dx.assign(field.dy.size(), 0.0);
    field.center_y.resize(field.blocks_y);
    field.center_x.resize(field.blocks_x);
    std::vector<int> flat_counts(field.blocks_y, 0);

    for (int by = 0; by < field.blocks_y; ++by)
        field.center_y[by] = std::min(by * bs, h - bs) + M;
    for (int bx = 0; bx < field.blocks_x; ++bx)
        field.center_x[bx] = std::min(bx * bs, w - bs) + M;

    parallel_for(static_cast<std::size_t>(field.blocks_y), [&](std::size_t row) {
        const int by = static_cast<int>(row);
        const int y0 = std::min(by * bs, h - bs);
        for (int bx = 0; bx < field.blocks_x; ++bx) {
            const int x0 = std::min(bx * bs, w - bs);
            // Flat prototype block: no texture to match.
            double mean = 0.0, var = 0.0;
            for (int y = 0; y < bs; ++y)
                for (int x = 0; x < bs; ++x) mean += prototype.at(y0 + y, x0 + x);
            mean /= bs * bs;
            for (int y = 0; y < bs; ++y)
                for (int x = 0; x < bs; ++x) {
                    const double d = prototype.at(y0 + y, x0 + x) - mean;
                    var += d * d;
                }
            if (var == 0.0) {
                ++flat_counts[by];
                continue;
            }
            double best_cost = std::numeric_limits<double>::infinity();
            int best_sy = 0, best_sx = 0;
            for (const auto& [sy, sx] : offsets) {
                double cost = 0.0;
                for (int y = 0; y < bs && cost < best_cost; ++y) {
                    const int fy = std::clamp(y0 + y + sy, 0, h - 1);
                    for (int x = 0; x < bs; ++x) {
                        const int fx = std::clamp(x0 + x + sx, 0, w - 1);
                        cost += std::abs(frame.at(fy, fx) - prototype.at(y0 + y, x0 + x));
                    }
                }
                if (cost < best_cost) {
                    best_cost = cost;
                    best_sy = sy;
                    best_sx = sx;
                }
            }
            field.dy[row * field.blocks_x + bx] = best_sy;
            field.dx[row * field.blocks_x + bx] = best_sx;
        }
    });
    field.flat_blocks = std::accumulate(flat_counts.begin(), flat_counts.end(), 0);
    if (field.flat_blocks > 0)
        warn("bma: " + std::to_string(field.flat_blocks) + " flat blocks defaulted to zero shift");
    return field;
}

// ---------------------------------------------------------------------------
// Resampling, fusion, restoration
// ---------------------------------------------------------------------------

/// Inverse-shift resampling: out(p) = frame(p + field(p)), bilinear with
/// replicated borders.
inline Image dewarp(const Image& frame, const Image& field_y, const Image& field_x) {
    if (!frame.same_shape(field_y) || !frame.same_shape(field_x))
        throw DataError("dewarp: field dimensions differ from frame");
    Image out(frame.height, frame.width);
    out.source_bit_depth = frame.source_bit_depth;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
            out.at(y, x) = frame.sample(y + field_y.at(y, x), x + field_x.at(y, x));
    return out;
}

inline Image dewarp(const Image& frame, const ShiftField& field) {
    Image fy, fx;
    field.to_dense(frame.height, frame.width, fy, fx);
    return dewarp(frame, fy, fx);
}

inline Image dewarp_rigid(const Image& frame, double dy, double dx) {
    Image out(frame.height, frame.width);
    out.source_bit_depth = frame.source_bit_depth;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) out.at(y, x) = frame.sample(y + dy, x + dx);
    return out;
}

/// Arithmetic mean in frame order.
inline Image fuse(const std::vector<Image>& frames) {
    if (frames.empty()) throw DataError("fuse: no frames");
    Image out(frames[0].height, frames[0].width);
    out.source_bit_depth = frames[0].source_bit_depth;
    for (const Image& f : frames) {
        if (!f.same_shape(out)) throw DataError("fuse: frame dimensions differ");
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += f.data[i];
    }
    const double inv = 1.0 / static_cast<double>(frames.size());
    for (double& v : out.data) v *= inv;
    return out;
}

/// Mean of the frames, optionally globally registered to the plain mean
/// first.  This long-exposure-like image seeds the block matching.
inline Image build_prototype(const ImageSequence& seq, bool global_registration) {
    seq.validate(1);
    Image mean = fuse(seq.frames);
    if (!global_registration) return mean;
    std::vector<Image> aligned(seq.frames.size());
    std::atomic<int> ambiguous{0};
    parallel_for(seq.frames.size(), [&](std::size_t i) {
        const GlobalShift s = global_register(seq.frames[i], mean);
        ambiguous += s.low_confidence;
        aligned[i] = dewarp_rigid(seq.frames[i], s.dy, s.dx);
    });
    if (int n = ambiguous.load(); n > 0)
        warn("register: ambiguous correlation peak on " + std::to_string(n) + " frame(s)");
    return fuse(aligned);
}

/// Frequency-domain Wiener restoration against the supplied OTF samples.
/// The output is clipped to [0, peak] as the final step.
inline Image wiener_restore(const Image& img, const ComplexImage& otf, double gamma,
                            double peak = 255.0) {
    if (gamma < 0.0) throw DataError("wiener: NSR must be >= 0");
    if (img.height != otf.height || img.width != otf.width)
        throw DataError("wiener: OTF grid does not match image");
    ComplexImage F = fft::forward(img);
    for (std::size_t i = 0; i < F.data.size(); ++i)
        F.data[i] *= wiener_gain(otf.data[i], gamma);
    fft::transform(F, false);
    Image out(img.height, img.width);
    out.source_bit_depth = img.source_bit_depth;
    const double norm = 1.0 / (static_cast<double>(img.height) * img.width);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(F.data[i].real() * norm, 0.0, peak);
    return out;
}

inline Image wiener_restore(const Image& img, const OpticalConfig& cfg, double r0_m,
                            double alpha, double gamma, double peak = 255.0) {
    const ComplexImage otf =
        sample_otf_grid(img.height, img.width, cfg.pixel_pitch_m,
                        [&](double rho) { return otf_combined(rho, cfg, r0_m, alpha); });
    return wiener_restore(img, otf, gamma, peak);
}

// ---------------------------------------------------------------------------
// Full block-matching + Wiener-filter mitigation pipeline
// ---------------------------------------------------------------------------

struct MitigationConfig {
    int bma_half_width = 10;       // M
    int search_radius = 8;         // S, >= expected |tilt|
    double gamma = 0.001;          // Wiener NSR
    bool prototype_global_registration = false;
    double epsilon = 1.0 / 12.0;   // registration error-to-signal for alpha
    double peak = 255.0;

    void validate() const {
        if (bma_half_width < 1) throw DataError("mitigation: M must be >= 1");
        if (search_radius < 1) throw DataError("mitigation: S must be >= 1");
        if (gamma < 0.0) throw DataError("mitigation: NSR must be >= 0");
    }
};

struct BmwfResult {
    Image restored;
    Image fused;
    Image prototype;
    double alpha_used = 0.0;
    double r0_used = 0.0;
};

/// Prototype -> per-frame block matching -> dewarp -> fuse -> Wiener with
/// the tilt correction factor for the chosen block size.
inline BmwfResult bmwf(const ImageSequence& seq, const MitigationConfig& mcfg, double r0_m,
                       const QuadratureSpec& q = {}) {
    mcfg.validate();
    seq.validate(1);
    if (!(r0_m > 0.0)) throw DataError("bmwf: r0 must be positive");

    BmwfResult out;
    out.prototype = build_prototype(seq, mcfg.prototype_global_registration);
    std::vector<Image> registered(seq.frames.size());
    parallel_for(seq.frames.size(), [&](std::size_t i) {
        const ShiftField f =
            bma_register(seq.frames[i], out.prototype, mcfg.bma_half_width, mcfg.search_radius);
        registered[i] = dewarp(seq.frames[i], f);
    });
    out.fused = fuse(registered);

    // Alpha depends on optics and block size only for constant profiles; the
    // internal profile level is immaterial.
    out.alpha_used = tilt_correction_factor(seq.optics, Cn2Profile::constant(1e-15),
                                            mcfg.bma_half_width, mcfg.epsilon, q);
    out.r0_used = r0_m;
    out.restored =
        wiener_restore(out.fused, seq.optics, r0_m, out.alpha_used, mcfg.gamma, mcfg.peak);
    return out;
}

}  // namespace turbmit
