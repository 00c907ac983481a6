#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace turbmit {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Error taxonomy.  CLI exit codes: usage 2, data 3, numerical 4.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad invocation: unknown flags, missing arguments.
struct UsageError : Error {
    using Error::Error;
};

/// Invalid input data or parameters: malformed files, inconsistent optics,
/// out-of-range lags, invalid model parameters.
struct DataError : Error {
    using Error::Error;
};

/// A numerical procedure failed to converge or produced a degenerate result.
/// Carries the last two estimates when they exist (quadrature refinement).
struct NumericalError : Error {
    double estimate_coarse = std::numeric_limits<double>::quiet_NaN();
    double estimate_fine = std::numeric_limits<double>::quiet_NaN();

    explicit NumericalError(const std::string& msg) : Error(msg) {}
    NumericalError(const std::string& msg, double coarse, double fine)
        : Error(msg), estimate_coarse(coarse), estimate_fine(fine) {}
};

// ---------------------------------------------------------------------------
// Optical configuration
// ---------------------------------------------------------------------------

/// Camera and path geometry.  All lengths in meters, angles in radians.
/// `f_number` and `pixel_angle_rad` may be left at 0 to be derived from the
/// other fields; when supplied they must be consistent (1e-6 relative).
struct OpticalConfig {
    double aperture_diameter_m = 0.0;  // D
    double focal_length_m = 0.0;       // l
    double f_number = 0.0;             // l/D when omitted
    double wavelength_m = 0.0;
    double path_length_m = 0.0;        // object distance, z = 0 at the source
    double pixel_pitch_m = 0.0;        // focal-plane pixel spacing
    double pixel_angle_rad = 0.0;      // pitch / focal length when omitted

    void validate() {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw DataError(std::string("optical config: ") + name + " must be positive");
        };
        positive(aperture_diameter_m, "aperture_diameter_m");
        positive(focal_length_m, "focal_length_m");
        positive(wavelength_m, "wavelength_m");
        positive(path_length_m, "path_length_m");
        positive(pixel_pitch_m, "pixel_pitch_m");

        const double fno = focal_length_m / aperture_diameter_m;
        if (f_number == 0.0) {
            f_number = fno;
        } else if (std::abs(f_number - fno) > 1e-6 * fno) {
            throw DataError("optical config: f_number inconsistent with focal_length/aperture");
        }
        const double xi = pixel_pitch_m / focal_length_m;
        if (pixel_angle_rad == 0.0) {
            pixel_angle_rad = xi;
        } else if (std::abs(pixel_angle_rad - xi) > 1e-6 * xi) {
            throw DataError("optical config: pixel_angle_rad inconsistent with pitch/focal_length");
        }
    }

    /// Optical cutoff frequency in cycles per meter on the focal plane.
    double cutoff_cyc_per_m() const { return 1.0 / (wavelength_m * f_number); }

    /// Angular wavenumber 2*pi/lambda.
    double wavenumber() const { return 2.0 * std::numbers::pi / wavelength_m; }

    /// True when the near-field OTF approximation is comfortably valid
    /// (aperture at least as large as the Fresnel scale sqrt(L*lambda)).
    bool near_field_ok() const {
        return aperture_diameter_m >= std::sqrt(path_length_m * wavelength_m);
    }
};

// ---------------------------------------------------------------------------
// Refractive-index structure parameter profile Cn^2(z), z = 0 at the source.
// ---------------------------------------------------------------------------

class Cn2Profile {
  public:
    enum class Kind { Constant, Linear, Sampled };

    static Cn2Profile constant(double value) {
        Cn2Profile p;
        p.kind_ = Kind::Constant;
        p.values_ = {value};
        p.check_nonnegative();
        return p;
    }

    /// Linear profile from `source_value` at z = 0 to `camera_value` at z = L.
    static Cn2Profile linear(double source_value, double camera_value) {
        Cn2Profile p;
        p.kind_ = Kind::Linear;
        p.values_ = {source_value, camera_value};
        p.check_nonnegative();
        return p;
    }

    /// Piecewise-linear samples on a strictly increasing grid that must span
    /// [0, L]; z in meters from the source.
    static Cn2Profile sampled(std::vector<double> z, std::vector<double> values) {
        Cn2Profile p;
        p.kind_ = Kind::Sampled;
        if (z.size() != values.size() || z.size() < 2)
            throw DataError("cn2 profile: need matching z/value arrays with >= 2 samples");
        for (std::size_t i = 1; i < z.size(); ++i)
            if (!(z[i] > z[i - 1]))
                throw DataError("cn2 profile: z grid must be strictly increasing");
        p.z_ = std::move(z);
        p.values_ = std::move(values);
        p.check_nonnegative();
        return p;
    }

    Kind kind() const { return kind_; }

    /// Profile value at path position z (z normalized by nothing; meters).
    /// `path_length` supplies L for the constant/linear parameterizations.
    double value_at(double z, double path_length) const {
        switch (kind_) {
            case Kind::Constant:
                return values_[0];
            case Kind::Linear: {
                const double t = z / path_length;
                return values_[0] + (values_[1] - values_[0]) * t;
            }
            case Kind::Sampled: {
                if (z <= z_.front()) return values_.front();
                if (z >= z_.back()) return values_.back();
                auto it = std::upper_bound(z_.begin(), z_.end(), z);
                const std::size_t i = static_cast<std::size_t>(it - z_.begin());
                const double t = (z - z_[i - 1]) / (z_[i] - z_[i - 1]);
                return values_[i - 1] + (values_[i] - values_[i - 1]) * t;
            }
        }
        return 0.0;
    }

    /// Validates the sampled grid against the configured path length.
    void validate_for_path(double path_length) const {
        if (kind_ == Kind::Sampled) {
            const double tol = 1e-9 * path_length;
            if (std::abs(z_.front()) > tol || std::abs(z_.back() - path_length) > tol)
                throw DataError("cn2 profile: sampled z grid must cover [0, L]");
        }
    }

    bool is_zero() const {
        for (double v : values_)
            if (v != 0.0) return false;
        return true;
    }

    /// Mean value over [0, L]; the profile scales linearly out of every
    /// correlation integral, so (shape, multiplier) keys the evaluation cache.
    double mean_value(double path_length) const {
        switch (kind_) {
            case Kind::Constant:
                return values_[0];
            case Kind::Linear:
                return 0.5 * (values_[0] + values_[1]);
            case Kind::Sampled: {
                double acc = 0.0;
                for (std::size_t i = 1; i < z_.size(); ++i)
                    acc += 0.5 * (values_[i] + values_[i - 1]) * (z_[i] - z_[i - 1]);
                return acc / path_length;
            }
        }
        return 0.0;
    }

    const std::vector<double>& sample_z() const { return z_; }
    const std::vector<double>& sample_values() const { return values_; }

  private:
    void check_nonnegative() const {
        for (double v : values_)
            if (v < 0.0 || !std::isfinite(v))
                throw DataError("cn2 profile: values must be finite and >= 0");
    }

    Kind kind_ = Kind::Constant;
    std::vector<double> z_;
    std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Dense grayscale raster, 64-bit float intensities.
// ---------------------------------------------------------------------------

struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;
    int source_bit_depth = 8;  // 8 or 16; provenance of quantized inputs
    std::string source;        // originating filename when loaded

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    /// Bilinear sample with replicated borders.
    double sample(double y, double x) const {
        const double yc = std::clamp(y, 0.0, static_cast<double>(height - 1));
        const double xc = std::clamp(x, 0.0, static_cast<double>(width - 1));
        const int y0 = static_cast<int>(yc) == height - 1 ? height - 2 : static_cast<int>(yc);
        const int x0 = static_cast<int>(xc) == width - 1 ? width - 2 : static_cast<int>(xc);
        if (height == 1 || width == 1) {
            return at(std::min(static_cast<int>(yc), height - 1),
                      std::min(static_cast<int>(xc), width - 1));
        }
        const double fy = yc - y0;
        const double fx = xc - x0;
        return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
               fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    }

    double mean() const {
        double acc = 0.0;
        for (double v : data) acc += v;
        return data.empty() ? 0.0 : acc / static_cast<double>(data.size());
    }
};

/// Warning sink; routed to stderr by default so library callers can silence
/// or redirect diagnostics.
inline void (*warning_handler)(const std::string&) = nullptr;

inline void warn(const std::string& msg) {
    if (warning_handler) {
        warning_handler(msg);
    } else {
        std::fputs(("warning: " + msg + "\n").c_str(), stderr);
    }
}

}  // namespace turbmit
