#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace turbmit {

/// Deterministic counter-based generator (splitmix64).  Chosen over
/// std::normal_distribution so that seeded streams are identical across
/// standard libraries and runs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Derives an independent stream for a substream index (per-frame seeds).
    static Rng substream(std::uint64_t seed, std::uint64_t index) {
        Rng mix(seed);
        const std::uint64_t a = mix.next_u64();
        Rng mix2(a ^ (index * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL));
        return Rng(mix2.next_u64());
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64()) * 0x1.0p-64; }

    /// Standard normal via Box-Muller; values are produced in pairs.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace turbmit
