#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "turbmit/core.hpp"

namespace turbmit {

/// Gauss-Legendre nodes and weights on [a, b].  Newton iteration on the
/// Legendre polynomial from the Chebyshev initial guess; accurate to machine
/// precision for the node counts used here.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    GaussLegendre(int n, double a, double b) {
        nodes.resize(n);
        weights.resize(n);
        const double mid = 0.5 * (a + b);
        const double half = 0.5 * (b - a);
        const int m = (n + 1) / 2;
        for (int i = 0; i < m; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double pp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p0 = 1.0, p1 = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double p2 = p1;
                    p1 = p0;
                    p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
                }
                pp = n * (x * p0 - p1) / (x * x - 1.0);
                const double dx = p0 / pp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            nodes[i] = mid - half * x;
            nodes[n - 1 - i] = mid + half * x;
            weights[i] = 2.0 * half / ((1.0 - x * x) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
    }
};

/// Node counts for the nested tilt-correlation integrals: Gauss-Legendre in
/// path position z and aperture radius u, uniform midpoint rule over the
/// aperture angle (periodic integrand, spectrally accurate).  One doubling
/// pass estimates convergence; exceeding `rel_tol` raises NumericalError.
struct QuadratureSpec {
    int nz = 64;
    int ntheta = 64;
    int nu = 64;
    double rel_tol = 1e-4;
    bool convergence_check = true;

    QuadratureSpec doubled() const {
        QuadratureSpec d = *this;
        d.nz *= 2;
        d.ntheta *= 2;
        d.nu *= 2;
        return d;
    }
};

namespace detail {

/// abs(x)^(5/6) computed as x / x^(1/6); ~2.5x faster than std::pow in the
/// quadrature inner loop.
inline double pow56(double x) {
    if (x <= 0.0) return 0.0;
    return x / std::cbrt(std::sqrt(x));
}

}  // namespace detail

}  // namespace turbmit
