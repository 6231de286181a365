// Differentiable objectives with a compact box domain. The gradient provider
// carries its smoothness constant and lower bound, which size the number of
// required successful updates for the optimization protocol.

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace covert {

using Vec = std::vector<double>;

struct DomainBox {
    Vec lo;
    Vec hi;

    bool contains(const Vec& x) const {
        if (x.size() != lo.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] < lo[i] || x[i] > hi[i]) return false;
        return true;
    }

    Vec project(Vec x) const {
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = std::min(hi[i], std::max(lo[i], x[i]));
        return x;
    }

    Vec midpoint() const {
        Vec m(lo.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (lo[i] + hi[i]);
        return m;
    }

    /// Point reflection through the box midpoint.
    Vec reflect(const Vec& x) const {
        Vec r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = lo[i] + hi[i] - x[i];
        return r;
    }
};

struct Objective {
    int dim = 0;
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
    double lipschitz = 1.0;   // L of the gradient
    double lower_bound = 0.0; // f*
    DomainBox domain;
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_sq(const Vec& v) { return dot(v, v); }

inline double norm(const Vec& v) { return std::sqrt(norm_sq(v)); }

inline Vec axpy(double a, const Vec& x, const Vec& y) {
    Vec r(y);
    for (std::size_t i = 0; i < x.size(); ++i) r[i] += a * x[i];
    return r;
}

/// f(x) = 0.5 * ||x - center||^2 on [-box_halfwidth, box_halfwidth]^d.
inline Objective make_quadratic(Vec center, double box_halfwidth) {
    const int d = static_cast<int>(center.size());
    Objective f;
    f.dim = d;
    f.lipschitz = 1.0;
    f.lower_bound = 0.0;
    f.domain.lo.assign(d, -box_halfwidth);
    f.domain.hi.assign(d, box_halfwidth);
    f.value = [center](const Vec& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double dxi = x[i] - center[i];
            s += 0.5 * dxi * dxi;
        }
        return s;
    };
    f.gradient = [center](const Vec& x) {
        Vec g(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] - center[i];
        return g;
    };
    return f;
}

/// Central finite differences, for gradient checks in tests.
inline Vec numerical_gradient(const Objective& f, const Vec& x, double h = 1e-6) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f.value(xp) - f.value(xm)) / (2.0 * h);
    }
    return g;
}

} // namespace covert
