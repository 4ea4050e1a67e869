#pragma once

#include <cmath>
#include <functional>

#include "psra/array.hpp"
#include "psra/rng.hpp"

namespace psra::testutil {

inline Array random_array(Shape s, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Array a{std::move(s)};
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

inline double rel_err(double a, double b) {
    const double m = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / m;
}

inline double max_rel_err(const Array& a, const Array& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, rel_err(a.data[i], b.data[i]));
    return m;
}

// Central finite differences of a scalar function, element by element.
// Independent of the tape: evaluates f on plain perturbed copies.
inline Array fd_gradient(const std::function<double(const Array&)>& f, const Array& x,
                         double h = 1e-5) {
    Array g{x.shape};
    Array xp = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        xp.data[i] = orig + h;
        const double fp = f(xp);
        xp.data[i] = orig - h;
        const double fm = f(xp);
        xp.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Directional derivative of a scalar function along d, by central differences.
inline double fd_directional(const std::function<double(const Array&)>& f, const Array& x,
                             const Array& d, double h = 1e-5) {
    Array xp = x, xm = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        xp.data[i] += h * d.data[i];
        xm.data[i] -= h * d.data[i];
    }
    return (f(xp) - f(xm)) / (2.0 * h);
}

}  // namespace psra::testutil
