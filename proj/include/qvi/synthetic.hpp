#pragma once

/// Increasing obstacle mappings on 1D grids with known derivatives, plus
/// random instance generators. Used by the property suite and the tests.

#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"
#include "qvi/qvi_core.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace qvi::synthetic {

using DerivativeAt = std::function<GridFunction(const GridFunction& u, const GridFunction& d)>;

struct Mapping {
    std::string name;
    MappingKind kind;
    ObstacleMap phi;
    DerivativeAt derivative;
};

/// Phi(v) = c + a v
inline Mapping affine(const GridFunction& c, double a) {
    return {"affine", MappingKind::superposition,
            [c, a](const GridFunction& v) { return c + a * v; },
            [a](const GridFunction&, const GridFunction& d) { return a * d; }};
}

/// Phi(v) = c + a tanh(v)
inline Mapping hyperbolic(const GridFunction& c, double a) {
    return {"tanh", MappingKind::superposition,
            [c, a](const GridFunction& v) {
                return c + GridFunction(v.grid(), a * v.values().array().tanh().matrix());
            },
            [a](const GridFunction& u, const GridFunction& d) {
                const Vector s = (1.0 - u.values().array().tanh().square()).matrix();
                return GridFunction(d.grid(), a * s.cwiseProduct(d.values()));
            }};
}

/// Phi(v) = c + a M v, M the three-point average (1/4, 1/2, 1/4) with zero
/// padding. Nonlocal, so not a superposition operator.
inline Mapping averaging(const GridFunction& c, double a) {
    auto avg = [](const Vector& v) {
        const Index n = v.size();
        Vector r(n);
        for (Index i = 0; i < n; ++i)
            r[i] = 0.5 * v[i] + 0.25 * ((i > 0 ? v[i - 1] : 0.0) + (i + 1 < n ? v[i + 1] : 0.0));
        return r;
    };
    return {"averaging", MappingKind::general,
            [c, a, avg](const GridFunction& v) { return c + GridFunction(v.grid(), a * avg(v.values())); },
            [a, avg](const GridFunction&, const GridFunction& d) {
                return GridFunction(d.grid(), a * avg(d.values()));
            }};
}

/// Smooth low-frequency profile c0 + c1 sin(pi x) + c2 x on a 1D grid.
inline GridFunction smooth_profile(const Grid& grid, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double c0 = lo + (hi - lo) * 0.5 * u(rng);
    const double c1 = (hi - lo) * 0.3 * u(rng);
    const double c2 = (hi - lo) * 0.2 * u(rng);
    return GridFunction::sample(grid, [&](double x, double) { return c0 + c1 * std::sin(std::numbers::pi * x) + c2 * x; });
}

inline GridFunction uniform_nodes(const Grid& grid, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(grid.node_count());
    for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    return {grid, std::move(v)};
}

/// The i-th of a family of ten increasing mappings on `grid`: affine,
/// tanh and averaging types with slopes in (0, 0.7].
inline Mapping family_member(int i, const Grid& grid) {
    std::mt19937_64 rng(1000u + unsigned(i));
    const GridFunction c = smooth_profile(grid, rng, 0.05, 0.4);
    const double a = 0.1 + 0.6 * double(i % 4) / 3.0;
    switch (i % 3) {
    case 0: return affine(c, a);
    case 1: return hyperbolic(c, a);
    default: return averaging(c, a);
    }
}

/// Random 1D obstacle problem with N in [3, n_max], forcing in [0, 10] and
/// a smooth obstacle, so the penalty bias stays far below 1e-6.
inline ObstacleProblem random_obstacle_problem(std::mt19937_64& rng, int n_max = 8) {
    std::uniform_int_distribution<int> nd(3, n_max);
    const Grid g(1, nd(rng), Boundary::dirichlet_zero);
    GridFunction f = uniform_nodes(g, rng, 0.0, 10.0);
    GridFunction psi = smooth_profile(g, rng, 0.0, 0.4);
    return {assemble_dirichlet_operator(g), std::move(f), std::move(psi)};
}

} // namespace qvi::synthetic
