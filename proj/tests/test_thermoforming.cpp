#include "qvi/thermoforming.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qvi;
using namespace qvi::thermo;

namespace {

Config small(int n) {
    Config c;
    c.grid_n = n;
    return c;
}

} // namespace

TEST(G, BranchValues) {
    EXPECT_EQ(g_eval(0.0, 10.0, 1.0), 10.0);
    EXPECT_EQ(g_eval(-3.0, 10.0, 1.0), 10.0);
    EXPECT_NEAR(g_eval(0.5, 10.0, 1.0), 5.0, 1e-14);
    EXPECT_NEAR(7.0 * 10.0 / 6.0 - 4.0 * 10.0 * 0.5 / 3.0, 5.0, 1e-14);
    EXPECT_EQ(g_eval(1.0, 10.0, 1.0), 0.0);
    EXPECT_EQ(g_eval(7.0, 10.0, 1.0), 0.0);
    EXPECT_NEAR(g_prime_bound(10.0, 1.0), 40.0 / 3.0, 1e-14);
}

TEST(G, ContinuousWithMatchingDerivative) {
    for (double s : {1.0, 0.3}) {
        for (double b : {0.0, s / 4, 3 * s / 4, s}) {
            EXPECT_NEAR(g_eval(b - 1e-12, 10.0, s), g_eval(b + 1e-12, 10.0, s), 1e-9);
            EXPECT_NEAR(g_prime(b - 1e-12, 10.0, s), g_prime(b + 1e-12, 10.0, s), 1e-8);
        }
        for (double r = -0.1; r < 1.1 * s; r += 0.013 * s) {
            const double e = 1e-6 * s;
            const double fd = (g_eval(r + e, 10.0, s) - g_eval(r - e, 10.0, s)) / (2 * e);
            EXPECT_NEAR(g_prime(r, 10.0, s), fd, 1e-5 * g_prime_bound(10.0, s));
        }
    }
}

TEST(G, SandwichAndDecreasingOnSweep) {
    double prev = g_eval(-1.0, 10.0, 1.0), maxabs = 0.0;
    for (int i = 1; i <= 10000; ++i) {
        const double r = -1.0 + 3.0 * i / 10000.0;
        const double v = g_eval(r, 10.0, 1.0);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 10.0);
        EXPECT_LE(v, prev);
        prev = v;
        maxabs = std::max(maxabs, std::abs(g_prime(r, 10.0, 1.0)));
    }
    EXPECT_NEAR(maxabs, 40.0 / 3.0, 1e-12);
}

TEST(Rho, BumpAndMultiplier) {
    const Grid g(2, 31, Boundary::neumann);
    const GridFunction rho = bump_rho(g);
    EXPECT_DOUBLE_EQ(rho[g.index(16, 16)], 1.0);
    EXPECT_EQ(rho[g.index(0, 16)], 0.0);
    EXPECT_GE(rho.values().minCoeff(), 0.0);
    EXPECT_LE(rho.values().maxCoeff(), 1.0);

    EXPECT_EQ(max_norm(L_apply(GridFunction::zeros(g), 5.25e-3)), 0.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector a(g.node_count()), b(g.node_count());
    for (Index k = 0; k < a.size(); ++k) {
        a[k] = u(rng);
        b[k] = a[k] + u(rng);
    }
    const GridFunction la = L_apply({g, a}, 5.25e-3), lb = L_apply({g, b}, 5.25e-3);
    EXPECT_GE(la.values().minCoeff(), 0.0);
    EXPECT_GE(a.cwiseProduct(la.values()).minCoeff(), 0.0);
    EXPECT_GE((lb - la).values().minCoeff(), 0.0);
    // zero on the boundary ring
    for (int i = 0; i < 33; ++i) EXPECT_EQ(la[g.index(i, 0)], 0.0);
}

TEST(Rho, GradientBoundHoldsOnFineGrid) {
    double gmax = 0.0;
    for (int i = 0; i <= 2000; ++i) gmax = std::max(gmax, thermo::detail::rho_gradient_at(0.5 + 0.5 * i / 2000.0, 0.5));
    EXPECT_LE(gmax, kRhoGradientBound);
}

TEST(Phi0, TrapezoidTensor) {
    const Grid g(2, 64, Boundary::dirichlet_zero);
    const GridFunction p = mould_phi0(g);
    // physical node 32 is the centre; storage index is one less
    EXPECT_EQ(p[g.index(31, 31)], 1.0);
    EXPECT_GE(p.values().minCoeff(), 0.0);
    EXPECT_LE(p.values().maxCoeff(), 1.0);
    for (Index k = 0; k < p.size(); ++k) {
        const auto [i, j] = g.position(k);
        if (i + 1 < 6.4 || j + 1 < 6.4) {
            EXPECT_EQ(p[k], 0.0);
        }
    }
}

TEST(Assumptions, Defaults) {
    const AssumptionReport r = check_assumptions(Config{});
    EXPECT_TRUE(r.all_pass());
    EXPECT_NEAR(r.smallness.value, 40.0 * 5.25e-3 * std::sqrt(51.0) / 3.0, 1e-14);
    EXPECT_GE(r.smallness.value, 0.499);
    EXPECT_LT(r.smallness.value, 0.5);
    EXPECT_TRUE(r.x1.pass);
}

TEST(Assumptions, LargerMouldCoefficientFails) {
    Config c;
    c.C_L = 0.006;
    const AssumptionReport r = check_assumptions(c);
    EXPECT_FALSE(r.smallness.pass);
    EXPECT_NEAR(r.smallness.value, 40.0 * 0.006 * std::sqrt(51.0) / 3.0, 1e-14);
}

TEST(Assumptions, ZeroPlateauPasses) {
    Config c;
    c.kappa = 0.0;
    const AssumptionReport r = check_assumptions(c);
    EXPECT_TRUE(r.all_pass());
    EXPECT_EQ(r.smallness.value, 0.0);
}

TEST(Config, Validation) {
    Config c;
    c.delta_N = 5.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Config{};
    c.alpha = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(Config{}.validate());
}

TEST(Temperature, ZeroMembraneNonnegative) {
    const Model m(small(16));
    const GridFunction T = m.temperature_solve(GridFunction::zeros(m.membrane_grid()));
    EXPECT_GE(T.values().minCoeff(), 0.0);
    const Vector res = m.K().matrix * T.values() -
                       m.g_vec(m.clrho_neumann().cwiseProduct(T.values()) + m.phi0_neumann().values());
    EXPECT_LT(l2_norm(m.temperature_grid(), res), 1e-10);
    EXPECT_GE((m.phi(GridFunction::zeros(m.membrane_grid())) - m.phi0()).values().minCoeff(), 0.0);
}

TEST(Temperature, FarMembraneGivesZero) {
    const Model m(small(12));
    const GridFunction T = m.temperature_solve(GridFunction::constant(m.membrane_grid(), 50.0));
    // boundary ring still sees Phi0 - 0 < s, interior sees r >= s
    const GridFunction phi = m.phi(GridFunction::constant(m.membrane_grid(), 50.0));
    EXPECT_GE(T.values().minCoeff(), 0.0);
    EXPECT_LE((phi - m.phi0()).values().maxCoeff(), 5.25e-3 * max_norm(T));
}

TEST(Temperature, MonotoneInMembrane) {
    const Model m(small(12));
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        Vector a(m.membrane_grid().node_count()), b(a.size());
        for (Index k = 0; k < a.size(); ++k) {
            a[k] = u(rng);
            b[k] = a[k] + 0.5 * u(rng);
        }
        const GridFunction ta = m.temperature_solve({m.membrane_grid(), a});
        const GridFunction tb = m.temperature_solve({m.membrane_grid(), b});
        EXPECT_GE((tb - ta).values().minCoeff(), -1e-10);
        EXPECT_GE((m.phi({m.membrane_grid(), b}) - m.phi({m.membrane_grid(), a})).values().minCoeff(), -1e-10);
    }
}

TEST(PhiDerivative, LinearAndMatchesQuotients) {
    const Model m(small(16));
    const Grid& g = m.membrane_grid();
    const GridFunction u = 0.8 * m.phi0();
    const GridFunction d = GridFunction::sample(g, [](double x, double y) { return x * y; });
    EXPECT_EQ(max_norm(m.phi_derivative(u, GridFunction::zeros(g))), 0.0);
    const GridFunction p1 = m.phi_derivative(u, d);
    EXPECT_LT(max_norm(m.phi_derivative(u, 2.0 * d) - 2.0 * p1), 1e-12 * (1.0 + max_norm(p1)));

    const GridFunction base = m.phi(u);
    double prev = 1e300;
    for (double eps : {1e-3, 1e-4, 1e-5}) {
        const double err = l2_norm((1.0 / eps) * (m.phi(u + eps * d) - base) - p1);
        EXPECT_LE(err, prev * 1.01);
        prev = err;
    }
    EXPECT_LT(prev, 1e-5);
}

TEST(Coupled, JacobianMatchesFiniteDifferences) {
    const Model m(small(8));
    const Grid& gd = m.membrane_grid();
    const Grid& gn = m.temperature_grid();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const GridFunction f = m.forcing();
    for (int rep = 0; rep < 20; ++rep) {
        Vector uu(gd.node_count()), yy(gd.node_count()), tt(gn.node_count());
        for (Index k = 0; k < uu.size(); ++k) {
            yy[k] = u(rng);
            uu[k] = yy[k] + (u(rng) < 0.5 ? -1.0 : 1.0) * (0.05 + 0.2 * u(rng));
        }
        for (Index k = 0; k < tt.size(); ++k) tt[k] = 2.0 * u(rng);
        const State s{{gd, uu}, {gn, tt}, {gd, yy}};
        const SparseMatrix J = m.coupled_jacobian(s);
        Vector dir(J.cols());
        for (Index k = 0; k < dir.size(); ++k) dir[k] = u(rng) - 0.5;
        const double e = 1e-6;
        const Vector x = m.pack(s);
        const Vector fd = (m.coupled_residual(m.unpack(x + e * dir), f) - m.coupled_residual(m.unpack(x - e * dir), f)) / (2 * e);
        const Vector jd = J * dir;
        EXPECT_LE((fd - jd).norm(), 1e-6 * std::max(1.0, jd.norm()));
    }
}

TEST(Coupled, ConvergesAt64) {
    const Model m(small(64));
    const CoupledSolution s = m.coupled_newton();
    EXPECT_LT(s.report.final_residual, 4e-9);
    EXPECT_LE(s.report.iterations, 25);
    EXPECT_EQ(s.report.final_residual, s.report.residual_history.back());
    // mould grows
    EXPECT_GE((s.state.y - m.phi0()).values().minCoeff(), -1e-12);
    // penalty bias bound
    const ObstacleProblem p{m.A(), m.forcing(), s.state.y};
    const double bias = (m.A().apply(s.state.u) - m.forcing()).values().cwiseAbs().maxCoeff() / m.config().alpha;
    EXPECT_LE((s.state.u - s.state.y).values().maxCoeff(), bias * (1.0 + 1e-6));
    EXPECT_LE(complementarity_residual(p, s.state.u), bias * (1.0 + 1e-6));
    EXPECT_GT(s.report.active_set.count(), 0);
}

TEST(Coupled, ZeroForcing) {
    Config c = small(16);
    c.f_const = 0.0;
    const Model m(c);
    const CoupledSolution s = m.coupled_newton();
    const GridFunction zero = GridFunction::zeros(m.membrane_grid());
    EXPECT_LT(max_norm(s.state.u), 1e-9);
    EXPECT_LT(max_norm(s.state.T - m.temperature_solve(zero)), 1e-8);
    EXPECT_LT(max_norm(s.state.y - m.phi(zero)), 1e-9);
}

TEST(Coupled, IterationCapReportsHistory) {
    Config c = small(16);
    c.max_newton = 1;
    try {
        Model(c).coupled_newton();
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_EQ(e.history().size(), 2u);
    }
}

TEST(Flatness, Diagnostic) {
    const Grid g(1, 63, Boundary::neumann);
    const GridFunction H = GridFunction::sample(g, [](double x, double) { return std::cos(3.0 * x); });
    EXPECT_EQ(beltrami_flatness_diagnostic(GridFunction::constant(g, 0.4), H), 0.0);
    const GridFunction w = GridFunction::sample(g, [](double x, double) { return 0.3 * std::sin(2.0 * x); });
    const double d1 = beltrami_flatness_diagnostic(w, H);
    const double d2 = beltrami_flatness_diagnostic(2.0 * w, H);
    EXPECT_GT(d1, 0.0);
    EXPECT_GT(d2, d1);

    const Model m(small(32));
    const CoupledSolution s = m.coupled_newton();
    const double flat = beltrami_flatness_diagnostic(center_slice(m.phi0_neumann()), center_slice(s.state.T));
    EXPECT_TRUE(std::isfinite(flat));
}
