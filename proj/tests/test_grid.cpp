#include "qvi/grid.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

using namespace qvi;

TEST(Grid, MeshSizeAndCounts) {
    const Grid d(2, 64, Boundary::dirichlet_zero), n(2, 64, Boundary::neumann);
    EXPECT_NEAR(d.h() * (d.n() + 1), 1.0, 1e-15);
    EXPECT_EQ(d.node_count(), 64 * 64);
    EXPECT_EQ(n.node_count(), 66 * 66);
    EXPECT_EQ(Grid(1, 7, Boundary::neumann).node_count(), 9);
    EXPECT_THROW(Grid(3, 4, Boundary::neumann), ConfigError);
    EXPECT_THROW(Grid(1, 0, Boundary::neumann), ConfigError);
}

TEST(Grid, LexicographicOrderingXFastest) {
    const Grid g(2, 4, Boundary::dirichlet_zero);
    EXPECT_EQ(g.index(1, 0), 1);
    EXPECT_EQ(g.index(0, 1), 4);
    EXPECT_EQ(g.position(6), std::make_pair(2, 1));
}

TEST(GridFunction, RejectsWrongLengthAndNonFinite) {
    const Grid g(1, 3, Boundary::dirichlet_zero);
    EXPECT_THROW(GridFunction(g, Vector::Zero(4)), ConfigError);
    Vector v = Vector::Zero(3);
    v[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(GridFunction(g, v), ConfigError);
}

TEST(DirichletOperator, SingleNodeIsNine) {
    const DiscreteOperator a = assemble_dirichlet_operator(Grid(1, 1, Boundary::dirichlet_zero));
    ASSERT_EQ(a.matrix.rows(), 1);
    EXPECT_DOUBLE_EQ(a.matrix.coeff(0, 0), 9.0);
}

TEST(DirichletOperator, ConstantAwayFromBoundary) {
    const Grid g(2, 6, Boundary::dirichlet_zero);
    const GridFunction ac = assemble_dirichlet_operator(g).apply(GridFunction::constant(g, 3.0));
    for (int j = 1; j < 5; ++j)
        for (int i = 1; i < 5; ++i) EXPECT_NEAR(ac[g.index(i, j)], 3.0, 1e-10);
}

TEST(DirichletOperator, SineIsDiscreteEigenfunction) {
    const Grid g(1, 3, Boundary::dirichlet_zero);
    const double h = g.h();
    const GridFunction s = GridFunction::sample(g, [](double x, double) { return std::sin(std::numbers::pi * x); });
    const double lambda = (2.0 - 2.0 * std::cos(std::numbers::pi * h)) / (h * h) + 1.0;
    const GridFunction as = assemble_dirichlet_operator(g).apply(s);
    EXPECT_LT(max_norm(as - lambda * s), 1e-12);
    // continuum eigenvalue, O(h^2) consistency
    const double pi2 = std::numbers::pi * std::numbers::pi;
    EXPECT_LT(max_norm(as - (pi2 + 1.0) * s), pi2 * pi2 * h * h / 12.0 + 1e-12);
}

TEST(DirichletOperator, SymmetricMMatrix) {
    const DiscreteOperator a = assemble_dirichlet_operator(Grid(2, 9, Boundary::dirichlet_zero));
    EXPECT_TRUE(a.symmetric);
    EXPECT_TRUE(a.m_matrix);
    EXPECT_TRUE(scan_m_matrix(a.matrix));
    EXPECT_EQ(asymmetry(a.matrix), 0.0);
    EXPECT_THROW(assemble_dirichlet_operator(Grid(2, 4, Boundary::neumann)), ConfigError);
}

TEST(NeumannOperator, HandAssembled1D) {
    const DiscreteOperator k = assemble_neumann_operator(Grid(1, 2, Boundary::neumann), 1.0);
    const double h2 = 1.0 / 9.0;
    Eigen::Matrix4d expect;
    expect << 1 + 2 / h2, -2 / h2, 0, 0,
              -1 / h2, 1 + 2 / h2, -1 / h2, 0,
              0, -1 / h2, 1 + 2 / h2, -1 / h2,
              0, 0, -2 / h2, 1 + 2 / h2;
    const Eigen::Matrix4d got = Eigen::MatrixXd(k.matrix);
    EXPECT_LT((got - expect).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((got.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(NeumannOperator, ConstantsExact) {
    const Grid g(2, 7, Boundary::neumann);
    const DiscreteOperator k = assemble_neumann_operator(g, 2.5);
    const GridFunction c = GridFunction::constant(g, 0.7);
    EXPECT_LT(max_norm(k.apply(c) - 2.5 * c), 1e-10);
    EXPECT_LT(max_norm(linear_solve(k, 2.5 * c) - c), 1e-10);
    EXPECT_TRUE(k.m_matrix);
    EXPECT_EQ(asymmetry(SparseMatrix(k.weights.asDiagonal() * k.matrix)), 0.0);
    EXPECT_THROW(assemble_neumann_operator(g, 0.0), ConfigError);
    EXPECT_THROW(assemble_neumann_operator(Grid(2, 4, Boundary::dirichlet_zero), 1.0), ConfigError);
}

TEST(L2, InnerProduct) {
    const Grid g(2, 64, Boundary::dirichlet_zero);
    const GridFunction one = GridFunction::constant(g, 1.0);
    EXPECT_NEAR(l2_inner(one, one), g.h() * g.h() * 64 * 64, 1e-14);
    EXPECT_EQ(l2_inner(GridFunction::zeros(g), one), 0.0);
    const GridFunction left = GridFunction::sample(g, [](double x, double) { return x < 0.5 ? 1.0 : 0.0; });
    EXPECT_EQ(l2_inner(left, one - left), 0.0);
    EXPECT_THROW(l2_inner(one, GridFunction::zeros(Grid(2, 63, Boundary::dirichlet_zero))), ConfigError);
}

TEST(LinearSolve, RecoversKnownSolution) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Boundary bc : {Boundary::dirichlet_zero, Boundary::neumann}) {
        const Grid g(2, 12, bc);
        const DiscreteOperator a = bc == Boundary::neumann ? assemble_neumann_operator(g, 1.0)
                                                           : assemble_dirichlet_operator(g);
        Vector x0(g.node_count());
        for (Index i = 0; i < x0.size(); ++i) x0[i] = u(rng);
        const GridFunction x(g, x0);
        EXPECT_LT(max_norm(linear_solve(a, a.apply(x)) - x), 1e-9);
        EXPECT_EQ(max_norm(linear_solve(a, GridFunction::zeros(g))), 0.0);
    }
}

TEST(LinearSolve, MatchesDenseFactorization) {
    const Grid g(1, 3, Boundary::dirichlet_zero);
    const DiscreteOperator a = assemble_dirichlet_operator(g);
    const Vector dense = Eigen::MatrixXd(a.matrix).partialPivLu().solve(Vector::Ones(3));
    EXPECT_LT((linear_solve(a, GridFunction::constant(g, 1.0)).values() - dense).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LinearSolve, ResidualBelowTolerance) {
    const Grid g(2, 20, Boundary::dirichlet_zero);
    const DiscreteOperator a = assemble_dirichlet_operator(g);
    const GridFunction b = GridFunction::constant(g, 100.0);
    const GridFunction x = linear_solve(a, b, 1e-9);
    EXPECT_LE(l2_norm(a.apply(x) - b), 1e-9);
}

TEST(Csv, RoundTripIsExact) {
    const Grid g(2, 5, Boundary::neumann);
    const GridFunction v = GridFunction::sample(g, [](double x, double y) { return std::exp(x) / (1.0 + 3.0 * y); });
    const auto path = (std::filesystem::temp_directory_path() / "qvi_grid_roundtrip.csv").string();
    write_csv(path, v);
    EXPECT_EQ(max_norm(read_csv(path, g) - v), 0.0);
    std::filesystem::remove(path);
}
