#pragma once

/// Uniform finite-difference grids on [0,1] and [0,1]^2, nodal grid
/// functions, the two elliptic operators used throughout the library and the
/// discrete L2 pairing that every stopping test is measured in.

#include "qvi/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/UmfPackSupport>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qvi {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class Boundary { dirichlet_zero, neumann };

inline const char* to_string(Boundary bc) {
    return bc == Boundary::dirichlet_zero ? "dirichlet_zero" : "neumann";
}

/// Uniform grid with N interior nodes per axis and mesh size h = 1/(N+1).
///
/// Dirichlet grids store interior nodes only (N^dim unknowns); Neumann grids
/// include the boundary nodes ((N+2)^dim unknowns). Nodes are ordered
/// lexicographically with x fastest.
class Grid {
public:
    Grid(int dim, int n, Boundary bc) : dim_(dim), n_(n), bc_(bc) {
        if (dim != 1 && dim != 2) throw ConfigError("Grid: dim must be 1 or 2");
        if (n < 1) throw ConfigError("Grid: need at least one interior node per axis");
    }

    int dim() const { return dim_; }
    int n() const { return n_; }
    Boundary bc() const { return bc_; }
    double h() const { return 1.0 / (n_ + 1); }

    int nodes_per_axis() const { return bc_ == Boundary::dirichlet_zero ? n_ : n_ + 2; }

    Index node_count() const {
        const Index m = nodes_per_axis();
        return dim_ == 1 ? m : m * m;
    }

    /// Offset between the storage index along an axis and the physical node
    /// number i in x_i = i*h.
    int axis_offset() const { return bc_ == Boundary::dirichlet_zero ? 1 : 0; }

    double coordinate(int i) const { return (i + axis_offset()) * h(); }

    Index index(int i, int j = 0) const { return i + Index(nodes_per_axis()) * j; }

    std::pair<int, int> position(Index k) const {
        const Index m = nodes_per_axis();
        return {int(k % m), dim_ == 1 ? 0 : int(k / m)};
    }

    /// Weight h^dim of one node in the discrete L2 pairing.
    double cell_measure() const { return dim_ == 1 ? h() : h() * h(); }

    bool operator==(const Grid&) const = default;

private:
    int dim_;
    int n_;
    Boundary bc_;
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* where) {
    if (!(a == b)) throw ConfigError(std::string(where) + ": grid mismatch");
}

/// Nodal values on a grid. Always finite.
class GridFunction {
public:
    GridFunction(Grid grid, Vector values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.node_count())
            throw ConfigError("GridFunction: value count does not match node count");
        if (!values_.allFinite()) throw ConfigError("GridFunction: non-finite value");
    }

    static GridFunction zeros(const Grid& grid) {
        return {grid, Vector::Zero(grid.node_count())};
    }

    static GridFunction constant(const Grid& grid, double c) {
        return {grid, Vector::Constant(grid.node_count(), c)};
    }

    /// Samples f(x, y) at every node (y = 0 in 1D).
    template <typename F>
    static GridFunction sample(const Grid& grid, F&& f) {
        Vector v(grid.node_count());
        for (Index k = 0; k < v.size(); ++k) {
            const auto [i, j] = grid.position(k);
            const double x = grid.coordinate(i);
            const double y = grid.dim() == 2 ? grid.coordinate(j) : 0.0;
            v[k] = f(x, y);
        }
        return {grid, std::move(v)};
    }

    const Grid& grid() const { return grid_; }
    const Vector& values() const { return values_; }
    Index size() const { return values_.size(); }
    double operator[](Index k) const { return values_[k]; }

    GridFunction& operator+=(const GridFunction& o) {
        require_same_grid(grid_, o.grid_, "GridFunction::operator+=");
        values_ += o.values_;
        return *this;
    }
    GridFunction& operator-=(const GridFunction& o) {
        require_same_grid(grid_, o.grid_, "GridFunction::operator-=");
        values_ -= o.values_;
        return *this;
    }
    GridFunction& operator*=(double c) {
        values_ *= c;
        return *this;
    }

private:
    Grid grid_;
    Vector values_;
};

inline GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
inline GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
inline GridFunction operator*(double c, GridFunction a) { return a *= c; }
inline GridFunction operator-(GridFunction a) { return a *= -1.0; }

/// h^dim * sum_i u_i v_i
inline double l2_inner(const GridFunction& u, const GridFunction& v) {
    require_same_grid(u.grid(), v.grid(), "l2_inner");
    return u.grid().cell_measure() * u.values().dot(v.values());
}

inline double l2_norm(const GridFunction& u) { return std::sqrt(l2_inner(u, u)); }

/// Discrete L2 norm of a raw vector living on `grid`.
inline double l2_norm(const Grid& grid, const Vector& v) {
    return std::sqrt(grid.cell_measure()) * v.norm();
}

inline double max_norm(const GridFunction& u) {
    return u.size() == 0 ? 0.0 : u.values().cwiseAbs().maxCoeff();
}

/// Sparse square operator on a grid.
///
/// `weights` is a positive diagonal W such that W * matrix is symmetric; it
/// is the identity for the Dirichlet operator and the lumped boundary
/// weights (1/2 per boundary axis) for the ghost-node Neumann operator.
struct DiscreteOperator {
    SparseMatrix matrix;
    Grid grid;
    bool symmetric = false;
    bool m_matrix = false;
    Vector weights;

    GridFunction apply(const GridFunction& v) const {
        require_same_grid(grid, v.grid(), "DiscreteOperator::apply");
        return {grid, matrix * v.values()};
    }

    Vector diagonal() const { return matrix.diagonal(); }
};

/// max |a_ij - a_ji|
inline double asymmetry(const SparseMatrix& a) {
    const SparseMatrix t = a.transpose();
    const SparseMatrix d = a - t;
    double m = 0.0;
    for (Index k = 0; k < d.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(d, k); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
}

/// Positive diagonal and non-positive off-diagonal entries.
inline bool scan_m_matrix(const SparseMatrix& a) {
    for (Index r = 0; r < a.outerSize(); ++r) {
        bool has_diag = false;
        for (SparseMatrix::InnerIterator it(a, r); it; ++it) {
            if (it.col() == r) {
                if (!(it.value() > 0.0)) return false;
                has_diag = true;
            } else if (it.value() > 0.0) {
                return false;
            }
        }
        if (!has_diag) return false;
    }
    return true;
}

inline DiscreteOperator make_operator(SparseMatrix m, const Grid& grid, Vector weights) {
    if (m.rows() != grid.node_count() || m.cols() != grid.node_count())
        throw ConfigError("DiscreteOperator: matrix size does not match the grid");
    DiscreteOperator op{std::move(m), grid, false, false, std::move(weights)};
    op.matrix.makeCompressed();
    op.symmetric = asymmetry(op.matrix) == 0.0;
    op.m_matrix = scan_m_matrix(op.matrix);
    return op;
}

namespace detail {

/// -Laplacian stencil (3-point / 5-point), scaled by 1/h^2, plus `shift` on
/// the diagonal. Missing Dirichlet neighbours are eliminated (zero boundary
/// values); missing Neumann neighbours are replaced by their mirror image.
inline SparseMatrix assemble_shifted_laplacian(const Grid& grid, double shift) {
    const int m = grid.nodes_per_axis();
    const double ih2 = 1.0 / (grid.h() * grid.h());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(std::size_t(grid.node_count()) * (2 * grid.dim() + 1));
    for (Index k = 0; k < grid.node_count(); ++k) {
        const auto [i, j] = grid.position(k);
        trip.emplace_back(k, k, 2.0 * grid.dim() * ih2 + shift);
        for (int axis = 0; axis < grid.dim(); ++axis) {
            const int p = axis == 0 ? i : j;
            for (int step : {-1, 1}) {
                int q = p + step;
                if (q < 0 || q >= m) {
                    if (grid.bc() == Boundary::dirichlet_zero) continue;
                    q = p - step;
                }
                const Index nb = axis == 0 ? grid.index(q, j) : grid.index(i, q);
                trip.emplace_back(k, nb, -ih2);
            }
        }
    }
    SparseMatrix a(grid.node_count(), grid.node_count());
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

inline Vector lumped_boundary_weights(const Grid& grid) {
    Vector w = Vector::Ones(grid.node_count());
    if (grid.bc() == Boundary::dirichlet_zero) return w;
    const int last = grid.nodes_per_axis() - 1;
    for (Index k = 0; k < w.size(); ++k) {
        const auto [i, j] = grid.position(k);
        if (i == 0 || i == last) w[k] *= 0.5;
        if (grid.dim() == 2 && (j == 0 || j == last)) w[k] *= 0.5;
    }
    return w;
}

/// Sparse direct solve; Cholesky when `spd`, UMFPACK LU otherwise.
inline Vector solve_direct(const SparseMatrix& a, const Vector& b, bool spd) {
    const Eigen::SparseMatrix<double> ac = a;
    Vector x;
    if (spd) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> llt(ac);
        if (llt.info() != Eigen::Success) throw SolverError("sparse Cholesky factorization failed");
        x = llt.solve(b);
    } else {
        Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu(ac);
        if (lu.info() != Eigen::Success) throw SolverError("sparse LU factorization failed");
        x = lu.solve(b);
    }
    if (!x.allFinite()) throw SolverError("sparse direct solve produced non-finite values");
    return x;
}

} // namespace detail

/// -Delta_h + I with zero Dirichlet data eliminated.
inline DiscreteOperator assemble_dirichlet_operator(const Grid& grid) {
    if (grid.bc() != Boundary::dirichlet_zero)
        throw ConfigError("assemble_dirichlet_operator: grid must be dirichlet_zero");
    return make_operator(detail::assemble_shifted_laplacian(grid, 1.0), grid,
                         Vector::Ones(grid.node_count()));
}

/// k I - Delta_N with the reflected ghost-node closure. Rows sum to k; the
/// matrix is symmetric after scaling by the lumped boundary weights.
inline DiscreteOperator assemble_neumann_operator(const Grid& grid, double k) {
    if (grid.bc() != Boundary::neumann)
        throw ConfigError("assemble_neumann_operator: grid must be neumann");
    if (!(k > 0.0)) throw ConfigError("assemble_neumann_operator: k must be positive");
    return make_operator(detail::assemble_shifted_laplacian(grid, k), grid,
                         detail::lumped_boundary_weights(grid));
}

/// Preconditioned CG on W*A x = W*b; guarantees ||A x - b||_L2 <= tol or throws.
inline GridFunction linear_solve(const DiscreteOperator& a, const GridFunction& b, double tol) {
    require_same_grid(a.grid, b.grid(), "linear_solve");
    if (!(tol > 0.0)) throw ConfigError("linear_solve: tol must be positive");
    if (b.values().isZero(0.0)) return GridFunction::zeros(b.grid());

    const Vector& w = a.weights;
    const SparseMatrix sym = w.asDiagonal() * a.matrix;
    const Vector rhs = w.cwiseProduct(b.values());
    // ||r|| <= ||W r|| / min(w), and the L2 norm carries a sqrt(h^dim) factor.
    const double scale = std::sqrt(a.grid.cell_measure());
    const double rel = tol * w.minCoeff() / (scale * rhs.norm());

    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg;
    cg.setMaxIterations(10 * int(rhs.size()) + 100);
    cg.setTolerance(std::max(rel, 1e-17));
    cg.compute(sym);
    Vector x = cg.solve(rhs);

    const double res = l2_norm(a.grid, a.matrix * x - b.values());
    if (!x.allFinite() || res > tol) {
        std::ostringstream msg;
        msg << "linear_solve: no convergence after " << cg.iterations()
            << " CG iterations, final residual " << std::scientific << res << " (tol " << tol << ")";
        throw SolverError(msg.str(), {res});
    }
    return {a.grid, std::move(x)};
}

/// Relative tolerance 1e-12 * ||b||.
inline GridFunction linear_solve(const DiscreteOperator& a, const GridFunction& b) {
    const double nb = l2_norm(b);
    return linear_solve(a, b, std::max(1e-12 * nb, std::numeric_limits<double>::min()));
}

// --- CSV --------------------------------------------------------------------

/// Header `i,j,value` (`i,value` in 1D), one node per row in storage order,
/// 17 significant digits.
inline void write_csv(const std::string& path, const GridFunction& u) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_csv: cannot open " + path);
    const Grid& g = u.grid();
    out << (g.dim() == 1 ? "i,value\n" : "i,j,value\n");
    out << std::setprecision(17);
    for (Index k = 0; k < u.size(); ++k) {
        const auto [i, j] = g.position(k);
        out << i << ',';
        if (g.dim() == 2) out << j << ',';
        out << u[k] << '\n';
    }
    if (!out) throw ConfigError("write_csv: write failed for " + path);
}

inline GridFunction read_csv(const std::string& path, const Grid& grid) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_csv: cannot open " + path);
    std::string line;
    std::getline(in, line);
    Vector v = Vector::Constant(grid.node_count(), std::numeric_limits<double>::quiet_NaN());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        int i = 0, j = 0;
        double value = 0.0;
        ls >> i;
        if (grid.dim() == 2) ls >> j;
        ls >> value;
        if (!ls || i < 0 || j < 0 || i >= grid.nodes_per_axis() || j >= grid.nodes_per_axis())
            throw ConfigError("read_csv: malformed row '" + line + "' in " + path);
        v[grid.index(i, j)] = value;
    }
    if (!v.allFinite()) throw ConfigError("read_csv: missing nodes in " + path);
    return {grid, std::move(v)};
}

} // namespace qvi
