#pragma once

/// Fixed-obstacle variational inequalities
///
///     u <= psi,   <A u - f, u - v> <= 0   for all v <= psi,
///
/// solved either exactly (projected SOR followed by an active-set
/// finalization) or through the penalised equation
/// A u + alpha max(0, u - psi) = f with a semismooth Newton method.

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"

#include "json.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <sstream>

namespace qvi {

/// Obstacle mapping: state -> obstacle. Expected to be order preserving.
using ObstacleMap = std::function<GridFunction(const GridFunction&)>;

struct ObstacleProblem {
    DiscreteOperator A;
    GridFunction f;
    GridFunction psi;

    void validate() const {
        require_same_grid(A.grid, f.grid(), "ObstacleProblem (forcing)");
        require_same_grid(A.grid, psi.grid(), "ObstacleProblem (obstacle)");
    }
};

/// Nodes where psi - u <= tol_act.
struct ActiveSet {
    std::vector<char> mask;
    double tol_act = 0.0;

    Index count() const { return std::count(mask.begin(), mask.end(), char(1)); }
    bool operator[](Index k) const { return mask[std::size_t(k)] != 0; }
};

/// Scale-aware activity threshold 1e-8 * (1 + ||psi||_inf).
inline double default_activity_tolerance(const GridFunction& psi) {
    return 1e-8 * (1.0 + max_norm(psi));
}

inline ActiveSet active_set(const GridFunction& u, const GridFunction& psi, double tol_act) {
    require_same_grid(u.grid(), psi.grid(), "active_set");
    ActiveSet s{std::vector<char>(std::size_t(u.size()), 0), tol_act};
    for (Index k = 0; k < u.size(); ++k) s.mask[std::size_t(k)] = psi[k] - u[k] <= tol_act;
    return s;
}

struct SolveReport {
    int iterations = 0;
    std::vector<double> residual_history;
    double final_residual = 0.0;
    ActiveSet active_set;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const {
        return {{"iterations", iterations},
                {"final_residual", final_residual},
                {"residual_history", residual_history},
                {"active_count", active_set.count()},
                {"wall_time_s", wall_time_s}};
    }
};

struct VISolution {
    GridFunction u;
    SolveReport report;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Box-type VI on an M-matrix: x_i = upper_i on `fixed` nodes, x_i <= upper_i
/// elsewhere (upper may be +inf), A x - rhs <= 0 with complementarity.
struct BoundedVI {
    const SparseMatrix& a;
    const Vector& rhs;
    const Vector& upper;
    const std::vector<char>& fixed;
    double cell_measure;
    bool symmetric;
};

struct PsorRun {
    int sweeps = 0;
    std::vector<double> history;
    bool converged = false;
};

/// Projected SOR sweeps x_i <- min(upper_i, x_i + omega (rhs - A x)_i / a_ii)
/// until the discrete L2 norm of the sweep update drops below tol.
inline PsorRun projected_sor(const BoundedVI& p, Vector& x, double omega, double tol,
                             int max_sweeps) {
    PsorRun run;
    const Index n = x.size();
    for (Index i = 0; i < n; ++i)
        x[i] = p.fixed[std::size_t(i)] ? p.upper[i] : std::min(x[i], p.upper[i]);
    while (run.sweeps < max_sweeps) {
        double diff2 = 0.0;
        for (Index i = 0; i < n; ++i) {
            if (p.fixed[std::size_t(i)]) continue;
            double ax = 0.0, aii = 0.0;
            for (SparseMatrix::InnerIterator it(p.a, i); it; ++it) {
                ax += it.value() * x[it.col()];
                if (it.col() == i) aii = it.value();
            }
            const double xn = std::min(p.upper[i], x[i] + omega * (p.rhs[i] - ax) / aii);
            diff2 += (xn - x[i]) * (xn - x[i]);
            x[i] = xn;
        }
        ++run.sweeps;
        const double d = std::sqrt(p.cell_measure * diff2);
        run.history.push_back(d);
        if (d < tol) {
            run.converged = true;
            break;
        }
    }
    return run;
}

/// Solves the equality-constrained system with x fixed to `upper` on
/// `clamped` nodes and free elsewhere.
inline Vector solve_with_clamped(const BoundedVI& p, const std::vector<char>& clamped) {
    const Index n = p.rhs.size();
    std::vector<Index> to_free(std::size_t(n), -1);
    Index nf = 0;
    Vector x = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
        if (clamped[std::size_t(i)]) x[i] = p.upper[i];
        else to_free[std::size_t(i)] = nf++;
    }
    if (nf == 0) return x;
    std::vector<Eigen::Triplet<double>> trip;
    Vector b(nf);
    for (Index i = 0; i < n; ++i) {
        const Index fi = to_free[std::size_t(i)];
        if (fi < 0) continue;
        double bi = p.rhs[i];
        for (SparseMatrix::InnerIterator it(p.a, i); it; ++it) {
            const Index fj = to_free[std::size_t(it.col())];
            if (fj >= 0) trip.emplace_back(fi, fj, it.value());
            else bi -= it.value() * x[it.col()];
        }
        b[fi] = bi;
    }
    SparseMatrix aff(nf, nf);
    aff.setFromTriplets(trip.begin(), trip.end());
    const Vector xf = solve_direct(aff, b, p.symmetric);
    for (Index i = 0; i < n; ++i)
        if (const Index fi = to_free[std::size_t(i)]; fi >= 0) x[i] = xf[fi];
    return x;
}

/// Primal-dual active-set finalization seeded with the nodes where x sits
/// on its bound. On success x satisfies the KKT conditions up to rounding
/// and equals the bound exactly on the active nodes.
inline bool finalize_active_set(const BoundedVI& p, Vector& x, int max_iter = 100) {
    const Index n = x.size();
    constexpr double eps = std::numeric_limits<double>::epsilon();
    double amax = 0.0;
    for (Index i = 0; i < n; ++i) amax = std::max(amax, std::abs(p.a.coeff(i, i)));

    std::vector<char> clamped;
    clamped.reserve(std::size_t(n));
    for (Index i = 0; i < n; ++i) clamped.push_back(p.fixed[std::size_t(i)] || x[i] >= p.upper[i]);

    for (int it = 0; it < max_iter; ++it) {
        const Vector xn = solve_with_clamped(p, clamped);
        const Vector mult = p.rhs - p.a * xn;
        const double xs = std::max(1.0, xn.cwiseAbs().maxCoeff());
        const double tol_x = 64 * eps * xs;
        const double tol_m = 64 * eps * (p.rhs.cwiseAbs().maxCoeff() + amax * xs);

        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            if (p.fixed[std::size_t(i)]) continue;
            const bool now = clamped[std::size_t(i)] ? mult[i] > -tol_m : xn[i] > p.upper[i] + tol_x;
            if (now != bool(clamped[std::size_t(i)])) {
                clamped[std::size_t(i)] = now;
                changed = true;
            }
        }
        if (!changed) {
            x = xn;
            return true;
        }
    }
    return false;
}

inline VISolution make_solution(const Grid& grid, Vector u, const GridFunction& psi, int iterations,
                                std::vector<double> history,
                                std::chrono::steady_clock::time_point t0) {
    GridFunction uf(grid, std::move(u));
    SolveReport rep;
    rep.iterations = iterations;
    rep.final_residual = history.empty() ? 0.0 : history.back();
    rep.residual_history = std::move(history);
    rep.active_set = active_set(uf, psi, default_activity_tolerance(psi));
    rep.wall_time_s = seconds_since(t0);
    return {std::move(uf), std::move(rep)};
}

} // namespace detail

struct PsorOptions {
    double omega = 1.5;
    double tol = 1e-12;
    int max_sweeps = 200000;
    /// Run the active-set finalization after the sweeps converge.
    bool finalize = true;
    std::optional<Vector> initial;
};

/// Exact-constraint VI solve by projected SOR. Requires an M-matrix.
inline VISolution vi_solve_psor(const ObstacleProblem& p, const PsorOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    p.validate();
    if (!p.A.m_matrix || !scan_m_matrix(p.A.matrix))
        throw ConfigError("vi_solve_psor: operator is not an M-matrix");
    if (!(opt.omega > 0.0 && opt.omega < 2.0)) throw ConfigError("vi_solve_psor: omega must lie in (0,2)");
    if (!(opt.tol > 0.0)) throw ConfigError("vi_solve_psor: tol must be positive");

    const Grid& grid = p.A.grid;
    const std::vector<char> none(std::size_t(grid.node_count()), 0);
    const detail::BoundedVI vi{p.A.matrix, p.f.values(), p.psi.values(), none, grid.cell_measure(),
                               p.A.symmetric};

    Vector x = opt.initial ? *opt.initial
                           : Vector(detail::solve_direct(p.A.matrix, p.f.values(), p.A.symmetric)
                                        .cwiseMin(p.psi.values()));
    if (x.size() != grid.node_count()) throw ConfigError("vi_solve_psor: initial guess has wrong size");

    auto run = detail::projected_sor(vi, x, opt.omega, opt.tol, opt.max_sweeps);
    bool done = run.converged && opt.finalize && detail::finalize_active_set(vi, x);
    if (run.converged && !done && opt.finalize) {
        // Finalization did not settle; tighten the sweeps instead.
        auto more = detail::projected_sor(vi, x, opt.omega, opt.tol * 1e-3, opt.max_sweeps);
        run.sweeps += more.sweeps;
        run.history.insert(run.history.end(), more.history.begin(), more.history.end());
        run.converged = more.converged;
    }
    if (!run.converged) {
        std::ostringstream msg;
        msg << "vi_solve_psor: no convergence after " << run.sweeps << " sweeps, last update "
            << std::scientific << (run.history.empty() ? 0.0 : run.history.back());
        throw SolverError(msg.str(), run.history);
    }
    return detail::make_solution(grid, std::move(x), p.psi, run.sweeps, std::move(run.history), t0);
}

inline VISolution vi_solve_psor(const ObstacleProblem& p, double omega, double tol) {
    PsorOptions o;
    o.omega = omega;
    o.tol = tol;
    return vi_solve_psor(p, o);
}

/// Newton derivative of max(0, r): 0 for r < 0, delta_n for r == 0, 1 for r > 0.
inline double newton_derivative_max(double r, double delta_n) {
    return r > 0.0 ? 1.0 : (r == 0.0 ? delta_n : 0.0);
}

struct PenaltyOptions {
    double alpha = 1e8;
    double tol = 1e-8;
    double delta_n = 0.1;
    int max_iter = 100;
    std::optional<Vector> initial;
};

/// Semismooth Newton for A u + alpha max(0, u - psi) - f = 0 (no damping).
/// Stops on residual < tol or when the sign pattern of u - psi repeats.
inline VISolution vi_solve_penalty(const ObstacleProblem& p, const PenaltyOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    p.validate();
    if (!(opt.alpha > 0.0)) throw ConfigError("vi_solve_penalty: alpha must be positive");
    if (!(opt.delta_n >= 0.0 && opt.delta_n <= 1.0))
        throw ConfigError("vi_solve_penalty: delta_N must lie in [0,1]");
    if (!(opt.tol > 0.0)) throw ConfigError("vi_solve_penalty: tol must be positive");

    const Grid& grid = p.A.grid;
    const Vector& psi = p.psi.values();
    const Vector& f = p.f.values();
    Vector u = opt.initial ? *opt.initial
                           : Vector(detail::solve_direct(p.A.matrix, f, p.A.symmetric).cwiseMin(psi));
    if (u.size() != grid.node_count()) throw ConfigError("vi_solve_penalty: initial guess has wrong size");

    std::vector<double> hist;
    double best = detail::kInf;
    int since_best = 0;
    std::vector<signed char> pattern, prev_pattern;
    for (int it = 0;; ++it) {
        const Vector r = u - psi;
        const Vector res = p.A.matrix * u + opt.alpha * r.cwiseMax(0.0) - f;
        const double nr = l2_norm(grid, res);
        hist.push_back(nr);
        pattern.assign(std::size_t(r.size()), 0);
        for (Index i = 0; i < r.size(); ++i) pattern[std::size_t(i)] = r[i] > 0.0 ? 1 : (r[i] < 0.0 ? -1 : 0);
        // branch pattern unchanged by the last step, so u solves the linear piece exactly
        const bool repeated = it > 0 && pattern == prev_pattern;
        if (nr < opt.tol || repeated)
            return detail::make_solution(grid, std::move(u), p.psi, it, std::move(hist), t0);
        prev_pattern = pattern;
        if (!std::isfinite(nr)) throw SolverError("vi_solve_penalty: residual became non-finite", hist);
        if (nr < best) {
            best = nr;
            since_best = 0;
        } else if (++since_best >= 10) {
            std::ostringstream msg;
            msg << "vi_solve_penalty: residual stopped decreasing (best " << std::scientific << best << ")";
            throw SolverError(msg.str(), hist);
        }
        if (it == opt.max_iter)
            throw SolverError("vi_solve_penalty: iteration cap reached", hist);

        SparseMatrix jac = p.A.matrix;
        for (Index i = 0; i < u.size(); ++i)
            jac.coeffRef(i, i) += opt.alpha * newton_derivative_max(r[i], opt.delta_n);
        u -= detail::solve_direct(jac, res, p.A.symmetric);
    }
}

inline VISolution vi_solve_penalty(const ObstacleProblem& p, double alpha, double tol,
                                   double delta_n = 0.1) {
    PenaltyOptions o;
    o.alpha = alpha;
    o.tol = tol;
    o.delta_n = delta_n;
    return vi_solve_penalty(p, o);
}

/// max_i |min(psi_i - u_i, (f - A u)_i)|; zero exactly at a VI solution.
inline double complementarity_residual(const ObstacleProblem& p, const GridFunction& u) {
    p.validate();
    require_same_grid(p.A.grid, u.grid(), "complementarity_residual");
    const Vector gap = p.psi.values() - u.values();
    const Vector mult = p.f.values() - p.A.matrix * u.values();
    return gap.cwiseMin(mult).cwiseAbs().maxCoeff();
}

enum class ViSolver { psor, penalty };

struct SMapOptions {
    ViSolver solver = ViSolver::psor;
    PsorOptions psor;
    PenaltyOptions penalty;
};

inline VISolution solve_vi(const ObstacleProblem& p, const SMapOptions& opt = {}) {
    return opt.solver == ViSolver::psor ? vi_solve_psor(p, opt.psor) : vi_solve_penalty(p, opt.penalty);
}

/// S(f, phi_arg): VI solution for the obstacle Phi(phi_arg).
inline GridFunction s_map(const DiscreteOperator& a, const GridFunction& f, const ObstacleMap& phi,
                          const GridFunction& phi_arg, const SMapOptions& opt = {}) {
    return solve_vi(ObstacleProblem{a, f, phi(phi_arg)}, opt).u;
}

/// S(f, psi) for a fixed obstacle.
inline GridFunction s_map(const DiscreteOperator& a, const GridFunction& f, const GridFunction& psi,
                          const SMapOptions& opt = {}) {
    return solve_vi(ObstacleProblem{a, f, psi}, opt).u;
}

/// S0(g): the VI with lower obstacle zero,
///     z >= 0,  <A z - g, z - v> <= 0  for all v >= 0,
/// computed as z = -S(-g, 0).
inline GridFunction s0_map(const DiscreteOperator& a, const GridFunction& g, const SMapOptions& opt = {}) {
    SMapOptions o = opt;
    if (o.psor.initial) o.psor.initial = -*o.psor.initial;
    if (o.penalty.initial) o.penalty.initial = -*o.penalty.initial;
    return -s_map(a, -g, GridFunction::zeros(g.grid()), o);
}

} // namespace qvi
