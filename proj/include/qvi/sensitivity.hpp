#pragma once

/// Directional derivatives of QVI solution maps: the smoothed-penalty
/// derivative of the thermoforming membrane, difference-quotient checks,
/// the critical-cone iteration
///
///     delta_n = VI on the critical cone with forcing d - A Phi'(u)(alpha_{n-1}),
///     alpha_n = Phi'(u)(alpha_{n-1}) + delta_n,
///
/// and the expansion q(t) = u + t alpha + o(t).

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/thermoforming.hpp"

#include "json.hpp"

#include <functional>

namespace qvi {

/// C1 smoothing of max(0, r) on [-gamma, gamma].
struct SmoothedMax {
    double gamma = 1e-5;

    void validate() const {
        if (!(gamma > 0.0)) throw ConfigError("SmoothedMax: gamma must be positive");
    }

    double value(double r) const {
        if (r <= -gamma) return 0.0;
        if (r >= gamma) return r;
        return (r + gamma) * (r + gamma) / (4.0 * gamma);
    }

    double derivative(double r) const {
        if (r <= -gamma) return 0.0;
        if (r >= gamma) return 1.0;
        return (r + gamma) / (2.0 * gamma);
    }
};

struct DerivativeSolution {
    GridFunction w;
    double residual = 0.0; ///< ||M w - d||, M the system matrix
};

/// Solves (A + alpha diag(max_gamma'(u - y))) w = d.
inline DerivativeSolution derivative_pde_solve(const DiscreteOperator& a, const GridFunction& u,
                                               const GridFunction& y, const GridFunction& d, double alpha,
                                               const SmoothedMax& sm = {}) {
    sm.validate();
    require_same_grid(a.grid, u.grid(), "derivative_pde_solve");
    require_same_grid(a.grid, y.grid(), "derivative_pde_solve");
    require_same_grid(a.grid, d.grid(), "derivative_pde_solve");
    SparseMatrix m = a.matrix;
    for (Index i = 0; i < u.size(); ++i) m.coeffRef(i, i) += alpha * sm.derivative(u[i] - y[i]);
    if (d.values().isZero(0.0)) return {GridFunction::zeros(a.grid), 0.0};
    Vector w = detail::solve_direct(m, d.values(), a.symmetric);
    const double res = l2_norm(a.grid, m * w - d.values());
    return {GridFunction(a.grid, std::move(w)), res};
}

inline DerivativeSolution derivative_pde_solve(const thermo::Model& model, const thermo::State& s,
                                               const GridFunction& d, const SmoothedMax& sm = {}) {
    return derivative_pde_solve(model.A(), s.u, s.y, d, model.config().alpha, sm);
}

struct QuotientCheck {
    GridFunction quotient;
    DerivativeSolution derivative;
    double deviation = 0.0;
    SolveReport base_report;
    SolveReport perturbed_report;
};

/// (u(f + eps d) - u(f)) / eps against the smoothed-penalty derivative,
/// reusing an already converged base solve.
inline QuotientCheck difference_quotient_check(const thermo::Model& model, const thermo::CoupledSolution& base,
                                               const GridFunction& d, double epsilon = 1e-5,
                                               const SmoothedMax& sm = {}) {
    if (!(epsilon > 0.0)) throw ConfigError("difference_quotient_check: epsilon must be positive");
    const GridFunction f = model.forcing();
    const thermo::CoupledSolution pert = model.coupled_newton(f + epsilon * d);
    GridFunction q{model.membrane_grid(), (pert.state.u.values() - base.state.u.values()) / epsilon};
    DerivativeSolution der = derivative_pde_solve(model, base.state, d, sm);
    const double dev = l2_norm(q - der.w);
    return {std::move(q), std::move(der), dev, base.report, pert.report};
}

inline QuotientCheck difference_quotient_check(const thermo::Model& model, const GridFunction& d,
                                               double epsilon = 1e-5, const SmoothedMax& sm = {}) {
    return difference_quotient_check(model, model.coupled_newton(), d, epsilon, sm);
}

struct CoupledDerivative {
    GridFunction w;   ///< membrane
    GridFunction tau; ///< temperature
    GridFunction z;   ///< mould
    double residual = 0.0;
    double partial_gap = 0.0; ///< ||w - w_partial||
};

/// Full linearisation F'(u,T,y)(w,tau,z) = (d,0,0), with the smoothed max
/// slope in the penalty block.
inline CoupledDerivative coupled_derivative_solve(const thermo::Model& model, const thermo::State& s,
                                                  const GridFunction& d, const SmoothedMax& sm = {}) {
    sm.validate();
    require_same_grid(model.membrane_grid(), d.grid(), "coupled_derivative_solve");
    const Index nd = model.membrane_grid().node_count();
    const Index nn = model.temperature_grid().node_count();
    Vector slope(nd);
    for (Index i = 0; i < nd; ++i) slope[i] = sm.derivative(s.u[i] - s.y[i]);
    const Eigen::SparseMatrix<double> J = model.coupled_jacobian(s, &slope);
    Vector rhs = Vector::Zero(2 * nd + nn);
    rhs.head(nd) = d.values();

    Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu(J);
    if (lu.info() != Eigen::Success) throw SolverError("coupled_derivative_solve: singular block system");
    const Vector x = lu.solve(rhs);
    if (!x.allFinite()) throw SolverError("coupled_derivative_solve: non-finite solution");
    const thermo::State r = model.unpack(x);
    const DerivativeSolution partial = derivative_pde_solve(model, s, d, sm);
    return {r.u, r.T, r.y, model.stacked_norm(J * x - rhs), l2_norm(r.u - partial.w)};
}

// --- critical cone ------------------------------------------------------------

struct CriticalConeSpec {
    std::vector<char> coincidence;
    std::vector<char> strongly_active;
    std::vector<char> biactive;
    double tol_act = 0.0;
    double tol_res = 0.0;

    bool strict_complementarity() const {
        return std::none_of(biactive.begin(), biactive.end(), [](char c) { return c != 0; });
    }

    static Index count(const std::vector<char>& m) { return std::count(m.begin(), m.end(), char(1)); }

    nlohmann::json to_json() const {
        return {{"coincidence", count(coincidence)},
                {"strongly_active", count(strongly_active)},
                {"biactive", count(biactive)},
                {"strict_complementarity", strict_complementarity()},
                {"tol_act", tol_act},
                {"tol_res", tol_res}};
    }
};

/// tol_res = 1e-6 ||f||_inf (floored at the smallest normal double).
inline double default_residual_tolerance(const GridFunction& f) {
    return std::max(1e-6 * max_norm(f), std::numeric_limits<double>::min());
}

inline CriticalConeSpec build_critical_cone(const GridFunction& u, const GridFunction& phi_u,
                                            const DiscreteOperator& a, const GridFunction& f, double tol_act,
                                            double tol_res) {
    require_same_grid(a.grid, u.grid(), "build_critical_cone");
    require_same_grid(a.grid, phi_u.grid(), "build_critical_cone");
    require_same_grid(a.grid, f.grid(), "build_critical_cone");
    const std::size_t n = std::size_t(u.size());
    CriticalConeSpec c{std::vector<char>(n, 0), std::vector<char>(n, 0), std::vector<char>(n, 0), tol_act, tol_res};
    const Vector res = a.matrix * u.values() - f.values();
    for (std::size_t i = 0; i < n; ++i) {
        if (phi_u[Index(i)] - u[Index(i)] > tol_act) continue;
        c.coincidence[i] = 1;
        if (std::abs(res[Index(i)]) > tol_res) c.strongly_active[i] = 1;
        else c.biactive[i] = 1;
    }
    return c;
}

inline CriticalConeSpec build_critical_cone(const GridFunction& u, const GridFunction& phi_u,
                                            const DiscreteOperator& a, const GridFunction& f) {
    return build_critical_cone(u, phi_u, a, f, default_activity_tolerance(phi_u), default_residual_tolerance(f));
}

// --- alpha iteration ----------------------------------------------------------

/// Directional derivative of the obstacle mapping at the base point.
using DerivativeMap = std::function<GridFunction(const GridFunction&)>;

struct AlphaTrace {
    std::vector<GridFunction> alphas;     ///< alpha_0 = 0, alpha_1, ...
    std::vector<GridFunction> deltas;     ///< delta_1, delta_2, ...
    std::vector<GridFunction> phi_primes; ///< Phi'(u)(alpha_0), Phi'(u)(alpha_1), ...
    std::vector<double> gaps;
    double monotone_violation = 0.0;
    double min_value = 0.0;
    bool converged = false;

    nlohmann::json to_json() const {
        return {{"iterations", int(gaps.size())},
                {"converged", converged},
                {"gaps", gaps},
                {"monotone_violation", monotone_violation},
                {"min_value", min_value}};
    }
};

struct AlphaResult {
    GridFunction alpha;
    AlphaTrace trace;
};

namespace detail {

/// delta = 0 on strongly active nodes, delta <= 0 on biactive nodes, free
/// elsewhere; A delta - rhs <= 0 with complementarity on the biactive nodes.
inline Vector cone_vi_solve(const DiscreteOperator& a, const Vector& rhs, const CriticalConeSpec& cone) {
    const Index n = rhs.size();
    Vector upper = Vector::Constant(n, kInf);
    for (Index i = 0; i < n; ++i)
        if (cone.coincidence[std::size_t(i)]) upper[i] = 0.0;
    const BoundedVI vi{a.matrix, rhs, upper, cone.strongly_active, a.grid.cell_measure(), a.symmetric};
    Vector x = Vector::Zero(n);
    if (finalize_active_set(vi, x)) return x;
    x.setZero();
    const auto run = projected_sor(vi, x, 1.5, 1e-14, 200000);
    if (!run.converged) throw SolverError("cone_vi_solve: projected SOR did not converge", run.history);
    finalize_active_set(vi, x);
    return x;
}

} // namespace detail

inline AlphaResult alpha_iteration(const GridFunction& u, const GridFunction& d, const QVIProblem& qvi,
                                   const CriticalConeSpec& cone, const DerivativeMap& phi_prime,
                                   int n_max = 100, double tol = 1e-12) {
    const DiscreteOperator& a = qvi.A();
    require_same_grid(a.grid, u.grid(), "alpha_iteration");
    require_same_grid(a.grid, d.grid(), "alpha_iteration");
    if (d.values().minCoeff() < 0.0) throw ConfigError("alpha_iteration: direction must be non-negative");
    if (cone.coincidence.size() != std::size_t(u.size())) throw ConfigError("alpha_iteration: cone size mismatch");
    if (!a.m_matrix) throw ConfigError("alpha_iteration: operator is not an M-matrix");

    AlphaTrace tr;
    tr.alphas.push_back(GridFunction::zeros(a.grid));
    const double order_tol = 1e-10 * std::max(1.0, max_norm(solve_unconstrained(a, d)));
    for (int n = 1; n <= n_max; ++n) {
        const GridFunction& prev = tr.alphas.back();
        GridFunction pp = prev.values().isZero(0.0) ? GridFunction::zeros(a.grid) : phi_prime(prev);
        const Vector rhs = d.values() - a.matrix * pp.values();
        GridFunction delta{a.grid, detail::cone_vi_solve(a, rhs, cone)};
        GridFunction next = pp + delta;

        tr.monotone_violation = std::min(tr.monotone_violation, (next.values() - prev.values()).minCoeff());
        tr.min_value = std::min(tr.min_value, next.values().minCoeff());
        if (tr.monotone_violation < -order_tol || tr.min_value < -order_tol)
            throw InvariantViolation("alpha_iteration: iterates lost monotonicity or sign at step " +
                                     std::to_string(n));
        tr.gaps.push_back(l2_norm(next - prev));
        tr.phi_primes.push_back(std::move(pp));
        tr.deltas.push_back(std::move(delta));
        tr.alphas.push_back(std::move(next));
        if (tr.gaps.back() < tol) {
            tr.converged = true;
            break;
        }
    }
    if (!tr.converged) {
        std::ostringstream msg;
        msg << "alpha_iteration: no convergence after " << n_max << " steps, last gap " << std::scientific
            << tr.gaps.back();
        throw SolverError(msg.str(), tr.gaps);
    }
    // Phi'(u)(alpha_n) for the final iterate, for the sign checks.
    tr.phi_primes.push_back(phi_prime(tr.alphas.back()));
    GridFunction alpha = tr.alphas.back();
    return {std::move(alpha), std::move(tr)};
}

// --- expansion ------------------------------------------------------------------

struct ExpansionRow {
    double t = 0.0;
    double r = 0.0;         ///< ||q(t) - u - t alpha|| / t
    double uniform = 0.0;   ///< max_n ||q_n(t) - u - t alpha_n|| / t over the shared iterates
    int qvi_iterations = 0;
};

/// Measures the expansion remainder for each t. `trace`, when given, adds
/// the uniform-in-n remainder over the iterates both sequences share.
inline std::vector<ExpansionRow> expansion_validation(const GridFunction& u, const GridFunction& d,
                                                      const QVIProblem& qvi, const GridFunction& alpha,
                                                      const std::vector<double>& t_list,
                                                      const QviOptions& opt = {},
                                                      const AlphaTrace* trace = nullptr) {
    std::vector<ExpansionRow> rows;
    for (double t : t_list) {
        if (!(t > 0.0)) throw ConfigError("expansion_validation: t values must be positive");
        const QVISolution s = perturbed_selection(qvi, d, t, u, opt);
        ExpansionRow row{t, l2_norm(s.q - u - t * alpha) / t, 0.0, s.trace.iterations()};
        if (trace) {
            const std::size_t m = std::min(s.trace.iterates.size(), trace->alphas.size());
            for (std::size_t n = 0; n < m; ++n)
                row.uniform = std::max(row.uniform, l2_norm(s.trace.iterates[n] - u - t * trace->alphas[n]) / t);
        }
        rows.push_back(row);
    }
    return rows;
}

/// r decreasing along the (descending) t list up to a noise band noise / t,
/// and r(t_last) <= factor * r(t_first).
inline bool expansion_decreasing(const std::vector<ExpansionRow>& rows, double noise, double factor = 0.1) {
    if (rows.size() < 2) return true;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].r > rows[i - 1].r + noise / rows[i].t) return false;
    return rows.back().r <= factor * rows.front().r;
}

struct LemmaReport {
    double alpha_monotone_violation = 0.0; ///< min_n min(alpha_n - alpha_{n-1})
    double alpha_min = 0.0;                ///< min_n min alpha_n
    double alpha1_on_coincidence = 0.0;    ///< max |alpha_1| on the coincidence set
    double phi_prime_min = 0.0;            ///< min_n min Phi'(u)(alpha_n)
    bool superposition_checked = false;
    double delta_identity = 0.0; ///< max |delta_n + Phi'(u)(alpha_{n-1})| on the coincidence set

    bool pass(double tol = 1e-10) const {
        return alpha_monotone_violation >= -tol && alpha_min >= -tol && alpha1_on_coincidence <= tol &&
               phi_prime_min >= -tol && (!superposition_checked || delta_identity <= tol);
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"alpha_monotone_violation", alpha_monotone_violation},
                         {"alpha_min", alpha_min},
                         {"alpha1_on_coincidence", alpha1_on_coincidence},
                         {"phi_prime_min", phi_prime_min}};
        if (superposition_checked) j["delta_identity"] = delta_identity;
        else j["delta_identity"] = "skipped";
        return j;
    }
};

inline LemmaReport coincidence_lemma_checks(const AlphaTrace& tr, const CriticalConeSpec& cone, MappingKind kind) {
    LemmaReport r;
    for (std::size_t n = 1; n < tr.alphas.size(); ++n) {
        r.alpha_monotone_violation =
            std::min(r.alpha_monotone_violation, (tr.alphas[n].values() - tr.alphas[n - 1].values()).minCoeff());
        r.alpha_min = std::min(r.alpha_min, tr.alphas[n].values().minCoeff());
    }
    if (tr.alphas.size() > 1) {
        const GridFunction& a1 = tr.alphas[1];
        for (Index i = 0; i < a1.size(); ++i)
            if (cone.coincidence[std::size_t(i)]) r.alpha1_on_coincidence = std::max(r.alpha1_on_coincidence, std::abs(a1[i]));
    }
    for (const GridFunction& pp : tr.phi_primes) r.phi_prime_min = std::min(r.phi_prime_min, pp.values().minCoeff());
    if (kind == MappingKind::superposition) {
        r.superposition_checked = true;
        for (std::size_t n = 0; n < tr.deltas.size(); ++n)
            for (Index i = 0; i < tr.deltas[n].size(); ++i)
                if (cone.coincidence[std::size_t(i)])
                    r.delta_identity =
                        std::max(r.delta_identity, std::abs(tr.deltas[n][i] + tr.phi_primes[n][i]));
    }
    return r;
}

} // namespace qvi
