#pragma once

/// Quasi-variational inequalities of obstacle type
///
///     u <= Phi(u),   <A u - f, u - v> <= 0   for all v <= Phi(u),
///
/// solved by the monotone iteration q_n = S(f, q_{n-1}) started from a
/// subsolution and bracketed above by the unconstrained solution A^{-1} f.

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"

#include "json.hpp"

#include <memory>
#include <string>

namespace qvi {

enum class MappingKind {
    general,       ///< user supplied; convergence of the limit is not verified
    superposition, ///< (Phi v)(x) depends on v(x) only
    thermoforming, ///< the heat-exchange mould mapping
};

inline const char* to_string(MappingKind k) {
    switch (k) {
    case MappingKind::superposition: return "superposition";
    case MappingKind::thermoforming: return "thermoforming";
    default: return "general";
    }
}

class QVIProblem {
public:
    /// Checks Phi(0) >= 0 nodewise.
    QVIProblem(DiscreteOperator a, GridFunction f, ObstacleMap phi, std::string label,
               MappingKind kind = MappingKind::general)
        : a_(std::make_shared<const DiscreteOperator>(std::move(a))), f_(std::move(f)),
          phi_(std::move(phi)), label_(std::move(label)), kind_(kind) {
        require_same_grid(a_->grid, f_.grid(), "QVIProblem");
        if (!phi_) throw ConfigError("QVIProblem: empty obstacle mapping");
        const GridFunction phi0 = phi_(GridFunction::zeros(f_.grid()));
        require_same_grid(a_->grid, phi0.grid(), "QVIProblem (obstacle mapping)");
        if (phi0.values().minCoeff() < 0.0)
            throw ConfigError("QVIProblem '" + label_ + "': Phi(0) has negative entries");
    }

    const DiscreteOperator& A() const { return *a_; }
    const GridFunction& f() const { return f_; }
    const ObstacleMap& phi() const { return phi_; }
    const std::string& label() const { return label_; }
    MappingKind kind() const { return kind_; }

    /// Whether the mapping is known to satisfy the compactness/concavity
    /// hypotheses under which the monotone limit solves the QVI.
    bool verified_limit() const { return kind_ != MappingKind::general; }

    QVIProblem with_forcing(GridFunction f) const {
        require_same_grid(a_->grid, f.grid(), "QVIProblem::with_forcing");
        QVIProblem p = *this;
        p.f_ = std::move(f);
        return p;
    }

private:
    std::shared_ptr<const DiscreteOperator> a_;
    GridFunction f_;
    ObstacleMap phi_;
    std::string label_;
    MappingKind kind_;
};

struct IterationTrace {
    std::vector<GridFunction> iterates; ///< q_0, q_1, ..., q_n
    std::vector<double> gaps;           ///< ||q_k - q_{k-1}||
    double monotone_violation = 0.0;    ///< most negative ordered step (0 if none)
    double bound_violation = 0.0;       ///< max(q_k - qbar), <= 0 when bracketed
    bool converged = false;
    GridFunction sup_bound;

    int iterations() const { return int(gaps.size()); }

    nlohmann::json to_json() const {
        std::vector<double> norms;
        for (const auto& q : iterates) norms.push_back(l2_norm(q));
        return {{"iterations", iterations()},
                {"converged", converged},
                {"gaps", gaps},
                {"iterate_norms", norms},
                {"monotone_violation", monotone_violation},
                {"bound_violation", bound_violation},
                {"sup_bound_norm", l2_norm(sup_bound)}};
    }
};

struct QVISolution {
    GridFunction q;
    IterationTrace trace;
};

struct QviOptions {
    double tol = 1e-10;
    int max_iter = 200;
    SMapOptions vi;
    /// Iterate downwards from a supersolution instead of upwards.
    bool decreasing = false;
    /// Ordering tolerance, relative to max(1, ||qbar||_inf).
    double order_tol = 1e-12;
    /// Bracketing tolerance q_n <= qbar, relative to max(1, ||qbar||_inf).
    double bracket_tol = 1e-10;
};

/// ubar = A^{-1} f (sparse direct solve).
inline GridFunction solve_unconstrained(const DiscreteOperator& a, const GridFunction& f) {
    require_same_grid(a.grid, f.grid(), "solve_unconstrained");
    return {a.grid, detail::solve_direct(a.matrix, f.values(), a.symmetric)};
}

/// Monotone VI iteration q_n = S(f, q_{n-1}) until ||q_n - q_{n-1}|| < tol.
inline QVISolution qvi_fixed_point(const QVIProblem& p, const GridFunction& q0, const QviOptions& opt = {}) {
    require_same_grid(p.A().grid, q0.grid(), "qvi_fixed_point");
    if (!(opt.tol > 0.0) || opt.max_iter < 1) throw ConfigError("qvi_fixed_point: bad tolerance or iteration cap");

    IterationTrace tr{{q0}, {}, 0.0, -detail::kInf, false, solve_unconstrained(p.A(), p.f())};
    const double scale = std::max(1.0, max_norm(tr.sup_bound));
    const double sign = opt.decreasing ? -1.0 : 1.0;

    for (int n = 1; n <= opt.max_iter; ++n) {
        const GridFunction& prev = tr.iterates.back();
        SMapOptions vo = opt.vi;
        if (vo.solver == ViSolver::psor) vo.psor.initial = prev.values();
        GridFunction q = s_map(p.A(), p.f(), p.phi(), prev, vo);

        const Vector step = sign * (q.values() - prev.values());
        if (n == 1 && step.minCoeff() < -1e-10) {
            throw ConfigError(std::string("qvi_fixed_point: initial iterate is not a ") +
                              (opt.decreasing ? "supersolution" : "subsolution"));
        }
        if (n > 1) {
            tr.monotone_violation = std::min(tr.monotone_violation, step.minCoeff());
            if (tr.monotone_violation < -opt.order_tol * scale)
                throw InvariantViolation("qvi_fixed_point: iterates lost monotonicity at step " +
                                         std::to_string(n));
        }
        tr.bound_violation = std::max(tr.bound_violation, (q.values() - tr.sup_bound.values()).maxCoeff());
        if (!opt.decreasing && tr.bound_violation > opt.bracket_tol * scale)
            throw InvariantViolation("qvi_fixed_point: iterate exceeds the unconstrained solution");

        tr.gaps.push_back(l2_norm(q - prev));
        tr.iterates.push_back(std::move(q));
        if (tr.gaps.back() < opt.tol) {
            tr.converged = true;
            break;
        }
    }
    if (!tr.converged) {
        std::ostringstream msg;
        msg << "qvi_fixed_point: no fixed point after " << opt.max_iter << " iterations, last gap "
            << std::scientific << tr.gaps.back();
        throw SolverError(msg.str(), tr.gaps);
    }
    GridFunction q = tr.iterates.back();
    return {std::move(q), std::move(tr)};
}

/// q(t) in Q(f + t d), reached from u_base in Q(f) by the increasing iteration.
inline QVISolution perturbed_selection(const QVIProblem& p, const GridFunction& d, double t,
                                       const GridFunction& u_base, const QviOptions& opt = {}) {
    require_same_grid(p.A().grid, d.grid(), "perturbed_selection");
    if (d.values().minCoeff() < 0.0) throw ConfigError("perturbed_selection: direction must be non-negative");
    if (!(t >= 0.0)) throw ConfigError("perturbed_selection: t must be non-negative");
    if (t == 0.0 || d.values().isZero(0.0)) {
        IterationTrace tr{{u_base}, {}, 0.0, 0.0, true, solve_unconstrained(p.A(), p.f())};
        return {u_base, std::move(tr)};
    }
    const QVIProblem pt = p.with_forcing(p.f() + t * d);
    QviOptions o = opt;
    o.decreasing = false;
    QVISolution s = qvi_fixed_point(pt, u_base, o);
    const double scale = std::max(1.0, max_norm(s.trace.sup_bound));
    if ((u_base.values() - s.q.values()).maxCoeff() > o.bracket_tol * scale)
        throw InvariantViolation("perturbed_selection: q(t) fell below the base solution");
    return s;
}

struct LipschitzRow {
    double t;
    double ratio; ///< ||q(t) - u|| / t
};

inline std::vector<LipschitzRow> lipschitz_diagnostic(const QVIProblem& p, const GridFunction& d,
                                                      const std::vector<double>& t_list,
                                                      const GridFunction& u_base,
                                                      const QviOptions& opt = {}) {
    std::vector<LipschitzRow> rows;
    for (double t : t_list) {
        if (!(t > 0.0)) throw ConfigError("lipschitz_diagnostic: t values must be positive");
        const QVISolution s = perturbed_selection(p, d, t, u_base, opt);
        rows.push_back({t, l2_norm(s.q - u_base) / t});
    }
    return rows;
}

} // namespace qvi
