#pragma once

/// Thermoforming: a heated membrane u pressed against a mould whose shape
/// y = Phi0 + C_L rho T responds to the heat T exchanged with the membrane,
///
///     k T - Delta T = g(y - u),   dT/dn = 0,
///
/// plus the penalised coupled system solved by a semismooth Newton method.

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"
#include "qvi/qvi_core.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>

namespace qvi::thermo {

struct Config {
    double k = 1.0;
    double alpha = 1e8;
    double kappa = 10.0;
    double s = 1.0;
    double C_L = 5.25e-3;
    double f_const = 1e2;
    int grid_n = 64;
    double newton_tol = 4e-9;
    double delta_N = 0.1;
    int max_newton = 50;

    void validate() const {
        if (!(k > 0.0)) throw ConfigError("thermoforming: k must be positive");
        if (!(alpha > 0.0)) throw ConfigError("thermoforming: alpha must be positive");
        if (!(kappa > 0.0)) throw ConfigError("thermoforming: kappa must be positive");
        if (!(s > 0.0)) throw ConfigError("thermoforming: s must be positive");
        if (!(C_L > 0.0)) throw ConfigError("thermoforming: C_L must be positive");
        if (!std::isfinite(f_const)) throw ConfigError("thermoforming: f_const must be finite");
        if (grid_n < 2) throw ConfigError("thermoforming: grid_n must be at least 2");
        if (!(newton_tol > 0.0)) throw ConfigError("thermoforming: newton_tol must be positive");
        if (!(delta_N >= 0.0 && delta_N <= 1.0)) throw ConfigError("thermoforming: delta_N must lie in [0,1]");
        if (max_newton < 1) throw ConfigError("thermoforming: max_newton must be positive");
    }
};

inline void to_json(nlohmann::json& j, const Config& c) {
    j = {{"k", c.k},         {"alpha", c.alpha},       {"kappa", c.kappa},
         {"s", c.s},         {"C_L", c.C_L},           {"f_const", c.f_const},
         {"grid_n", c.grid_n}, {"newton_tol", c.newton_tol}, {"delta_N", c.delta_N},
         {"max_newton", c.max_newton}};
}

/// Reads the keys present in `j`; absent keys keep their current value.
inline void update_from_json(Config& c, const nlohmann::json& j) {
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("thermoforming config: bad value for '") + key + "': " + e.what());
        }
    };
    get("k", c.k);
    get("alpha", c.alpha);
    get("kappa", c.kappa);
    get("s", c.s);
    get("C_L", c.C_L);
    get("f_const", c.f_const);
    get("grid_n", c.grid_n);
    get("newton_tol", c.newton_tol);
    get("delta_N", c.delta_N);
    get("max_newton", c.max_newton);
}

// --- model ingredients ------------------------------------------------------

/// C1 spline: kappa for r <= 0, decreasing to 0 at r = s.
inline double g_eval(double r, double kappa, double s) {
    if (r <= 0.0) return kappa;
    if (r >= s) return 0.0;
    if (r <= 0.25 * s) return kappa - 8.0 * kappa * r * r / (3.0 * s * s);
    if (r <= 0.75 * s) return 7.0 * kappa / 6.0 - 4.0 * kappa * r / (3.0 * s);
    const double q = s - r;
    return 8.0 * kappa * q * q / (3.0 * s * s);
}

inline double g_prime(double r, double kappa, double s) {
    if (r <= 0.0 || r >= s) return 0.0;
    if (r <= 0.25 * s) return -16.0 * kappa * r / (3.0 * s * s);
    if (r <= 0.75 * s) return -4.0 * kappa / (3.0 * s);
    return -16.0 * kappa * (s - r) / (3.0 * s * s);
}

/// sup |g'| = 4 kappa / (3 s).
inline double g_prime_bound(double kappa, double s) { return 4.0 * kappa / (3.0 * s); }

inline constexpr double kRhoGradientBound = 7.0710678118654752; // sqrt(50)

namespace detail {

inline double rho_radius(double x, double y) { return 2.0 * std::hypot(x - 0.5, y - 0.5); }

inline double rho_at(double x, double y) {
    const double r = rho_radius(x, y);
    return r >= 1.0 ? 0.0 : std::exp(1.0 - 1.0 / (1.0 - r * r));
}

inline double rho_gradient_at(double x, double y) {
    const double r = rho_radius(x, y);
    if (r >= 1.0) return 0.0;
    const double q = 1.0 - r * r;
    return 2.0 * std::exp(1.0 - 1.0 / q) * 2.0 * r / (q * q);
}

/// Trapezoid in the physical node number r = 0..N+1.
inline double trapezoid(int r, int n) {
    const double t = double(r) / n;
    if (t < 0.1 || t > 0.9) return 0.0;
    if (t <= 0.3) return 5.0 * (t - 0.1);
    if (t < 0.7) return 1.0;
    return 1.0 - 5.0 * (t - 0.7);
}

} // namespace detail

/// Radial bump exp(1 - 1/(1 - r^2)), r = 2 |x - (1/2, 1/2)|; 1 at the centre,
/// 0 from the inscribed circle outwards.
inline GridFunction bump_rho(const Grid& grid) {
    if (grid.dim() != 2) throw ConfigError("bump_rho: needs a 2D grid");
    double gmax = 0.0;
    GridFunction rho = GridFunction::sample(grid, [&](double x, double y) {
        gmax = std::max(gmax, detail::rho_gradient_at(x, y));
        return detail::rho_at(x, y);
    });
    if (gmax > kRhoGradientBound)
        throw InvariantViolation("bump_rho: sampled gradient exceeds sqrt(50)");
    return rho;
}

/// (L v)(x) = C_L rho(x) v(x)
inline GridFunction L_apply(const GridFunction& v, double C_L) {
    const GridFunction rho = bump_rho(v.grid());
    return {v.grid(), C_L * rho.values().cwiseProduct(v.values())};
}

/// Initial mould w(i) w(j), w the index-based trapezoid.
inline GridFunction mould_phi0(const Grid& grid) {
    if (grid.dim() != 2) throw ConfigError("mould_phi0: needs a 2D grid");
    Vector v(grid.node_count());
    for (Index k = 0; k < v.size(); ++k) {
        const auto [i, j] = grid.position(k);
        v[k] = detail::trapezoid(i + grid.axis_offset(), grid.n()) *
               detail::trapezoid(j + grid.axis_offset(), grid.n());
    }
    return {grid, std::move(v)};
}

// --- assumptions ------------------------------------------------------------

struct Check {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

struct AssumptionReport {
    double g_prime_sup = 0.0;
    double L_norm_bound = 0.0; ///< C_L sqrt(||rho||_inf^2 + ||grad rho||_inf^2)
    Check x1;                  ///< Lip(g) ||L||_{W->H} < min(1,k)
    Check x2;                  ///< v L v >= 0
    Check smallness;           ///< min(1,k)^{-1} ||L|| ||g'||_inf < 1/2

    bool all_pass() const { return x1.pass && x2.pass && smallness.pass; }

    nlohmann::json to_json() const {
        auto c = [](const Check& ch) {
            return nlohmann::json{{"value", ch.value},
                                  {"threshold", ch.threshold},
                                  {"margin", ch.threshold - ch.value},
                                  {"pass", ch.pass}};
        };
        return {{"g_prime_sup", g_prime_sup},
                {"L_norm_bound", L_norm_bound},
                {x1.name, c(x1)},
                {x2.name, c(x2)},
                {smallness.name, c(smallness)},
                {"all_pass", all_pass()}};
    }
};

/// Analytic checks using ||rho||_inf = 1 and ||grad rho||_inf <= sqrt(50).
/// Only k is required to be positive.
inline AssumptionReport check_assumptions(const Config& cfg) {
    if (!(cfg.k > 0.0)) throw ConfigError("check_assumptions: k must be positive");
    AssumptionReport r;
    const double m = std::min(1.0, cfg.k);
    r.g_prime_sup = cfg.kappa > 0.0 ? g_prime_bound(cfg.kappa, cfg.s) : 0.0;
    r.L_norm_bound = cfg.C_L * std::sqrt(1.0 + kRhoGradientBound * kRhoGradientBound);
    r.x1 = {"X1", r.g_prime_sup * cfg.C_L, m, r.g_prime_sup * cfg.C_L < m};
    r.x2 = {"X2", 0.0, 0.0, cfg.C_L >= 0.0};
    const double v = r.L_norm_bound * r.g_prime_sup / m;
    r.smallness = {"smallness", v, 0.5, v < 0.5};
    return r;
}

// --- model --------------------------------------------------------------------

struct State {
    GridFunction u; ///< membrane, Dirichlet grid
    GridFunction T; ///< temperature, Neumann grid
    GridFunction y; ///< mould, Dirichlet grid
};

struct CoupledSolution {
    State state;
    SolveReport report;
};

/// Discretised model on an N x N interior grid. u and y live on the
/// Dirichlet grid, T on the Neumann grid that adds the boundary ring; the
/// two share the interior nodes.
class Model {
public:
    explicit Model(Config cfg)
        : cfg_((cfg.validate(), cfg)), dgrid_(2, cfg.grid_n, Boundary::dirichlet_zero),
          ngrid_(2, cfg.grid_n, Boundary::neumann), A_(assemble_dirichlet_operator(dgrid_)),
          K_(assemble_neumann_operator(ngrid_, cfg.k)), rho_n_(bump_rho(ngrid_)),
          phi0_d_(mould_phi0(dgrid_)), phi0_n_(mould_phi0(ngrid_)),
          clrho_n_(cfg.C_L * rho_n_.values()), clrho_d_(restrict(clrho_n_)) {}

    const Config& config() const { return cfg_; }
    const Grid& membrane_grid() const { return dgrid_; }
    const Grid& temperature_grid() const { return ngrid_; }
    const DiscreteOperator& A() const { return A_; }
    const DiscreteOperator& K() const { return K_; }
    const GridFunction& phi0() const { return phi0_d_; }
    const GridFunction& phi0_neumann() const { return phi0_n_; }
    /// C_L rho on the temperature grid.
    const Vector& clrho_neumann() const { return clrho_n_; }
    GridFunction forcing() const { return GridFunction::constant(dgrid_, cfg_.f_const); }

    /// Neumann storage index of Dirichlet node k.
    Index to_neumann(Index k) const {
        const auto [i, j] = dgrid_.position(k);
        return ngrid_.index(i + 1, j + 1);
    }

    /// Zero extension to the Neumann grid.
    Vector extend(const Vector& v) const {
        Vector e = Vector::Zero(ngrid_.node_count());
        for (Index k = 0; k < v.size(); ++k) e[to_neumann(k)] = v[k];
        return e;
    }

    Vector restrict(const Vector& t) const {
        Vector r(dgrid_.node_count());
        for (Index k = 0; k < r.size(); ++k) r[k] = t[to_neumann(k)];
        return r;
    }

    /// Solves K T = g(C_L rho T + Phi0 - u) by Newton, falling back to the
    /// fixed point T <- K^{-1} g(...). Converged when the residual is below
    /// tol or the Newton update is below tol (1 + ||T||).
    GridFunction temperature_solve(const GridFunction& u, double tol = 1e-12) const {
        require_same_grid(dgrid_, u.grid(), "temperature_solve");
        const Vector base = phi0_n_.values() - extend(u.values());
        Vector T = Vector::Zero(ngrid_.node_count());
        std::vector<double> hist;

        for (int it = 0; it < 50; ++it) {
            const Vector arg = clrho_n_.cwiseProduct(T) + base;
            const Vector res = K_.matrix * T - g_vec(arg);
            hist.push_back(l2_norm(ngrid_, res));
            if (hist.back() < tol) return {ngrid_, T};
            const Vector dT = solve_weighted(K_.matrix, -g_prime_vec(arg).cwiseProduct(clrho_n_), res);
            T -= dT;
            if (!T.allFinite()) break;
            if (l2_norm(ngrid_, dT) <= tol * (1.0 + l2_norm(ngrid_, T))) return {ngrid_, T};
        }

        // Fixed point: a contraction in the max norm when Lip(g) C_L < k.
        T.setZero();
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> kfac(
            Eigen::SparseMatrix<double>(K_.weights.asDiagonal() * K_.matrix));
        if (kfac.info() != Eigen::Success) throw SolverError("temperature_solve: factorization failed", hist);
        for (int it = 0; it < 2000; ++it) {
            const Vector rhs = K_.weights.cwiseProduct(g_vec(clrho_n_.cwiseProduct(T) + base));
            const Vector Tn = kfac.solve(rhs);
            const double step = l2_norm(ngrid_, Tn - T);
            hist.push_back(step);
            T = Tn;
            if (step <= tol * (1.0 + l2_norm(ngrid_, T))) return {ngrid_, T};
        }
        throw SolverError("temperature_solve: Newton and fixed-point iterations both failed", hist);
    }

    /// Phi(u) = Phi0 + C_L rho T(u) on the membrane grid.
    GridFunction phi(const GridFunction& u) const { return phi_from_temperature(temperature_solve(u)); }

    GridFunction phi_from_temperature(const GridFunction& T) const {
        require_same_grid(ngrid_, T.grid(), "phi_from_temperature");
        return {dgrid_, phi0_d_.values() + clrho_d_.cwiseProduct(restrict(T.values()))};
    }

    ObstacleMap obstacle_map() const {
        return [this](const GridFunction& u) { return phi(u); };
    }

    QVIProblem qvi_problem(const GridFunction& f) const {
        return QVIProblem(A_, f, obstacle_map(), "thermoforming", MappingKind::thermoforming);
    }

    /// Phi'(u)(d) = C_L rho T', where (K - g'(y - u) C_L rho) T' = -g'(y - u) d.
    GridFunction phi_derivative(const GridFunction& u, const GridFunction& d) const {
        return phi_derivative(u, temperature_solve(u), d);
    }

    GridFunction phi_derivative(const GridFunction& u, const GridFunction& T, const GridFunction& d) const {
        require_same_grid(dgrid_, u.grid(), "phi_derivative");
        require_same_grid(dgrid_, d.grid(), "phi_derivative");
        if (d.values().isZero(0.0)) return GridFunction::zeros(dgrid_);
        const Vector gp = g_prime_vec(clrho_n_.cwiseProduct(T.values()) + phi0_n_.values() - extend(u.values()));
        const Vector dT = solve_weighted(K_.matrix, -gp.cwiseProduct(clrho_n_), -gp.cwiseProduct(extend(d.values())));
        return {dgrid_, clrho_d_.cwiseProduct(restrict(dT))};
    }

    /// Stacked residual (F1 on the membrane grid, F2 on the temperature
    /// grid, F3 on the membrane grid).
    Vector coupled_residual(const State& s, const GridFunction& f) const {
        check_state(s);
        const Index nd = dgrid_.node_count(), nn = ngrid_.node_count();
        const Vector& u = s.u.values();
        const Vector& T = s.T.values();
        const Vector& y = s.y.values();
        Vector F(2 * nd + nn);
        F.head(nd) = A_.matrix * u + cfg_.alpha * (u - y).cwiseMax(0.0) - f.values();
        F.segment(nd, nn) = K_.matrix * T - g_vec(extend(y - u));
        F.tail(nd) = y - phi0_d_.values() - clrho_d_.cwiseProduct(restrict(T));
        return F;
    }

    /// Discrete L2 norm of a stacked vector (all blocks share h).
    double stacked_norm(const Vector& F) const { return std::sqrt(dgrid_.cell_measure()) * F.norm(); }

    /// Newton derivative of the stacked residual. `penalty_slope`, when
    /// given, replaces the Newton derivative of max(0, u - y) nodewise.
    SparseMatrix coupled_jacobian(const State& s, const Vector* penalty_slope = nullptr) const {
        check_state(s);
        const Index nd = dgrid_.node_count(), nn = ngrid_.node_count();
        const Vector& u = s.u.values();
        const Vector gp = g_prime_vec(extend(s.y.values() - u));
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(std::size_t(A_.matrix.nonZeros() + K_.matrix.nonZeros() + 6 * nd));
        for (Index r = 0; r < nd; ++r) {
            for (SparseMatrix::InnerIterator it(A_.matrix, r); it; ++it) trip.emplace_back(r, it.col(), it.value());
            const double dm = cfg_.alpha * (penalty_slope ? (*penalty_slope)[r]
                                                          : newton_derivative_max(u[r] - s.y[r], cfg_.delta_N));
            if (dm != 0.0) {
                trip.emplace_back(r, r, dm);
                trip.emplace_back(r, nd + nn + r, -dm);
            }
        }
        for (Index r = 0; r < nn; ++r)
            for (SparseMatrix::InnerIterator it(K_.matrix, r); it; ++it)
                trip.emplace_back(nd + r, nd + it.col(), it.value());
        for (Index k = 0; k < nd; ++k) {
            const Index kn = to_neumann(k);
            if (gp[kn] != 0.0) {
                trip.emplace_back(nd + kn, k, gp[kn]);
                trip.emplace_back(nd + kn, nd + nn + k, -gp[kn]);
            }
            trip.emplace_back(nd + nn + k, nd + kn, -clrho_d_[k]);
            trip.emplace_back(nd + nn + k, nd + nn + k, 1.0);
        }
        SparseMatrix J(2 * nd + nn, 2 * nd + nn);
        J.setFromTriplets(trip.begin(), trip.end());
        return J;
    }

    State initial_state() const {
        return {0.9 * phi0_d_, GridFunction::constant(ngrid_, 0.2), GridFunction::constant(dgrid_, 10.0)};
    }

    /// Semismooth Newton on the stacked system, undamped, until the stacked
    /// L2 residual drops below newton_tol.
    /// `on_iterate(j, state)` sees the state after the j-th Newton update.
    CoupledSolution coupled_newton(const GridFunction& f, std::optional<State> init = std::nullopt,
                                   const std::function<void(int, const State&)>& on_iterate = {}) const {
        const auto t0 = std::chrono::steady_clock::now();
        require_same_grid(dgrid_, f.grid(), "coupled_newton");
        State s = init ? *init : initial_state();
        check_state(s);
        Vector x = pack(s);

        std::vector<double> hist;
        Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu;
        for (int it = 0;; ++it) {
            s = unpack(x);
            if (it > 0 && on_iterate) on_iterate(it, s);
            const Vector F = coupled_residual(s, f);
            hist.push_back(stacked_norm(F));
            if (hist.back() < cfg_.newton_tol) {
                SolveReport rep;
                rep.iterations = it;
                rep.final_residual = hist.back();
                rep.residual_history = std::move(hist);
                rep.active_set = active_set(s.u, s.y, default_activity_tolerance(s.y));
                rep.wall_time_s = qvi::detail::seconds_since(t0);
                return {std::move(s), std::move(rep)};
            }
            if (!std::isfinite(hist.back()) || it == cfg_.max_newton) {
                std::ostringstream msg;
                msg << "coupled_newton: no convergence after " << it << " iterations, residual "
                    << std::scientific << hist.back() << " (tol " << cfg_.newton_tol << ")";
                throw SolverError(msg.str(), hist);
            }
            const Eigen::SparseMatrix<double> J = coupled_jacobian(s);
            if (it == 0) lu.analyzePattern(J);
            lu.factorize(J);
            if (lu.info() != Eigen::Success) {
                lu.analyzePattern(J);
                lu.factorize(J);
                if (lu.info() != Eigen::Success) throw SolverError("coupled_newton: singular Newton matrix", hist);
            }
            x -= lu.solve(F);
        }
    }

    CoupledSolution coupled_newton() const { return coupled_newton(forcing()); }

    Vector pack(const State& s) const {
        check_state(s);
        Vector x(2 * dgrid_.node_count() + ngrid_.node_count());
        x << s.u.values(), s.T.values(), s.y.values();
        return x;
    }

    State unpack(const Vector& x) const {
        const Index nd = dgrid_.node_count(), nn = ngrid_.node_count();
        if (x.size() != 2 * nd + nn) throw ConfigError("unpack: stacked vector has wrong size");
        return {GridFunction(dgrid_, x.head(nd)), GridFunction(ngrid_, x.segment(nd, nn)),
                GridFunction(dgrid_, x.tail(nd))};
    }

    Vector g_vec(const Vector& r) const {
        return r.unaryExpr([&](double v) { return g_eval(v, cfg_.kappa, cfg_.s); });
    }

    Vector g_prime_vec(const Vector& r) const {
        return r.unaryExpr([&](double v) { return g_prime(v, cfg_.kappa, cfg_.s); });
    }

    /// C_L rho on the membrane grid.
    const Vector& mould_weight() const { return clrho_d_; }
    const Vector& mould_weight_neumann() const { return clrho_n_; }

    /// Solves (K + diag(shift)) x = b through the symmetric scaled form.
    Vector solve_weighted(const SparseMatrix& k, const Vector& shift, const Vector& b) const {
        SparseMatrix m = k;
        for (Index i = 0; i < m.rows(); ++i) m.coeffRef(i, i) += shift[i];
        const SparseMatrix sym = K_.weights.asDiagonal() * m;
        return qvi::detail::solve_direct(sym, K_.weights.cwiseProduct(b), true);
    }

private:
    void check_state(const State& s) const {
        require_same_grid(dgrid_, s.u.grid(), "thermoforming state (u)");
        require_same_grid(ngrid_, s.T.grid(), "thermoforming state (T)");
        require_same_grid(dgrid_, s.y.grid(), "thermoforming state (y)");
    }

    Config cfg_;
    Grid dgrid_;
    Grid ngrid_;
    DiscreteOperator A_;
    DiscreteOperator K_;
    GridFunction rho_n_;
    GridFunction phi0_d_;
    GridFunction phi0_n_;
    Vector clrho_n_;
    Vector clrho_d_;
};

// --- diagnostics --------------------------------------------------------------

/// Middle row j = m/2 of a 2D grid function as a 1D grid function.
inline GridFunction center_slice(const GridFunction& v) {
    const Grid& g = v.grid();
    if (g.dim() != 2) throw ConfigError("center_slice: needs a 2D grid function");
    const int m = g.nodes_per_axis();
    Vector s(m);
    for (int i = 0; i < m; ++i) s[i] = v[g.index(i, m / 2)];
    return {Grid(1, g.n(), g.bc()), std::move(s)};
}

/// ||Delta_Gamma H - H''|| / ||H''|| over interior nodes, where
/// Delta_Gamma H = H''/(1 + w'^2) - w' w'' H'/(1 + w'^2)^2 is the Laplacian on
/// the curve (x, w(x)). Zero when w is flat.
inline double beltrami_flatness_diagnostic(const GridFunction& w, const GridFunction& H) {
    require_same_grid(w.grid(), H.grid(), "beltrami_flatness_diagnostic");
    if (w.grid().dim() != 1) throw ConfigError("beltrami_flatness_diagnostic: needs 1D profiles");
    const double h = w.grid().h();
    double num = 0.0, den = 0.0;
    for (Index i = 1; i + 1 < w.size(); ++i) {
        const double w1 = (w[i + 1] - w[i - 1]) / (2 * h);
        const double w2 = (w[i + 1] - 2 * w[i] + w[i - 1]) / (h * h);
        const double h1 = (H[i + 1] - H[i - 1]) / (2 * h);
        const double h2 = (H[i + 1] - 2 * H[i] + H[i - 1]) / (h * h);
        const double q = 1.0 + w1 * w1;
        const double lg = h2 / q - w1 * w2 * h1 / (q * q);
        num += (lg - h2) * (lg - h2);
        den += h2 * h2;
    }
    return den == 0.0 ? 0.0 : std::sqrt(num / den);
}

} // namespace qvi::thermo
