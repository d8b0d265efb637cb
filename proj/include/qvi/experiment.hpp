#pragma once

/// Experiment orchestration: configuration, the multi-grid thermoforming
/// study with its report files, shared benchmark instances and the
/// randomized property suite.

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"
#include "qvi/oracle.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/sensitivity.hpp"
#include "qvi/synthetic.hpp"
#include "qvi/thermoforming.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace qvi::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

struct ExperimentConfig {
    thermo::Config model;
    std::vector<int> grids{64, 128, 256};
    std::string outputs_dir = "outputs";
    std::uint64_t seed = 12345;
    bool emit_iterates = false;
    double epsilon = 1e-5;
    double smoothing = 1e-5;
    int property_grid = 16;

    void validate() const {
        model.validate();
        if (grids.empty()) throw ConfigError("config: grids must not be empty");
        for (int n : grids)
            if (n < 2) throw ConfigError("config: every grid size must be at least 2");
        if (outputs_dir.empty()) throw ConfigError("config: outputs_dir must not be empty");
        if (!(epsilon > 0.0)) throw ConfigError("config: epsilon must be positive");
        if (!(smoothing > 0.0)) throw ConfigError("config: smoothing must be positive");
        if (property_grid < 4) throw ConfigError("config: property_grid must be at least 4");
    }
};

inline json to_json(const ExperimentConfig& c) {
    json j = c.model;
    j.erase("grid_n");
    j["grids"] = c.grids;
    j["outputs_dir"] = c.outputs_dir;
    j["seed"] = c.seed;
    j["emit_iterates"] = c.emit_iterates;
    j["epsilon"] = c.epsilon;
    j["smoothing"] = c.smoothing;
    j["property_grid"] = c.property_grid;
    return j;
}

/// Flat JSON object; thermoforming keys sit next to the experiment keys.
/// Unknown keys are rejected.
inline void update_from_json(ExperimentConfig& c, const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    static const std::set<std::string> known{"k",        "alpha",      "kappa",       "s",
                                             "C_L",      "f_const",    "newton_tol",  "delta_N",
                                             "max_newton", "grids",    "outputs_dir", "seed",
                                             "emit_iterates", "epsilon", "smoothing", "property_grid"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    thermo::update_from_json(c.model, j);
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    };
    get("grids", c.grids);
    get("outputs_dir", c.outputs_dir);
    get("seed", c.seed);
    get("emit_iterates", c.emit_iterates);
    get("epsilon", c.epsilon);
    get("smoothing", c.smoothing);
    get("property_grid", c.property_grid);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    ExperimentConfig c;
    try {
        update_from_json(c, json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return c;
}

/// QVI_OUTPUT_DIR overrides outputs_dir.
inline void apply_environment(ExperimentConfig& c) {
    if (const char* dir = std::getenv("QVI_OUTPUT_DIR"); dir && *dir) c.outputs_dir = dir;
}

// --- shared instances -----------------------------------------------------------

/// Indicator of {x > 1/2}.
inline GridFunction right_half(const Grid& grid, double amplitude = 1.0) {
    return GridFunction::sample(grid, [&](double x, double) { return x > 0.5 ? amplitude : 0.0; });
}

/// Fixed-obstacle problem on 50 nodes whose contact set grows for t < 0.1.
struct MignotInstance {
    GridFunction psi;
    QVIProblem problem;
    GridFunction direction;
    synthetic::DerivativeAt derivative;
};

inline MignotInstance mignot_instance() {
    const Grid g(1, 50, Boundary::dirichlet_zero);
    GridFunction psi = GridFunction::sample(g, [](double x, double) { return 0.05 + 0.5 * (x - 0.5) * (x - 0.5); });
    QVIProblem p(assemble_dirichlet_operator(g), GridFunction::constant(g, 10.0),
                 [psi](const GridFunction&) { return psi; }, "mignot", MappingKind::superposition);
    GridFunction d = GridFunction::sample(g, [](double x, double) { return 50.0 * (1.0 + x); });
    return {psi, std::move(p), std::move(d),
            [](const GridFunction&, const GridFunction& v) { return GridFunction::zeros(v.grid()); }};
}

/// Forcing level and direction amplitude giving partial contact at 16^2.
/// The default forcing puts nearly every node in contact and makes the
/// expansion exact.
inline constexpr double kExpansionForcing = 20.0;
inline constexpr double kExpansionAmplitude = 10.0;

struct ThermoQvi {
    GridFunction u;
    GridFunction T;
    GridFunction phi_u;
    QVIProblem problem;
    IterationTrace trace;
};

/// QVI solution of the thermoforming problem by the monotone iteration from 0.
inline ThermoQvi solve_thermo_qvi(const thermo::Model& m, const GridFunction& f, double tol = 1e-10) {
    QVIProblem p = m.qvi_problem(f);
    QviOptions o;
    o.tol = tol;
    QVISolution s = qvi_fixed_point(p, GridFunction::zeros(m.membrane_grid()), o);
    GridFunction T = m.temperature_solve(s.q);
    GridFunction phi_u = m.phi_from_temperature(T);
    return {std::move(s.q), std::move(T), std::move(phi_u), std::move(p), std::move(s.trace)};
}

struct SensitivityRun {
    CriticalConeSpec cone;
    AlphaResult alpha;
    LemmaReport lemmas;
    std::vector<ExpansionRow> expansion;
};

inline const std::vector<double>& expansion_t_list() {
    static const std::vector<double> t{1e-1, 1e-2, 1e-3, 1e-4};
    return t;
}

/// Noise band for the remainder ratios: solves agree to about 1e-12 (1 + ||u||).
inline double expansion_noise(const GridFunction& u) { return 2e-12 * (1.0 + max_norm(u)); }

inline SensitivityRun run_sensitivity(const GridFunction& u, const GridFunction& phi_u, const QVIProblem& p,
                                      const GridFunction& d, const DerivativeMap& phi_prime,
                                      const std::vector<double>& t_list, double qvi_tol = 1e-13) {
    CriticalConeSpec cone = build_critical_cone(u, phi_u, p.A(), p.f());
    AlphaResult a = alpha_iteration(u, d, p, cone, phi_prime);
    LemmaReport lem = coincidence_lemma_checks(a.trace, cone, p.kind());
    QviOptions o;
    o.tol = qvi_tol;
    auto rows = expansion_validation(u, d, p, a.alpha, t_list, o, &a.trace);
    return {std::move(cone), std::move(a), lem, std::move(rows)};
}

// --- table 1 -----------------------------------------------------------------------

struct Table1Row {
    int n = 0;
    bool ok = false;
    std::string error;
    int newton_iterations = 0;
    double system_residual = 0.0;
    double derivative_residual = 0.0;
    double quotient_deviation = 0.0;
    double coupled_gap = 0.0;
    double coupled_quotient_deviation = 0.0;
    double wall_time = 0.0;
};

struct ResultsTable {
    std::vector<Table1Row> rows;

    json to_json() const {
        json arr = json::array();
        for (const auto& r : rows) {
            json j{{"n", r.n}, {"ok", r.ok}};
            if (r.ok) {
                j["newton_iterations"] = r.newton_iterations;
                j["system_residual"] = r.system_residual;
                j["derivative_residual"] = r.derivative_residual;
                j["quotient_deviation"] = r.quotient_deviation;
                j["coupled_gap"] = r.coupled_gap;
                j["coupled_quotient_deviation"] = r.coupled_quotient_deviation;
            } else {
                j["error"] = r.error;
            }
            arr.push_back(j);
        }
        return {{"rows", arr}};
    }
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + path.string());
}

inline std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

/// Coincidence mask as an N x N 0/1 matrix, top row = largest y.
inline void write_mask(const fs::path& path, const Grid& g, const ActiveSet& a) {
    std::ostringstream s;
    const int m = g.nodes_per_axis();
    for (int j = m - 1; j >= 0; --j) {
        for (int i = 0; i < m; ++i) s << (i ? "," : "") << (a[g.index(i, j)] ? 1 : 0);
        s << '\n';
    }
    write_text(path, s.str());
}

inline json report_json(const SolveReport& r) {
    return {{"iterations", r.iterations},
            {"final_residual", r.final_residual},
            {"residual_history", r.residual_history},
            {"active_count", r.active_set.count()}};
}

} // namespace detail

/// One grid of the study: Newton solve, derivative, quotient, coupled
/// derivative. Files go to `dir`.
inline Table1Row run_table1_row(const ExperimentConfig& cfg, int n, const fs::path& dir) {
    Table1Row row;
    row.n = n;
    thermo::Config mc = cfg.model;
    mc.grid_n = n;
    const thermo::Model model(mc);
    const SmoothedMax sm{cfg.smoothing};

    const fs::path iter_dir = dir / "iterates";
    if (cfg.emit_iterates) fs::create_directories(iter_dir);
    auto on_iterate = [&](int j, const thermo::State& s) {
        if (cfg.emit_iterates) write_csv((iter_dir / ("u_" + std::to_string(j) + ".csv")).string(), s.u);
    };
    const thermo::CoupledSolution base = model.coupled_newton(model.forcing(), std::nullopt, on_iterate);
    const GridFunction d = right_half(model.membrane_grid());
    const QuotientCheck qc = difference_quotient_check(model, base, d, cfg.epsilon, sm);
    const CoupledDerivative cd = coupled_derivative_solve(model, base.state, d, sm);

    row.ok = true;
    row.newton_iterations = base.report.iterations;
    row.system_residual = base.report.final_residual;
    row.derivative_residual = qc.derivative.residual;
    row.quotient_deviation = qc.deviation;
    row.coupled_gap = cd.partial_gap;
    row.coupled_quotient_deviation = l2_norm(qc.quotient - cd.w);
    row.wall_time = base.report.wall_time_s;

    write_csv((dir / "u.csv").string(), base.state.u);
    write_csv((dir / "T.csv").string(), base.state.T);
    write_csv((dir / "y.csv").string(), base.state.y);
    write_csv((dir / "derivative.csv").string(), qc.derivative.w);
    write_csv((dir / "quotient.csv").string(), qc.quotient);
    write_csv((dir / "derivative_coupled.csv").string(), cd.w);
    detail::write_mask(dir / "coincidence.csv", model.membrane_grid(), base.report.active_set);

    const double flat = thermo::beltrami_flatness_diagnostic(thermo::center_slice(model.phi0_neumann()),
                                                             thermo::center_slice(base.state.T));
    json rep{{"n", n},
             {"newton", detail::report_json(base.report)},
             {"derivative", {{"residual", qc.derivative.residual}, {"smoothing", cfg.smoothing}}},
             {"quotient",
              {{"epsilon", cfg.epsilon},
               {"deviation", qc.deviation},
               {"perturbed", detail::report_json(qc.perturbed_report)}}},
             {"coupled_derivative",
              {{"residual", cd.residual},
               {"gap_to_partial", cd.partial_gap},
               {"quotient_deviation", row.coupled_quotient_deviation}}},
             {"assumptions", thermo::check_assumptions(mc).to_json()},
             {"flatness_diagnostic", flat}};
    detail::write_text(dir / "report.json", rep.dump(2) + "\n");
    return row;
}

/// Runs every grid; a failing grid is recorded in its row and the study
/// continues. Writes table1.csv, table1.json and timing.csv (wall times only,
/// kept apart so the other files are reproducible bit for bit).
inline ResultsTable run_table1(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path out = cfg.outputs_dir;
    fs::create_directories(out);
    ResultsTable table;
    for (int n : cfg.grids) {
        const fs::path final_dir = out / ("n" + std::to_string(n));
        const fs::path tmp_dir = out / ("n" + std::to_string(n) + ".partial");
        fs::remove_all(tmp_dir);
        fs::create_directories(tmp_dir);
        Table1Row row;
        try {
            row = run_table1_row(cfg, n, tmp_dir);
        } catch (const std::exception& e) {
            row = Table1Row{};
            row.n = n;
            row.error = e.what();
            detail::write_text(tmp_dir / "error.txt", row.error + "\n");
        }
        fs::remove_all(final_dir);
        fs::rename(tmp_dir, final_dir);
        table.rows.push_back(row);
    }

    std::ostringstream csv, timing;
    csv << "n,ok,newton_iterations,system_residual,derivative_residual,quotient_deviation,coupled_gap\n";
    timing << "n,wall_time_s\n";
    for (const auto& r : table.rows) {
        csv << r.n << ',' << (r.ok ? 1 : 0) << ',' << r.newton_iterations << ',' << detail::fmt(r.system_residual)
            << ',' << detail::fmt(r.derivative_residual) << ',' << detail::fmt(r.quotient_deviation) << ','
            << detail::fmt(r.coupled_gap) << '\n';
        timing << r.n << ',' << detail::fmt(r.wall_time) << '\n';
    }
    detail::write_text(out / "table1.csv", csv.str());
    detail::write_text(out / "table1.json", table.to_json().dump(2) + "\n");
    detail::write_text(out / "timing.csv", timing.str());
    return table;
}

// --- property suite --------------------------------------------------------------

struct PropertyResult {
    std::string module;
    std::string name;
    bool pass = false;
    json detail;
};

struct PropertyReport {
    std::vector<PropertyResult> results;

    bool all_pass() const {
        return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
    }

    json to_json() const {
        json arr = json::array();
        for (const auto& r : results)
            arr.push_back({{"module", r.module}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
        return {{"all_pass", all_pass()}, {"properties", arr}};
    }
};

namespace detail {

inline SMapOptions penalty_options(double alpha) {
    SMapOptions o;
    o.solver = ViSolver::penalty;
    o.penalty.alpha = alpha;
    o.penalty.tol = 1e-10;
    return o;
}

inline PropertyResult grid_max_principle(std::mt19937_64& rng) {
    const Grid gd(2, 8, Boundary::dirichlet_zero), gn(2, 8, Boundary::neumann);
    const DiscreteOperator a = assemble_dirichlet_operator(gd);
    const DiscreteOperator k = assemble_neumann_operator(gn, 1.0);
    double worst = qvi::detail::kInf;
    for (int i = 0; i < 100; ++i) {
        const DiscreteOperator& op = i % 2 ? k : a;
        const GridFunction b = synthetic::uniform_nodes(op.grid, rng, 0.0, 1.0);
        worst = std::min(worst, linear_solve(op, b).values().minCoeff());
    }
    return {"grid", "max_principle", worst >= 0.0, {{"min_solution_entry", worst}, {"samples", 100}}};
}

inline PropertyResult grid_coercivity(std::mt19937_64& rng) {
    const Grid g(2, 8, Boundary::dirichlet_zero);
    const DiscreteOperator a = assemble_dirichlet_operator(g);
    double worst = qvi::detail::kInf;
    for (int i = 0; i < 50; ++i) {
        const GridFunction v = synthetic::uniform_nodes(g, rng, -1.0, 1.0);
        worst = std::min(worst, l2_inner(v, a.apply(v)) / l2_inner(v, v));
    }
    return {"grid", "coercivity", worst >= 1.0 - 1e-12, {{"min_rayleigh_quotient", worst}, {"samples", 50}}};
}

inline PropertyResult grid_symmetry() {
    const DiscreteOperator a = assemble_dirichlet_operator(Grid(2, 8, Boundary::dirichlet_zero));
    const DiscreteOperator k = assemble_neumann_operator(Grid(2, 8, Boundary::neumann), 1.0);
    const double sa = asymmetry(a.matrix);
    const double sk = asymmetry(SparseMatrix(k.weights.asDiagonal() * k.matrix));
    return {"grid", "symmetry", sa == 0.0 && sk == 0.0, {{"dirichlet", sa}, {"neumann_weighted", sk}}};
}

inline std::vector<PropertyResult> obstacle_properties(std::mt19937_64& rng) {
    std::vector<PropertyResult> out;
    double feas_psor = -qvi::detail::kInf, feas_pen_excess = -qvi::detail::kInf, oracle_gap = 0.0, bias_excess = -qvi::detail::kInf;
    double mono_psi = 0.0, mono_f = 0.0, identity_gap = 0.0;
    for (int i = 0; i < 20; ++i) {
        const ObstacleProblem p = synthetic::random_obstacle_problem(rng);
        const GridFunction up = vi_solve_psor(p).u;
        const VISolution pen = vi_solve_penalty(p, 1e8, 1e-10);
        const GridFunction ue = enumerate_active_sets(p);
        feas_psor = std::max(feas_psor, (up.values() - p.psi.values()).maxCoeff());
        const double viol8 = std::max(0.0, (pen.u.values() - p.psi.values()).maxCoeff());
        const Vector res8 = p.A.matrix * pen.u.values() - p.f.values();
        const double bound = res8.cwiseAbs().maxCoeff() / 1e8;
        feas_pen_excess = std::max(feas_pen_excess, viol8 - bound * (1.0 + 1e-6));
        oracle_gap = std::max({oracle_gap, max_norm(up - ue), max_norm(pen.u - ue)});
        const double viol6 = std::max(0.0, (vi_solve_penalty(p, 1e6, 1e-10).u.values() - p.psi.values()).maxCoeff());
        bias_excess = std::max(bias_excess, viol8 - viol6);

        const GridFunction psi2 = p.psi + synthetic::uniform_nodes(p.A.grid, rng, 0.0, 0.2);
        mono_psi = std::min(mono_psi, (s_map(p.A, p.f, psi2).values() - up.values()).minCoeff());
        const GridFunction f2 = p.f + synthetic::uniform_nodes(p.A.grid, rng, 0.0, 2.0);
        mono_f = std::min(mono_f, (s_map(p.A, f2, p.psi).values() - up.values()).minCoeff());

        const synthetic::Mapping m = synthetic::family_member(i % 10, p.A.grid);
        const GridFunction phi_psi = m.phi(p.psi);
        const GridFunction lhs = s_map(p.A, p.f, phi_psi);
        const GridFunction rhs = phi_psi - s0_map(p.A, p.A.apply(phi_psi) - p.f);
        identity_gap = std::max(identity_gap, max_norm(lhs - rhs));
    }
    out.push_back({"obstacle_vi", "feasibility", feas_psor <= 0.0 && feas_pen_excess <= 0.0,
                   {{"psor_max_violation", feas_psor}, {"penalty_violation_minus_bound", feas_pen_excess}}});
    out.push_back({"obstacle_vi", "oracle_equivalence", oracle_gap <= 1e-6, {{"max_gap", oracle_gap}}});
    out.push_back({"obstacle_vi", "obstacle_monotonicity", mono_psi >= -1e-10, {{"min_difference", mono_psi}}});
    out.push_back({"obstacle_vi", "forcing_monotonicity", mono_f >= -1e-10, {{"min_difference", mono_f}}});
    out.push_back({"obstacle_vi", "penalty_bias_decreasing", bias_excess <= 0.0,
                   {{"max_violation_increase", bias_excess}}});
    out.push_back({"obstacle_vi", "s_s0_identity", identity_gap <= 1e-8, {{"max_gap", identity_gap}}});
    return out;
}

inline std::vector<PropertyResult> qvi_properties(std::mt19937_64& rng) {
    std::vector<PropertyResult> out;
    const Grid g(1, 30, Boundary::dirichlet_zero);
    const DiscreteOperator a = assemble_dirichlet_operator(g);
    double mono = 0.0, bound = -qvi::detail::kInf, sub = -qvi::detail::kInf, idem = 0.0, cmp_t = 0.0;
    int max_iter = 0;
    bool all_converged = true;
    for (int i = 0; i < 10; ++i) {
        const synthetic::Mapping m = synthetic::family_member(i, g);
        const GridFunction f = synthetic::smooth_profile(g, rng, 1.0, 20.0);
        const QVIProblem p(a, f, m.phi, m.name, m.kind);
        const GridFunction q0 = GridFunction::zeros(g);
        sub = std::max(sub, (q0.values() - s_map(a, f, m.phi, q0).values()).maxCoeff());
        const QVISolution s = qvi_fixed_point(p, q0);
        const double scale = std::max(1.0, max_norm(s.trace.sup_bound));
        mono = std::min(mono, s.trace.monotone_violation / scale);
        bound = std::max(bound, s.trace.bound_violation / scale);
        max_iter = std::max(max_iter, s.trace.iterations());
        all_converged = all_converged && s.trace.converged;

        const GridFunction d = synthetic::smooth_profile(g, rng, 0.0, 5.0);
        idem = std::max(idem, max_norm(perturbed_selection(p, d, 0.0, s.q).q - s.q));
        const GridFunction q1 = perturbed_selection(p, d, 1e-2, s.q).q;
        const GridFunction q2 = perturbed_selection(p, d, 1e-1, s.q).q;
        cmp_t = std::min(cmp_t, (q2.values() - q1.values()).minCoeff());
    }
    out.push_back({"qvi_core", "monotone_bracketing", mono >= -1e-12 && bound <= 1e-12 && all_converged,
                   {{"monotone_violation", mono}, {"bound_violation", bound}, {"max_iterations", max_iter}}});
    out.push_back({"qvi_core", "subsolution_verification", sub <= 1e-10, {{"max_excess", sub}}});
    out.push_back({"qvi_core", "selection_idempotent", idem == 0.0, {{"max_change", idem}}});
    out.push_back({"qvi_core", "comparison_in_t", cmp_t >= -1e-10, {{"min_difference", cmp_t}}});
    return out;
}

inline std::vector<PropertyResult> thermo_properties(const ExperimentConfig& cfg, std::mt19937_64& rng) {
    std::vector<PropertyResult> out;
    const thermo::Config& c = cfg.model;

    // g sandwich and monotonicity on a 10^4-point sweep.
    double lo = qvi::detail::kInf, hi = -qvi::detail::kInf, incr = -qvi::detail::kInf, prev = c.kappa;
    for (int i = 0; i < 10000; ++i) {
        const double r = -0.5 * c.s + 2.0 * c.s * i / 9999.0;
        const double v = thermo::g_eval(r, c.kappa, c.s);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        incr = std::max(incr, v - prev);
        prev = v;
    }
    out.push_back({"thermoforming", "g_sandwich", lo >= 0.0 && hi <= c.kappa && incr <= 0.0,
                   {{"min", lo}, {"max", hi}, {"max_increase", incr}}});

    // Newton derivative against central differences away from kinks.
    {
        thermo::Config small = c;
        small.grid_n = 8;
        const thermo::Model m(small);
        const double eps = 1e-6;
        double worst = 0.0;
        std::uniform_real_distribution<double> U(0.0, 1.0);
        auto away = [&](double r) {
            for (double b : {0.0, 0.25 * c.s, 0.75 * c.s, c.s})
                if (std::abs(r - b) < 1e3 * eps) return false;
            return true;
        };
        for (int k = 0; k < 20; ++k) {
            thermo::State s = m.initial_state();
            Vector u(m.membrane_grid().node_count()), y(u.size());
            for (Index i = 0; i < u.size(); ++i) {
                do {
                    u[i] = U(rng);
                    y[i] = U(rng) * 1.5;
                } while (!away(y[i] - u[i]));
            }
            s.u = GridFunction(m.membrane_grid(), u);
            s.y = GridFunction(m.membrane_grid(), y);
            s.T = synthetic::uniform_nodes(m.temperature_grid(), rng, 0.0, 1.0);
            Vector x(2 * u.size() + s.T.size());
            x << u, s.T.values(), y;
            Vector v(x.size());
            for (Index i = 0; i < v.size(); ++i) v[i] = U(rng) - 0.5;
            const Vector jv = m.coupled_jacobian(s) * v;
            const GridFunction f = m.forcing();
            const Vector fd = (m.coupled_residual(m.unpack(x + eps * v), f) -
                               m.coupled_residual(m.unpack(x - eps * v), f)) / (2 * eps);
            worst = std::max(worst, (jv - fd).norm() / jv.norm());
        }
        out.push_back({"thermoforming", "jacobian_consistency", worst <= 1e-6, {{"max_relative_gap", worst}}});
    }

    thermo::Config pc = c;
    pc.grid_n = cfg.property_grid;
    const thermo::Model m(pc);
    const thermo::CoupledSolution sol = m.coupled_newton();
    const double grow = (sol.state.y.values() - m.phi0().values()).minCoeff();
    out.push_back({"thermoforming", "mould_grows", grow >= 0.0, {{"min_growth", grow}}});

    const ThermoQvi q = solve_thermo_qvi(m, m.forcing());
    const double agree = l2_norm(q.u - sol.state.u);
    out.push_back({"thermoforming", "cross_solver_agreement", agree <= 1e-5,
                   {{"l2_gap", agree}, {"n", pc.grid_n}}});

    double phi0_min = m.phi(GridFunction::zeros(m.membrane_grid())).values().minCoeff();
    double t_mono = 0.0;
    for (int k = 0; k < 5; ++k) {
        const GridFunction u1 = synthetic::uniform_nodes(m.membrane_grid(), rng, 0.0, 1.0);
        const GridFunction u2 = u1 + synthetic::uniform_nodes(m.membrane_grid(), rng, 0.0, 0.5);
        t_mono = std::min(t_mono, (m.temperature_solve(u2).values() - m.temperature_solve(u1).values()).minCoeff());
    }
    out.push_back({"thermoforming", "phi_increasing", phi0_min >= 0.0 && t_mono >= -1e-10,
                   {{"phi_of_zero_min", phi0_min}, {"temperature_order_min", t_mono}}});
    return out;
}

inline std::vector<PropertyResult> sensitivity_properties(const ExperimentConfig& cfg) {
    std::vector<PropertyResult> out;
    thermo::Config pc = cfg.model;
    pc.grid_n = cfg.property_grid;
    const thermo::Model m(pc);
    const thermo::CoupledSolution sol = m.coupled_newton();
    const GridFunction d = right_half(m.membrane_grid());
    const DerivativeSolution w = derivative_pde_solve(m, sol.state, d, SmoothedMax{cfg.smoothing});
    const double rel = w.residual / l2_norm(d);
    out.push_back({"sensitivity", "derivative_residual", rel <= 1e-14, {{"relative_residual", rel}}});

    pc.f_const = kExpansionForcing;
    const thermo::Model me(pc);
    const ThermoQvi q = solve_thermo_qvi(me, me.forcing(), 1e-13);
    const DerivativeMap pp = [&](const GridFunction& v) { return me.phi_derivative(q.u, q.T, v); };
    const GridFunction d1 = right_half(me.membrane_grid(), kExpansionAmplitude);
    const SensitivityRun run = run_sensitivity(q.u, q.phi_u, q.problem, d1, pp, expansion_t_list());

    double on_strong = 0.0, on_bi = 0.0;
    for (const auto& delta : run.alpha.trace.deltas)
        for (Index i = 0; i < delta.size(); ++i) {
            if (run.cone.strongly_active[std::size_t(i)]) on_strong = std::max(on_strong, std::abs(delta[i]));
            if (run.cone.biactive[std::size_t(i)]) on_bi = std::max(on_bi, delta[i]);
        }
    out.push_back({"sensitivity", "alpha_feasibility", on_strong == 0.0 && on_bi <= 1e-10,
                   {{"max_abs_on_strongly_active", on_strong}, {"max_on_biactive", on_bi}}});

    const GridFunction d2 = GridFunction::sample(me.membrane_grid(), [](double, double y) { return y > 0.5 ? 1.0 : 0.0; });
    const GridFunction a1 = run.alpha.alpha;
    const GridFunction a2 = alpha_iteration(q.u, d2, q.problem, run.cone, pp).alpha;
    const GridFunction a12 = alpha_iteration(q.u, 2.0 * d1 + 0.5 * d2, q.problem, run.cone, pp).alpha;
    const double lin = l2_norm(a12 - 2.0 * a1 - 0.5 * a2) / l2_norm(a12);
    const bool strict = run.cone.strict_complementarity();
    out.push_back({"sensitivity", "linearity_under_strict_complementarity", !strict || lin <= 1e-8,
                   {{"strict_complementarity", strict}, {"relative_gap", lin}}});

    bool uniform_ok = true;
    const double noise = expansion_noise(q.u);
    for (std::size_t i = 1; i < run.expansion.size(); ++i)
        uniform_ok = uniform_ok && run.expansion[i].uniform <= run.expansion[i - 1].uniform + noise / run.expansion[i].t;
    json ratios = json::array();
    for (const auto& r : run.expansion) ratios.push_back({{"t", r.t}, {"uniform", r.uniform}});
    out.push_back({"sensitivity", "uniform_higher_order", uniform_ok, {{"rows", ratios}}});
    return out;
}

} // namespace detail

/// Runs every randomized property with the configured seed. Failures are
/// recorded, not thrown; solver exceptions mark the property as failed.
inline PropertyReport run_property_suite(const ExperimentConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    PropertyReport rep;
    auto guard = [&](const char* module, const char* name, auto&& fn) {
        try {
            auto r = fn();
            if constexpr (std::is_same_v<std::decay_t<decltype(r)>, PropertyResult>) rep.results.push_back(r);
            else rep.results.insert(rep.results.end(), r.begin(), r.end());
        } catch (const std::exception& e) {
            rep.results.push_back({module, name, false, {{"error", e.what()}}});
        }
    };
    guard("grid", "max_principle", [&] { return detail::grid_max_principle(rng); });
    guard("grid", "coercivity", [&] { return detail::grid_coercivity(rng); });
    guard("grid", "symmetry", [&] { return detail::grid_symmetry(); });
    guard("obstacle_vi", "suite", [&] { return detail::obstacle_properties(rng); });
    guard("qvi_core", "suite", [&] { return detail::qvi_properties(rng); });
    guard("thermoforming", "suite", [&] { return detail::thermo_properties(cfg, rng); });
    guard("sensitivity", "suite", [&] { return detail::sensitivity_properties(cfg); });
    return rep;
}

} // namespace qvi::experiment
