// Command-line front end: thermoforming solves, derivative studies, the
// multi-grid table, the property suite and plain QVI / VI solves.
//
// Exit codes: 0 success, 1 solver failure, 2 configuration error.

#include "qvi/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace qvi;
using experiment::ExperimentConfig;
using nlohmann::json;
namespace fs = std::filesystem;

struct Common {
    std::string config_path;
    std::string output_dir;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : experiment::load_config(c.config_path);
    experiment::apply_environment(cfg);
    if (!c.output_dir.empty()) cfg.outputs_dir = c.output_dir;
    return cfg;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse number '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty number list");
    return out;
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

GridFunction direction_from(const std::string& spec, const Grid& g) {
    if (spec == "right-half") return experiment::right_half(g);
    if (spec.rfind("csv:", 0) == 0) {
        GridFunction d = read_csv(spec.substr(4), g);
        if (d.values().minCoeff() < 0.0) throw ConfigError("direction must be non-negative");
        return d;
    }
    throw ConfigError("unknown direction '" + spec + "' (use right-half or csv:path)");
}

int cmd_thermoform(const Common& c, int nodes) {
    ExperimentConfig cfg = resolve(c);
    cfg.validate();
    const fs::path dir = fs::path(cfg.outputs_dir) / ("thermoform_n" + std::to_string(nodes));
    fs::create_directories(dir);
    const auto row = experiment::run_table1_row(cfg, nodes, dir);
    std::cout << "n=" << nodes << " iterations=" << row.newton_iterations << " residual=" << row.system_residual
              << " derivative_residual=" << row.derivative_residual << " -> " << dir.string() << '\n';
    return 0;
}

int cmd_derivative(const Common& c, int nodes, const std::string& direction, double epsilon,
                   const std::string& sweep, const std::string& method) {
    ExperimentConfig cfg = resolve(c);
    cfg.model.grid_n = nodes;
    cfg.epsilon = epsilon;
    cfg.validate();
    const thermo::Model model(cfg.model);
    const GridFunction d = direction_from(direction, model.membrane_grid());
    const SmoothedMax sm{cfg.smoothing};
    const fs::path dir = fs::path(cfg.outputs_dir) / ("derivative_" + method + "_n" + std::to_string(nodes));
    fs::create_directories(dir);

    json rows = json::array();
    std::ostringstream csv;
    csv << std::setprecision(17);
    if (method == "partial" || method == "coupled") {
        const std::vector<double> eps = sweep.empty() ? std::vector<double>{epsilon} : parse_list(sweep);
        const thermo::CoupledSolution base = model.coupled_newton();
        const GridFunction w = method == "partial" ? derivative_pde_solve(model, base.state, d, sm).w
                                                   : coupled_derivative_solve(model, base.state, d, sm).w;
        csv << "epsilon,deviation\n";
        for (double e : eps) {
            const QuotientCheck qc = difference_quotient_check(model, base, d, e, sm);
            const double dev = l2_norm(qc.quotient - w);
            csv << e << ',' << dev << '\n';
            rows.push_back({{"epsilon", e}, {"deviation", dev}});
        }
        write_csv((dir / "derivative.csv").string(), w);
    } else if (method == "abstract") {
        const std::vector<double> ts = parse_list(sweep.empty() ? "1e-1,1e-2,1e-3,1e-4" : sweep);
        const auto q = experiment::solve_thermo_qvi(model, model.forcing(), 1e-13);
        const DerivativeMap pp = [&](const GridFunction& v) { return model.phi_derivative(q.u, q.T, v); };
        const auto run = experiment::run_sensitivity(q.u, q.phi_u, q.problem, d, pp, ts);
        csv << "t,r,uniform\n";
        for (const auto& r : run.expansion) {
            csv << r.t << ',' << r.r << ',' << r.uniform << '\n';
            rows.push_back({{"t", r.t}, {"r", r.r}, {"uniform", r.uniform}, {"qvi_iterations", r.qvi_iterations}});
        }
        write_csv((dir / "derivative.csv").string(), run.alpha.alpha);
        write_json(dir / "cone.json", {{"cone", run.cone.to_json()},
                                       {"alpha", run.alpha.trace.to_json()},
                                       {"lemmas", run.lemmas.to_json()}});
    } else {
        throw ConfigError("unknown method '" + method + "' (partial, coupled or abstract)");
    }
    std::ofstream(dir / "deviations.csv") << csv.str();
    write_json(dir / "deviations.json", {{"method", method}, {"n", nodes}, {"rows", rows}});
    std::cout << csv.str();
    return 0;
}

int cmd_table1(const Common& c, const std::string& grids, bool emit_iterates) {
    ExperimentConfig cfg = resolve(c);
    if (!grids.empty()) {
        cfg.grids.clear();
        for (double g : parse_list(grids)) cfg.grids.push_back(int(g));
    }
    if (emit_iterates) cfg.emit_iterates = true;
    const auto table = experiment::run_table1(cfg);
    bool ok = true;
    for (const auto& r : table.rows) {
        if (r.ok)
            std::cout << "n=" << r.n << " iterations=" << r.newton_iterations << " residual=" << r.system_residual
                      << " derivative_residual=" << r.derivative_residual
                      << " quotient_deviation=" << r.quotient_deviation << " time=" << r.wall_time << "s\n";
        else
            std::cout << "n=" << r.n << " FAILED: " << r.error << '\n';
        ok = ok && r.ok;
    }
    return ok ? 0 : 1;
}

int cmd_props(const Common& c, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg = resolve(c);
    if (seed) cfg.seed = *seed;
    const auto rep = experiment::run_property_suite(cfg);
    fs::create_directories(cfg.outputs_dir);
    write_json(fs::path(cfg.outputs_dir) / "props.json", rep.to_json());
    for (const auto& r : rep.results)
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.module << '.' << r.name << ' ' << r.detail.dump() << '\n';
    return rep.all_pass() ? 0 : 1;
}

int cmd_qvi_solve(const Common& c, int nodes, const std::string& mapping, double tol, int max_iter, bool dump) {
    ExperimentConfig cfg = resolve(c);
    cfg.model.grid_n = nodes;
    cfg.validate();
    const thermo::Model model(cfg.model);
    const Grid& g = model.membrane_grid();

    std::optional<QVIProblem> p;
    if (mapping == "thermoforming") {
        p = model.qvi_problem(model.forcing());
    } else if (mapping.rfind("affine:", 0) == 0) {
        const auto v = parse_list(mapping.substr(7));
        if (v.size() != 2) throw ConfigError("affine mapping needs affine:c,a");
        const GridFunction cst = GridFunction::constant(g, v[0]);
        const double a = v[1];
        p = QVIProblem(model.A(), model.forcing(), [cst, a](const GridFunction& u) { return cst + a * u; },
                       "affine");
    } else {
        throw ConfigError("unknown mapping '" + mapping + "' (thermoforming or affine:c,a)");
    }
    if (!p->verified_limit())
        std::cerr << "warning: unverified-limit: convergence of the limit to a QVI solution is not "
                     "established for mapping '"
                  << mapping << "'\n";

    QviOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    const QVISolution s = qvi_fixed_point(*p, GridFunction::zeros(g), o);
    const fs::path dir = fs::path(cfg.outputs_dir) / ("qvi_n" + std::to_string(nodes));
    fs::create_directories(dir);
    write_csv((dir / "q.csv").string(), s.q);
    if (dump)
        for (std::size_t n = 0; n < s.trace.iterates.size(); ++n)
            write_csv((dir / ("iterate_" + std::to_string(n) + ".csv")).string(), s.trace.iterates[n]);
    json j = s.trace.to_json();
    j["mapping"] = mapping;
    j["verified_limit"] = p->verified_limit();
    if (!p->verified_limit()) j["warning"] = "unverified-limit";
    write_json(dir / "trace.json", j);
    std::cout << "iterations=" << s.trace.iterations() << " last_gap=" << s.trace.gaps.back() << " -> "
              << dir.string() << '\n';
    return 0;
}

int cmd_vi_solve(const Common& c, int dim, int nodes, const std::string& solver, double forcing,
                 const std::string& obstacle, double alpha, double tol) {
    ExperimentConfig cfg = resolve(c);
    const Grid g(dim, nodes, Boundary::dirichlet_zero);
    GridFunction psi = GridFunction::zeros(g);
    if (obstacle.rfind("const:", 0) == 0) psi = GridFunction::constant(g, parse_list(obstacle.substr(6)).at(0));
    else if (obstacle.rfind("csv:", 0) == 0) psi = read_csv(obstacle.substr(4), g);
    else throw ConfigError("unknown obstacle '" + obstacle + "' (const:value or csv:path)");
    const ObstacleProblem p{assemble_dirichlet_operator(g), GridFunction::constant(g, forcing), psi};

    VISolution s = [&] {
        if (solver == "psor") {
            PsorOptions o;
            o.tol = tol;
            return vi_solve_psor(p, o);
        }
        if (solver == "penalty") return vi_solve_penalty(p, alpha, tol);
        throw ConfigError("unknown solver '" + solver + "' (psor or penalty)");
    }();
    const fs::path dir = fs::path(cfg.outputs_dir) / ("vi_" + solver);
    fs::create_directories(dir);
    write_csv((dir / "u.csv").string(), s.u);
    json j = s.report.to_json();
    j["complementarity_residual"] = complementarity_residual(p, s.u);
    write_json(dir / "report.json", j);
    std::cout << "iterations=" << s.report.iterations << " final_residual=" << s.report.final_residual
              << " active=" << s.report.active_set.count() << " -> " << dir.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Obstacle-type quasi-variational inequalities and the thermoforming model"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "JSON configuration file");
    app.add_option("--output-dir", common.output_dir, "output directory (overrides config and QVI_OUTPUT_DIR)");

    int nodes = 64;
    auto* thermo = app.add_subcommand("thermoform", "solve the coupled thermoforming system");
    thermo->add_option("--nodes", nodes, "interior nodes per axis")->check(CLI::Range(2, 4096));

    std::string direction = "right-half", sweep, method = "partial";
    double epsilon = 1e-5;
    auto* deriv = app.add_subcommand("derivative", "directional derivative of the membrane");
    deriv->add_option("--nodes", nodes)->check(CLI::Range(2, 4096));
    deriv->add_option("--direction", direction, "right-half or csv:path");
    deriv->add_option("--epsilon", epsilon, "difference-quotient step");
    deriv->add_option("--t-sweep", sweep, "comma-separated step sizes");
    deriv->add_option("--method", method, "partial, coupled or abstract");

    std::string grids;
    bool emit_iterates = false;
    auto* table = app.add_subcommand("table1", "multi-grid study with report files");
    table->add_option("--grids", grids, "comma-separated grid sizes");
    table->add_flag("--emit-iterates", emit_iterates, "write one CSV per Newton iterate");

    std::optional<std::uint64_t> seed;
    auto* props = app.add_subcommand("props", "randomized property suite");
    props->add_option("--seed", seed);

    std::string mapping = "thermoforming";
    double tol = 1e-10;
    int max_iter = 200;
    bool dump = false;
    auto* qvi_cmd = app.add_subcommand("qvi-solve", "monotone fixed-point iteration for the QVI");
    qvi_cmd->add_option("--nodes", nodes)->check(CLI::Range(2, 4096));
    qvi_cmd->add_option("--mapping", mapping, "thermoforming or affine:c,a");
    qvi_cmd->add_option("--tol", tol);
    qvi_cmd->add_option("--max-iter", max_iter);
    qvi_cmd->add_flag("--dump-iterates", dump, "write one CSV per iterate");

    int dim = 1;
    std::string solver = "psor", obstacle = "const:0.1";
    double forcing = 10.0, alpha = 1e8, vi_tol = 1e-10;
    auto* vi = app.add_subcommand("vi-solve", "fixed-obstacle VI on a Dirichlet grid");
    vi->add_option("--dim", dim)->check(CLI::Range(1, 2));
    vi->add_option("--nodes", nodes)->check(CLI::Range(1, 4096));
    vi->add_option("--solver", solver, "psor or penalty");
    vi->add_option("--forcing", forcing, "constant forcing");
    vi->add_option("--obstacle", obstacle, "const:value or csv:path");
    vi->add_option("--alpha", alpha, "penalty parameter");
    vi->add_option("--tol", vi_tol);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*thermo) return cmd_thermoform(common, nodes);
        if (*deriv) return cmd_derivative(common, nodes, direction, epsilon, sweep, method);
        if (*table) return cmd_table1(common, grids, emit_iterates);
        if (*props) return cmd_props(common, seed);
        if (*qvi_cmd) return cmd_qvi_solve(common, nodes, mapping, tol, max_iter, dump);
        if (*vi) return cmd_vi_solve(common, dim, nodes, solver, forcing, obstacle, alpha, vi_tol);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return 1;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
