// Membrane over a parabolic obstacle: PSOR against the penalty solver.

#include "qvi/obstacle_vi.hpp"

#include <iostream>

int main() {
    using namespace qvi;
    const Grid g(1, 63, Boundary::dirichlet_zero);
    const ObstacleProblem p{assemble_dirichlet_operator(g), GridFunction::constant(g, 10.0),
                            GridFunction::sample(g, [](double x, double) { return 0.05 + 0.5 * (x - 0.5) * (x - 0.5); })};

    const VISolution a = vi_solve_psor(p);
    const VISolution b = vi_solve_penalty(p);
    std::cout << "psor:    " << a.report.iterations << " sweeps, " << a.report.active_set.count() << " contact nodes\n";
    std::cout << "penalty: " << b.report.iterations << " Newton steps, residual " << b.report.final_residual << '\n';
    std::cout << "max |u_psor - u_penalty| = " << max_norm(a.u - b.u) << '\n';
}
