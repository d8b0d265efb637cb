// Thermoforming on a 32x32 grid: monotone QVI iteration against the coupled
// Newton solve, then the directional derivative for a right-half heating.

#include "qvi/experiment.hpp"

#include <iostream>

int main() {
    using namespace qvi;
    thermo::Config cfg;
    cfg.grid_n = 32;
    const thermo::Model m(cfg);

    const auto q = experiment::solve_thermo_qvi(m, m.forcing());
    const thermo::CoupledSolution s = m.coupled_newton();
    std::cout << "fixed point: " << q.trace.iterations() << " iterations\n";
    std::cout << "newton:      " << s.report.iterations << " iterations, residual " << s.report.final_residual << '\n';
    std::cout << "||u_fp - u_newton|| = " << l2_norm(q.u - s.state.u) << '\n';

    const GridFunction d = experiment::right_half(m.membrane_grid());
    const QuotientCheck c = difference_quotient_check(m, s, d, 1e-5, SmoothedMax{});
    std::cout << "derivative residual " << c.derivative.residual << ", quotient deviation " << c.deviation << '\n';
}
