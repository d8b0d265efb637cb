#pragma once

/// Brute-force reference solver for small obstacle problems: tries every
/// active set and keeps the one satisfying the KKT sign conditions.

#include "qvi/errors.hpp"
#include "qvi/grid.hpp"
#include "qvi/obstacle_vi.hpp"

#include <Eigen/Dense>

namespace qvi {

inline constexpr Index kMaxEnumerationNodes = 16;

/// Exhaustive search over the 2^n active sets; each candidate is a dense LU
/// solve. Accepts a candidate when u <= psi and f - A u >= 0 with
/// complementarity, both up to `tol` relative to the data scale.
inline GridFunction enumerate_active_sets(const ObstacleProblem& p, double tol = 1e-10) {
    p.validate();
    const Index n = p.A.grid.node_count();
    if (n > kMaxEnumerationNodes) throw ConfigError("enumerate_active_sets: too many nodes for enumeration");
    const Eigen::MatrixXd a = Eigen::MatrixXd(Eigen::SparseMatrix<double>(p.A.matrix));
    const Vector& f = p.f.values();
    const Vector& psi = p.psi.values();
    const double scale = 1.0 + f.cwiseAbs().maxCoeff() + a.cwiseAbs().maxCoeff() * (1.0 + psi.cwiseAbs().maxCoeff());

    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        std::vector<Index> free_idx;
        Vector u = Vector::Zero(n);
        for (Index i = 0; i < n; ++i) {
            if (mask & (1u << i)) u[i] = psi[i];
            else free_idx.push_back(i);
        }
        const Index nf = Index(free_idx.size());
        if (nf > 0) {
            Eigen::MatrixXd aff(nf, nf);
            Vector b(nf);
            for (Index r = 0; r < nf; ++r) {
                b[r] = f[free_idx[r]];
                for (Index i = 0; i < n; ++i)
                    if (mask & (1u << i)) b[r] -= a(free_idx[r], i) * psi[i];
                for (Index c = 0; c < nf; ++c) aff(r, c) = a(free_idx[r], free_idx[c]);
            }
            const Vector uf = aff.partialPivLu().solve(b);
            for (Index r = 0; r < nf; ++r) u[free_idx[r]] = uf[r];
        }
        const Vector mult = f - a * u;
        bool ok = true;
        for (Index i = 0; i < n && ok; ++i) {
            if (mask & (1u << i)) ok = mult[i] >= -tol * scale;
            else ok = u[i] <= psi[i] + tol * scale;
        }
        if (ok) return {p.A.grid, u};
    }
    throw SolverError("enumerate_active_sets: no active set satisfies the KKT conditions");
}

} // namespace qvi
