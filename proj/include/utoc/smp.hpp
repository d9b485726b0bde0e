#ifndef UTOC_SMP_HPP
#define UTOC_SMP_HPP

#include "utoc/adjoint.hpp"
#include "utoc/meanfield.hpp"
#include "utoc/problem.hpp"

#include <string>
#include <vector>

namespace utoc {

/// Psi_x' b + 1/2 sum_j sigma_j' Psi_xx sigma_j at (x, u).
double psi_tilde(const VectorXd& mean_x_tau, const VectorXd& u_tau, const LinearDynamics& dynamics,
                 const CostSpec& cost);

struct SmpOptions {
    int t_grid = 2048;
    int u_samples_per_axis = 101;
    double tol = 1e-8;
    /// Cap on control samples per time node; the per-axis count shrinks (never below 2) to respect it.
    int max_u_samples = 20000;
};

struct SmpSample {
    double t = 0.0;
    VectorXd u;
    double n1 = 0.0;
    double n2 = 0.0;
    double residual = 0.0;
};

struct SmpReport {
    CaseLabel case_label = CaseLabel::Interior;
    double tau = 0.0;
    double g_tau = 0.0;
    /// E[Psi_tilde + f] at tau.
    double terminal_weight = 0.0;
    std::vector<SmpSample> samples;
    double max_violation = 0.0;
    double witness_t = 0.0;
    VectorXd witness_u;
    double n1_max = 0.0;
    double n2_max = 0.0;
    /// Case (iii): worst violation with and without the time-constraint term.
    double max_violation_with_time_term = 0.0;
    double max_violation_classical = 0.0;
    bool passed = false;
    std::string note;
};

/// Evaluates residual = N1 + N2 on t_i = i tau / t_grid (i < t_grid) and a lattice over U,
/// N1 = H_u (u - u_bar), N2 = -E[Psi_tilde + f] K_hat (u - u_bar) / G(tau).
/// Case (ii) drops N2; case (iii) evaluates both variants and passes when either holds.
SmpReport smp_check(const ProblemSpec& spec, const ControlPolicy& policy, double tau, CaseLabel case_label,
                    const AdjointSolution& adjoints, const VectorXd& mean_x_tau, const SmpOptions& options = {});

/// CSV with columns t, u_1..u_k, n1, n2, residual.
std::string smp_csv(const SmpReport& report);

/// "PASS maxViolation=... witness t=... u=..." (or FAIL).
std::string smp_summary_line(const SmpReport& report);

}  // namespace utoc

#endif  // UTOC_SMP_HPP
