#ifndef UTOC_VARIATIONAL_HPP
#define UTOC_VARIATIONAL_HPP

#include "utoc/meanfield.hpp"
#include "utoc/problem.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace utoc {

/// Direction v and step sizes for u^rho = u_bar + rho v.
struct PerturbationSpec {
    ControlPolicy v;
    std::vector<double> rho_list{1e-2, 1e-3, 1e-4};
};

/// Throws Validation when rho_list is empty, non-positive or not strictly decreasing,
/// or when v does not match the horizon and control dimension.
void validate_perturbation(const PerturbationSpec& perturbation, double horizon, int k);

/// True when u_bar + rho v stays inside the control set at every listed time for every rho.
bool perturbation_admissible(const ControlPolicy& policy, const PerturbationSpec& perturbation,
                             const ControlSet& set, const std::vector<double>& times);

struct VariationalResult {
    SimGrid grid{1.0, 1};
    /// Exact E[y] from E[y]' = A E[y] + B v, y(0) = 0; nodes x m.
    MatrixXd mean_y_exact;
    /// Euler-Maruyama ensemble of the variational SDE driven by the same noise as the base run.
    EnsembleResult ensemble;
};

/// Variational equation dy = (A y + B v) dt + sum_j (C_j y + D_j v) dW_j, y(0) = 0.
/// Noise indices coincide with simulate_ensemble(spec, ..., seed), giving common random numbers.
VariationalResult simulate_variational(const ProblemSpec& spec, const ControlPolicy& v, int n_paths,
                                       const SimGrid& grid, std::uint64_t seed);

/// State equation with first derivatives, for the pathwise finite-difference check.
struct DifferentiableModel {
    int m = 0;
    int k = 0;
    int d = 0;
    VectorXd x0;
    std::function<VectorXd(const VectorXd& x, const VectorXd& u)> drift;
    std::function<MatrixXd(const VectorXd& x, const VectorXd& u)> drift_x;  // m x m
    std::function<MatrixXd(const VectorXd& x, const VectorXd& u)> drift_u;  // m x k
    /// Column j is sigma^j; m x d.
    std::function<MatrixXd(const VectorXd& x, const VectorXd& u)> diffusion;
    /// d entries of m x m and m x k.
    std::function<std::vector<MatrixXd>(const VectorXd& x, const VectorXd& u)> diffusion_x;
    std::function<std::vector<MatrixXd>(const VectorXd& x, const VectorXd& u)> diffusion_u;
};

DifferentiableModel linear_model(const LinearDynamics& dynamics);

enum class NoiseCoupling {
    Common,       // perturbed and base paths share every Brownian increment
    Independent,  // each rho uses its own noise stream
};

struct FdStateRow {
    double rho = 0.0;
    /// sup over nodes of E|rho^{-1}(X^rho - X_bar) - y| (Euclidean norm inside).
    double sup_error = 0.0;
    /// Standard error of the estimate at the node attaining the sup.
    double std_err = 0.0;
};

std::vector<FdStateRow> fd_state_check(const DifferentiableModel& model, const ControlPolicy& policy,
                                       const PerturbationSpec& perturbation, int n_paths, const SimGrid& grid,
                                       std::uint64_t seed, NoiseCoupling coupling = NoiseCoupling::Common);

std::vector<FdStateRow> fd_state_check(const ProblemSpec& spec, const ControlPolicy& policy,
                                       const PerturbationSpec& perturbation, int n_paths, const SimGrid& grid,
                                       std::uint64_t seed, NoiseCoupling coupling = NoiseCoupling::Common);

/// Rows nonincreasing in sup_error within `slack` combined standard errors.
bool fd_table_monotone(const std::vector<FdStateRow>& rows, double slack = 2.0);

/// h_bar(t, v) = (E1+E2) E[y] + E3 (A E[y] + B v) + E4 v with E[y], v evaluated at t.
double h_bar(const VectorXd& v_t, const VectorXd& mean_y_t, const TargetCoefficients& target,
             const LinearDynamics& dynamics);

/// int_0^tau h_bar(t, v) dt from the exact variational mean.
double h_bar_integral(const ProblemSpec& spec, const ControlPolicy& v, double tau);

struct FdTauRow {
    double rho = 0.0;
    double fd_value = 0.0;
    double formula_value = 0.0;
    double abs_gap = 0.0;
    double rel_gap = 0.0;
};

struct FdTauReport {
    CaseLabel case_label = CaseLabel::NoCrossing;
    double tau_bar = 0.0;
    /// G(tau_bar) from g_at_tau; zero outside case (i).
    double g_tau = 0.0;
    double h_bar_integral = 0.0;
    /// Case (i): int h_bar / G. Case (ii): 0. Case (iii): the case (i) expression for reference.
    double formula = 0.0;
    bool admissible = true;
    std::vector<FdTauRow> rows;
    std::string note;
};

/// (tau_bar - tau^rho)/rho against the derivative formula, all on exact mean trajectories.
FdTauReport fd_tau_check(const ProblemSpec& spec, const ControlPolicy& policy, const PerturbationSpec& perturbation,
                         int n_steps = 0);

struct DualIdentity {
    double tau = 0.0;
    double lhs = 0.0;  // int_0^tau h_bar dt
    double rhs = 0.0;  // -int_0^tau K_hat(t) v(t) dt
    double abs_gap = 0.0;
    double rel_gap = 0.0;
};

/// Both sides by independent routes: forward variational RK4 on `grid` for the left,
/// closed-form adjoint with adaptive Gauss-Kronrod per policy piece for the right.
DualIdentity dual_identity_check(const ProblemSpec& spec, const ControlPolicy& policy, const ControlPolicy& v,
                                 const SimGrid& grid);

/// CSV with columns rho, fd_value, formula_value, abs_gap, rel_gap.
std::string fd_tau_csv(const FdTauReport& report);

}  // namespace utoc

#endif  // UTOC_VARIATIONAL_HPP
