#ifndef UTOC_ADJOINT_HPP
#define UTOC_ADJOINT_HPP

#include "utoc/meanfield.hpp"
#include "utoc/problem.hpp"

#include <string>
#include <utility>
#include <vector>

namespace utoc {

/// (e^{A s}, int_0^s e^{A r} dr) from one exponential of the block matrix [[A, I], [0, 0]] s.
/// Negative s is allowed.
std::pair<MatrixXd, MatrixXd> exp_and_integral(const MatrixXd& A, double s);

/// p0(t) = -(int_0^{tau-t} e^{A' r} dr) c', c = E1 + E2 + E3 A. Rows follow `times`.
MatrixXd p0_closed_form(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau,
                        const std::vector<double>& times);

/// Classical RK4 on dp0/dt = -A' p0 + c', p0(tau) = 0, marching away from tau in both
/// directions. The internal step never exceeds max_step.
MatrixXd p0_backward_ode(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau,
                         const std::vector<double>& times, double max_step);

/// Largest |a - b| / (1 + |a|) over all entries.
double mixed_gap(const MatrixXd& a, const MatrixXd& b);

/// Closed-form p0 on the grid, verified against p0_backward_ode.
/// Throws NumericalConsistency when the two disagree by more than 1e-6 (mixed_gap).
MatrixXd solve_p0(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau, const SimGrid& grid);

/// First-order adjoints in the q = 0 reduction.
struct AdjointSolution {
    SimGrid grid{1.0, 1};
    MatrixXd p0;  // nodes x m
    MatrixXd p;   // nodes x m
    bool q0_zero = true;
    /// False when the terminal condition -Psi_x(X(tau)) is random (quadratic Psi with noise);
    /// p then uses the mean terminal state and q is not represented.
    bool q_zero = true;
    double tau_anchor = 0.0;
    double p0_cross_check_gap = 0.0;

    MatrixXd A;
    RowVectorXd c_row;
    VectorXd c_lin;
    VectorXd p_tau;

    /// Exact evaluation at any t (continuation beyond tau_anchor included).
    VectorXd p0_at(double t) const;
    VectorXd p_at(double t) const;
};

/// Solves p0 and p on the grid. mean_x_tau anchors p(tau) = -(psiLin + psiQuad E[X(tau)]).
AdjointSolution solve_adjoints(const ProblemSpec& spec, double tau, const VectorXd& mean_x_tau, const SimGrid& grid);

/// H(x, u, p, q) = p'(Ax + Bu) + sum_j q_j'(C_j x + D_j u) - f(x, u). Empty q means zero.
double hamiltonian_H(const VectorXd& x, const VectorXd& u, const VectorXd& p, const std::vector<VectorXd>& q,
                     const LinearDynamics& dynamics, const CostSpec& cost);

/// H_u = p'B + sum_j q_j'D_j - (Lambda u)'.
RowVectorXd hamiltonian_H_u(const VectorXd& x, const VectorXd& u, const VectorXd& p, const std::vector<VectorXd>& q,
                            const LinearDynamics& dynamics, const CostSpec& cost);

/// K_hat(t) = p0(t)'B - E3 B - E4 in the q0 = 0 reduction.
RowVectorXd k_hat(const VectorXd& p0, const LinearDynamics& dynamics, const TargetCoefficients& target);

struct GAtTau {
    double value = 0.0;
    bool lebesgue_violation = false;
};

/// G(tau) = (E1+E2+E3A) E[X(tau)] + (E3B+E4) u(tau) + eps_regularize.
/// |G| <= eps before regularization flags a Lebesgue-point violation; without
/// regularization that is an AssumptionViolation error.
GAtTau g_at_tau(const TargetCoefficients& target, const LinearDynamics& dynamics, const VectorXd& mean_x_tau,
                const VectorXd& mean_u_tau, double eps = 1e-8, double eps_regularize = 0.0);

/// CSV with columns t, p0_1..p0_m, p_1..p_m.
std::string adjoint_csv(const AdjointSolution& solution);

}  // namespace utoc

#endif  // UTOC_ADJOINT_HPP
