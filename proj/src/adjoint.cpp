#include "utoc/adjoint.hpp"

#include "utoc/error.hpp"
#include "utoc/io.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace utoc {

std::pair<MatrixXd, MatrixXd> exp_and_integral(const MatrixXd& A, double s) {
    const Eigen::Index m = A.rows();
    MatrixXd M = MatrixXd::Zero(2 * m, 2 * m);
    M.topLeftCorner(m, m) = A * s;
    M.topRightCorner(m, m) = MatrixXd::Identity(m, m) * s;
    const MatrixXd E = M.exp();
    return {E.topLeftCorner(m, m), E.topRightCorner(m, m)};
}

MatrixXd p0_closed_form(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau,
                        const std::vector<double>& times) {
    const RowVectorXd c = target.state_row(dynamics);
    MatrixXd out(static_cast<Eigen::Index>(times.size()), dynamics.m);
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double s = tau - times[i];
        if (s == 0.0) {
            out.row(static_cast<Eigen::Index>(i)).setZero();
            continue;
        }
        const MatrixXd integral = exp_and_integral(dynamics.A, s).second;
        out.row(static_cast<Eigen::Index>(i)) = -(c * integral);
    }
    return out;
}

namespace {

/// One RK4 step of dp/dt = -A'p + c' from t to t + h (h may be negative).
void rk4_adjoint_step(const MatrixXd& At, const VectorXd& c, double h, VectorXd& p) {
    const VectorXd k1 = -At * p + c;
    const VectorXd k2 = -At * (p + 0.5 * h * k1) + c;
    const VectorXd k3 = -At * (p + 0.5 * h * k2) + c;
    const VectorXd k4 = -At * (p + h * k3) + c;
    p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void march(const MatrixXd& At, const VectorXd& c, double from, double to, double max_step, VectorXd& p) {
    const double span = to - from;
    if (span == 0.0) return;
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(span) / max_step)));
    const double h = span / n;
    for (int i = 0; i < n; ++i) rk4_adjoint_step(At, c, h, p);
}

}  // namespace

MatrixXd p0_backward_ode(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau,
                         const std::vector<double>& times, double max_step) {
    const MatrixXd At = dynamics.A.transpose();
    const VectorXd c = target.state_row(dynamics).transpose();
    MatrixXd out(static_cast<Eigen::Index>(times.size()), dynamics.m);

    std::vector<std::size_t> order(times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

    // backward from tau over times <= tau
    VectorXd p = VectorXd::Zero(dynamics.m);
    double t = tau;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (times[*it] > tau) continue;
        march(At, c, t, times[*it], max_step, p);
        t = times[*it];
        out.row(static_cast<Eigen::Index>(*it)) = p.transpose();
    }
    // forward continuation over times > tau
    p.setZero();
    t = tau;
    for (std::size_t idx : order) {
        if (times[idx] <= tau) continue;
        march(At, c, t, times[idx], max_step, p);
        t = times[idx];
        out.row(static_cast<Eigen::Index>(idx)) = p.transpose();
    }
    return out;
}

double mixed_gap(const MatrixXd& a, const MatrixXd& b) {
    double gap = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            gap = std::max(gap, std::abs(a(i, j) - b(i, j)) / (1.0 + std::abs(a(i, j))));
    return gap;
}

namespace {

double ode_step_bound(const MatrixXd& A, double dt) {
    const double norm = A.norm();
    return norm > 0.0 ? std::min(dt, 0.005 / norm) : dt;
}

}  // namespace

MatrixXd solve_p0(const LinearDynamics& dynamics, const TargetCoefficients& target, double tau, const SimGrid& grid) {
    if (tau < 0.0 || tau > grid.horizon()) throw domain_error("tau outside [0, T]");
    const auto times = grid.times();
    MatrixXd closed = p0_closed_form(dynamics, target, tau, times);
    const MatrixXd ode = p0_backward_ode(dynamics, target, tau, times, ode_step_bound(dynamics.A, grid.dt()));
    const double gap = mixed_gap(closed, ode);
    if (!(gap <= 1e-6)) {
        std::ostringstream os;
        os << "p0 closed form and backward ODE disagree (gap " << gap << ")";
        throw Error(ErrorKind::NumericalConsistency, os.str());
    }
    return closed;
}

VectorXd AdjointSolution::p0_at(double t) const {
    const double s = tau_anchor - t;
    if (s == 0.0) return VectorXd::Zero(A.rows());
    return -(c_row * exp_and_integral(A, s).second).transpose();
}

VectorXd AdjointSolution::p_at(double t) const {
    const double s = tau_anchor - t;
    if (s == 0.0) return p_tau;
    const auto [E, integral] = exp_and_integral(A.transpose(), s);
    return E * p_tau - integral * c_lin;
}

AdjointSolution solve_adjoints(const ProblemSpec& spec, double tau, const VectorXd& mean_x_tau, const SimGrid& grid) {
    const auto& dyn = spec.dynamics;
    AdjointSolution sol;
    sol.grid = grid;
    sol.tau_anchor = tau;
    sol.A = dyn.A;
    sol.c_row = spec.target.state_row(dyn);
    sol.c_lin = spec.cost.c_lin;
    sol.p_tau = -spec.cost.terminal_grad(mean_x_tau);

    const auto times = grid.times();
    sol.p0 = p0_closed_form(dyn, spec.target, tau, times);
    const MatrixXd ode = p0_backward_ode(dyn, spec.target, tau, times, ode_step_bound(dyn.A, grid.dt()));
    sol.p0_cross_check_gap = mixed_gap(sol.p0, ode);
    if (!(sol.p0_cross_check_gap <= 1e-6)) {
        std::ostringstream os;
        os << "p0 closed form and backward ODE disagree (gap " << sol.p0_cross_check_gap << ")";
        throw Error(ErrorKind::NumericalConsistency, os.str());
    }

    bool noisy = false;
    for (int j = 0; j < dyn.d; ++j) {
        noisy = noisy || dyn.C[static_cast<std::size_t>(j)].squaredNorm() > 0.0 ||
                dyn.D[static_cast<std::size_t>(j)].squaredNorm() > 0.0;
    }
    sol.q_zero = !(noisy && spec.cost.psi_quad.squaredNorm() > 0.0);

    sol.p.resize(grid.nodes(), dyn.m);
    for (int j = 0; j < grid.nodes(); ++j) sol.p.row(j) = sol.p_at(grid.node(j)).transpose();
    return sol;
}

double hamiltonian_H(const VectorXd& x, const VectorXd& u, const VectorXd& p, const std::vector<VectorXd>& q,
                     const LinearDynamics& dynamics, const CostSpec& cost) {
    double h = p.dot(dynamics.A * x + dynamics.B * u);
    for (std::size_t j = 0; j < q.size(); ++j) h += q[j].dot(dynamics.C[j] * x + dynamics.D[j] * u);
    return h - cost.running(x, u);
}

RowVectorXd hamiltonian_H_u(const VectorXd&, const VectorXd& u, const VectorXd& p, const std::vector<VectorXd>& q,
                            const LinearDynamics& dynamics, const CostSpec& cost) {
    RowVectorXd hu = p.transpose() * dynamics.B;
    for (std::size_t j = 0; j < q.size(); ++j) hu += q[j].transpose() * dynamics.D[j];
    if (cost.Lambda.size() > 0) hu -= (cost.Lambda * u).transpose();
    return hu;
}

RowVectorXd k_hat(const VectorXd& p0, const LinearDynamics& dynamics, const TargetCoefficients& target) {
    return p0.transpose() * dynamics.B - target.control_row(dynamics);
}

GAtTau g_at_tau(const TargetCoefficients& target, const LinearDynamics& dynamics, const VectorXd& mean_x_tau,
                const VectorXd& mean_u_tau, double eps, double eps_regularize) {
    GAtTau g;
    const double raw = target.state_row(dynamics).dot(mean_x_tau) + target.control_row(dynamics).dot(mean_u_tau);
    g.value = raw + eps_regularize;
    g.lebesgue_violation = std::abs(raw) <= eps;
    if (g.lebesgue_violation && eps_regularize == 0.0) {
        std::ostringstream os;
        os << "G(tau) = " << g.value << " is within " << eps << " of zero; tau is not a regular crossing";
        throw Error(ErrorKind::AssumptionViolation, os.str());
    }
    return g;
}

std::string adjoint_csv(const AdjointSolution& solution) {
    const Eigen::Index m = solution.p0.cols();
    std::string out = "t";
    for (Eigen::Index a = 0; a < m; ++a) out += ",p0_" + std::to_string(a + 1);
    for (Eigen::Index a = 0; a < m; ++a) out += ",p_" + std::to_string(a + 1);
    out += '\n';
    for (int j = 0; j < solution.grid.nodes(); ++j) {
        std::vector<double> row{solution.grid.node(j)};
        for (Eigen::Index a = 0; a < m; ++a) row.push_back(solution.p0(j, a));
        for (Eigen::Index a = 0; a < m; ++a) row.push_back(solution.p(j, a));
        out += csv_row(row);
    }
    return out;
}

}  // namespace utoc
