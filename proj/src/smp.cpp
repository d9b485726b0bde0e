#include "utoc/smp.hpp"

#include "utoc/error.hpp"
#include "utoc/io.hpp"
#include "utoc/mean_system.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace utoc {

double psi_tilde(const VectorXd& mean_x_tau, const VectorXd& u_tau, const LinearDynamics& dynamics,
                 const CostSpec& cost) {
    if (!cost.has_terminal()) return 0.0;
    const VectorXd grad = cost.terminal_grad(mean_x_tau);
    double value = grad.dot(dynamics.drift(mean_x_tau, u_tau));
    if (cost.psi_quad.size() > 0) {
        for (int j = 0; j < dynamics.d; ++j) {
            const VectorXd sigma =
                dynamics.C[static_cast<std::size_t>(j)] * mean_x_tau + dynamics.D[static_cast<std::size_t>(j)] * u_tau;
            value += 0.5 * sigma.dot(cost.psi_quad * sigma);
        }
    }
    return value;
}

namespace {

std::vector<VectorXd> control_lattice(const ControlSet& set, int per_axis, int cap) {
    const int k = static_cast<int>(set.lower.size());
    int n = std::max(2, per_axis);
    while (n > 2 && std::pow(static_cast<double>(n), k) > cap) --n;
    std::vector<VectorXd> out;
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    while (true) {
        VectorXd u(k);
        for (int i = 0; i < k; ++i) {
            const double w = static_cast<double>(idx[static_cast<std::size_t>(i)]) / (n - 1);
            u[i] = idx[static_cast<std::size_t>(i)] == n - 1 ? set.upper[i] : set.lower[i] + w * (set.upper[i] - set.lower[i]);
        }
        out.push_back(u);
        int axis = 0;
        while (axis < k && ++idx[static_cast<std::size_t>(axis)] == n) idx[static_cast<std::size_t>(axis++)] = 0;
        if (axis == k) break;
    }
    return out;
}

}  // namespace

SmpReport smp_check(const ProblemSpec& spec, const ControlPolicy& policy, double tau, CaseLabel case_label,
                    const AdjointSolution& adjoints, const VectorXd& mean_x_tau, const SmpOptions& options) {
    require_valid(validate(spec));
    if (options.t_grid < 1) throw Error(ErrorKind::Validation, "tGrid must be positive", "numeric.tGrid");
    if (!(tau > 0.0)) throw domain_error("SMP check needs tau > 0");
    const auto& dyn = spec.dynamics;

    SmpReport report;
    report.case_label = case_label;
    report.tau = tau;
    const VectorXd u_tau = policy_left(policy, tau);
    report.terminal_weight = psi_tilde(mean_x_tau, u_tau, dyn, spec.cost) + spec.cost.running(mean_x_tau, u_tau);

    const bool time_term = case_label != CaseLabel::NoCrossing;
    if (case_label == CaseLabel::Interior) {
        report.g_tau = g_at_tau(spec.target, dyn, mean_x_tau, u_tau, 1e-8, spec.eps_regularize).value;
    } else if (case_label == CaseLabel::AtHorizon) {
        report.g_tau = spec.target.state_row(dyn).dot(mean_x_tau) + spec.target.control_row(dyn).dot(u_tau) +
                       spec.eps_regularize;
    }
    const bool use_time_term = time_term && std::abs(report.g_tau) > 1e-8;

    const auto lattice = control_lattice(spec.control_set, options.u_samples_per_axis, options.max_u_samples);
    const std::vector<VectorXd> no_q;
    double worst_full = -std::numeric_limits<double>::infinity();
    double worst_classical = -std::numeric_limits<double>::infinity();
    double worst_n1 = -std::numeric_limits<double>::infinity();
    double worst_n2 = -std::numeric_limits<double>::infinity();
    double witness_value = -std::numeric_limits<double>::infinity();

    report.samples.reserve(static_cast<std::size_t>(options.t_grid) * lattice.size());
    for (int i = 0; i < options.t_grid; ++i) {
        const double t = tau * i / options.t_grid;
        const VectorXd u_bar = policy_eval(policy, t);
        const RowVectorXd hu = hamiltonian_H_u(VectorXd(), u_bar, adjoints.p_at(t), no_q, dyn, spec.cost);
        RowVectorXd n2_row = RowVectorXd::Zero(dyn.k);
        if (use_time_term)
            n2_row = -report.terminal_weight * k_hat(adjoints.p0_at(t), dyn, spec.target) / report.g_tau;
        for (const auto& u : lattice) {
            const VectorXd du = u - u_bar;
            SmpSample s{t, u, hu.dot(du), n2_row.dot(du), 0.0};
            const double full = s.n1 + s.n2;
            s.residual = case_label == CaseLabel::NoCrossing ? s.n1 : full;
            worst_full = std::max(worst_full, full);
            worst_classical = std::max(worst_classical, s.n1);
            worst_n1 = std::max(worst_n1, s.n1);
            worst_n2 = std::max(worst_n2, s.n2);
            if (s.residual > witness_value) {
                witness_value = s.residual;
                report.witness_t = t;
                report.witness_u = u;
            }
            report.samples.push_back(std::move(s));
        }
    }

    report.n1_max = worst_n1;
    report.n2_max = worst_n2;
    report.max_violation_with_time_term = std::max(0.0, worst_full);
    report.max_violation_classical = std::max(0.0, worst_classical);
    switch (case_label) {
        case CaseLabel::Interior:
            report.max_violation = report.max_violation_with_time_term;
            break;
        case CaseLabel::NoCrossing:
            report.max_violation = report.max_violation_classical;
            break;
        case CaseLabel::AtHorizon: {
            const bool with_time = use_time_term && report.max_violation_with_time_term <= options.tol;
            const bool classical = report.max_violation_classical <= options.tol;
            report.max_violation = std::min(use_time_term ? report.max_violation_with_time_term
                                                          : std::numeric_limits<double>::infinity(),
                                            report.max_violation_classical);
            if (with_time && classical) report.note = "both the time-constrained and the classical condition hold";
            else if (with_time) report.note = "only the time-constrained condition holds";
            else if (classical) report.note = "only the classical condition holds";
            else report.note = "neither condition holds";
            break;
        }
    }
    report.passed = report.max_violation <= options.tol;
    return report;
}

std::string smp_csv(const SmpReport& report) {
    const Eigen::Index k = report.samples.empty() ? 0 : report.samples.front().u.size();
    std::string out = "t";
    for (Eigen::Index i = 0; i < k; ++i) out += ",u_" + std::to_string(i + 1);
    out += ",n1,n2,residual\n";
    std::vector<double> row;
    for (const auto& s : report.samples) {
        row.assign(1, s.t);
        for (Eigen::Index i = 0; i < k; ++i) row.push_back(s.u[i]);
        row.push_back(s.n1);
        row.push_back(s.n2);
        row.push_back(s.residual);
        out += csv_row(row);
    }
    return out;
}

std::string smp_summary_line(const SmpReport& report) {
    std::string line = report.passed ? "PASS" : "FAIL";
    line += " case=" + std::string(to_string(report.case_label));
    line += " maxViolation=" + fmt17(report.max_violation);
    line += " witness t=" + fmt17(report.witness_t) + " u=";
    for (Eigen::Index i = 0; i < report.witness_u.size(); ++i) {
        if (i > 0) line += ';';
        line += fmt17(report.witness_u[i]);
    }
    return line;
}

}  // namespace utoc
