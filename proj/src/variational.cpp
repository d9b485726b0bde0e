#include "utoc/variational.hpp"

#include "rk4.hpp"
#include "utoc/adjoint.hpp"
#include "utoc/error.hpp"
#include "utoc/io.hpp"
#include "utoc/mean_system.hpp"
#include "utoc/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace utoc {

void validate_perturbation(const PerturbationSpec& perturbation, double horizon, int k) {
    require_valid(validate_policy(perturbation.v, horizon, k));
    if (perturbation.rho_list.empty()) throw Error(ErrorKind::Validation, "rhoList is empty", "numeric.rhoList");
    for (std::size_t i = 0; i < perturbation.rho_list.size(); ++i) {
        const double rho = perturbation.rho_list[i];
        if (!(rho > 0.0) || !std::isfinite(rho))
            throw Error(ErrorKind::Validation, "rhoList entries must be positive", "numeric.rhoList");
        if (i > 0 && !(rho < perturbation.rho_list[i - 1]))
            throw Error(ErrorKind::Validation, "rhoList must be strictly decreasing", "numeric.rhoList");
    }
}

bool perturbation_admissible(const ControlPolicy& policy, const PerturbationSpec& perturbation,
                             const ControlSet& set, const std::vector<double>& times) {
    for (double rho : perturbation.rho_list)
        if (!policy_within(policy.combined(perturbation.v, rho), set, times)) return false;
    return true;
}

namespace {

ProblemSpec variational_spec(const ProblemSpec& spec) {
    ProblemSpec var = spec;
    var.dynamics.x0 = VectorXd::Zero(spec.dynamics.m);
    var.target.y0 = 0.0;
    var.target.g.reset();
    var.eps_regularize = 0.0;
    var.cost = CostSpec::time_optimal(spec.dynamics.m, spec.dynamics.k);
    return var;
}

}  // namespace

VariationalResult simulate_variational(const ProblemSpec& spec, const ControlPolicy& v, int n_paths,
                                       const SimGrid& grid, std::uint64_t seed) {
    require_valid(validate(spec));
    require_valid(validate_policy(v, grid.horizon(), spec.dynamics.k));
    ProblemSpec var = variational_spec(spec);
    // Keep the target away from zero so no crossing bookkeeping interferes.
    var.target.y0 = 1.0;
    var.target.E1.setZero();
    var.target.E2.setZero();
    var.target.E3.setZero();
    var.target.E4.setZero();

    VariationalResult res;
    res.grid = grid;
    res.mean_y_exact = mean_ode_solve(var.dynamics, v, grid);
    EnsembleOptions options;
    options.compute_cost = false;
    res.ensemble = simulate_ensemble(var, v, n_paths, grid, seed, options);
    return res;
}

DifferentiableModel linear_model(const LinearDynamics& dynamics) {
    const LinearDynamics dyn = dynamics;
    DifferentiableModel model;
    model.m = dyn.m;
    model.k = dyn.k;
    model.d = dyn.d;
    model.x0 = dyn.x0;
    model.drift = [dyn](const VectorXd& x, const VectorXd& u) -> VectorXd { return dyn.A * x + dyn.B * u; };
    model.drift_x = [dyn](const VectorXd&, const VectorXd&) -> MatrixXd { return dyn.A; };
    model.drift_u = [dyn](const VectorXd&, const VectorXd&) -> MatrixXd { return dyn.B; };
    model.diffusion = [dyn](const VectorXd& x, const VectorXd& u) -> MatrixXd {
        MatrixXd s(dyn.m, dyn.d);
        for (int j = 0; j < dyn.d; ++j)
            s.col(j) = dyn.C[static_cast<std::size_t>(j)] * x + dyn.D[static_cast<std::size_t>(j)] * u;
        return s;
    };
    model.diffusion_x = [dyn](const VectorXd&, const VectorXd&) { return dyn.C; };
    model.diffusion_u = [dyn](const VectorXd&, const VectorXd&) { return dyn.D; };
    return model;
}

std::vector<FdStateRow> fd_state_check(const DifferentiableModel& model, const ControlPolicy& policy,
                                       const PerturbationSpec& perturbation, int n_paths, const SimGrid& grid,
                                       std::uint64_t seed, NoiseCoupling coupling) {
    validate_perturbation(perturbation, grid.horizon(), model.k);
    if (n_paths < 2) throw domain_error("finite-difference check needs at least 2 paths");
    const int m = model.m, d = model.d, nodes = grid.nodes();
    const auto& rhos = perturbation.rho_list;
    const std::size_t R = rhos.size();

    std::vector<VectorXd> u_bar(static_cast<std::size_t>(nodes)), v_val(static_cast<std::size_t>(nodes));
    for (int j = 0; j < nodes; ++j) {
        u_bar[static_cast<std::size_t>(j)] = policy_eval(policy, grid.node(j));
        v_val[static_cast<std::size_t>(j)] = policy_eval(perturbation.v, grid.node(j));
    }

    // per (rho, node) running sums of the error and its square
    std::vector<double> sum(R * nodes, 0.0), sum2(R * nodes, 0.0);
    const NoiseStream base_noise(seed);
    std::vector<NoiseStream> rho_noise;
    for (std::size_t r = 0; r < R; ++r)
        rho_noise.emplace_back(seed, coupling == NoiseCoupling::Common ? 0u : static_cast<std::uint32_t>(r + 1));

    const double sqdt = std::sqrt(grid.dt());
    VectorXd dw(d), dw_r(d);
    for (int i = 0; i < n_paths; ++i) {
        const auto path = static_cast<std::uint64_t>(i);
        VectorXd x = model.x0, y = VectorXd::Zero(m);
        std::vector<VectorXd> xr(R, model.x0);
        for (int step = 0; step < grid.n_steps(); ++step) {
            const VectorXd& u = u_bar[static_cast<std::size_t>(step)];
            const VectorXd& v = v_val[static_cast<std::size_t>(step)];
            for (int c = 0; c < d; ++c)
                dw[c] = base_noise.normal(path, static_cast<std::uint64_t>(step), static_cast<std::uint32_t>(c)) * sqdt;

            // variational step uses derivatives frozen at the base state
            VectorXd y_new = y + (model.drift_x(x, u) * y + model.drift_u(x, u) * v) * grid.dt();
            if (d > 0) {
                const auto sx = model.diffusion_x(x, u);
                const auto su = model.diffusion_u(x, u);
                for (int c = 0; c < d; ++c)
                    y_new += (sx[static_cast<std::size_t>(c)] * y + su[static_cast<std::size_t>(c)] * v) * dw[c];
            }
            for (std::size_t r = 0; r < R; ++r) {
                const VectorXd ur = u + rhos[r] * v;
                VectorXd& xp = xr[r];
                VectorXd step_x = model.drift(xp, ur) * grid.dt();
                if (d > 0) {
                    if (coupling == NoiseCoupling::Common) {
                        step_x += model.diffusion(xp, ur) * dw;
                    } else {
                        for (int c = 0; c < d; ++c)
                            dw_r[c] = rho_noise[r].normal(path, static_cast<std::uint64_t>(step),
                                                          static_cast<std::uint32_t>(c)) * sqdt;
                        step_x += model.diffusion(xp, ur) * dw_r;
                    }
                }
                xp += step_x;
            }
            VectorXd x_new = x + model.drift(x, u) * grid.dt();
            if (d > 0) x_new += model.diffusion(x, u) * dw;
            x = std::move(x_new);
            y = std::move(y_new);

            const int node = step + 1;
            for (std::size_t r = 0; r < R; ++r) {
                const double e = ((xr[r] - x) / rhos[r] - y).norm();
                sum[r * nodes + node] += e;
                sum2[r * nodes + node] += e * e;
            }
        }
    }

    std::vector<FdStateRow> rows;
    const double n = static_cast<double>(n_paths);
    for (std::size_t r = 0; r < R; ++r) {
        FdStateRow row{rhos[r], 0.0, 0.0};
        for (int j = 0; j < nodes; ++j) {
            const double mean = sum[r * nodes + j] / n;
            if (mean >= row.sup_error) {
                const double var = std::max(0.0, (sum2[r * nodes + j] - n * mean * mean) / (n - 1.0));
                row.sup_error = mean;
                row.std_err = std::sqrt(var / n);
            }
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<FdStateRow> fd_state_check(const ProblemSpec& spec, const ControlPolicy& policy,
                                       const PerturbationSpec& perturbation, int n_paths, const SimGrid& grid,
                                       std::uint64_t seed, NoiseCoupling coupling) {
    require_valid(validate(spec));
    return fd_state_check(linear_model(spec.dynamics), policy, perturbation, n_paths, grid, seed, coupling);
}

bool fd_table_monotone(const std::vector<FdStateRow>& rows, double slack) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double se = std::hypot(rows[i].std_err, rows[i - 1].std_err);
        if (rows[i].sup_error > rows[i - 1].sup_error + slack * se) return false;
    }
    return true;
}

double h_bar(const VectorXd& v_t, const VectorXd& mean_y_t, const TargetCoefficients& target,
             const LinearDynamics& dynamics) {
    return (target.E1 + target.E2).dot(mean_y_t) + target.E3.dot(dynamics.A * mean_y_t + dynamics.B * v_t) +
           target.E4.dot(v_t);
}

double h_bar_integral(const ProblemSpec& spec, const ControlPolicy& v, double tau) {
    if (tau == 0.0) return 0.0;
    // The integral of h_bar is the target mean of the variational system started at zero.
    const MeanSystem var(variational_spec(spec), v);
    return var.y_at(tau);
}

FdTauReport fd_tau_check(const ProblemSpec& spec, const ControlPolicy& policy, const PerturbationSpec& perturbation,
                         int n_steps) {
    validate_perturbation(perturbation, spec.T, spec.dynamics.k);
    const MeanSystem base(spec, policy, n_steps);
    const MinTime mt = base.refined_min_time();

    FdTauReport report;
    report.case_label = mt.label;
    report.tau_bar = mt.tau;
    report.admissible = perturbation_admissible(policy, perturbation, spec.control_set, base.grid().times());
    report.h_bar_integral = h_bar_integral(spec, perturbation.v, mt.tau);

    switch (mt.label) {
        case CaseLabel::Interior: {
            if (mt.tau == 0.0) throw domain_error("tau is zero; the target is already reached at t = 0");
            const GAtTau g = g_at_tau(spec.target, spec.dynamics, base.x_at(mt.tau), policy_left(policy, mt.tau),
                                      1e-8, spec.eps_regularize);
            report.g_tau = g.value;
            report.formula = report.h_bar_integral / g.value;
            break;
        }
        case CaseLabel::NoCrossing:
            report.formula = 0.0;
            report.note = "no crossing on [0, T]: tau stays at T for small rho, the quotient limit is 0";
            break;
        case CaseLabel::AtHorizon: {
            const double g = base.g_at(mt.tau);
            report.g_tau = g;
            report.formula = std::abs(g) > 1e-8 ? report.h_bar_integral / g : std::numeric_limits<double>::quiet_NaN();
            report.note = "crossing at T: along a subsequence the quotient follows either the interior formula or 0";
            break;
        }
    }

    for (double rho : perturbation.rho_list) {
        const MeanSystem perturbed(spec, policy.combined(perturbation.v, rho), n_steps);
        const double tau_rho = perturbed.refined_min_time().tau;
        FdTauRow row;
        row.rho = rho;
        row.fd_value = (mt.tau - tau_rho) / rho;
        row.formula_value = report.formula;
        row.abs_gap = std::abs(row.fd_value - row.formula_value);
        const double scale = std::max(std::abs(row.fd_value), std::abs(row.formula_value));
        row.rel_gap = scale > 0.0 ? row.abs_gap / scale : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

DualIdentity dual_identity_check(const ProblemSpec& spec, const ControlPolicy& policy, const ControlPolicy& v,
                                 const SimGrid& grid) {
    require_valid(validate(spec));
    require_valid(validate_policy(v, spec.T, spec.dynamics.k));
    const MinTime mt = MeanSystem(spec, policy).refined_min_time();
    const auto& dyn = spec.dynamics;

    DualIdentity out;
    out.tau = mt.tau;

    // left: forward RK4 of (E[y], int h_bar) on the supplied grid, last step cut at tau
    const ProblemSpec var = variational_spec(spec);
    const detail::AffineRk4 rk(var.dynamics, v, spec.target.state_row(dyn), spec.target.control_row(dyn), 0.0);
    VectorXd ey = VectorXd::Zero(dyn.m);
    double integral = 0.0;
    for (int j = 0; j < grid.n_steps() && grid.node(j) < mt.tau; ++j)
        rk.advance(grid.node(j), std::min(grid.node(j + 1), mt.tau), ey, integral);
    out.lhs = integral;

    // right: -int K_hat v with closed-form p0 and adaptive Gauss-Kronrod between breakpoints
    const RowVectorXd c = spec.target.state_row(dyn);
    const RowVectorXd e = spec.target.control_row(dyn);
    const auto& segs = v.segments();
    double rhs = 0.0;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        const double a = segs[s].t_start;
        const double b = std::min(segs[s].t_end, mt.tau);
        if (!(b > a)) continue;
        auto integrand = [&](double t) {
            const double lag = mt.tau - t;
            const RowVectorXd p0t = lag == 0.0 ? RowVectorXd::Zero(dyn.m) : RowVectorXd(-(c * exp_and_integral(dyn.A, lag).second));
            const RowVectorXd kh = p0t * dyn.B - e;
            return kh.dot(v.eval_in_segment(s, t));
        };
        rhs -= boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, a, b, 15, 1e-14);
    }
    out.rhs = rhs;
    out.abs_gap = std::abs(out.lhs - out.rhs);
    const double scale = std::max(std::abs(out.lhs), std::abs(out.rhs));
    out.rel_gap = scale > 0.0 ? out.abs_gap / scale : 0.0;
    return out;
}

std::string fd_tau_csv(const FdTauReport& report) {
    std::string out = "rho,fd_value,formula_value,abs_gap,rel_gap\n";
    for (const auto& row : report.rows)
        out += csv_row({row.rho, row.fd_value, row.formula_value, row.abs_gap, row.rel_gap});
    return out;
}

}  // namespace utoc
