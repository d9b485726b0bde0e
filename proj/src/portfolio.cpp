#include "utoc/portfolio.hpp"

#include "utoc/error.hpp"
#include "utoc/io.hpp"

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace utoc {

void validate(const PortfolioParams& p) {
    auto check = [](bool ok, const char* field, const char* message) {
        if (!ok) throw Error(ErrorKind::Validation, std::string(field) + " " + message, field);
    };
    for (double v : {p.r, p.mu, p.sigma, p.alpha_star, p.x0, p.beta, p.T})
        check(std::isfinite(v), "portfolio", "has a non-finite entry");
    check(p.r > 0.0, "portfolio.r", "must be positive");
    check(p.mu > p.r, "portfolio.mu", "must exceed r");
    check(p.sigma >= 0.0, "portfolio.sigma", "must be nonnegative");
    check(p.alpha_star > 0.0, "portfolio.alphaStar", "must be positive");
    check(p.x0 > 0.0, "portfolio.x0", "must be positive");
    check(p.x0 <= p.alpha_star, "portfolio.x0", "must not exceed alphaStar");
    check(p.beta > 0.0, "portfolio.beta", "must be positive");
    check(p.T > 0.0, "portfolio.T", "must be positive");
}

ProblemSpec to_problem_spec(const PortfolioParams& p) {
    validate(p);
    ProblemSpec spec;
    auto& dyn = spec.dynamics;
    dyn.m = dyn.k = dyn.d = 1;
    dyn.A = MatrixXd::Constant(1, 1, p.r);
    dyn.B = MatrixXd::Constant(1, 1, p.mu - p.r);
    dyn.C = {MatrixXd::Zero(1, 1)};
    dyn.D = {MatrixXd::Constant(1, 1, p.sigma)};
    dyn.x0 = VectorXd::Constant(1, p.x0);

    auto& tg = spec.target;
    tg.E1 = RowVectorXd::Zero(1);
    tg.E2 = RowVectorXd::Constant(1, -p.r);
    tg.E3 = RowVectorXd::Zero(1);
    tg.E4 = RowVectorXd::Constant(1, -(p.mu - p.r));
    tg.y0 = p.alpha_star - p.x0;
    tg.g = TargetDiffusion{MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Constant(1, 1, -p.sigma)};

    spec.cost = CostSpec::time_optimal(1, 1);
    spec.cost.Lambda = MatrixXd::Constant(1, 1, p.lambda());

    spec.control_set.lower = VectorXd::Constant(1, p.alpha_star);
    spec.control_set.upper = VectorXd::Constant(1, 1.25 * p.alpha_star);
    spec.T = p.T;
    return spec;
}

SwitchTimes switch_times(double tau, const PortfolioParams& p) {
    validate(p);
    if (!(tau >= 0.0)) throw domain_error("tau must be nonnegative");
    const double weight = (2.0 * p.beta + 1.0) * (p.mu - p.r);
    if (weight > 2.5 * p.mu)
        throw domain_error("regime: (2 beta + 1)(mu - r) exceeds 2.5 mu, the unconstrained optimum lies above the upper bound");
    const double t1 = tau - std::log(2.5 * p.mu / weight) / p.r;
    const double t2 = tau - std::log(2.0 * p.mu / weight) / p.r;
    SwitchTimes s{std::clamp(t1, 0.0, tau), std::clamp(t2, 0.0, tau)};
    s.t1 = std::min(s.t1, s.t2);
    return s;
}

WealthResidualBreakdown wealth_residual(double tau, const PortfolioParams& p) {
    const SwitchTimes s = switch_times(tau, p);
    WealthResidualBreakdown w;
    w.tau = tau;
    w.t1 = s.t1;
    w.t2 = s.t2;
    const double r = p.r;
    w.L1 = 1.25 * (std::exp(r * tau) - std::exp(r * (tau - s.t1))) / r;
    w.L2 = (2.0 * p.beta + 1.0) * (p.mu - r) / (4.0 * p.mu * r) *
           (std::exp(2.0 * r * (tau - s.t1)) - std::exp(2.0 * r * (tau - s.t2)));
    w.L3 = (std::exp(r * (tau - s.t2)) - 1.0) / r;
    w.residual = p.alpha_star - p.x0 * std::exp(r * tau) - (p.mu - r) * p.alpha_star * (w.L1 + w.L2 + w.L3);
    return w;
}

double solve_tau(const PortfolioParams& p, std::optional<std::pair<double, double>> bracket, double tol) {
    validate(p);
    const auto [lo, hi] = bracket.value_or(std::make_pair(0.0, p.T));
    if (!(lo >= 0.0 && hi > lo)) throw domain_error("tau bracket must satisfy 0 <= lo < hi");
    auto f = [&](double tau) { return wealth_residual(tau, p).residual; };
    const double f_lo = f(lo), f_hi = f(hi);
    if (f_lo == 0.0) return lo;
    if (f_hi == 0.0) return hi;
    if ((f_lo > 0.0) == (f_hi > 0.0)) {
        throw Error(ErrorKind::Infeasible, "terminal-wealth residual has no sign change on [" + fmt17(lo) + ", " +
                                               fmt17(hi) + "]: target unreachable within the horizon");
    }
    std::uintmax_t iters = 300;
    const auto root = boost::math::tools::toms748_solve(
        f, lo, hi, f_lo, f_hi,
        [tol](double a, double b) { return std::abs(b - a) < tol; }, iters);
    const double a = root.first, b = root.second;
    return std::abs(f(a)) <= std::abs(f(b)) ? a : b;
}

double optimal_control(double t, double tau, const PortfolioParams& p) {
    if (t < 0.0 || t > tau) throw domain_error("t outside [0, tau]");
    const SwitchTimes s = switch_times(tau, p);
    if (t <= s.t1) return 1.25 * p.alpha_star;
    if (t <= s.t2) return p.branch_scale() * std::exp(p.r * (tau - t)) * p.alpha_star;
    return p.alpha_star;
}

ControlPolicy portfolio_policy(double tau, const PortfolioParams& p) {
    if (tau > p.T) throw domain_error("tau exceeds the horizon");
    const SwitchTimes s = switch_times(tau, p);
    std::vector<PolicySegment> segs;
    auto add = [&](double a, double b, ComponentForm form) {
        if (b > a) segs.push_back({a, b, {std::move(form)}});
    };
    add(0.0, s.t1, ComponentForm::constant(1.25 * p.alpha_star));
    add(s.t1, s.t2, ComponentForm::scaled_exp(0.0, p.branch_scale() * p.alpha_star, -p.r, tau));
    add(s.t2, p.T, ComponentForm::constant(p.alpha_star));
    return ControlPolicy(std::move(segs));
}

ControlPolicy truncate_policy(const ControlPolicy& policy, double horizon) {
    if (!(horizon > 0.0) || horizon > policy.horizon()) throw domain_error("truncation horizon outside (0, T]");
    std::vector<PolicySegment> segs;
    for (const auto& seg : policy.segments()) {
        if (seg.t_start >= horizon) break;
        PolicySegment copy = seg;
        copy.t_end = std::min(seg.t_end, horizon);
        segs.push_back(std::move(copy));
    }
    return ControlPolicy(std::move(segs));
}

namespace {

double interpolate(const SimGrid& grid, const std::vector<double>& values, double t) {
    int j = std::clamp(static_cast<int>(std::floor(t / grid.dt())), 0, grid.n_steps() - 1);
    while (j > 0 && grid.node(j) > t) --j;
    const double w = (t - grid.node(j)) / (grid.node(j + 1) - grid.node(j));
    return (1.0 - w) * values[static_cast<std::size_t>(j)] + w * values[static_cast<std::size_t>(j + 1)];
}

std::vector<double> column(const MatrixXd& m) {
    return std::vector<double>(m.col(0).data(), m.col(0).data() + m.rows());
}

}  // namespace

McValidationReport mc_validate(const PortfolioParams& params, double tau, const ControlPolicy& policy, int n_paths,
                               double dt, std::uint64_t seed, const McValidationOptions& options) {
    validate(params);
    if (!(dt > 0.0)) throw domain_error("dt must be positive");
    if (!(tau > 0.0) || tau > params.T) throw domain_error("tau outside (0, T]");
    const int steps = static_cast<int>(std::ceil(tau / dt - 1e-9));
    const double horizon = std::min(steps * dt, params.T);
    const SimGrid grid(horizon, steps);
    const ControlPolicy sim_policy = truncate_policy(policy, horizon);

    EnsembleOptions eo;
    eo.threads = options.threads;
    eo.compute_cost = false;
    eo.store_paths = false;

    auto run = [&](double sigma) {
        PortfolioParams p = params;
        p.sigma = sigma;
        ProblemSpec spec = to_problem_spec(p);
        spec.T = horizon;
        return simulate_ensemble(spec, sim_policy, n_paths, grid, seed, eo);
    };

    McValidationReport rep;
    rep.tau = tau;
    const EnsembleResult main = run(params.sigma);
    const auto mean = column(main.mean_x);
    std::vector<double> se(mean.size());
    for (std::size_t j = 0; j < se.size(); ++j) se[j] = std::sqrt(main.var_x(static_cast<Eigen::Index>(j), 0) / n_paths);
    rep.mean_x_tau = interpolate(grid, mean, tau);
    rep.std_err = interpolate(grid, se, tau);
    rep.terminal_ok = std::abs(rep.mean_x_tau - params.alpha_star) < 3.0 * rep.std_err ||
                      (rep.std_err == 0.0 && std::abs(rep.mean_x_tau - params.alpha_star) < 1e-5);

    rep.max_excess = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < grid.nodes() && grid.node(j) < tau; ++j) {
        const double excess = mean[static_cast<std::size_t>(j)] - params.alpha_star;
        if (excess > rep.max_excess) {
            rep.max_excess = excess;
            rep.max_excess_std_err = se[static_cast<std::size_t>(j)];
        }
    }
    rep.below_target_ok = rep.max_excess < 3.0 * rep.max_excess_std_err || rep.max_excess < 0.0;

    rep.sigma_a = options.sigma_a;
    rep.sigma_b = options.sigma_b;
    if (options.check_sigma_independence) {
        const EnsembleResult a = run(options.sigma_a);
        const EnsembleResult b = run(options.sigma_b);
        double worst = 0.0;
        bool ok = true;
        for (int j = 0; j < grid.nodes(); ++j) {
            const double diff = std::abs(a.mean_x(j, 0) - b.mean_x(j, 0));
            const double joint = std::sqrt((a.var_x(j, 0) + b.var_x(j, 0)) / n_paths);
            if (joint > 0.0) worst = std::max(worst, diff / joint);
            else ok = ok && diff <= 1e-12 * (1.0 + std::abs(a.mean_x(j, 0)));
        }
        rep.sigma_max_z = worst;
        rep.sigma_independent = ok && worst < 3.0;
    }
    return rep;
}

namespace {

struct FigureSeries {
    std::vector<double> t, u, x;
};

FigureSeries figure_series(const PortfolioParams& params, double tau, const ControlPolicy& policy,
                           const SimGrid& grid) {
    validate(params);
    if (std::abs(grid.horizon() - tau) > 1e-12 * std::max(1.0, tau))
        throw domain_error("figure grid must span [0, tau]");
    const ControlPolicy clipped = truncate_policy(policy, grid.horizon());
    LinearDynamics dyn = to_problem_spec(params).dynamics;
    const MatrixXd mx = mean_ode_solve(dyn, clipped, grid);
    FigureSeries s;
    for (int j = 0; j < grid.nodes(); ++j) {
        s.t.push_back(grid.node(j));
        s.u.push_back(policy_eval(clipped, grid.node(j))[0]);
        s.x.push_back(mx(j, 0));
    }
    return s;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string chart(const std::vector<double>& t, const std::vector<double>& y, double top, const std::string& label,
                  const std::string& colour) {
    constexpr double left = 70.0, width = 540.0, height = 170.0;
    const double t_max = t.back();
    double y_min = *std::min_element(y.begin(), y.end());
    double y_max = *std::max_element(y.begin(), y.end());
    if (y_max - y_min < 1e-12) {
        y_min -= 0.5;
        y_max += 0.5;
    }
    const double pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    auto px = [&](double tv) { return left + (t_max > 0.0 ? tv / t_max : 0.0) * width; };
    auto py = [&](double yv) { return top + height - (yv - y_min) / (y_max - y_min) * height; };

    std::string s;
    s += "  <g>\n";
    s += "    <line x1=\"" + num(left) + "\" y1=\"" + num(top + height) + "\" x2=\"" + num(left + width) + "\" y2=\"" +
         num(top + height) + "\" stroke=\"black\"/>\n";
    s += "    <line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" +
         num(top + height) + "\" stroke=\"black\"/>\n";
    s += "    <text x=\"" + num(left + width / 2) + "\" y=\"" + num(top + height + 35) +
         "\" text-anchor=\"middle\" font-size=\"13\">t</text>\n";
    s += "    <text x=\"18\" y=\"" + num(top + height / 2) + "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " +
         num(top + height / 2) + ")\">" + label + "</text>\n";
    s += "    <text x=\"" + num(left) + "\" y=\"" + num(top + height + 16) + "\" text-anchor=\"middle\" font-size=\"11\">0</text>\n";
    s += "    <text x=\"" + num(left + width) + "\" y=\"" + num(top + height + 16) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + tick(t_max) + "</text>\n";
    s += "    <text x=\"" + num(left - 6) + "\" y=\"" + num(py(y_min + pad) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         tick(y_min + pad) + "</text>\n";
    s += "    <text x=\"" + num(left - 6) + "\" y=\"" + num(py(y_max - pad) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         tick(y_max - pad) + "</text>\n";
    s += "    <polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < t.size(); ++j) {
        if (j > 0) s += ' ';
        s += num(px(t[j])) + "," + num(py(y[j]));
    }
    s += "\"/>\n  </g>\n";
    return s;
}

}  // namespace

std::string figure_csv(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid) {
    const FigureSeries s = figure_series(params, tau, policy, grid);
    std::string out = "t,u,meanX\n";
    for (std::size_t j = 0; j < s.t.size(); ++j) out += csv_row({s.t[j], s.u[j], s.x[j]});
    return out;
}

std::string figure_svg(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid) {
    const FigureSeries s = figure_series(params, tau, policy, grid);
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"500\" viewBox=\"0 0 640 500\">\n";
    out += "  <rect width=\"640\" height=\"500\" fill=\"white\"/>\n";
    out += "  <text x=\"340\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Optimal control and expected wealth</text>\n";
    out += chart(s.t, s.u, 40.0, "u(t)", "#1f77b4");
    out += chart(s.t, s.x, 280.0, "E[X(t)]", "#d62728");
    out += "</svg>\n";
    return out;
}

void emit_figure(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid,
                 const std::filesystem::path& out_dir) {
    const std::string csv = figure_csv(params, tau, policy, grid);
    const std::string svg = figure_svg(params, tau, policy, grid);
    write_atomic(out_dir / "figure.csv", csv);
    write_atomic(out_dir / "figure.svg", svg);
}

}  // namespace utoc
