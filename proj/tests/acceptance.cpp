// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include "utoc/adjoint.hpp"
#include "utoc/bangbang.hpp"
#include "utoc/error.hpp"
#include "utoc/mean_system.hpp"
#include "utoc/meanfield.hpp"
#include "utoc/portfolio.hpp"
#include "utoc/smp.hpp"
#include "utoc/variational.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace utoc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

PortfolioParams reference_params() {
    PortfolioParams p;
    p.r = 0.05;
    p.mu = 0.10;
    p.beta = p.mu / (p.mu - p.r) - 0.8;
    p.alpha_star = 10.0;
    p.x0 = 1.0;
    p.sigma = 0.2;
    p.T = 20.0;
    return p;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ProblemSpec scalar_spec(double a, double b, double e1, double e2, double e3, double e4, double y0, double u_min,
                        double u_max, double T) {
    ProblemSpec s;
    auto& dyn = s.dynamics;
    dyn.m = dyn.k = dyn.d = 1;
    dyn.A = MatrixXd::Constant(1, 1, a);
    dyn.B = MatrixXd::Constant(1, 1, b);
    dyn.C = {MatrixXd::Zero(1, 1)};
    dyn.D = {MatrixXd::Zero(1, 1)};
    dyn.x0 = VectorXd::Zero(1);
    s.target.E1 = RowVectorXd::Constant(1, e1);
    s.target.E2 = RowVectorXd::Constant(1, e2);
    s.target.E3 = RowVectorXd::Constant(1, e3);
    s.target.E4 = RowVectorXd::Constant(1, e4);
    s.target.y0 = y0;
    s.cost = CostSpec::time_optimal(1, 1);
    s.control_set.lower = VectorXd::Constant(1, u_min);
    s.control_set.upper = VectorXd::Constant(1, u_max);
    s.T = T;
    return s;
}

Outcome golden_numbers() {
    const auto start = std::chrono::steady_clock::now();
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const SwitchTimes sw = switch_times(tau, p);
    const double elapsed = seconds_since(start);
    const bool ok = std::abs(tau - 10.92) <= 0.01 && std::abs(sw.t1 - 3.21) <= 0.01 && std::abs(sw.t2 - 7.67) <= 0.01 &&
                    elapsed < 1.0;
    return {ok, fmt("tau=%.6f", tau) + fmt(" t1=%.6f", sw.t1) + fmt(" t2=%.6f", sw.t2) + fmt(" runtime=%.3fs", elapsed)};
}

Outcome terminal_wealth() {
    using boost::math::quadrature::gauss_kronrod;
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const WealthResidualBreakdown w = wealth_residual(tau, p);
    const double cuts[] = {0.0, w.t1, w.t2, tau};
    double integral = 0.0;
    for (int i = 0; i < 3; ++i) {
        if (!(cuts[i + 1] > cuts[i])) continue;
        const double level = i == 0 ? 1.25 : i == 2 ? 1.0 : 0.0;
        auto integrand = [&](double s) {
            const double grow = std::exp(p.r * (tau - s));
            return grow * (i == 1 ? p.branch_scale() * grow : level);
        };
        integral += gauss_kronrod<double, 31>::integrate(integrand, cuts[i], cuts[i + 1], 15, 1e-15);
    }
    const double sum = w.L1 + w.L2 + w.L3;
    const double gap = std::abs(sum - integral);
    const bool ok = std::abs(w.residual) < 1e-9 && gap < 1e-10;
    return {ok, fmt("|residual|=%.3e", std::abs(w.residual)) + fmt(" |L-sum - quadrature|=%.3e", gap)};
}

Outcome control_structure() {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const SwitchTimes sw = switch_times(tau, p);
    const ControlPolicy pol = portfolio_policy(tau, p);
    const double u0 = policy_eval(pol, 0.0)[0];
    const double u_tau = policy_left(pol, tau)[0];
    double gap = 0.0;
    for (double t : {sw.t1, sw.t2}) gap = std::max(gap, std::abs(policy_left(pol, t)[0] - policy_eval(pol, t)[0]));
    bool inside = true;
    for (int i = 0; i < 4096; ++i) {
        const double t = tau * i / 4095;
        const double u = i == 4095 ? u_tau : policy_eval(pol, t)[0];
        inside = inside && u >= 10.0 && u <= 12.5;
    }
    const bool ok = u0 == 12.5 && u_tau == 10.0 && gap < 1e-9 && inside;
    return {ok, fmt("u(0)=%.17g", u0) + fmt(" u(tau)=%.17g", u_tau) + fmt(" continuity gap=%.3e", gap) +
                    (inside ? " range ok" : " range violated")};
}

Outcome closed_loop_tau() {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const ControlPolicy pol = portfolio_policy(tau, p);
    const SimGrid grid(p.T, static_cast<int>(std::lround(p.T / 1e-4)));
    const MatrixXd mx = mean_ode_solve(spec.dynamics, pol, grid);
    const auto my = mean_target_solve(spec.target, spec.dynamics, mx, pol, grid);
    const MinTime mt = detect_min_time(my, grid);
    const double gap = std::abs(mt.tau - tau);
    return {mt.label == CaseLabel::Interior && gap < 1e-6, fmt("|tau_ode - tau_root|=%.3e", gap)};
}

Outcome smp_certification() {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const VectorXd x_tau = MeanSystem(spec, portfolio_policy(tau, p)).x_at(tau);
    const AdjointSolution adj = solve_adjoints(spec, tau, x_tau, SimGrid(p.T, 2048));
    const ControlPolicy opt = portfolio_policy(tau, p);
    const SmpReport good = smp_check(spec, opt, tau, CaseLabel::Interior, adj, x_tau);
    const ControlPolicy bump({{0.0, 2.0, {ComponentForm::constant(0.0)}},
                              {2.0, 3.0, {ComponentForm::constant(0.3)}},
                              {3.0, p.T, {ComponentForm::constant(0.0)}}});
    const SmpReport bad = smp_check(spec, opt.combined(bump, 1.0), tau, CaseLabel::Interior, adj, x_tau);
    const bool ok = good.max_violation <= 1e-8 && bad.max_violation > 0.0 && bad.witness_t >= 2.0 && bad.witness_t <= 3.0;
    return {ok, fmt("optimum maxViolation=%.3e", good.max_violation) +
                    fmt(" perturbed maxViolation=%.3e", bad.max_violation) + fmt(" witness t=%.4f", bad.witness_t)};
}

Outcome adjoint_cross_check() {
    std::mt19937_64 rng(20261015);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), norm_dist(0.1, 10.0), tau_dist(0.5, 20.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 1 + trial % 3;
        LinearDynamics dyn;
        dyn.m = m;
        dyn.k = 1;
        dyn.d = 1;
        dyn.A = MatrixXd(m, m);
        for (Eigen::Index i = 0; i < dyn.A.size(); ++i) dyn.A.data()[i] = unit(rng);
        dyn.A *= norm_dist(rng) / dyn.A.norm();
        dyn.B = MatrixXd::Ones(m, 1);
        TargetCoefficients tg;
        tg.E1 = RowVectorXd(m);
        tg.E2 = RowVectorXd(m);
        tg.E3 = RowVectorXd(m);
        for (int i = 0; i < m; ++i) tg.E1[i] = unit(rng), tg.E2[i] = unit(rng), tg.E3[i] = unit(rng);
        tg.E4 = RowVectorXd::Zero(1);
        const double tau = tau_dist(rng);
        std::vector<double> times;
        for (int i = 0; i <= 256; ++i) times.push_back(tau * i / 256);
        const MatrixXd closed = p0_closed_form(dyn, tg, tau, times);
        const MatrixXd ode = p0_backward_ode(dyn, tg, tau, times, 0.005 / std::max(1.0, dyn.A.norm()));
        worst = std::max(worst, mixed_gap(closed, ode));
    }
    return {worst <= 1e-8, fmt("max mixed gap over 20 specs=%.3e", worst)};
}

Outcome tau_derivative() {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    PerturbationSpec ps{ControlPolicy::constant(VectorXd::Ones(1), p.T), {1e-2, 1e-3, 1e-4}};
    const FdTauReport rep = fd_tau_check(to_problem_spec(p), portfolio_policy(tau, p), ps);
    const FdTauRow& last = rep.rows.back();

    const ProblemSpec none = scalar_spec(0.0, 0.0, 0, 0, 0, -0.1, 1.0, 0.0, 1.0, 2.0);
    const FdTauReport rep2 = fd_tau_check(none, ControlPolicy::constant(VectorXd::Constant(1, 0.5), 2.0),
                                          {ControlPolicy::constant(VectorXd::Ones(1), 2.0)});
    double quotient = 0.0;
    for (const auto& r : rep2.rows) quotient = std::max(quotient, std::abs(r.fd_value));
    const bool ok = last.rho == 1e-4 && last.rel_gap < 1e-3 && rep2.case_label == CaseLabel::NoCrossing &&
                    quotient < 1e-10;
    return {ok, fmt("fd=%.8f", last.fd_value) + fmt(" formula=%.8f", last.formula_value) +
                    fmt(" rel gap=%.3e", last.rel_gap) + fmt(" no-crossing |quotient|=%.3e", quotient)};
}

Outcome dual_identity() {
    std::mt19937_64 rng(424242);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), pos(0.5, 1.5);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const double a = unit(rng), b = pos(rng), e1 = unit(rng), e2 = unit(rng), e3 = unit(rng);
        const double e4 = -2.0 - e3 * b;
        const ProblemSpec spec = scalar_spec(a, b, e1, e2, e3, e4, 1.0, 0.0, 2.0, 4.0);
        const ControlPolicy u({{0.0, 0.15, {ComponentForm::constant(pos(rng))}},
                               {0.15, 4.0, {ComponentForm::constant(pos(rng))}}});
        const ControlPolicy v({{0.0, 0.1, {ComponentForm::constant(unit(rng))}},
                               {0.1, 0.3, {ComponentForm::constant(unit(rng))}},
                               {0.3, 4.0, {ComponentForm::constant(unit(rng))}}});
        const DualIdentity d = dual_identity_check(spec, u, v, SimGrid(4.0, 4000));
        worst = std::max(worst, d.rel_gap);
    }
    return {worst < 1e-6, fmt("max relative gap over 20 problems=%.3e", worst)};
}

// Closed-form mean pair of x' = a x + a u, y' = c x + e u held at u for time h.
struct ScalarCase {
    double a, e1, e2, e3, e4;
    double c() const { return e1 + e2 + e3 * a; }
    double e() const { return e3 * a + e4; }
};

void hold(const ScalarCase& s, double u, double h, double& x, double& y) {
    const double g = std::expm1(s.a * h) / s.a;
    y += s.c() * (x * g + u * (g - h)) + s.e() * u * h;
    x = x * std::exp(s.a * h) + s.a * u * g;
}

double crossing(const ScalarCase& s, double u1, double u2, double sw, double T) {
    std::vector<double> nodes;
    for (int i = 0; i <= 1000; ++i) nodes.push_back(T * i / 1000);
    if (sw > 0.0 && sw < T) nodes.insert(std::upper_bound(nodes.begin(), nodes.end(), sw), sw);
    double x = 0.0, y = 1.0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const double t = nodes[i], h = nodes[i + 1] - t;
        if (!(h > 0.0)) continue;
        const double u = t < sw ? u1 : u2;
        double xn = x, yn = y;
        hold(s, u, h, xn, yn);
        if (yn <= 0.0) {
            double lo = 0.0, hi = h;
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                double xm = x, ym = y;
                hold(s, u, mid, xm, ym);
                (ym > 0.0 ? lo : hi) = mid;
            }
            return t + hi;
        }
        x = xn;
        y = yn;
    }
    return INFINITY;
}

Outcome bangbang_regimes() {
    const double u_min = 1.0, u_max = 2.0, T = 10.0;
    const std::vector<ScalarCase> constant_max{{0.5, 0.0, -1.0, 0.0, -0.2}, {0.3, -0.5, 0.0, -0.5, 0.05}, {1.0, 0.0, -2.0, 0.0, -1.0}};
    const std::vector<ScalarCase> single_switch{{0.5, 0.0, -1.0, 0.0, 0.2}, {0.3, 0.0, -1.0, 0.0, 0.1}, {0.8, -0.5, -0.5, 0.0, 0.3}};
    bool ok = true;
    double worst_t0 = 0.0, worst_oracle = 0.0;
    std::string fail;
    auto check_oracle = [&](const ScalarCase& s, double tau) {
        double best = INFINITY;
        for (int i = 0; i <= 10000; ++i) {
            const double sw = T * i / 10000;
            best = std::min({best, crossing(s, u_max, u_min, sw, T), crossing(s, u_min, u_max, sw, T)});
        }
        worst_oracle = std::max(worst_oracle, std::abs(best - tau));
        if (best < tau - 1e-9 || best > tau + 1e-3) ok = false;
    };
    for (const auto& s : constant_max) {
        const SynthesisResult res = synthesize(scalar_spec(s.a, s.a, s.e1, s.e2, s.e3, s.e4, 1.0, u_min, u_max, T), 1.0);
        const ScalarRegimeReport rep = scalar_case_analysis(s.a, s.e1, s.e2, s.e3, s.e4, s.a, u_min, u_max, res.tau);
        bool structure = res.record.roots[0].empty() && rep.label == "i" && rep.crossing_consistent;
        for (int i = 0; i <= 1000; ++i) structure = structure && policy_eval(res.policy, res.tau * i / 1000)[0] == u_max;
        if (!structure) ok = false, fail += " constant-max set failed;";
        check_oracle(s, res.tau);
    }
    for (const auto& s : single_switch) {
        const SynthesisResult res = synthesize(scalar_spec(s.a, s.a, s.e1, s.e2, s.e3, s.e4, 1.0, u_min, u_max, T), 1.0);
        const ScalarRegimeReport rep = scalar_case_analysis(s.a, s.e1, s.e2, s.e3, s.e4, s.a, u_min, u_max, res.tau);
        if (res.record.roots[0].size() != 1 || !rep.t0 || rep.structure != BangBangStructure::MaxThenMin) {
            ok = false;
            fail += " single-switch set failed;";
            continue;
        }
        const double t0 = res.record.roots[0][0];
        const double closed = res.tau - std::log(1.0 - s.a * s.e() / (s.a * s.c())) / s.a;
        worst_t0 = std::max(worst_t0, std::abs(t0 - closed));
        if (std::abs(t0 - closed) > 1e-8 || policy_eval(res.policy, 0.0)[0] != u_max) ok = false;
        check_oracle(s, res.tau);
    }
    return {ok, "3 constant-max + 3 single-switch sets" + fmt(" max |t0 - closed form|=%.3e", worst_t0) +
                    fmt(" max |tau - oracle|=%.3e", worst_oracle) + fail};
}

Outcome monte_carlo_gate() {
    const auto start = std::chrono::steady_clock::now();
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const McValidationReport r = mc_validate(p, tau, portfolio_policy(tau, p), 200000, 1.0 / 256.0, 42);
    const double elapsed = seconds_since(start);
    const double z = std::abs(r.mean_x_tau - p.alpha_star) / r.std_err;
    const bool ok = z < 3.0 && r.sigma_independent && elapsed < 60.0;
    return {ok, fmt("E[X(tau)]=%.5f", r.mean_x_tau) + fmt(" SE=%.5f", r.std_err) + fmt(" z=%.2f", z) +
                    fmt(" sigma max z=%.2f", r.sigma_max_z) + fmt(" runtime=%.1fs", elapsed)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / "utoc_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path config = dir / "config.json";
    std::ofstream(config) << R"({
  "command": "portfolio",
  "problem": {"portfolio": {"r": 0.05, "mu": 0.10, "sigma": 0.2, "alphaStar": 10, "x0": 1, "beta": 1.2, "T": 20}},
  "numeric": {"nPaths": 20000, "dt": 0.00390625, "seed": 42, "monteCarlo": true}
})";
    auto run = [&](const char* sub, int threads) {
        const std::string cmd = std::string(UTOC_CLI_PATH) + " --config " + config.string() + " --out " +
                                (dir / sub).string() + " --threads " + std::to_string(threads) + " > /dev/null";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    if (run("a", 1) != 0 || run("b", 4) != 0) return {false, "CLI run failed"};
    int compared = 0;
    bool same = true;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const fs::path other = dir / "b" / entry.path().filename();
        same = same && fs::exists(other) && slurp(entry.path()) == slurp(other);
        ++compared;
    }
    return {same && compared >= 3, std::to_string(compared) + " artifacts compared (threads 1 vs 4)"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"golden-numbers", golden_numbers},
        {"terminal-wealth", terminal_wealth},
        {"control-structure", control_structure},
        {"closed-loop-tau", closed_loop_tau},
        {"smp-certification", smp_certification},
        {"adjoint-cross-check", adjoint_cross_check},
        {"tau-derivative", tau_derivative},
        {"dual-identity", dual_identity},
        {"bangbang-regimes", bangbang_regimes},
        {"monte-carlo-gate", monte_carlo_gate},
        {"cli-determinism", cli_determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
