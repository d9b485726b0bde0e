#include "utoc/cli.hpp"

#include "utoc/adjoint.hpp"
#include "utoc/bangbang.hpp"
#include "utoc/io.hpp"
#include "utoc/mean_system.hpp"
#include "utoc/meanfield.hpp"
#include "utoc/portfolio.hpp"
#include "utoc/smp.hpp"
#include "utoc/variational.hpp"

#include <json.hpp>

#include <cmath>

namespace utoc {

using nlohmann::json;
using nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Io: return 1;
        case ErrorKind::Validation:
        case ErrorKind::Domain: return 2;
        case ErrorKind::NonConvergence:
        case ErrorKind::Infeasible:
        case ErrorKind::Divergence:
        case ErrorKind::NumericalConsistency: return 3;
        case ErrorKind::AssumptionViolation:
        case ErrorKind::SingularArc: return 4;
    }
    return 1;
}

namespace {

ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json array(const VectorXd& v) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
    return a;
}

void write_summary(const std::filesystem::path& dir, const ordered_json& summary) {
    write_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

struct Resolved {
    ProblemSpec spec;
    ControlPolicy policy;
    std::optional<PortfolioParams> portfolio;
    double portfolio_tau = 0.0;
};

/// Linear spec and policy for any command; a portfolio block defaults to its optimum.
Resolved resolve(const RunConfig& cfg) {
    Resolved r;
    if (cfg.is_portfolio()) {
        const auto& p = std::get<PortfolioParams>(cfg.problem);
        r.portfolio = p;
        r.spec = to_problem_spec(p);
        if (cfg.policy) {
            r.policy = *cfg.policy;
        } else {
            r.portfolio_tau = solve_tau(p);
            r.policy = portfolio_policy(r.portfolio_tau, p);
        }
    } else {
        r.spec = std::get<ProblemSpec>(cfg.problem);
        if (cfg.policy) r.policy = *cfg.policy;
    }
    return r;
}

void cmd_simulate(const RunConfig& cfg, const CliOptions& opt, std::uint64_t seed, ordered_json& summary) {
    const Resolved r = resolve(cfg);
    const SimGrid grid(r.spec.T, cfg.numeric.n_steps);
    EnsembleOptions eo;
    eo.threads = opt.threads;
    const EnsembleResult res = simulate_ensemble(r.spec, r.policy, cfg.numeric.n_paths, grid, seed, eo);
    write_atomic(opt.out_dir / "trajectory.csv", trajectory_csv(grid, res.mean_x, res.mean_y));
    summary["tau"] = number(res.tau);
    summary["caseLabel"] = to_string(res.case_label);
    summary["cost"] = number(res.cost);
    summary["costStdErr"] = number(res.cost_std_err);
    summary["nPaths"] = cfg.numeric.n_paths;
    summary["nSteps"] = cfg.numeric.n_steps;
    summary["seed"] = seed;
}

void cmd_mean(const RunConfig& cfg, const CliOptions& opt, ordered_json& summary) {
    const Resolved r = resolve(cfg);
    const SimGrid grid(r.spec.T, cfg.numeric.n_steps);
    const MatrixXd mx = mean_ode_solve(r.spec.dynamics, r.policy, grid);
    const auto my = mean_target_solve(r.spec.target, r.spec.dynamics, mx, r.policy, grid, r.spec.eps_regularize);
    const MinTime mt = detect_min_time(my, grid);
    write_atomic(opt.out_dir / "trajectory.csv", trajectory_csv(grid, mx, my));
    summary["tau"] = number(mt.tau);
    summary["caseLabel"] = to_string(mt.label);
    summary["tauRefined"] = number(MeanSystem(r.spec, r.policy).refined_min_time().tau);
    summary["nSteps"] = cfg.numeric.n_steps;
}

void cmd_portfolio(const RunConfig& cfg, const CliOptions& opt, std::uint64_t seed, ordered_json& summary) {
    const auto& p = std::get<PortfolioParams>(cfg.problem);
    const double tau = solve_tau(p);
    const WealthResidualBreakdown w = wealth_residual(tau, p);
    const ControlPolicy policy = portfolio_policy(tau, p);
    const ProblemSpec spec = to_problem_spec(p);

    const VectorXd x_tau = MeanSystem(spec, policy).x_at(tau);
    const AdjointSolution adj = solve_adjoints(spec, tau, x_tau, SimGrid(tau, 64));
    SmpOptions so;
    so.t_grid = cfg.numeric.t_grid;
    so.u_samples_per_axis = cfg.numeric.u_samples;
    const SmpReport smp = smp_check(spec, policy, tau, CaseLabel::Interior, adj, x_tau, so);

    emit_figure(p, tau, policy, SimGrid(tau, cfg.numeric.n_steps), opt.out_dir);

    summary["tau"] = number(tau);
    summary["t1"] = number(w.t1);
    summary["t2"] = number(w.t2);
    summary["residual"] = number(w.residual);
    summary["smpMaxViolation"] = number(smp.max_violation);
    summary["smpPassed"] = smp.passed;
    summary["L1"] = number(w.L1);
    summary["L2"] = number(w.L2);
    summary["L3"] = number(w.L3);
    if (cfg.numeric.monte_carlo) {
        McValidationOptions mo;
        mo.threads = opt.threads;
        const McValidationReport mc = mc_validate(p, tau, policy, cfg.numeric.n_paths, cfg.numeric.dt, seed, mo);
        ordered_json m;
        m["nPaths"] = cfg.numeric.n_paths;
        m["dt"] = number(cfg.numeric.dt);
        m["seed"] = seed;
        m["meanXTau"] = number(mc.mean_x_tau);
        m["stdErr"] = number(mc.std_err);
        m["terminalOk"] = mc.terminal_ok;
        m["maxExcess"] = number(mc.max_excess);
        m["belowTargetOk"] = mc.below_target_ok;
        m["sigmaMaxZ"] = number(mc.sigma_max_z);
        m["sigmaIndependent"] = mc.sigma_independent;
        summary["monteCarlo"] = m;
    }
}

void cmd_bangbang(const RunConfig& cfg, const CliOptions& opt, ordered_json& summary) {
    const ProblemSpec& spec = std::get<ProblemSpec>(cfg.problem);
    SynthesisOptions so;
    so.max_iter = cfg.numeric.max_iter;
    so.damping = cfg.numeric.damping;
    so.tol = cfg.numeric.tol;
    const SynthesisResult res = synthesize(spec, cfg.numeric.tau_guess.value_or(0.5 * spec.T), so);
    write_atomic(opt.out_dir / "switching.csv", switching_csv(res.record, res.policy));
    summary["tau"] = number(res.tau);
    summary["iterations"] = res.iterations;
    summary["gTau"] = number(res.record.g_tau);
    ordered_json roots = ordered_json::array();
    for (const auto& r : res.record.roots) {
        ordered_json list = ordered_json::array();
        for (double t : r) list.push_back(number(t));
        roots.push_back(list);
    }
    summary["switchTimes"] = roots;
    ordered_json singular = ordered_json::array();
    for (bool s : res.record.singular) singular.push_back(s);
    summary["singular"] = singular;
    for (std::size_t i = 0; i < res.record.singular.size(); ++i) {
        if (!res.record.singular[i]) continue;
        write_summary(opt.out_dir, summary);
        throw Error(ErrorKind::SingularArc, "switching component " + std::to_string(i + 1) +
                                                " is identically zero; the candidate holds the midpoint there",
                    "S_" + std::to_string(i + 1));
    }
}

void cmd_check_smp(const RunConfig& cfg, const CliOptions& opt, std::ostream& out, ordered_json& summary) {
    const Resolved r = resolve(cfg);
    const MeanSystem means(r.spec, r.policy);
    const MinTime mt = means.refined_min_time();
    if (!(mt.tau > 0.0)) throw domain_error("E[Y] starts at or below zero; nothing to check");
    const VectorXd x_tau = means.x_at(mt.tau);
    const AdjointSolution adj = solve_adjoints(r.spec, mt.tau, x_tau, SimGrid(mt.tau, 64));
    SmpOptions so;
    so.t_grid = cfg.numeric.t_grid;
    so.u_samples_per_axis = cfg.numeric.u_samples;
    const SmpReport rep = smp_check(r.spec, r.policy, mt.tau, mt.label, adj, x_tau, so);
    write_atomic(opt.out_dir / "smp.csv", smp_csv(rep));
    out << smp_summary_line(rep) << '\n';
    summary["passed"] = rep.passed;
    summary["caseLabel"] = to_string(rep.case_label);
    summary["tau"] = number(rep.tau);
    summary["gTau"] = number(rep.g_tau);
    summary["maxViolation"] = number(rep.max_violation);
    summary["witnessT"] = number(rep.witness_t);
    summary["witnessU"] = array(rep.witness_u);
    summary["n1Max"] = number(rep.n1_max);
    summary["n2Max"] = number(rep.n2_max);
    if (!rep.note.empty()) summary["note"] = rep.note;
}

void cmd_verify_variational(const RunConfig& cfg, const CliOptions& opt, ordered_json& summary) {
    const Resolved r = resolve(cfg);
    const ControlPolicy v =
        cfg.direction ? *cfg.direction : ControlPolicy::constant(VectorXd::Ones(r.spec.dynamics.k), r.spec.T);
    PerturbationSpec pert{v, cfg.numeric.rho_list};
    const FdTauReport rep = fd_tau_check(r.spec, r.policy, pert);
    const DualIdentity dual = dual_identity_check(r.spec, r.policy, v, SimGrid(r.spec.T, cfg.numeric.n_steps));
    write_atomic(opt.out_dir / "fd_tau.csv", fd_tau_csv(rep));
    summary["caseLabel"] = to_string(rep.case_label);
    summary["tauBar"] = number(rep.tau_bar);
    summary["gTau"] = number(rep.g_tau);
    summary["hBarIntegral"] = number(rep.h_bar_integral);
    summary["formula"] = number(rep.formula);
    summary["admissible"] = rep.admissible;
    summary["dualLhs"] = number(dual.lhs);
    summary["dualRhs"] = number(dual.rhs);
    summary["dualRelGap"] = number(dual.rel_gap);
    if (!rep.note.empty()) summary["note"] = rep.note;
}

}  // namespace

void run(const RunConfig& cfg, const CliOptions& opt, std::ostream& out) {
    const std::uint64_t seed = opt.seed.value_or(cfg.numeric.seed);
    ordered_json summary;
    summary["command"] = cfg.command;
    if (cfg.command == "simulate") cmd_simulate(cfg, opt, seed, summary);
    else if (cfg.command == "mean") cmd_mean(cfg, opt, summary);
    else if (cfg.command == "portfolio") cmd_portfolio(cfg, opt, seed, summary);
    else if (cfg.command == "bangbang") cmd_bangbang(cfg, opt, summary);
    else if (cfg.command == "check-smp") cmd_check_smp(cfg, opt, out, summary);
    else if (cfg.command == "verify-variational") cmd_verify_variational(cfg, opt, summary);
    else throw Error(ErrorKind::Validation, "unknown command '" + cfg.command + "'", "command");
    write_summary(opt.out_dir, summary);
}

int run_cli(const std::filesystem::path& config_path, const CliOptions& options, std::ostream& out, std::ostream& err) {
    auto diagnose = [&](const std::string& kind, const std::string& message, const std::string& path, int code) {
        ordered_json d;
        d["error"] = kind;
        d["message"] = message;
        if (!path.empty()) d["path"] = path;
        d["exitCode"] = code;
        err << d.dump() << '\n';
        return code;
    };
    try {
        const RunConfig cfg = load_config(config_path);
        run(cfg, options, out);
        return 0;
    } catch (const Error& e) {
        return diagnose(to_string(e.kind()), e.what(), e.path(), exit_code(e.kind()));
    } catch (const std::filesystem::filesystem_error& e) {
        return diagnose("io", e.what(), "", 1);
    } catch (const std::exception& e) {
        return diagnose("internal", e.what(), "", 1);
    }
}

}  // namespace utoc
