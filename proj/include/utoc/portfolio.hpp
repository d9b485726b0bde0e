#ifndef UTOC_PORTFOLIO_HPP
#define UTOC_PORTFOLIO_HPP

#include "utoc/meanfield.hpp"
#include "utoc/problem.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

namespace utoc {

/// Investor model dX = [rX + (mu - r)u] dt + sigma u dW with shortfall target Y = alpha* - X.
struct PortfolioParams {
    double r = 0.05;
    double mu = 0.10;
    double sigma = 0.2;
    double alpha_star = 10.0;
    double x0 = 1.0;
    double beta = 1.2;
    double T = 20.0;

    double lambda() const { return 1.0 / (beta * alpha_star * alpha_star); }
    /// (2 beta + 1)(mu - r) / (2 mu): the middle branch is k alpha* e^{r(tau - t)}.
    double branch_scale() const { return (2.0 * beta + 1.0) * (mu - r) / (2.0 * mu); }
};

/// Throws Validation naming the offending "portfolio.*" field.
void validate(const PortfolioParams& params);

/// m = k = d = 1 linear encoding with cost f = 1 + (lambda/2) u^2 and U = [alpha*, 1.25 alpha*].
ProblemSpec to_problem_spec(const PortfolioParams& params);

struct SwitchTimes {
    double t1 = 0.0;
    double t2 = 0.0;
};

/// Raw formulas clamped into [0, tau]. Domain error when (2 beta + 1)(mu - r) > 2.5 mu.
SwitchTimes switch_times(double tau, const PortfolioParams& params);

struct WealthResidualBreakdown {
    double tau = 0.0;
    double t1 = 0.0;
    double t2 = 0.0;
    double L1 = 0.0;
    double L2 = 0.0;
    double L3 = 0.0;
    /// alpha* - x0 e^{r tau} - (mu - r) alpha* (L1 + L2 + L3)
    double residual = 0.0;
};

WealthResidualBreakdown wealth_residual(double tau, const PortfolioParams& params);

/// Root of the terminal-wealth residual by TOMS 748 on the bracket (default [0, T]).
/// Infeasible error when the residual does not change sign.
double solve_tau(const PortfolioParams& params, std::optional<std::pair<double, double>> bracket = std::nullopt,
                 double tol = 1e-12);

/// Piecewise optimum: 1.25 alpha* on [0, t1], k alpha* e^{r(tau - t)} on (t1, t2], alpha* on (t2, tau].
double optimal_control(double t, double tau, const PortfolioParams& params);

/// The optimum as a ControlPolicy on [0, T]; alpha* is held after tau.
ControlPolicy portfolio_policy(double tau, const PortfolioParams& params);

/// Restriction of a policy to [0, horizon], horizon <= policy.horizon().
ControlPolicy truncate_policy(const ControlPolicy& policy, double horizon);

struct McValidationReport {
    double tau = 0.0;
    double mean_x_tau = 0.0;
    double std_err = 0.0;
    bool terminal_ok = false;
    /// max over nodes t < tau of E_hat[X(t)] - alpha*, with the standard error at that node.
    double max_excess = 0.0;
    double max_excess_std_err = 0.0;
    bool below_target_ok = false;
    double sigma_a = 0.1;
    double sigma_b = 0.4;
    /// max over nodes of |mean_a - mean_b| / sqrt(se_a^2 + se_b^2)
    double sigma_max_z = 0.0;
    bool sigma_independent = false;
};

struct McValidationOptions {
    int threads = 0;
    double sigma_a = 0.1;
    double sigma_b = 0.4;
    bool check_sigma_independence = true;
};

/// Ensemble check of E[X(tau)] = alpha*, E[X(t)] < alpha* before tau, and sigma-independence of the
/// mean. Simulation runs on the grid of step dt up to the first node at or beyond tau.
McValidationReport mc_validate(const PortfolioParams& params, double tau, const ControlPolicy& policy, int n_paths,
                               double dt, std::uint64_t seed, const McValidationOptions& options = {});

/// CSV with columns t, u, meanX on the grid over [0, tau].
std::string figure_csv(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid);

/// Two stacked line charts (control, expected wealth) with labeled axes.
std::string figure_svg(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid);

/// Writes figure.csv and figure.svg into out_dir.
void emit_figure(const PortfolioParams& params, double tau, const ControlPolicy& policy, const SimGrid& grid,
                 const std::filesystem::path& out_dir);

}  // namespace utoc

#endif  // UTOC_PORTFOLIO_HPP
