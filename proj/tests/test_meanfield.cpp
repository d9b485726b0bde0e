#include "fixtures.hpp"
#include "utoc/error.hpp"
#include "utoc/mean_system.hpp"
#include "utoc/meanfield.hpp"
#include "utoc/portfolio.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace utoc;
using utoc::testing::reference_params;
using utoc::testing::scalar_spec;

namespace {

ControlPolicy two_piece_policy(int k, double T) {
    PolicySegment first{0.0, 0.4 * T, {}};
    PolicySegment second{0.4 * T, T, {}};
    for (int i = 0; i < k; ++i) {
        first.components.push_back(ComponentForm::constant(0.5 - i));
        second.components.push_back(ComponentForm::scaled_exp(0.2, 0.3 + i, -0.7));
    }
    return ControlPolicy({first, second});
}

// Explicit Euler with a very small step: an oracle independent of the RK4 code path.
void euler_oracle(const ProblemSpec& spec, const ControlPolicy& pol, double t_end, double dt, VectorXd& x, double& y) {
    const auto& dyn = spec.dynamics;
    const RowVectorXd c = spec.target.state_row(dyn);
    const RowVectorXd e = spec.target.control_row(dyn);
    x = dyn.x0;
    y = spec.target.y0;
    const long n = std::lround(t_end / dt);
    for (long i = 0; i < n; ++i) {
        const double t = i * dt;
        const VectorXd u = policy_eval(pol, t + 0.5 * dt);
        const VectorXd xm = x + 0.5 * dt * (dyn.A * x + dyn.B * u);
        y += dt * (c.dot(xm) + e.dot(u));
        x += dt * (dyn.A * xm + dyn.B * u);
    }
}

}  // namespace

TEST(SimGrid, LastNodeIsHorizon) {
    const SimGrid g(10.92, 7);
    EXPECT_EQ(g.node(7), 10.92);
    EXPECT_EQ(g.times().size(), 8u);
    EXPECT_DOUBLE_EQ(g.node(3), 3 * 10.92 / 7);
}

TEST(MeanOde, MatchesFineStepOracle) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 3; ++trial) {
        ProblemSpec spec = utoc::testing::random_spec(rng, 2, 2, 1.5, 2.0);
        spec.dynamics.x0 = VectorXd::Constant(2, 0.3);
        const ControlPolicy pol = two_piece_policy(2, spec.T);
        const SimGrid grid(spec.T, 200);
        const MatrixXd mx = mean_ode_solve(spec.dynamics, pol, grid);
        const auto my = mean_target_solve(spec.target, spec.dynamics, mx, pol, grid);
        VectorXd x;
        double y;
        euler_oracle(spec, pol, spec.T, 1e-5, x, y);
        EXPECT_LT((mx.row(200).transpose() - x).norm(), 1e-6);
        EXPECT_NEAR(my.back(), y, 1e-6);
    }
}

TEST(MeanOde, PortfolioReachesTargetAtTau) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const MeanSystem ms(to_problem_spec(p), portfolio_policy(tau, p));
    EXPECT_NEAR(ms.x_at(tau)[0], p.alpha_star, 1e-9);
    EXPECT_NEAR(ms.y_at(tau), 0.0, 1e-9);
    const MinTime mt = ms.refined_min_time();
    EXPECT_EQ(mt.label, CaseLabel::Interior);
    EXPECT_NEAR(mt.tau, tau, 1e-8);
}

TEST(DetectMinTime, Trichotomy) {
    const SimGrid grid(4.0, 4);
    const MinTime at_start = detect_min_time({0.0, 1.0, 1.0, 1.0, 1.0}, grid);
    EXPECT_EQ(at_start.label, CaseLabel::Interior);
    EXPECT_EQ(at_start.tau, 0.0);

    const MinTime interior = detect_min_time({2.0, 1.0, -1.0, -2.0, -3.0}, grid);
    EXPECT_EQ(interior.label, CaseLabel::Interior);
    EXPECT_DOUBLE_EQ(interior.tau, 1.5);

    const MinTime none = detect_min_time({2.0, 1.5, 1.0, 0.5, 0.1}, grid);
    EXPECT_EQ(none.label, CaseLabel::NoCrossing);
    EXPECT_EQ(none.tau, 4.0);

    const MinTime horizon = detect_min_time({2.0, 1.5, 1.0, 0.5, 0.0}, grid);
    EXPECT_EQ(horizon.label, CaseLabel::AtHorizon);
    EXPECT_EQ(horizon.tau, 4.0);
}

TEST(Ensemble, GeometricBrownianMomentsMatchEulerRecursion) {
    // Under Euler-Maruyama, E[X_n] = (1 + a dt)^n and E[X_n^2] = ((1 + a dt)^2 + c^2 dt)^n exactly.
    const double a = 0.3, c = 0.4;
    ProblemSpec spec = scalar_spec(a, 0.0, 0, 0, 0, 0, 1.0, 1.0, 0.0, 0.0, 1.0, c, 0.0);
    const SimGrid grid(1.0, 50);
    const int n = 20000;
    const EnsembleResult res = simulate_ensemble(spec, ControlPolicy::constant(VectorXd::Zero(1), 1.0), n, grid, 11);
    const double dt = grid.dt();
    for (int j : {10, 25, 50}) {
        const double m1 = std::pow(1 + a * dt, j);
        const double m2 = std::pow((1 + a * dt) * (1 + a * dt) + c * c * dt, j);
        const double se = std::sqrt((m2 - m1 * m1) / n);
        EXPECT_NEAR(res.mean_x(j, 0), m1, 4 * se) << j;
        EXPECT_NEAR(res.var_x(j, 0), m2 - m1 * m1, 0.1 * (m2 - m1 * m1)) << j;
    }
}

TEST(Ensemble, NoiselessEnsembleIsExplicitEuler) {
    ProblemSpec spec = scalar_spec(-0.5, 2.0, 0.1, 0.2, 0.3, -1.0, 1.0, 1.0, -1.0, 1.0, 2.0);
    const SimGrid grid(2.0, 40);
    const ControlPolicy pol = two_piece_policy(1, 2.0);
    const EnsembleResult res = simulate_ensemble(spec, pol, 4, grid, 3);
    double x = 1.0;
    for (int j = 0; j < 40; ++j) {
        x += grid.dt() * (-0.5 * x + 2.0 * policy_eval(pol, grid.node(j))[0]);
        EXPECT_NEAR(res.mean_x(j + 1, 0), x, 1e-13);
    }
    EXPECT_EQ(res.var_x(40, 0), 0.0);
}

TEST(Ensemble, BitwiseIndependentOfThreadCount) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const ControlPolicy pol = portfolio_policy(tau, p);
    const SimGrid grid(p.T, 500);
    EnsembleOptions one;
    one.threads = 1;
    EnsembleOptions four;
    four.threads = 4;
    const EnsembleResult a = simulate_ensemble(spec, pol, 3000, grid, 42, one);
    const EnsembleResult b = simulate_ensemble(spec, pol, 3000, grid, 42, four);
    EXPECT_TRUE(a.mean_x == b.mean_x);
    EXPECT_TRUE(a.var_x == b.var_x);
    EXPECT_EQ(a.mean_y, b.mean_y);
    EXPECT_EQ(a.tau, b.tau);
    EXPECT_EQ(a.cost, b.cost);
    const EnsembleResult c = simulate_ensemble(spec, pol, 3000, grid, 43, one);
    EXPECT_FALSE(a.mean_x == c.mean_x);
}

TEST(Ensemble, CostReplayMatchesStoredPaths) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const ControlPolicy pol = portfolio_policy(tau, p);
    const SimGrid grid(p.T, 400);
    EnsembleOptions stored;
    stored.store_paths = true;
    EnsembleOptions replay;
    replay.store_paths = false;
    const EnsembleResult a = simulate_ensemble(spec, pol, 500, grid, 9, stored);
    const EnsembleResult b = simulate_ensemble(spec, pol, 500, grid, 9, replay);
    ASSERT_TRUE(a.has_paths());
    ASSERT_FALSE(b.has_paths());
    ASSERT_TRUE(a.cost_available && b.cost_available);
    EXPECT_NEAR(a.cost, b.cost, 1e-12 * std::abs(a.cost));
    const CostEstimate direct = estimate_cost(a, spec.cost, pol);
    EXPECT_EQ(direct.value, a.cost);
}

TEST(Ensemble, TimeOptimalCostIsTau) {
    ProblemSpec spec = scalar_spec(0.0, 1.0, 0, 0, 0, -1, 0.0, 1.0, 0.0, 1.0, 3.0);
    const SimGrid grid(3.0, 300);
    const EnsembleResult res = simulate_ensemble(spec, ControlPolicy::constant(VectorXd::Ones(1), 3.0), 8, grid, 1);
    ASSERT_EQ(res.case_label, CaseLabel::Interior);
    EXPECT_NEAR(res.tau, 1.0, 1e-9);
    EXPECT_NEAR(res.cost, res.tau, 1e-12);
}

TEST(Ensemble, RunningCostQuadratureAgainstClosedForm) {
    // x' = u, y' = -u with u = 1 gives tau = 1; f = 1 + x + u^2/2 integrates to 1 + 1/2 + 1/2.
    ProblemSpec spec = scalar_spec(0.0, 1.0, 0, 0, 0, -1, 0.0, 1.0, 0.0, 1.0, 3.0);
    spec.cost.c_lin = VectorXd::Ones(1);
    spec.cost.Lambda = MatrixXd::Ones(1, 1);
    const SimGrid grid(3.0, 300);
    const EnsembleResult res = simulate_ensemble(spec, ControlPolicy::constant(VectorXd::Ones(1), 3.0), 8, grid, 1);
    EXPECT_NEAR(res.cost, 1.0 + 0.5 + 0.5, 1e-9);
}

TEST(Ensemble, DivergenceNamesStep) {
    ProblemSpec spec = scalar_spec(1e18, 0.0, 0, 0, 0, 0, 1.0, 1.0, 0.0, 0.0, 10.0);
    const SimGrid grid(10.0, 40);
    try {
        simulate_ensemble(spec, ControlPolicy::constant(VectorXd::Zero(1), 10.0), 4, grid, 1);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Divergence);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Ensemble, HooksMatchLinearKernel) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const ControlPolicy pol = portfolio_policy(tau, p);
    const SimGrid grid(p.T, 200);
    EnsembleOptions opt;
    opt.compute_cost = false;
    const EnsembleResult a = simulate_ensemble(spec, pol, 300, grid, 5, opt);
    const EnsembleResult b = simulate_ensemble(hooks_from_spec(spec), pol, 300, grid, 5, opt);
    for (int j = 0; j < grid.nodes(); ++j) {
        EXPECT_NEAR(a.mean_x(j, 0), b.mean_x(j, 0), 1e-10);
        EXPECT_NEAR(a.mean_y[j], b.mean_y[j], 1e-10);
    }
}

TEST(TrajectoryCsv, HeaderAndRows) {
    const SimGrid grid(1.0, 2);
    MatrixXd mx(3, 2);
    mx << 0, 1, 2, 3, 4, 5;
    const std::string csv = trajectory_csv(grid, mx, {1.0, 0.5, 0.0});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,meanX_1,meanX_2,meanY");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
