#include "fixtures.hpp"
#include "utoc/error.hpp"
#include "utoc/portfolio.hpp"
#include "utoc/variational.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace utoc;
using utoc::testing::reference_params;
using utoc::testing::scalar_spec;

namespace {

ControlPolicy bump(double t0, double t1, double T, double height = 1.0) {
    return ControlPolicy({{0.0, t0, {ComponentForm::constant(0.0)}},
                          {t0, t1, {ComponentForm::constant(height)}},
                          {t1, T, {ComponentForm::constant(0.0)}}});
}

// dX = (a X + b u + g X u) dt + (c X + d u) dW: the X u term makes the state map curved in u.
DifferentiableModel bilinear_model(double a, double b, double g, double c, double d, double x0) {
    DifferentiableModel mdl;
    mdl.m = mdl.k = mdl.d = 1;
    mdl.x0 = VectorXd::Constant(1, x0);
    mdl.drift = [=](const VectorXd& x, const VectorXd& u) {
        return VectorXd::Constant(1, a * x[0] + b * u[0] + g * x[0] * u[0]);
    };
    mdl.drift_x = [=](const VectorXd&, const VectorXd& u) { return MatrixXd::Constant(1, 1, a + g * u[0]); };
    mdl.drift_u = [=](const VectorXd& x, const VectorXd&) { return MatrixXd::Constant(1, 1, b + g * x[0]); };
    mdl.diffusion = [=](const VectorXd& x, const VectorXd& u) { return MatrixXd::Constant(1, 1, c * x[0] + d * u[0]); };
    mdl.diffusion_x = [=](const VectorXd&, const VectorXd&) {
        return std::vector<MatrixXd>{MatrixXd::Constant(1, 1, c)};
    };
    mdl.diffusion_u = [=](const VectorXd&, const VectorXd&) {
        return std::vector<MatrixXd>{MatrixXd::Constant(1, 1, d)};
    };
    return mdl;
}

}  // namespace

TEST(Perturbation, ValidationRules) {
    PerturbationSpec ps{ControlPolicy::constant(VectorXd::Ones(1), 5.0), {}};
    EXPECT_THROW(validate_perturbation(ps, 5.0, 1), Error);
    ps.rho_list = {1e-3, 1e-2};
    EXPECT_THROW(validate_perturbation(ps, 5.0, 1), Error);
    ps.rho_list = {1e-2, -1e-3};
    EXPECT_THROW(validate_perturbation(ps, 5.0, 1), Error);
    ps.rho_list = {1e-2, 1e-3};
    EXPECT_NO_THROW(validate_perturbation(ps, 5.0, 1));
    EXPECT_THROW(validate_perturbation(ps, 6.0, 1), Error);
    EXPECT_THROW(validate_perturbation(ps, 5.0, 2), Error);
}

TEST(Perturbation, AdmissibilityOnPortfolioOptimum) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ControlPolicy u = portfolio_policy(tau, p);
    const ControlSet set = to_problem_spec(p).control_set;
    std::vector<double> times;
    for (int i = 0; i <= 2000; ++i) times.push_back(p.T * i / 2000);
    EXPECT_FALSE(perturbation_admissible(u, {ControlPolicy::constant(VectorXd::Ones(1), p.T)}, set, times));
    EXPECT_TRUE(perturbation_admissible(u, {bump(5.0, 6.0, p.T)}, set, times));
}

TEST(FdState, LinearModelIsExactPathwise) {
    ProblemSpec spec = scalar_spec(0.3, 1.5, 0, -1, 0, 0, 1.0, 5.0, -2.0, 2.0, 2.0, 0.4, 0.6);
    const ControlPolicy u = ControlPolicy::constant(VectorXd::Constant(1, 0.5), 2.0);
    const PerturbationSpec ps{bump(0.5, 1.2, 2.0)};
    const auto rows = fd_state_check(spec, u, ps, 2000, SimGrid(2.0, 200), 3);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) EXPECT_LT(r.sup_error, 1e-7) << r.rho;
}

TEST(FdState, BilinearErrorShrinksLinearlyInRho) {
    const DifferentiableModel mdl = bilinear_model(0.2, 1.0, 0.5, 0.3, 0.2, 1.0);
    const ControlPolicy u = ControlPolicy::constant(VectorXd::Constant(1, 0.4), 1.0);
    const PerturbationSpec ps{ControlPolicy::constant(VectorXd::Ones(1), 1.0)};
    const auto rows = fd_state_check(mdl, u, ps, 4000, SimGrid(1.0, 100), 8);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(fd_table_monotone(rows));
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        const double ratio = rows[i].sup_error / rows[i + 1].sup_error;
        EXPECT_GT(ratio, 7.0);
        EXPECT_LT(ratio, 13.0);
    }
    EXPECT_GT(rows.front().sup_error, 0.0);
}

TEST(FdState, IndependentNoiseDoesNotConverge) {
    const DifferentiableModel mdl = bilinear_model(0.2, 1.0, 0.5, 0.3, 0.2, 1.0);
    const ControlPolicy u = ControlPolicy::constant(VectorXd::Constant(1, 0.4), 1.0);
    const PerturbationSpec ps{ControlPolicy::constant(VectorXd::Ones(1), 1.0)};
    const auto rows = fd_state_check(mdl, u, ps, 4000, SimGrid(1.0, 100), 8, NoiseCoupling::Independent);
    EXPECT_FALSE(fd_table_monotone(rows));
    EXPECT_GT(rows.back().sup_error, 10 * rows.front().sup_error);
}

TEST(Variational, EnsembleMeanMatchesExactMean) {
    ProblemSpec spec = scalar_spec(0.3, 1.5, 0, -1, 0, 0, 1.0, 5.0, -2.0, 2.0, 2.0, 0.4, 0.6);
    const SimGrid grid(2.0, 100);
    const VariationalResult vr = simulate_variational(spec, bump(0.5, 1.2, 2.0), 20000, grid, 4);
    for (int j : {25, 60, 100}) {
        const double se = std::sqrt(vr.ensemble.var_x(j, 0) / 20000);
        // Euler bias at dt = 0.02 is a few 1e-3 relative.
        EXPECT_NEAR(vr.ensemble.mean_x(j, 0), vr.mean_y_exact(j, 0), 4 * se + 5e-3 * std::abs(vr.mean_y_exact(j, 0)));
    }
}

TEST(HBar, PortfolioIntegralClosedForm) {
    // E[y] = (mu - r)(e^{rt} - 1)/r, so h_bar = -(mu - r) e^{rt} for v = 1.
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const double integral = h_bar_integral(to_problem_spec(p), ControlPolicy::constant(VectorXd::Ones(1), p.T), tau);
    EXPECT_NEAR(integral, -(p.mu - p.r) * std::expm1(p.r * tau) / p.r, 1e-10);
}

TEST(FdTau, PortfolioDerivativeMatchesFormula) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const ProblemSpec spec = to_problem_spec(p);
    const FdTauReport rep = fd_tau_check(spec, portfolio_policy(tau, p), {ControlPolicy::constant(VectorXd::Ones(1), p.T)});
    EXPECT_EQ(rep.case_label, CaseLabel::Interior);
    EXPECT_NEAR(rep.g_tau, -1.0, 1e-8);
    EXPECT_NEAR(rep.formula, std::expm1(p.r * tau), 1e-8);
    EXPECT_FALSE(rep.admissible);
    ASSERT_EQ(rep.rows.size(), 3u);
    for (const auto& r : rep.rows) EXPECT_LT(r.abs_gap, 1e-3) << r.rho;
    EXPECT_LT(rep.rows.back().abs_gap, rep.rows.front().abs_gap);
}

TEST(FdTau, NoCrossingCaseHasZeroDerivative) {
    // y' = -0.1 u with u in [0, 1] on [0, 2] starting from y0 = 1 never reaches zero.
    const ProblemSpec spec = scalar_spec(0.0, 0.0, 0, 0, 0, -0.1, 0.0, 1.0, 0.0, 1.0, 2.0);
    const FdTauReport rep =
        fd_tau_check(spec, ControlPolicy::constant(VectorXd::Constant(1, 0.5), 2.0),
                     {ControlPolicy::constant(VectorXd::Ones(1), 2.0)});
    EXPECT_EQ(rep.case_label, CaseLabel::NoCrossing);
    EXPECT_EQ(rep.formula, 0.0);
    for (const auto& r : rep.rows) EXPECT_EQ(r.fd_value, 0.0);
}

TEST(DualIdentity, PortfolioAndRandomProblems) {
    const auto p = reference_params();
    const double tau = solve_tau(p);
    const DualIdentity d = dual_identity_check(to_problem_spec(p), portfolio_policy(tau, p),
                                               ControlPolicy::constant(VectorXd::Ones(1), p.T), SimGrid(p.T, 4000));
    EXPECT_NEAR(d.tau, tau, 1e-8);
    EXPECT_LT(d.rel_gap, 1e-8);

    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        ProblemSpec spec = utoc::testing::random_spec(rng, 2, 1, 0.8, 4.0);
        // Pin e = E3 B + E4 = -3 so that u = 1 brings E[Y] from 1 to zero near t = 1/3.
        spec.target.E4[0] = -3.0 - spec.target.E3.dot(spec.dynamics.B.col(0));
        const ControlPolicy u = ControlPolicy::constant(VectorXd::Ones(1), 4.0);
        const ControlPolicy v = bump(0.1, 0.25, 4.0, 2.0);
        const DualIdentity di = dual_identity_check(spec, u, v, SimGrid(4.0, 4000));
        EXPECT_LT(di.abs_gap, 1e-8 * (1 + std::abs(di.lhs))) << trial;
    }
}

TEST(FdTauCsv, Header) {
    FdTauReport rep;
    rep.rows.push_back({1e-2, 0.5, 0.5, 0.0, 0.0});
    const std::string csv = fd_tau_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "rho,fd_value,formula_value,abs_gap,rel_gap");
}
