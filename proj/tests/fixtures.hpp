#ifndef UTOC_TESTS_FIXTURES_HPP
#define UTOC_TESTS_FIXTURES_HPP

#include "utoc/portfolio.hpp"
#include "utoc/problem.hpp"

#include <random>

namespace utoc::testing {

/// r = 0.05, mu = 0.10, beta = mu/(mu - r) - 0.8 = 1.2, alpha* = 10, x0 = 1, T = 20.
inline PortfolioParams reference_params() {
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

/// Scalar x' = a x + b u (+ c x dW), y' = e1 E[x] + e2 x + e3 E[ax + bu] + e4 u.
inline ProblemSpec scalar_spec(double a, double b, double e1, double e2, double e3, double e4, double x0, double y0,
                               double u_min, double u_max, double T, double c = 0.0, double d = 0.0) {
    ProblemSpec s;
    auto& dyn = s.dynamics;
    dyn.m = dyn.k = dyn.d = 1;
    dyn.A = MatrixXd::Constant(1, 1, a);
    dyn.B = MatrixXd::Constant(1, 1, b);
    dyn.C = {MatrixXd::Constant(1, 1, c)};
    dyn.D = {MatrixXd::Constant(1, 1, d)};
    dyn.x0 = VectorXd::Constant(1, x0);
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

/// Random linear spec with m states, k controls, one noise channel and ||A||_F scaled to a_norm.
inline ProblemSpec random_spec(std::mt19937_64& rng, int m, int k, double a_norm, double T) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto fill = [&](MatrixXd& M) {
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = unit(rng);
    };
    ProblemSpec s;
    auto& dyn = s.dynamics;
    dyn.m = m;
    dyn.k = k;
    dyn.d = 1;
    dyn.A = MatrixXd(m, m);
    fill(dyn.A);
    dyn.A *= a_norm / dyn.A.norm();
    dyn.B = MatrixXd(m, k);
    fill(dyn.B);
    dyn.C = {MatrixXd::Zero(m, m)};
    dyn.D = {MatrixXd::Zero(m, k)};
    dyn.x0 = VectorXd::Zero(m);
    MatrixXd rows(4, m);
    fill(rows);
    s.target.E1 = rows.row(0);
    s.target.E2 = rows.row(1);
    s.target.E3 = rows.row(2);
    MatrixXd e4(1, k);
    fill(e4);
    s.target.E4 = e4.row(0);
    s.target.y0 = 1.0;
    s.cost = CostSpec::time_optimal(m, k);
    s.control_set.lower = VectorXd::Constant(k, -1.0);
    s.control_set.upper = VectorXd::Constant(k, 1.0);
    s.T = T;
    return s;
}

}  // namespace utoc::testing

#endif  // UTOC_TESTS_FIXTURES_HPP
