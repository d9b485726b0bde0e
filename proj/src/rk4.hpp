#ifndef UTOC_SRC_RK4_HPP
#define UTOC_SRC_RK4_HPP

#include "utoc/problem.hpp"

#include <algorithm>
#include <vector>

namespace utoc::detail {

/// Classical RK4 for the affine mean system
///   x' = A x + B u(t),   y' = c x + e u(t) + eps,
/// with one step per smooth piece between policy breakpoints.
class AffineRk4 {
public:
    AffineRk4(const LinearDynamics& dyn, const ControlPolicy& policy, RowVectorXd state_row, RowVectorXd control_row,
              double eps)
        : dyn_(dyn),
          policy_(policy),
          breaks_(policy.breakpoints()),
          c_(std::move(state_row)),
          e_(std::move(control_row)),
          eps_(eps) {}

    AffineRk4(const LinearDynamics& dyn, const ControlPolicy& policy)
        : AffineRk4(dyn, policy, RowVectorXd::Zero(dyn.m), RowVectorXd::Zero(dyn.k), 0.0) {}

    /// Advance (x, y) from ta to tb, splitting at interior breakpoints.
    void advance(double ta, double tb, VectorXd& x, double& y) const {
        auto it = std::upper_bound(breaks_.begin(), breaks_.end(), ta);
        double a = ta;
        for (; it != breaks_.end() && *it < tb; ++it) {
            piece(a, *it, x, y);
            a = *it;
        }
        piece(a, tb, x, y);
    }

private:
    void piece(double a, double b, VectorXd& x, double& y) const {
        if (!(b > a)) return;
        const std::size_t seg = policy_.segment_index(0.5 * (a + b));
        const double h = b - a;
        const VectorXd u0 = policy_.eval_in_segment(seg, a);
        const VectorXd um = policy_.eval_in_segment(seg, a + 0.5 * h);
        const VectorXd u1 = policy_.eval_in_segment(seg, b);

        const VectorXd k1 = dyn_.A * x + dyn_.B * u0;
        const double l1 = c_.dot(x) + e_.dot(u0) + eps_;
        const VectorXd x2 = x + 0.5 * h * k1;
        const VectorXd k2 = dyn_.A * x2 + dyn_.B * um;
        const double l2 = c_.dot(x2) + e_.dot(um) + eps_;
        const VectorXd x3 = x + 0.5 * h * k2;
        const VectorXd k3 = dyn_.A * x3 + dyn_.B * um;
        const double l3 = c_.dot(x3) + e_.dot(um) + eps_;
        const VectorXd x4 = x + h * k3;
        const VectorXd k4 = dyn_.A * x4 + dyn_.B * u1;
        const double l4 = c_.dot(x4) + e_.dot(u1) + eps_;

        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        y += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }

    const LinearDynamics& dyn_;
    const ControlPolicy& policy_;
    std::vector<double> breaks_;
    RowVectorXd c_;
    RowVectorXd e_;
    double eps_;
};

}  // namespace utoc::detail

#endif  // UTOC_SRC_RK4_HPP
