#ifndef UTOC_MEAN_SYSTEM_HPP
#define UTOC_MEAN_SYSTEM_HPP

#include "utoc/meanfield.hpp"
#include "utoc/problem.hpp"

namespace utoc {

/// Left limit of the policy at t (the value on the segment ending at t); right value at t = 0.
VectorXd policy_left(const ControlPolicy& policy, double t);

/// Dense evaluation of the exact mean pair (E[X], E[Y]) for one deterministic policy.
///
/// A fine RK4 grid is stored; values between nodes are obtained by one RK4 step from
/// the preceding node, so the interpolant has the integrator's own accuracy.
class MeanSystem {
public:
    /// n_steps = 0 picks a step near 1e-3 time units.
    MeanSystem(const ProblemSpec& spec, const ControlPolicy& policy, int n_steps = 0);

    const SimGrid& grid() const { return grid_; }
    const MatrixXd& mean_x() const { return mean_x_; }
    const std::vector<double>& mean_y() const { return mean_y_; }
    const ControlPolicy& policy() const { return policy_; }

    VectorXd x_at(double t) const;
    double y_at(double t) const;
    /// G(t) with the left limit of the policy, including the regularization drift.
    double g_at(double t) const;

    /// Grid-level detection with linear interpolation.
    MinTime coarse_min_time() const;
    /// Same bracket, refined by TOMS 748 on the dense trajectory to full precision.
    MinTime refined_min_time() const;

private:
    void state_at(double t, VectorXd& x, double& y) const;

    ProblemSpec spec_;
    ControlPolicy policy_;
    SimGrid grid_;
    MatrixXd mean_x_;
    std::vector<double> mean_y_;
};

}  // namespace utoc

#endif  // UTOC_MEAN_SYSTEM_HPP
