#include "utoc/mean_system.hpp"

#include "rk4.hpp"
#include "utoc/error.hpp"

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>

namespace utoc {

VectorXd policy_left(const ControlPolicy& policy, double t) {
    if (t <= 0.0) return policy_eval(policy, t);
    const auto& segs = policy.segments();
    auto it = std::lower_bound(segs.begin(), segs.end(), t,
                               [](const PolicySegment& s, double value) { return s.t_end < value; });
    if (it == segs.end()) return policy_eval(policy, t);
    return policy.eval_in_segment(static_cast<std::size_t>(it - segs.begin()), t);
}

namespace {

int default_steps(double horizon) {
    return std::max(64, static_cast<int>(std::ceil(horizon / 1e-3)));
}

}  // namespace

MeanSystem::MeanSystem(const ProblemSpec& spec, const ControlPolicy& policy, int n_steps)
    : spec_(spec), policy_(policy), grid_(spec.T, n_steps > 0 ? n_steps : default_steps(spec.T)) {
    require_valid(validate(spec_));
    require_valid(validate_policy(policy_, spec_.T, spec_.dynamics.k));
    mean_x_ = mean_ode_solve(spec_.dynamics, policy_, grid_);
    mean_y_ = mean_target_solve(spec_.target, spec_.dynamics, mean_x_, policy_, grid_, spec_.eps_regularize);
}

void MeanSystem::state_at(double t, VectorXd& x, double& y) const {
    if (t < 0.0 || t > grid_.horizon()) throw domain_error("time outside [0, T]");
    int j = std::clamp(static_cast<int>(std::floor(t / grid_.dt())), 0, grid_.n_steps());
    while (j > 0 && grid_.node(j) > t) --j;
    x = mean_x_.row(j).transpose();
    y = mean_y_[static_cast<std::size_t>(j)];
    if (t == grid_.node(j)) return;
    const detail::AffineRk4 rk(spec_.dynamics, policy_, spec_.target.state_row(spec_.dynamics),
                               spec_.target.control_row(spec_.dynamics), spec_.eps_regularize);
    rk.advance(grid_.node(j), t, x, y);
}

VectorXd MeanSystem::x_at(double t) const {
    VectorXd x;
    double y;
    state_at(t, x, y);
    return x;
}

double MeanSystem::y_at(double t) const {
    VectorXd x;
    double y;
    state_at(t, x, y);
    return y;
}

double MeanSystem::g_at(double t) const {
    const auto& dyn = spec_.dynamics;
    return spec_.target.state_row(dyn).dot(x_at(t)) + spec_.target.control_row(dyn).dot(policy_left(policy_, t)) +
           spec_.eps_regularize;
}

MinTime MeanSystem::coarse_min_time() const { return detect_min_time(mean_y_, grid_); }

MinTime MeanSystem::refined_min_time() const {
    const MinTime coarse = coarse_min_time();
    if (coarse.label == CaseLabel::NoCrossing || coarse.tau == 0.0) return coarse;
    int j = std::clamp(static_cast<int>(std::floor(coarse.tau / grid_.dt())), 0, grid_.n_steps() - 1);
    while (j > 0 && mean_y_[static_cast<std::size_t>(j)] <= 0.0) --j;
    while (j + 1 < grid_.n_steps() && mean_y_[static_cast<std::size_t>(j + 1)] > 0.0) ++j;
    const double a = grid_.node(j), b = grid_.node(j + 1);
    const double fa = mean_y_[static_cast<std::size_t>(j)];
    const double fb = mean_y_[static_cast<std::size_t>(j + 1)];
    double tau = b;
    if (fb < 0.0 && fa > 0.0) {
        std::uintmax_t iters = 200;
        const auto root = boost::math::tools::toms748_solve([this](double t) { return y_at(t); }, a, b, fa, fb,
                                                            boost::math::tools::eps_tolerance<double>(52), iters);
        // The returned bracket is tight to one ulp; take the point where E[Y] <= 0 holds.
        tau = y_at(root.first) <= 0.0 ? root.first : root.second;
    }
    if (j + 1 == grid_.n_steps() && tau >= grid_.horizon() * (1.0 - 1e-14)) return {grid_.horizon(), CaseLabel::AtHorizon};
    return {tau, CaseLabel::Interior};
}

}  // namespace utoc
