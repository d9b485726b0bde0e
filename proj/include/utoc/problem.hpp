#ifndef UTOC_PROBLEM_HPP
#define UTOC_PROBLEM_HPP

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace utoc {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

/// dX = (A X + B u) dt + sum_j (C_j X + D_j u) dW_j,  X(0) = x0.
struct LinearDynamics {
    MatrixXd A;               // m x m
    MatrixXd B;               // m x k
    std::vector<MatrixXd> C;  // d entries, m x m
    std::vector<MatrixXd> D;  // d entries, m x k
    VectorXd x0;
    int m = 0;
    int k = 0;
    int d = 0;

    VectorXd drift(const VectorXd& x, const VectorXd& u) const { return A * x + B * u; }
};

/// Per-channel diffusion of the target: g_j = onMeanX.row(j) E[X] + onX.row(j) X + onU.row(j) u.
struct TargetDiffusion {
    MatrixXd on_mean_x;  // d x m
    MatrixXd on_x;       // d x m
    MatrixXd on_u;       // d x k
};

/// Target drift h = E1 E[X] + E2 X + E3 E[A X + B u] + E4 u.
struct TargetCoefficients {
    RowVectorXd E1;
    RowVectorXd E2;
    RowVectorXd E3;
    RowVectorXd E4;
    double y0 = 0.0;
    std::optional<TargetDiffusion> g;

    /// Coefficient of E[X] in G(t):  E1 + E2 + E3 A.
    RowVectorXd state_row(const LinearDynamics& dyn) const { return E1 + E2 + E3 * dyn.A; }
    /// Coefficient of u in G(t):  E3 B + E4.
    RowVectorXd control_row(const LinearDynamics& dyn) const { return E3 * dyn.B + E4; }
};

/// f(x, u) = kappa + cLin'x + 1/2 u'Lambda u,   Psi(x) = psiLin'x + 1/2 x'psiQuad x.
struct CostSpec {
    double kappa = 0.0;
    VectorXd c_lin;
    MatrixXd Lambda;
    VectorXd psi_lin;
    MatrixXd psi_quad;

    /// f = 1, Psi = 0, so that J = tau.
    static CostSpec time_optimal(int m, int k);

    double running(const VectorXd& x, const VectorXd& u) const;
    double terminal(const VectorXd& x) const;
    VectorXd terminal_grad(const VectorXd& x) const { return psi_lin + psi_quad * x; }
    bool has_terminal() const;
};

/// Rectangle [lower_1, upper_1] x ... x [lower_k, upper_k].
struct ControlSet {
    VectorXd lower;
    VectorXd upper;

    bool contains(const VectorXd& u, double slack = 0.0) const;
    VectorXd midpoint() const { return 0.5 * (lower + upper); }
};

/// One exponential term  scale * exp(rate * (t - anchor)).
struct ExpTerm {
    double scale = 0.0;
    double rate = 0.0;
    double anchor = 0.0;
};

/// Value of one control component on a segment: offset + sum of exponential terms.
/// A plain constant has no terms; the ScaledExp form g0 + g1 e^{g2 t} has one.
struct ComponentForm {
    double offset = 0.0;
    std::vector<ExpTerm> terms;

    static ComponentForm constant(double c) { return {c, {}}; }
    static ComponentForm scaled_exp(double g0, double g1, double g2, double anchor = 0.0) {
        return {g0, {ExpTerm{g1, g2, anchor}}};
    }

    bool is_constant() const { return terms.empty(); }
    double operator()(double t) const;
};

struct PolicySegment {
    double t_start = 0.0;
    double t_end = 0.0;
    std::vector<ComponentForm> components;
};

/// Deterministic piecewise control on [0, T]. Segments partition the horizon with
/// strictly increasing breakpoints; a breakpoint takes the right segment's value
/// except at T, which takes the last segment's value.
class ControlPolicy {
public:
    ControlPolicy() = default;
    explicit ControlPolicy(std::vector<PolicySegment> segments);

    static ControlPolicy constant(const VectorXd& u, double horizon);

    double horizon() const { return segments_.back().t_end; }
    int dim() const { return static_cast<int>(segments_.front().components.size()); }
    const std::vector<PolicySegment>& segments() const { return segments_; }
    /// Interior breakpoints, sorted.
    std::vector<double> breakpoints() const;

    /// Index of the segment that owns time t under the right-continuity rule.
    std::size_t segment_index(double t) const;
    /// Evaluate a given segment's forms at t without any domain check.
    VectorXd eval_in_segment(std::size_t index, double t) const;

    /// this + alpha * other, on the union of both breakpoint sets.
    ControlPolicy combined(const ControlPolicy& other, double alpha) const;

private:
    std::vector<PolicySegment> segments_;
};

struct ProblemSpec {
    LinearDynamics dynamics;
    TargetCoefficients target;
    CostSpec cost;
    ControlSet control_set;
    double T = 0.0;
    double eps_regularize = 0.0;
};

struct Violation {
    std::string path;
    std::string message;

    std::string to_string() const { return path + " " + message; }
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool mentions(const std::string& text) const;
};

ValidationReport validate(const ProblemSpec& spec);
ValidationReport validate_policy(const ControlPolicy& policy, double horizon, int k);

/// Throws a Validation error carrying the first violation when the report is not ok.
void require_valid(const ValidationReport& report);

/// Value of the active segment at t; domain error outside [0, T].
VectorXd policy_eval(const ControlPolicy& policy, double t);

/// True when every listed time maps into the control set (within slack).
bool policy_within(const ControlPolicy& policy, const ControlSet& set,
                   const std::vector<double>& times, double slack = 1e-12);

}  // namespace utoc

#endif  // UTOC_PROBLEM_HPP
