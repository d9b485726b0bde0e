#ifndef UTOC_BANGBANG_HPP
#define UTOC_BANGBANG_HPP

#include "utoc/adjoint.hpp"
#include "utoc/problem.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace utoc {

/// S(t) = (-p0(t)'B + E3B + E4) / G(tau) on every row of p0 (nodes x m). Result is nodes x k.
/// A vanishing or non-finite G raises AssumptionViolation; a regularized G is used as given.
MatrixXd switching_function(const MatrixXd& p0, const LinearDynamics& dynamics, const TargetCoefficients& target,
                            const GAtTau& g_tau);

/// Sign changes of sampled values, refined by linear interpolation between bracketing nodes.
/// Tangential touches are not roots. All |values| < 1e-12 raises SingularArc naming `component`.
std::vector<double> find_switch_times(const std::vector<double>& values, const std::vector<double>& times,
                                      int component = 0);

/// Same bracketing on the sample nodes, refined by bisection of the exact function to 1e-10 in time.
std::vector<double> find_switch_times(const std::function<double(double)>& exact, const std::vector<double>& times,
                                      int component = 0);

struct SwitchingRecord {
    std::vector<double> times;
    MatrixXd S;  // nodes x k
    std::vector<std::vector<double>> roots;
    std::vector<bool> singular;
    double tau = 0.0;
    double g_tau = 0.0;
};

struct SynthesisOptions {
    int max_iter = 100;
    double damping = 0.5;
    double tol = 1e-10;
    /// Root isolation nodes per [0, tau].
    int nodes_per_tau = 4096;
};

struct SynthesisResult {
    ControlPolicy policy;
    double tau = 0.0;
    int iterations = 0;
    std::vector<double> history;
    SwitchingRecord record;
};

/// Fixed-point construction of a bang-bang candidate for the linear time-optimal problem.
/// Throws NonConvergence (with the iterate history or the detected cycle) and Infeasible
/// when a candidate never brings E[Y] to zero on [0, T].
SynthesisResult synthesize(const ProblemSpec& spec, double tau_guess, const SynthesisOptions& options = {});

enum class BangBangStructure {
    ConstantMax,
    MaxThenMin,
    Unclassified,
};

const char* to_string(BangBangStructure structure);

struct ScalarRegimeReport {
    /// "i", "ii", "ii-mirrored" or "unclassified".
    std::string label;
    BangBangStructure structure = BangBangStructure::Unclassified;
    std::optional<double> t0;
    /// G(tau) of the predicted policy (x0 = 0); a downward first crossing needs G < 0.
    double predicted_g = 0.0;
    bool crossing_consistent = false;
};

/// Regime of the scalar problem x' = a x + b u, y' = c x + e u with c = e1+e2+e3a, e = e3b+e4,
/// evaluated at the anchoring minimum time tau.
ScalarRegimeReport scalar_case_analysis(double a, double e1, double e2, double e3, double e4, double b, double u_min,
                                        double u_max, double tau);

/// CSV with columns t, S_1..S_k, u_1..u_k.
std::string switching_csv(const SwitchingRecord& record, const ControlPolicy& policy);

}  // namespace utoc

#endif  // UTOC_BANGBANG_HPP
