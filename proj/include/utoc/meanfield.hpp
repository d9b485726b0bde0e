#ifndef UTOC_MEANFIELD_HPP
#define UTOC_MEANFIELD_HPP

#include "utoc/problem.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace utoc {

/// Uniform time grid t_j = j * dt on [0, T]; the last node is T itself.
class SimGrid {
public:
    SimGrid(double horizon, int n_steps);

    double horizon() const { return horizon_; }
    int n_steps() const { return n_steps_; }
    int nodes() const { return n_steps_ + 1; }
    double dt() const { return dt_; }
    double node(int j) const { return j == n_steps_ ? horizon_ : j * dt_; }
    std::vector<double> times() const;

private:
    double horizon_;
    int n_steps_;
    double dt_;
};

/// Which branch of the hitting-time trichotomy applies.
enum class CaseLabel {
    Interior,    // (i)   E[Y] reaches 0 strictly before T
    NoCrossing,  // (ii)  E[Y] stays positive on [0, T]
    AtHorizon,   // (iii) E[Y] first reaches 0 exactly at T
};

const char* to_string(CaseLabel label);

struct MinTime {
    double tau = 0.0;
    CaseLabel label = CaseLabel::NoCrossing;
};

/// E[X] on every node by classical RK4, sub-stepping at policy breakpoints.
/// Rows are nodes, columns are state components. Diffusion coefficients are ignored.
MatrixXd mean_ode_solve(const LinearDynamics& dynamics, const ControlPolicy& policy, const SimGrid& grid);

/// E[Y](t_j) = y0 + int_0^{t_j} (G(s) + eps) ds with G = (E1+E2+E3 A) E[X] + (E3 B + E4) u.
/// The quadrature restarts every interval from the supplied meanX node and uses the
/// same RK4 stages as mean_ode_solve, so it is fourth-order consistent.
std::vector<double> mean_target_solve(const TargetCoefficients& target, const LinearDynamics& dynamics,
                                      const MatrixXd& mean_x, const ControlPolicy& policy, const SimGrid& grid,
                                      double eps_regularize = 0.0);

/// First time the trajectory reaches zero, refined by linear interpolation.
/// The horizon is taken from the grid.
MinTime detect_min_time(const std::vector<double>& mean_y, const SimGrid& grid);

/// State and control evaluators for a general (possibly nonlinear) model.
/// The CLI only exposes the linear family; this is the library-level hook.
struct SdeHooks {
    int m = 0;
    int k = 0;
    int d = 0;
    VectorXd x0;
    double y0 = 0.0;
    std::function<VectorXd(const VectorXd& x, const VectorXd& u)> drift;
    /// m x d, column j is sigma^j.
    std::function<MatrixXd(const VectorXd& x, const VectorXd& u)> diffusion;
    std::function<double(const VectorXd& mean_x, const VectorXd& x, const VectorXd& mean_b, const VectorXd& u)>
        target_drift;
    /// 1 x d; may be empty for a noiseless target.
    std::function<RowVectorXd(const VectorXd& mean_x, const VectorXd& x, const VectorXd& u)> target_diffusion;
};

SdeHooks hooks_from_spec(const ProblemSpec& spec);

struct EnsembleOptions {
    /// Worker threads; 0 means hardware concurrency. Never changes results.
    int threads = 0;
    /// Store per-path states. Defaults to on for at most 10^4 paths.
    std::optional<bool> store_paths;
    /// Accumulate the per-path cost at tau (a second, identical pass when paths are not stored).
    bool compute_cost = true;
};

struct EnsembleResult {
    SimGrid grid{1.0, 1};
    MatrixXd mean_x;  // nodes x m
    MatrixXd var_x;   // nodes x m, sample variance across paths
    std::vector<double> mean_y;
    std::vector<double> var_y;
    /// Flat [path][node][component] when stored, empty otherwise.
    std::vector<double> paths_x;
    double tau = 0.0;
    CaseLabel case_label = CaseLabel::NoCrossing;
    double cost = 0.0;
    double cost_std_err = 0.0;
    bool cost_available = false;
    std::uint64_t seed = 0;
    int n_paths = 0;
    int m = 0;

    bool has_paths() const { return !paths_x.empty(); }
    double path_state(int path, int node, int component) const {
        return paths_x[(static_cast<std::size_t>(path) * grid.nodes() + node) * m + component];
    }
};

/// Euler-Maruyama particle approximation of (X, Y). The mean-field terms E[X] and
/// E[b(X, u)] are ensemble averages at the start of each step. The result is a pure
/// function of (spec, policy, n_paths, grid, seed).
EnsembleResult simulate_ensemble(const ProblemSpec& spec, const ControlPolicy& policy, int n_paths,
                                 const SimGrid& grid, std::uint64_t seed, const EnsembleOptions& options = {});

/// Same engine driven by general evaluator hooks. Costs are not computed here.
EnsembleResult simulate_ensemble(const SdeHooks& hooks, const ControlPolicy& policy, int n_paths,
                                 const SimGrid& grid, std::uint64_t seed, const EnsembleOptions& options = {});

struct CostEstimate {
    double value = 0.0;
    double std_err = 0.0;
};

/// Per-path trapezoid of f over [0, tau] plus Psi(X(tau)), averaged across stored paths.
CostEstimate estimate_cost(const EnsembleResult& result, const CostSpec& cost, const ControlPolicy& policy);

/// CSV with columns t, meanX_1..meanX_m, meanY.
std::string trajectory_csv(const SimGrid& grid, const MatrixXd& mean_x, const std::vector<double>& mean_y);

}  // namespace utoc

#endif  // UTOC_MEANFIELD_HPP
