#include "utoc/meanfield.hpp"

#include "rk4.hpp"
#include "utoc/error.hpp"
#include "utoc/io.hpp"
#include "utoc/rng.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <sstream>
#include <thread>

namespace utoc {

SimGrid::SimGrid(double horizon, int n_steps) : horizon_(horizon), n_steps_(n_steps), dt_(horizon / n_steps) {
    if (n_steps < 1) throw domain_error("grid needs at least one step");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw domain_error("grid horizon must be positive");
}

std::vector<double> SimGrid::times() const {
    std::vector<double> t(static_cast<std::size_t>(nodes()));
    for (int j = 0; j < nodes(); ++j) t[static_cast<std::size_t>(j)] = node(j);
    return t;
}

const char* to_string(CaseLabel label) {
    switch (label) {
        case CaseLabel::Interior: return "i";
        case CaseLabel::NoCrossing: return "ii";
        case CaseLabel::AtHorizon: return "iii";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Exact means

MatrixXd mean_ode_solve(const LinearDynamics& dynamics, const ControlPolicy& policy, const SimGrid& grid) {
    MatrixXd out(grid.nodes(), dynamics.m);
    detail::AffineRk4 rk(dynamics, policy);
    VectorXd x = dynamics.x0;
    double unused = 0.0;
    out.row(0) = x.transpose();
    for (int j = 0; j < grid.n_steps(); ++j) {
        rk.advance(grid.node(j), grid.node(j + 1), x, unused);
        out.row(j + 1) = x.transpose();
    }
    return out;
}

std::vector<double> mean_target_solve(const TargetCoefficients& target, const LinearDynamics& dynamics,
                                      const MatrixXd& mean_x, const ControlPolicy& policy, const SimGrid& grid,
                                      double eps_regularize) {
    if (mean_x.rows() != grid.nodes()) throw domain_error("meanX does not live on this grid");
    detail::AffineRk4 rk(dynamics, policy, target.state_row(dynamics), target.control_row(dynamics), eps_regularize);
    std::vector<double> y(static_cast<std::size_t>(grid.nodes()));
    y[0] = target.y0;
    for (int j = 0; j < grid.n_steps(); ++j) {
        VectorXd x = mean_x.row(j).transpose();
        double yj = y[static_cast<std::size_t>(j)];
        rk.advance(grid.node(j), grid.node(j + 1), x, yj);
        y[static_cast<std::size_t>(j + 1)] = yj;
    }
    return y;
}

MinTime detect_min_time(const std::vector<double>& mean_y, const SimGrid& grid) {
    if (static_cast<int>(mean_y.size()) != grid.nodes()) throw domain_error("meanY does not live on this grid");
    if (mean_y.front() <= 0.0) return {0.0, CaseLabel::Interior};
    for (int j = 0; j < grid.n_steps(); ++j) {
        const double ya = mean_y[static_cast<std::size_t>(j)];
        const double yb = mean_y[static_cast<std::size_t>(j + 1)];
        if (yb > 0.0) continue;
        const double ta = grid.node(j), tb = grid.node(j + 1);
        double tau = yb == 0.0 ? tb : ta + (tb - ta) * ya / (ya - yb);
        tau = std::clamp(tau, ta, tb);
        const bool at_horizon = j + 1 == grid.n_steps() && tau >= grid.horizon() * (1.0 - 1e-14);
        if (at_horizon) return {grid.horizon(), CaseLabel::AtHorizon};
        return {tau, CaseLabel::Interior};
    }
    return {grid.horizon(), CaseLabel::NoCrossing};
}

// ---------------------------------------------------------------------------
// Particle kernels

namespace {

/// Linear family with coefficients flattened row-major for the hot loop.
class LinearKernel {
public:
    struct Scratch {
        std::vector<double> b;
        std::vector<double> x_new;
    };

    explicit LinearKernel(const ProblemSpec& spec)
        : m_(spec.dynamics.m), k_(spec.dynamics.k), d_(spec.dynamics.d), x0_(spec.dynamics.x0), y0_(spec.target.y0) {
        const auto& dyn = spec.dynamics;
        flatten(dyn.A, A_);
        flatten(dyn.B, B_);
        for (int j = 0; j < d_; ++j) {
            flatten(dyn.C[static_cast<std::size_t>(j)], C_);
            flatten(dyn.D[static_cast<std::size_t>(j)], D_);
        }
        flatten(spec.target.E1, E1_);
        flatten(spec.target.E2, E2_);
        flatten(spec.target.E3, E3_);
        flatten(spec.target.E4, E4_);
        if (spec.target.g) {
            has_g_ = true;
            flatten(spec.target.g->on_mean_x, gMX_);
            flatten(spec.target.g->on_x, gX_);
            flatten(spec.target.g->on_u, gU_);
        }
        scalar_ = m_ == 1 && k_ == 1 && d_ == 1;
    }

    int m() const { return m_; }
    int d() const { return d_; }
    Scratch make_scratch() const { return {std::vector<double>(m_), std::vector<double>(m_)}; }
    void initial(double* x, double& y) const {
        for (int a = 0; a < m_; ++a) x[a] = x0_[a];
        y = y0_;
    }

    void drift(const double* x, const double* u, double* b) const {
        if (scalar_) {
            b[0] = A_[0] * x[0] + B_[0] * u[0];
            return;
        }
        for (int r = 0; r < m_; ++r) {
            double s = 0.0;
            for (int c = 0; c < m_; ++c) s += A_[r * m_ + c] * x[c];
            for (int c = 0; c < k_; ++c) s += B_[r * k_ + c] * u[c];
            b[r] = s;
        }
    }

    void step(const double* u, const double* mean_x, const double* mean_b, double dt, const double* dw, double* x,
              double& y, Scratch& s) const {
        if (scalar_) {
            const double xv = x[0], uv = u[0];
            const double b = A_[0] * xv + B_[0] * uv;
            const double h = E1_[0] * mean_x[0] + E2_[0] * xv + E3_[0] * mean_b[0] + E4_[0] * uv;
            const double sig = C_[0] * xv + D_[0] * uv;
            const double noise_y = has_g_ ? (gMX_[0] * mean_x[0] + gX_[0] * xv + gU_[0] * uv) * dw[0] : 0.0;
            x[0] = xv + b * dt + sig * dw[0];
            y += h * dt + noise_y;
            return;
        }
        drift(x, u, s.b.data());
        double h = 0.0;
        for (int c = 0; c < m_; ++c) h += E1_[c] * mean_x[c] + E2_[c] * x[c] + E3_[c] * mean_b[c];
        for (int c = 0; c < k_; ++c) h += E4_[c] * u[c];
        double noise_y = 0.0;
        for (int r = 0; r < m_; ++r) s.x_new[r] = x[r] + s.b[r] * dt;
        for (int j = 0; j < d_; ++j) {
            const double* Cj = C_.data() + static_cast<std::size_t>(j) * m_ * m_;
            const double* Dj = D_.data() + static_cast<std::size_t>(j) * m_ * k_;
            for (int r = 0; r < m_; ++r) {
                double sig = 0.0;
                for (int c = 0; c < m_; ++c) sig += Cj[r * m_ + c] * x[c];
                for (int c = 0; c < k_; ++c) sig += Dj[r * k_ + c] * u[c];
                s.x_new[r] += sig * dw[j];
            }
            if (has_g_) {
                double g = 0.0;
                for (int c = 0; c < m_; ++c) g += gMX_[j * m_ + c] * mean_x[c] + gX_[j * m_ + c] * x[c];
                for (int c = 0; c < k_; ++c) g += gU_[j * k_ + c] * u[c];
                noise_y += g * dw[j];
            }
        }
        y += h * dt + noise_y;
        for (int r = 0; r < m_; ++r) x[r] = s.x_new[r];
    }

private:
    template <class M>
    static void flatten(const M& mat, std::vector<double>& out) {
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c) out.push_back(mat(r, c));
    }

    int m_, k_, d_;
    VectorXd x0_;
    double y0_;
    std::vector<double> A_, B_, C_, D_, E1_, E2_, E3_, E4_, gMX_, gX_, gU_;
    bool has_g_ = false;
    bool scalar_ = false;
};

class HookKernel {
public:
    struct Scratch {};

    explicit HookKernel(const SdeHooks& hooks) : h_(hooks) {}

    int m() const { return h_.m; }
    int d() const { return h_.d; }
    Scratch make_scratch() const { return {}; }
    void initial(double* x, double& y) const {
        for (int a = 0; a < h_.m; ++a) x[a] = h_.x0[a];
        y = h_.y0;
    }

    void drift(const double* x, const double* u, double* b) const {
        const VectorXd out = h_.drift(Eigen::Map<const VectorXd>(x, h_.m), Eigen::Map<const VectorXd>(u, h_.k));
        for (int a = 0; a < h_.m; ++a) b[a] = out[a];
    }

    void step(const double* u, const double* mean_x, const double* mean_b, double dt, const double* dw, double* x,
              double& y, Scratch&) const {
        const Eigen::Map<const VectorXd> xv(x, h_.m), uv(u, h_.k), mx(mean_x, h_.m), mb(mean_b, h_.m);
        const Eigen::Map<const VectorXd> w(dw, h_.d);
        const VectorXd b = h_.drift(xv, uv);
        const MatrixXd sig = h_.diffusion ? h_.diffusion(xv, uv) : MatrixXd::Zero(h_.m, h_.d);
        double y_new = y + h_.target_drift(mx, xv, mb, uv) * dt;
        if (h_.target_diffusion) y_new += h_.target_diffusion(mx, xv, uv).dot(w);
        const VectorXd x_new = xv + b * dt + sig * w;
        for (int a = 0; a < h_.m; ++a) x[a] = x_new[a];
        y = y_new;
    }

private:
    const SdeHooks& h_;
};

/// Called once per (path, node) with that node's state; paths are disjoint across calls.
using NodeObserver = std::function<void(int path, int node, const double* x)>;

constexpr int kChunk = 1024;

struct ChunkSums {
    std::vector<double> x;   // m, shifted by previous node mean
    std::vector<double> x2;  // m
    std::vector<double> b;   // m
    double y = 0.0;
    double y2 = 0.0;
    long long bad_path = -1;
};

template <class Kernel>
EnsembleResult run_engine(const Kernel& kernel, const ControlPolicy& policy, int n_paths, const SimGrid& grid,
                          std::uint64_t seed, const EnsembleOptions& options, const NodeObserver* observer) {
    if (n_paths < 2) throw domain_error("ensemble needs at least 2 paths");
    const int m = kernel.m();
    const int d = kernel.d();
    const int nodes = grid.nodes();
    const int k = policy.dim();

    EnsembleResult res;
    res.grid = grid;
    res.seed = seed;
    res.n_paths = n_paths;
    res.m = m;
    res.mean_x = MatrixXd::Zero(nodes, m);
    res.var_x = MatrixXd::Zero(nodes, m);
    res.mean_y.assign(static_cast<std::size_t>(nodes), 0.0);
    res.var_y.assign(static_cast<std::size_t>(nodes), 0.0);

    const bool store = options.store_paths.value_or(n_paths <= 10000);
    if (store) res.paths_x.assign(static_cast<std::size_t>(n_paths) * nodes * m, 0.0);

    // controls at each node (right-continuous)
    std::vector<double> u_nodes(static_cast<std::size_t>(nodes) * k);
    for (int j = 0; j < nodes; ++j) {
        const VectorXd u = policy_eval(policy, grid.node(j));
        for (int c = 0; c < k; ++c) u_nodes[static_cast<std::size_t>(j) * k + c] = u[c];
    }

    std::vector<double> X(static_cast<std::size_t>(n_paths) * m);
    std::vector<double> Y(static_cast<std::size_t>(n_paths));
    std::vector<double> cache(static_cast<std::size_t>(n_paths) * std::max(d, 1));
    for (int i = 0; i < n_paths; ++i) kernel.initial(&X[static_cast<std::size_t>(i) * m], Y[static_cast<std::size_t>(i)]);

    std::vector<double> mean_x(X.begin(), X.begin() + m);
    std::vector<double> mean_b(static_cast<std::size_t>(m));
    kernel.drift(mean_x.data(), u_nodes.data(), mean_b.data());
    for (int a = 0; a < m; ++a) res.mean_x(0, a) = mean_x[static_cast<std::size_t>(a)];
    res.mean_y[0] = Y[0];
    if (store || observer) {
        for (int i = 0; i < n_paths; ++i) {
            const double* xi = &X[static_cast<std::size_t>(i) * m];
            if (store) std::copy(xi, xi + m, res.paths_x.begin() + static_cast<std::ptrdiff_t>(i) * nodes * m);
            if (observer) (*observer)(i, 0, xi);
        }
    }

    const int n_chunks = (n_paths + kChunk - 1) / kChunk;
    std::vector<ChunkSums> sums(static_cast<std::size_t>(n_chunks));
    for (auto& s : sums) {
        s.x.assign(static_cast<std::size_t>(m), 0.0);
        s.x2.assign(static_cast<std::size_t>(m), 0.0);
        s.b.assign(static_cast<std::size_t>(m), 0.0);
    }

    const NoiseStream noise(seed);
    const double sqdt = std::sqrt(grid.dt());
    int step = 0;
    bool abort = false;
    long long bad_path = -1;
    int bad_step = -1;

    auto process_chunk = [&](int c, typename Kernel::Scratch& scratch, std::vector<double>& dw,
                             std::vector<double>& b_next) {
        ChunkSums& s = sums[static_cast<std::size_t>(c)];
        std::fill(s.x.begin(), s.x.end(), 0.0);
        std::fill(s.x2.begin(), s.x2.end(), 0.0);
        std::fill(s.b.begin(), s.b.end(), 0.0);
        s.y = s.y2 = 0.0;
        s.bad_path = -1;
        const double shift_y = res.mean_y[static_cast<std::size_t>(step)];
        const double* u = &u_nodes[static_cast<std::size_t>(step) * k];
        const double* u_next = &u_nodes[static_cast<std::size_t>(step + 1) * k];
        const int first = c * kChunk, last = std::min(n_paths, first + kChunk);
        auto draw = [&](int i) {
            const auto path = static_cast<std::uint64_t>(i);
            for (int j = 0; j < d; ++j) {
                double z;
                double& cached = cache[static_cast<std::size_t>(i) * d + j];
                if ((step & 1) == 0) {
                    const auto pair = noise.normal_pair(path, static_cast<std::uint64_t>(step) >> 1,
                                                        static_cast<std::uint32_t>(j));
                    z = pair.first;
                    cached = pair.second;
                } else {
                    z = cached;
                }
                dw[static_cast<std::size_t>(j)] = z * sqdt;
            }
        };
        if (m == 1 && !store && !observer) {
            // scalar state: accumulate in registers
            const double mx = mean_x[0];
            double ax = 0.0, ax2 = 0.0, ab = 0.0, ay = 0.0, ay2 = 0.0;
            for (int i = first; i < last; ++i) {
                draw(i);
                double* xi = &X[static_cast<std::size_t>(i)];
                double& yi = Y[static_cast<std::size_t>(i)];
                kernel.step(u, mean_x.data(), mean_b.data(), grid.dt(), dw.data(), xi, yi, scratch);
                if (!std::isfinite(yi) || !std::isfinite(xi[0])) {
                    if (s.bad_path < 0) s.bad_path = i;
                    continue;
                }
                double bn;
                kernel.drift(xi, u_next, &bn);
                const double dx = xi[0] - mx;
                ax += dx;
                ax2 += dx * dx;
                ab += bn;
                const double dy = yi - shift_y;
                ay += dy;
                ay2 += dy * dy;
            }
            s.x[0] = ax;
            s.x2[0] = ax2;
            s.b[0] = ab;
            s.y = ay;
            s.y2 = ay2;
            return;
        }
        for (int i = first; i < last; ++i) {
            draw(i);
            double* xi = &X[static_cast<std::size_t>(i) * m];
            double& yi = Y[static_cast<std::size_t>(i)];
            kernel.step(u, mean_x.data(), mean_b.data(), grid.dt(), dw.data(), xi, yi, scratch);
            bool finite = std::isfinite(yi);
            for (int a = 0; a < m; ++a) finite = finite && std::isfinite(xi[a]);
            if (!finite) {
                if (s.bad_path < 0) s.bad_path = i;
                continue;
            }
            kernel.drift(xi, u_next, b_next.data());
            for (int a = 0; a < m; ++a) {
                const double dx = xi[a] - mean_x[static_cast<std::size_t>(a)];
                s.x[static_cast<std::size_t>(a)] += dx;
                s.x2[static_cast<std::size_t>(a)] += dx * dx;
                s.b[static_cast<std::size_t>(a)] += b_next[static_cast<std::size_t>(a)];
            }
            const double dy = yi - shift_y;
            s.y += dy;
            s.y2 += dy * dy;
            if (store) {
                std::copy(xi, xi + m,
                          res.paths_x.begin() + (static_cast<std::ptrdiff_t>(i) * nodes + step + 1) * m);
            }
            if (observer) (*observer)(i, step + 1, xi);
        }
    };

    // Reduces chunk sums in chunk order; runs on exactly one thread per step.
    auto reduce = [&]() noexcept {
        for (const auto& s : sums) {
            if (s.bad_path >= 0) {
                bad_path = s.bad_path;
                bad_step = step;
                abort = true;
                return;
            }
        }
        const double n = static_cast<double>(n_paths);
        const double shift_y = res.mean_y[static_cast<std::size_t>(step)];
        std::vector<double> sx(static_cast<std::size_t>(m), 0.0), sx2(static_cast<std::size_t>(m), 0.0),
            sb(static_cast<std::size_t>(m), 0.0);
        double sy = 0.0, sy2 = 0.0;
        for (const auto& s : sums) {
            for (int a = 0; a < m; ++a) {
                sx[static_cast<std::size_t>(a)] += s.x[static_cast<std::size_t>(a)];
                sx2[static_cast<std::size_t>(a)] += s.x2[static_cast<std::size_t>(a)];
                sb[static_cast<std::size_t>(a)] += s.b[static_cast<std::size_t>(a)];
            }
            sy += s.y;
            sy2 += s.y2;
        }
        const int node = step + 1;
        for (int a = 0; a < m; ++a) {
            const double shifted = sx[static_cast<std::size_t>(a)] / n;
            const double mean = mean_x[static_cast<std::size_t>(a)] + shifted;
            res.mean_x(node, a) = mean;
            res.var_x(node, a) = std::max(0.0, (sx2[static_cast<std::size_t>(a)] - n * shifted * shifted) / (n - 1.0));
            mean_x[static_cast<std::size_t>(a)] = mean;
            mean_b[static_cast<std::size_t>(a)] = sb[static_cast<std::size_t>(a)] / n;
        }
        const double shifted_y = sy / n;
        res.mean_y[static_cast<std::size_t>(node)] = shift_y + shifted_y;
        res.var_y[static_cast<std::size_t>(node)] = std::max(0.0, (sy2 - n * shifted_y * shifted_y) / (n - 1.0));
        ++step;
    };

    int workers = options.threads > 0 ? options.threads : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, n_chunks);

    if (workers == 1) {
        auto scratch = kernel.make_scratch();
        std::vector<double> dw(static_cast<std::size_t>(std::max(d, 1))), b_next(static_cast<std::size_t>(m));
        while (step < grid.n_steps() && !abort) {
            for (int c = 0; c < n_chunks; ++c) process_chunk(c, scratch, dw, b_next);
            reduce();
        }
    } else {
        std::barrier sync(workers, reduce);
        auto body = [&](int w) {
            auto scratch = kernel.make_scratch();
            std::vector<double> dw(static_cast<std::size_t>(std::max(d, 1))), b_next(static_cast<std::size_t>(m));
            const int c0 = static_cast<int>(static_cast<long long>(n_chunks) * w / workers);
            const int c1 = static_cast<int>(static_cast<long long>(n_chunks) * (w + 1) / workers);
            while (step < grid.n_steps() && !abort) {
                for (int c = c0; c < c1; ++c) process_chunk(c, scratch, dw, b_next);
                sync.arrive_and_wait();
            }
        };
        std::vector<std::jthread> pool;
        for (int w = 1; w < workers; ++w) pool.emplace_back(body, w);
        body(0);
    }

    if (abort) {
        std::ostringstream os;
        os << "non-finite state at step " << bad_step << " on path " << bad_path;
        throw Error(ErrorKind::Divergence, os.str());
    }

    const MinTime mt = detect_min_time(res.mean_y, grid);
    res.tau = mt.tau;
    res.case_label = mt.label;
    return res;
}

/// Locates tau in interval [t_j, t_{j+1}] with j in [0, n_steps - 1].
int interval_of(const SimGrid& grid, double tau) {
    int j = static_cast<int>(std::floor(tau / grid.dt()));
    j = std::clamp(j, 0, grid.n_steps() - 1);
    while (j > 0 && grid.node(j) > tau) --j;
    while (j + 1 < grid.n_steps() && grid.node(j + 1) <= tau) ++j;
    return j;
}

/// Control at the left end (right limit) and right end (left limit) of each interval.
struct IntervalControls {
    std::vector<VectorXd> start;
    std::vector<VectorXd> end;
};

IntervalControls interval_controls(const ControlPolicy& policy, const SimGrid& grid) {
    IntervalControls ic;
    for (int j = 0; j < grid.n_steps(); ++j) {
        const double a = grid.node(j), b = grid.node(j + 1);
        const std::size_t seg = policy.segment_index(0.5 * (a + b));
        ic.start.push_back(policy_eval(policy, a));
        ic.end.push_back(policy.eval_in_segment(seg, b));
    }
    return ic;
}

/// Per-path J from a functor yielding X(path, node).
template <class StateAt>
CostEstimate cost_from_states(const SimGrid& grid, double tau, int n_paths, int m, const CostSpec& cost,
                              const ControlPolicy& policy, StateAt state_at) {
    const int jt = interval_of(grid, tau);
    const IntervalControls ic = interval_controls(policy, grid);
    const double ta = grid.node(jt);
    const double w = (tau - ta) / grid.dt();
    const std::size_t seg_tau = policy.segment_index(0.5 * (ta + tau));
    const VectorXd u_tau = policy.eval_in_segment(seg_tau, tau);

    std::vector<double> J(static_cast<std::size_t>(n_paths));
    VectorXd xa(m), xb(m);
    for (int i = 0; i < n_paths; ++i) {
        double integral = 0.0;
        state_at(i, 0, xa);
        for (int j = 0; j < jt; ++j) {
            state_at(i, j + 1, xb);
            const double h = grid.node(j + 1) - grid.node(j);
            integral += 0.5 * h * (cost.running(xa, ic.start[static_cast<std::size_t>(j)]) +
                                   cost.running(xb, ic.end[static_cast<std::size_t>(j)]));
            xa = xb;
        }
        state_at(i, jt + 1, xb);
        const VectorXd x_tau = (1.0 - w) * xa + w * xb;
        if (tau > ta) {
            integral += 0.5 * (tau - ta) *
                        (cost.running(xa, ic.start[static_cast<std::size_t>(jt)]) + cost.running(x_tau, u_tau));
        }
        J[static_cast<std::size_t>(i)] = integral + cost.terminal(x_tau);
    }
    double mean = 0.0;
    for (double v : J) mean += v;
    mean /= n_paths;
    double ss = 0.0;
    for (double v : J) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n_paths - 1));
    return {mean, sd / std::sqrt(static_cast<double>(n_paths))};
}

}  // namespace

SdeHooks hooks_from_spec(const ProblemSpec& spec) {
    const auto dyn = spec.dynamics;
    const auto tg = spec.target;
    SdeHooks h;
    h.m = dyn.m;
    h.k = dyn.k;
    h.d = dyn.d;
    h.x0 = dyn.x0;
    h.y0 = tg.y0;
    h.drift = [dyn](const VectorXd& x, const VectorXd& u) -> VectorXd { return dyn.A * x + dyn.B * u; };
    h.diffusion = [dyn](const VectorXd& x, const VectorXd& u) -> MatrixXd {
        MatrixXd s(dyn.m, dyn.d);
        for (int j = 0; j < dyn.d; ++j) s.col(j) = dyn.C[static_cast<std::size_t>(j)] * x + dyn.D[static_cast<std::size_t>(j)] * u;
        return s;
    };
    h.target_drift = [tg](const VectorXd& mx, const VectorXd& x, const VectorXd& mb, const VectorXd& u) {
        return tg.E1.dot(mx) + tg.E2.dot(x) + tg.E3.dot(mb) + tg.E4.dot(u);
    };
    if (tg.g) {
        const auto g = *tg.g;
        h.target_diffusion = [g](const VectorXd& mx, const VectorXd& x, const VectorXd& u) -> RowVectorXd {
            return (g.on_mean_x * mx + g.on_x * x + g.on_u * u).transpose();
        };
    }
    return h;
}

EnsembleResult simulate_ensemble(const ProblemSpec& spec, const ControlPolicy& policy, int n_paths,
                                 const SimGrid& grid, std::uint64_t seed, const EnsembleOptions& options) {
    require_valid(validate(spec));
    require_valid(validate_policy(policy, grid.horizon(), spec.dynamics.k));
    const LinearKernel kernel(spec);
    EnsembleResult res = run_engine(kernel, policy, n_paths, grid, seed, options, nullptr);
    if (!options.compute_cost) return res;

    if (res.has_paths()) {
        const CostEstimate c = estimate_cost(res, spec.cost, policy);
        res.cost = c.value;
        res.cost_std_err = c.std_err;
    } else {
        // Replay the identical ensemble, keeping only each path's running cost and the
        // two states bracketing tau.
        const int m = spec.dynamics.m;
        const int jt = interval_of(grid, res.tau);
        const int keep_lo = jt, keep_hi = jt + 1;
        std::vector<double> bracket(static_cast<std::size_t>(n_paths) * 2 * m);
        std::vector<double> running(static_cast<std::size_t>(n_paths), 0.0);
        std::vector<double> prev(static_cast<std::size_t>(n_paths) * m);
        const IntervalControls ic = interval_controls(policy, grid);
        const NodeObserver observer = [&](int path, int node, const double* x) {
            const Eigen::Map<const VectorXd> xv(x, m);
            double* p = &prev[static_cast<std::size_t>(path) * m];
            if (node > 0 && node <= jt) {
                const Eigen::Map<const VectorXd> xp(p, m);
                const double h = grid.node(node) - grid.node(node - 1);
                running[static_cast<std::size_t>(path)] +=
                    0.5 * h * (spec.cost.running(xp, ic.start[static_cast<std::size_t>(node - 1)]) +
                               spec.cost.running(xv, ic.end[static_cast<std::size_t>(node - 1)]));
            }
            std::copy(x, x + m, p);
            if (node == keep_lo) std::copy(x, x + m, &bracket[static_cast<std::size_t>(path) * 2 * m]);
            if (node == keep_hi) std::copy(x, x + m, &bracket[static_cast<std::size_t>(path) * 2 * m + m]);
        };
        EnsembleOptions replay = options;
        replay.store_paths = false;
        run_engine(kernel, policy, n_paths, grid, seed, replay, &observer);

        // Reuse the stored-path estimator on a synthetic two-node view: full intervals are
        // already integrated, so only the tail and terminal terms remain.
        const double ta = grid.node(jt);
        const double w = (res.tau - ta) / grid.dt();
        const std::size_t seg_tau = policy.segment_index(0.5 * (ta + res.tau));
        const VectorXd u_tau = policy.eval_in_segment(seg_tau, res.tau);
        std::vector<double> J(static_cast<std::size_t>(n_paths));
        for (int i = 0; i < n_paths; ++i) {
            const Eigen::Map<const VectorXd> xa(&bracket[static_cast<std::size_t>(i) * 2 * m], m);
            const Eigen::Map<const VectorXd> xb(&bracket[static_cast<std::size_t>(i) * 2 * m + m], m);
            const VectorXd x_tau = (1.0 - w) * xa + w * xb;
            double total = running[static_cast<std::size_t>(i)];
            if (res.tau > ta) {
                total += 0.5 * (res.tau - ta) *
                         (spec.cost.running(xa, ic.start[static_cast<std::size_t>(jt)]) + spec.cost.running(x_tau, u_tau));
            }
            J[static_cast<std::size_t>(i)] = total + spec.cost.terminal(x_tau);
        }
        double mean = 0.0;
        for (double v : J) mean += v;
        mean /= n_paths;
        double ss = 0.0;
        for (double v : J) ss += (v - mean) * (v - mean);
        res.cost = mean;
        res.cost_std_err = std::sqrt(ss / (n_paths - 1)) / std::sqrt(static_cast<double>(n_paths));
    }
    res.cost_available = true;
    return res;
}

EnsembleResult simulate_ensemble(const SdeHooks& hooks, const ControlPolicy& policy, int n_paths,
                                 const SimGrid& grid, std::uint64_t seed, const EnsembleOptions& options) {
    if (!hooks.drift || !hooks.target_drift) throw Error(ErrorKind::Validation, "hooks need drift and target drift");
    if (hooks.x0.size() != hooks.m) throw Error(ErrorKind::Validation, "x0 length ≠ m", "hooks.x0");
    const HookKernel kernel(hooks);
    return run_engine(kernel, policy, n_paths, grid, seed, options, nullptr);
}

CostEstimate estimate_cost(const EnsembleResult& result, const CostSpec& cost, const ControlPolicy& policy) {
    if (!result.has_paths()) throw domain_error("cost estimation needs stored paths");
    const int m = result.m;
    return cost_from_states(result.grid, result.tau, result.n_paths, m, cost, policy,
                            [&](int path, int node, VectorXd& out) {
                                for (int a = 0; a < m; ++a) out[a] = result.path_state(path, node, a);
                            });
}

std::string trajectory_csv(const SimGrid& grid, const MatrixXd& mean_x, const std::vector<double>& mean_y) {
    std::string out = "t";
    for (Eigen::Index a = 0; a < mean_x.cols(); ++a) out += ",meanX_" + std::to_string(a + 1);
    out += ",meanY\n";
    for (int j = 0; j < grid.nodes(); ++j) {
        out += fmt17(grid.node(j));
        for (Eigen::Index a = 0; a < mean_x.cols(); ++a) out += "," + fmt17(mean_x(j, a));
        out += "," + fmt17(mean_y[static_cast<std::size_t>(j)]) + "\n";
    }
    return out;
}

}  // namespace utoc
