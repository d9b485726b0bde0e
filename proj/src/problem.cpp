#include "utoc/problem.hpp"

#include "utoc/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace utoc {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::NonConvergence: return "non-convergence";
        case ErrorKind::Infeasible: return "infeasible";
        case ErrorKind::AssumptionViolation: return "assumption-violation";
        case ErrorKind::SingularArc: return "singular-arc";
        case ErrorKind::Divergence: return "divergence";
        case ErrorKind::NumericalConsistency: return "numerical-consistency";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// CostSpec

CostSpec CostSpec::time_optimal(int m, int k) {
    CostSpec c;
    c.kappa = 1.0;
    c.c_lin = VectorXd::Zero(m);
    c.Lambda = MatrixXd::Zero(k, k);
    c.psi_lin = VectorXd::Zero(m);
    c.psi_quad = MatrixXd::Zero(m, m);
    return c;
}

double CostSpec::running(const VectorXd& x, const VectorXd& u) const {
    return kappa + c_lin.dot(x) + 0.5 * u.dot(Lambda * u);
}

double CostSpec::terminal(const VectorXd& x) const {
    return psi_lin.dot(x) + 0.5 * x.dot(psi_quad * x);
}

bool CostSpec::has_terminal() const {
    return psi_lin.cwiseAbs().sum() > 0.0 || psi_quad.cwiseAbs().sum() > 0.0;
}

bool ControlSet::contains(const VectorXd& u, double slack) const {
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (u[i] < lower[i] - slack || u[i] > upper[i] + slack) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// ControlPolicy

double ComponentForm::operator()(double t) const {
    double v = offset;
    for (const auto& term : terms) v += term.scale * std::exp(term.rate * (t - term.anchor));
    return v;
}

ControlPolicy::ControlPolicy(std::vector<PolicySegment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) throw Error(ErrorKind::Validation, "policy has no segments", "policy.segments");
    const auto k = segments_.front().components.size();
    if (k == 0) throw Error(ErrorKind::Validation, "policy has zero components", "policy.segments[0]");
    if (segments_.front().t_start != 0.0) {
        throw Error(ErrorKind::Validation, "first segment must start at 0", "policy.segments[0].t_start");
    }
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& s = segments_[i];
        const std::string path = "policy.segments[" + std::to_string(i) + "]";
        if (!(s.t_end > s.t_start)) throw Error(ErrorKind::Validation, "breakpoints not strictly increasing", path);
        if (s.components.size() != k) throw Error(ErrorKind::Validation, "component count differs", path);
        if (i > 0 && s.t_start != segments_[i - 1].t_end) {
            throw Error(ErrorKind::Validation, "segments leave a gap or overlap", path + ".t_start");
        }
    }
}

ControlPolicy ControlPolicy::constant(const VectorXd& u, double horizon) {
    PolicySegment seg{0.0, horizon, {}};
    for (Eigen::Index i = 0; i < u.size(); ++i) seg.components.push_back(ComponentForm::constant(u[i]));
    return ControlPolicy({seg});
}

std::vector<double> ControlPolicy::breakpoints() const {
    std::vector<double> out;
    for (std::size_t i = 1; i < segments_.size(); ++i) out.push_back(segments_[i].t_start);
    return out;
}

std::size_t ControlPolicy::segment_index(double t) const {
    // first segment whose end is strictly beyond t; T itself belongs to the last one
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double value, const PolicySegment& s) { return value < s.t_end; });
    if (it == segments_.end()) return segments_.size() - 1;
    return static_cast<std::size_t>(it - segments_.begin());
}

VectorXd ControlPolicy::eval_in_segment(std::size_t index, double t) const {
    const auto& comps = segments_[index].components;
    VectorXd u(static_cast<Eigen::Index>(comps.size()));
    for (std::size_t i = 0; i < comps.size(); ++i) u[static_cast<Eigen::Index>(i)] = comps[i](t);
    return u;
}

ControlPolicy ControlPolicy::combined(const ControlPolicy& other, double alpha) const {
    if (other.dim() != dim()) throw Error(ErrorKind::Validation, "policy dimensions differ");
    if (other.horizon() != horizon()) throw Error(ErrorKind::Validation, "policy horizons differ");
    std::set<double> cuts{0.0, horizon()};
    for (double b : breakpoints()) cuts.insert(b);
    for (double b : other.breakpoints()) cuts.insert(b);
    std::vector<double> knots(cuts.begin(), cuts.end());

    std::vector<PolicySegment> merged;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double mid = 0.5 * (knots[i] + knots[i + 1]);
        const auto& a = segments_[segment_index(mid)].components;
        const auto& b = other.segments_[other.segment_index(mid)].components;
        PolicySegment seg{knots[i], knots[i + 1], {}};
        for (std::size_t c = 0; c < a.size(); ++c) {
            ComponentForm f = a[c];
            f.offset += alpha * b[c].offset;
            for (auto term : b[c].terms) {
                term.scale *= alpha;
                f.terms.push_back(term);
            }
            seg.components.push_back(std::move(f));
        }
        merged.push_back(std::move(seg));
    }
    return ControlPolicy(std::move(merged));
}

VectorXd policy_eval(const ControlPolicy& policy, double t) {
    if (!(t >= 0.0 && t <= policy.horizon())) {
        std::ostringstream os;
        os << "policy evaluated at t=" << t << " outside [0, " << policy.horizon() << "]";
        throw domain_error(os.str());
    }
    return policy.eval_in_segment(policy.segment_index(t), t);
}

bool policy_within(const ControlPolicy& policy, const ControlSet& set, const std::vector<double>& times,
                   double slack) {
    return std::all_of(times.begin(), times.end(),
                       [&](double t) { return set.contains(policy_eval(policy, t), slack); });
}

// ---------------------------------------------------------------------------
// Validation

namespace {

class Checker {
public:
    explicit Checker(ValidationReport& report) : report_(report) {}

    void add(const std::string& path, const std::string& message) { report_.violations.push_back({path, message}); }

    void shape(const std::string& path, const MatrixXd& M, Eigen::Index rows, Eigen::Index cols,
               const char* row_name, const char* col_name) {
        if (M.rows() != rows) add(path, std::string("rows ≠ ") + row_name + describe(M.rows(), rows));
        if (M.cols() != cols) add(path, std::string("columns ≠ ") + col_name + describe(M.cols(), cols));
        finite(path, M);
    }

    void length(const std::string& path, Eigen::Index got, Eigen::Index want, const char* name) {
        if (got != want) add(path, std::string("length ≠ ") + name + describe(got, want));
    }

    template <class Derived>
    void finite(const std::string& path, const Eigen::DenseBase<Derived>& M) {
        if (M.size() > 0 && !M.allFinite()) add(path, "non-finite entry");
    }

    void symmetric(const std::string& path, const MatrixXd& M) {
        if (M.rows() == M.cols() && M.size() > 0 && (M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            add(path, "not symmetric within 1e-12");
        }
    }

private:
    static std::string describe(Eigen::Index got, Eigen::Index want) {
        return " (got " + std::to_string(got) + ", expected " + std::to_string(want) + ")";
    }

    ValidationReport& report_;
};

}  // namespace

bool ValidationReport::mentions(const std::string& text) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.to_string().find(text) != std::string::npos; });
}

ValidationReport validate(const ProblemSpec& spec) {
    ValidationReport report;
    Checker check(report);
    const auto& dyn = spec.dynamics;
    const int m = dyn.m, k = dyn.k, d = dyn.d;

    if (m < 1) check.add("dynamics.m", "must be positive");
    if (k < 1) check.add("dynamics.k", "must be positive");
    if (d < 1) check.add("dynamics.d", "must be positive");
    if (d > 65535) check.add("dynamics.d", "at most 65535 noise channels");

    check.shape("dynamics.A", dyn.A, m, m, "m", "m");
    check.shape("dynamics.B", dyn.B, m, k, "m", "k");
    if (static_cast<int>(dyn.C.size()) != d) check.add("dynamics.C", "entries ≠ d");
    if (static_cast<int>(dyn.D.size()) != d) check.add("dynamics.D", "entries ≠ d");
    for (std::size_t j = 0; j < dyn.C.size(); ++j) {
        check.shape("dynamics.C[" + std::to_string(j) + "]", dyn.C[j], m, m, "m", "m");
    }
    for (std::size_t j = 0; j < dyn.D.size(); ++j) {
        check.shape("dynamics.D[" + std::to_string(j) + "]", dyn.D[j], m, k, "m", "k");
    }
    check.length("dynamics.x0", dyn.x0.size(), m, "m");
    check.finite("dynamics.x0", dyn.x0);

    const auto& tg = spec.target;
    check.length("target.E1", tg.E1.size(), m, "m");
    check.length("target.E2", tg.E2.size(), m, "m");
    check.length("target.E3", tg.E3.size(), m, "m");
    check.length("target.E4", tg.E4.size(), k, "k");
    check.finite("target.E1", tg.E1);
    check.finite("target.E2", tg.E2);
    check.finite("target.E3", tg.E3);
    check.finite("target.E4", tg.E4);
    if (!std::isfinite(tg.y0)) check.add("target.y0", "non-finite");
    if (tg.g) {
        check.shape("target.g.onMeanX", tg.g->on_mean_x, d, m, "d", "m");
        check.shape("target.g.onX", tg.g->on_x, d, m, "d", "m");
        check.shape("target.g.onU", tg.g->on_u, d, k, "d", "k");
    }

    const auto& cost = spec.cost;
    if (!std::isfinite(cost.kappa)) check.add("cost.kappa", "non-finite");
    check.length("cost.cLin", cost.c_lin.size(), m, "m");
    check.finite("cost.cLin", cost.c_lin);
    check.shape("cost.Lambda", cost.Lambda, k, k, "k", "k");
    check.symmetric("cost.Lambda", cost.Lambda);
    check.length("cost.psiLin", cost.psi_lin.size(), m, "m");
    check.finite("cost.psiLin", cost.psi_lin);
    check.shape("cost.psiQuad", cost.psi_quad, m, m, "m", "m");
    check.symmetric("cost.psiQuad", cost.psi_quad);

    const auto& cs = spec.control_set;
    check.length("controlSet.lower", cs.lower.size(), k, "k");
    check.length("controlSet.upper", cs.upper.size(), k, "k");
    check.finite("controlSet.lower", cs.lower);
    check.finite("controlSet.upper", cs.upper);
    if (cs.lower.size() == cs.upper.size()) {
        for (Eigen::Index i = 0; i < cs.lower.size(); ++i) {
            if (cs.lower[i] > cs.upper[i]) {
                check.add("controlSet", "order: lower[" + std::to_string(i) + "] > upper[" + std::to_string(i) + "]");
            }
        }
    }

    if (!(spec.T > 0.0) || !std::isfinite(spec.T)) check.add("T", "must be positive and finite");
    if (!(spec.eps_regularize >= 0.0) || !std::isfinite(spec.eps_regularize)) {
        check.add("epsRegularize", "must be nonnegative and finite");
    }
    return report;
}

ValidationReport validate_policy(const ControlPolicy& policy, double horizon, int k) {
    ValidationReport report;
    Checker check(report);
    if (policy.segments().empty()) {
        check.add("policy.segments", "empty");
        return report;
    }
    if (policy.dim() != k) check.add("policy.segments", "component count ≠ k");
    if (policy.horizon() != horizon) check.add("policy.segments", "last breakpoint ≠ T");
    for (std::size_t i = 0; i < policy.segments().size(); ++i) {
        for (const auto& comp : policy.segments()[i].components) {
            bool finite = std::isfinite(comp.offset);
            for (const auto& term : comp.terms) {
                finite = finite && std::isfinite(term.scale) && std::isfinite(term.rate) && std::isfinite(term.anchor);
            }
            if (!finite) check.add("policy.segments[" + std::to_string(i) + "]", "non-finite coefficient");
        }
    }
    return report;
}

void require_valid(const ValidationReport& report) {
    if (report.ok()) return;
    const auto& v = report.violations.front();
    throw Error(ErrorKind::Validation, v.to_string(), v.path);
}

}  // namespace utoc
