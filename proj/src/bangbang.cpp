#include "utoc/bangbang.hpp"

#include "utoc/error.hpp"
#include "utoc/io.hpp"
#include "utoc/mean_system.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace utoc {

MatrixXd switching_function(const MatrixXd& p0, const LinearDynamics& dynamics, const TargetCoefficients& target,
                            const GAtTau& g_tau) {
    if (g_tau.value == 0.0 || !std::isfinite(g_tau.value))
        throw Error(ErrorKind::AssumptionViolation, "switching function undefined: G(tau) is singular");
    const RowVectorXd e = target.control_row(dynamics);
    MatrixXd S(p0.rows(), dynamics.k);
    for (Eigen::Index j = 0; j < p0.rows(); ++j) S.row(j) = (-(p0.row(j) * dynamics.B) + e) / g_tau.value;
    return S;
}

namespace {

constexpr double kSingular = 1e-12;

[[noreturn]] void throw_singular(int component) {
    throw Error(ErrorKind::SingularArc,
                "switching component " + std::to_string(component + 1) + " is identically zero (singular arc)");
}

/// Pairs of node indices (i, j), i < j, bracketing each sign change between nonzero samples.
/// An exact zero between them is reported with i == j.
std::vector<std::pair<std::size_t, std::size_t>> brackets(const std::vector<double>& values) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t last = values.size();
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (values[j] == 0.0) continue;
        if (last < values.size() && (values[last] > 0.0) != (values[j] > 0.0)) {
            std::size_t zero = last + 1;
            while (zero < j && values[zero] != 0.0) ++zero;
            if (zero < j) out.emplace_back(zero, zero);
            else out.emplace_back(last, j);
        }
        last = j;
    }
    return out;
}

void check_sizes(std::size_t values, std::size_t times) {
    if (values != times) throw domain_error("values and times differ in length");
}

}  // namespace

std::vector<double> find_switch_times(const std::vector<double>& values, const std::vector<double>& times,
                                      int component) {
    check_sizes(values.size(), times.size());
    if (std::all_of(values.begin(), values.end(), [](double v) { return std::abs(v) < kSingular; }))
        throw_singular(component);
    std::vector<double> roots;
    for (const auto& [i, j] : brackets(values)) {
        if (i == j) {
            roots.push_back(times[i]);
            continue;
        }
        const double fa = values[i], fb = values[j];
        roots.push_back(times[i] + (times[j] - times[i]) * fa / (fa - fb));
    }
    return roots;
}

std::vector<double> find_switch_times(const std::function<double(double)>& exact, const std::vector<double>& times,
                                      int component) {
    std::vector<double> values(times.size());
    for (std::size_t j = 0; j < times.size(); ++j) values[j] = exact(times[j]);
    if (std::all_of(values.begin(), values.end(), [](double v) { return std::abs(v) < kSingular; }))
        throw_singular(component);
    std::vector<double> roots;
    for (const auto& [i, j] : brackets(values)) {
        if (i == j) {
            roots.push_back(times[i]);
            continue;
        }
        double a = times[i], b = times[j];
        const bool a_positive = values[i] > 0.0;
        while (b - a > 1e-10) {
            const double mid = 0.5 * (a + b);
            const double fm = exact(mid);
            if (fm == 0.0) {
                a = b = mid;
                break;
            }
            if ((fm > 0.0) == a_positive) a = mid;
            else b = mid;
        }
        roots.push_back(0.5 * (a + b));
    }
    return roots;
}

namespace {

bool is_time_optimal(const CostSpec& cost) {
    return cost.kappa == 1.0 && (cost.c_lin.size() == 0 || cost.c_lin.isZero(0.0)) &&
           (cost.Lambda.size() == 0 || cost.Lambda.isZero(0.0)) &&
           (cost.psi_lin.size() == 0 || cost.psi_lin.isZero(0.0)) &&
           (cost.psi_quad.size() == 0 || cost.psi_quad.isZero(0.0));
}

struct Candidate {
    ControlPolicy policy;
    SwitchingRecord record;
};

/// Bang-bang policy on [0, T] from the numerator of S anchored at tau, oriented by sign_g.
Candidate build_candidate(const ProblemSpec& spec, double tau, double sign_g, const SynthesisOptions& options) {
    const auto& dyn = spec.dynamics;
    const RowVectorXd c = spec.target.state_row(dyn);
    const RowVectorXd e = spec.target.control_row(dyn);
    const int k = dyn.k;

    const double span = std::max(tau, spec.T / 64.0);
    const int n = std::max(2, static_cast<int>(std::ceil(spec.T / span * options.nodes_per_tau)));
    std::vector<double> times(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) times[static_cast<std::size_t>(j)] = j == n ? spec.T : spec.T * j / n;

    auto numerator_row = [&](double t) -> RowVectorXd {
        const double lag = tau - t;
        if (lag == 0.0) return e;
        const RowVectorXd p0t = -(c * exp_and_integral(dyn.A, lag).second);
        return -(p0t * dyn.B) + e;
    };

    Candidate cand;
    cand.record.times = times;
    cand.record.tau = tau;
    cand.record.S.resize(static_cast<Eigen::Index>(times.size()), k);
    for (std::size_t j = 0; j < times.size(); ++j)
        cand.record.S.row(static_cast<Eigen::Index>(j)) = sign_g * numerator_row(times[j]);

    std::vector<double> cuts;
    cand.record.singular.assign(static_cast<std::size_t>(k), false);
    cand.record.roots.assign(static_cast<std::size_t>(k), {});
    for (int i = 0; i < k; ++i) {
        const auto col = cand.record.S.col(i);
        if ((col.array().abs() < kSingular).all()) {
            cand.record.singular[static_cast<std::size_t>(i)] = true;
            continue;
        }
        const auto roots = find_switch_times([&](double t) { return numerator_row(t)[i]; }, times, i);
        for (double r : roots) {
            if (r > 0.0 && r < spec.T) cuts.push_back(r);
            if (r <= tau) cand.record.roots[static_cast<std::size_t>(i)].push_back(r);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double x, double y) { return y - x < 1e-12; }), cuts.end());

    std::vector<double> edges{0.0};
    edges.insert(edges.end(), cuts.begin(), cuts.end());
    edges.push_back(spec.T);
    std::vector<PolicySegment> segments;
    for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
        const double mid = 0.5 * (edges[s] + edges[s + 1]);
        const RowVectorXd num = sign_g * numerator_row(mid);
        PolicySegment seg{edges[s], edges[s + 1], {}};
        for (int i = 0; i < k; ++i) {
            double value = 0.5 * (spec.control_set.lower[i] + spec.control_set.upper[i]);
            if (!cand.record.singular[static_cast<std::size_t>(i)]) {
                if (num[i] < 0.0) value = spec.control_set.lower[i];
                else if (num[i] > 0.0) value = spec.control_set.upper[i];
            }
            seg.components.push_back(ComponentForm::constant(value));
        }
        // merge with the previous segment when every component agrees
        if (!segments.empty()) {
            bool same = true;
            for (int i = 0; i < k; ++i)
                same = same && segments.back().components[static_cast<std::size_t>(i)].offset ==
                                   seg.components[static_cast<std::size_t>(i)].offset;
            if (same) {
                segments.back().t_end = seg.t_end;
                continue;
            }
        }
        segments.push_back(std::move(seg));
    }
    cand.policy = ControlPolicy(std::move(segments));
    return cand;
}

}  // namespace

SynthesisResult synthesize(const ProblemSpec& spec, double tau_guess, const SynthesisOptions& options) {
    require_valid(validate(spec));
    if (!is_time_optimal(spec.cost))
        throw Error(ErrorKind::Validation, "bang-bang synthesis needs the time-optimal cost (f = 1, Psi = 0)", "cost");
    if (options.max_iter < 1) throw Error(ErrorKind::Validation, "maxIter must be positive", "numeric.maxIter");
    if (!(options.damping >= 0.0 && options.damping < 1.0))
        throw Error(ErrorKind::Validation, "damping must lie in [0, 1)", "numeric.damping");
    if (!(options.tol > 0.0)) throw Error(ErrorKind::Validation, "tol must be positive", "numeric.tol");

    SynthesisResult result;
    double tau = std::clamp(tau_guess, 0.0, spec.T);
    double sign_g = -1.0;

    auto solve_candidate = [&](double anchor) {
        Candidate cand = build_candidate(spec, anchor, sign_g, options);
        const MeanSystem means(spec, cand.policy);
        const MinTime mt = means.refined_min_time();
        if (mt.label == CaseLabel::NoCrossing) {
            std::ostringstream os;
            os << "E[Y] never reaches zero on [0, T] for the bang-bang candidate anchored at tau = " << anchor;
            throw Error(ErrorKind::Infeasible, os.str());
        }
        const double g = mt.tau > 0.0 ? means.g_at(mt.tau) : 0.0;
        return std::make_tuple(std::move(cand), mt, g);
    };

    for (int iter = 1; iter <= options.max_iter; ++iter) {
        auto [cand, mt, g] = solve_candidate(tau);
        if (std::abs(g) > 1e-12) sign_g = g > 0.0 ? 1.0 : -1.0;
        const double next = (1.0 - options.damping) * mt.tau + options.damping * tau;
        result.history.push_back(next);
        result.iterations = iter;

        if (std::abs(next - tau) < options.tol) {
            auto [final_cand, final_mt, final_g] = solve_candidate(mt.tau);
            result.policy = std::move(final_cand.policy);
            result.record = std::move(final_cand.record);
            result.tau = final_mt.tau;
            result.record.g_tau = final_g;
            if (final_g != 0.0) result.record.S /= std::abs(final_g);
            return result;
        }

        const auto& h = result.history;
        if (h.size() >= 6) {
            const std::size_t n = h.size() - 1;
            const bool period_two = std::abs(h[n] - h[n - 2]) < options.tol && std::abs(h[n - 1] - h[n - 3]) < options.tol;
            if (period_two && std::abs(h[n] - h[n - 1]) >= options.tol) {
                std::ostringstream os;
                os.precision(17);
                os << "fixed-point iteration cycles between tau = " << h[n - 1] << " and tau = " << h[n];
                throw Error(ErrorKind::NonConvergence, os.str());
            }
        }
        tau = next;
    }

    std::ostringstream os;
    os.precision(17);
    os << "no fixed point within " << options.max_iter << " iterations; tau history:";
    for (double t : result.history) os << ' ' << t;
    throw Error(ErrorKind::NonConvergence, os.str());
}

const char* to_string(BangBangStructure structure) {
    switch (structure) {
        case BangBangStructure::ConstantMax: return "constant u_max";
        case BangBangStructure::MaxThenMin: return "single switch, u_max then u_min";
        case BangBangStructure::Unclassified: return "unclassified";
    }
    return "?";
}

ScalarRegimeReport scalar_case_analysis(double a, double e1, double e2, double e3, double e4, double b, double u_min,
                                        double u_max, double tau) {
    if (!(u_min > 0.0) || !(u_min <= u_max))
        throw Error(ErrorKind::Validation, "scalar analysis needs 0 < u_min <= u_max");
    if (!(tau > 0.0)) throw Error(ErrorKind::Validation, "scalar analysis needs a positive anchoring time");

    ScalarRegimeReport report;
    report.label = "unclassified";
    if (!(a > 0.0) || b == 0.0) return report;

    const double c = e1 + e2 + e3 * a;
    const double e = e3 * b + e4;
    const double growth = std::exp(a * tau) - 1.0;
    const double n_at_zero = b * c / a * growth + e;

    if ((c > 0.0 && e > 0.0) || (c < 0.0 && e < 0.0)) {
        report.label = "i";
        report.structure = BangBangStructure::ConstantMax;
    } else if (e < 0.0 && c * growth * u_min + e * u_max > 0.0) {
        report.label = "ii";
        report.structure = BangBangStructure::MaxThenMin;
    } else if (c < 0.0 && e > 0.0 && n_at_zero < 0.0) {
        report.label = "ii-mirrored";
        report.structure = BangBangStructure::MaxThenMin;
    } else {
        return report;
    }

    double x_tau = 0.0, u_tau = u_max;
    if (report.structure == BangBangStructure::MaxThenMin) {
        const double arg = 1.0 - a * e / (b * c);
        if (arg > 1.0) {
            const double t0 = tau - std::log(arg) / a;
            if (t0 > 0.0 && t0 < tau) report.t0 = t0;
        }
        const double t0 = report.t0.value_or(tau);
        const double x_switch = b * u_max * (std::exp(a * t0) - 1.0) / a;
        x_tau = x_switch * std::exp(a * (tau - t0)) + b * u_min * (std::exp(a * (tau - t0)) - 1.0) / a;
        u_tau = report.t0 ? u_min : u_max;
    } else {
        x_tau = b * u_max * growth / a;
    }
    report.predicted_g = c * x_tau + e * u_tau;
    report.crossing_consistent = report.predicted_g < 0.0;
    return report;
}

std::string switching_csv(const SwitchingRecord& record, const ControlPolicy& policy) {
    const Eigen::Index k = record.S.cols();
    std::string out = "t";
    for (Eigen::Index i = 0; i < k; ++i) out += ",S_" + std::to_string(i + 1);
    for (Eigen::Index i = 0; i < k; ++i) out += ",u_" + std::to_string(i + 1);
    out += '\n';
    for (std::size_t j = 0; j < record.times.size(); ++j) {
        const double t = record.times[j];
        std::vector<double> row{t};
        for (Eigen::Index i = 0; i < k; ++i) row.push_back(record.S(static_cast<Eigen::Index>(j), i));
        const VectorXd u = policy_eval(policy, t);
        for (Eigen::Index i = 0; i < k; ++i) row.push_back(u[i]);
        out += csv_row(row);
    }
    return out;
}

}  // namespace utoc
