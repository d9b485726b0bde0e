#include "utoc/config.hpp"

#include "utoc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace utoc {

using nlohmann::json;

const std::vector<std::string>& known_commands() {
    static const std::vector<std::string> commands{"simulate",  "mean",      "portfolio",
                                                   "bangbang", "check-smp", "verify-variational"};
    return commands;
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
    throw Error(ErrorKind::Validation, path + ": " + message, path);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!obj.is_object() || !obj.contains(key)) fail(full, "missing required field");
    return obj.at(key);
}

double number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

int positive_int(const json& j, const std::string& path) {
    if (!j.is_number_integer() || j.get<long long>() <= 0 || j.get<long long>() > 2147483647LL)
        fail(path, "expected a positive integer");
    return j.get<int>();
}

double positive(const json& j, const std::string& path) {
    const double v = number(j, path);
    if (!(v > 0.0)) fail(path, "must be positive");
    return v;
}

VectorXd vector(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

RowVectorXd row(const json& j, const std::string& path) { return vector(j, path).transpose(); }

MatrixXd matrix(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of rows");
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const std::string rp = path + "[" + std::to_string(r) + "]";
        if (!j[r].is_array() || j[r].size() != cols) fail(rp, "rows must be arrays of equal length");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], rp + "[" + std::to_string(c) + "]");
    }
    return m;
}

std::vector<MatrixXd> matrix_list(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of matrices");
    std::vector<MatrixXd> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(matrix(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

void reject_unknown(const json& obj, const std::vector<std::string>& allowed, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            fail(path.empty() ? key : path + "." + key, "unknown field");
    }
}

ProblemSpec parse_linear(const json& j, const std::string& path) {
    reject_unknown(j, {"dynamics", "target", "cost", "controlSet", "T", "epsRegularize"}, path);
    ProblemSpec spec;
    const std::string dp = path + ".dynamics";
    const json& dj = require(j, "dynamics", path);
    reject_unknown(dj, {"A", "B", "C", "D", "x0"}, dp);
    auto& dyn = spec.dynamics;
    dyn.A = matrix(require(dj, "A", dp), dp + ".A");
    dyn.B = matrix(require(dj, "B", dp), dp + ".B");
    dyn.C = dj.contains("C") ? matrix_list(dj.at("C"), dp + ".C") : std::vector<MatrixXd>{};
    dyn.D = dj.contains("D") ? matrix_list(dj.at("D"), dp + ".D") : std::vector<MatrixXd>{};
    dyn.x0 = vector(require(dj, "x0", dp), dp + ".x0");
    dyn.m = static_cast<int>(dyn.A.rows());
    dyn.k = static_cast<int>(dyn.B.cols());
    // a problem without noise channels is encoded as one zero channel
    dyn.d = std::max(1, static_cast<int>(std::max(dyn.C.size(), dyn.D.size())));
    if (dyn.C.empty() && dyn.d > 0) dyn.C.assign(static_cast<std::size_t>(dyn.d), MatrixXd::Zero(dyn.m, dyn.m));
    if (dyn.D.empty() && dyn.d > 0) dyn.D.assign(static_cast<std::size_t>(dyn.d), MatrixXd::Zero(dyn.m, dyn.k));

    const std::string tp = path + ".target";
    const json& tj = require(j, "target", path);
    reject_unknown(tj, {"E1", "E2", "E3", "E4", "y0", "g"}, tp);
    auto& tg = spec.target;
    auto opt_row = [&](const char* key, int len) {
        return tj.contains(key) ? row(tj.at(key), tp + "." + key) : RowVectorXd(RowVectorXd::Zero(len));
    };
    tg.E1 = opt_row("E1", dyn.m);
    tg.E2 = opt_row("E2", dyn.m);
    tg.E3 = opt_row("E3", dyn.m);
    tg.E4 = opt_row("E4", dyn.k);
    tg.y0 = number(require(tj, "y0", tp), tp + ".y0");
    if (tj.contains("g")) {
        const json& gj = tj.at("g");
        const std::string gp = tp + ".g";
        reject_unknown(gj, {"onMeanX", "onX", "onU"}, gp);
        TargetDiffusion g;
        g.on_mean_x = gj.contains("onMeanX") ? matrix(gj.at("onMeanX"), gp + ".onMeanX") : MatrixXd::Zero(dyn.d, dyn.m);
        g.on_x = gj.contains("onX") ? matrix(gj.at("onX"), gp + ".onX") : MatrixXd::Zero(dyn.d, dyn.m);
        g.on_u = gj.contains("onU") ? matrix(gj.at("onU"), gp + ".onU") : MatrixXd::Zero(dyn.d, dyn.k);
        tg.g = g;
    }

    spec.cost = CostSpec::time_optimal(dyn.m, dyn.k);
    if (j.contains("cost")) {
        const json& cj = j.at("cost");
        const std::string cp = path + ".cost";
        reject_unknown(cj, {"kappa", "cLin", "Lambda", "psiLin", "psiQuad"}, cp);
        if (cj.contains("kappa")) spec.cost.kappa = number(cj.at("kappa"), cp + ".kappa");
        if (cj.contains("cLin")) spec.cost.c_lin = vector(cj.at("cLin"), cp + ".cLin");
        if (cj.contains("Lambda")) spec.cost.Lambda = matrix(cj.at("Lambda"), cp + ".Lambda");
        if (cj.contains("psiLin")) spec.cost.psi_lin = vector(cj.at("psiLin"), cp + ".psiLin");
        if (cj.contains("psiQuad")) spec.cost.psi_quad = matrix(cj.at("psiQuad"), cp + ".psiQuad");
    }

    const std::string sp = path + ".controlSet";
    const json& sj = require(j, "controlSet", path);
    reject_unknown(sj, {"lower", "upper"}, sp);
    spec.control_set.lower = vector(require(sj, "lower", sp), sp + ".lower");
    spec.control_set.upper = vector(require(sj, "upper", sp), sp + ".upper");
    spec.T = number(require(j, "T", path), path + ".T");
    if (j.contains("epsRegularize")) spec.eps_regularize = number(j.at("epsRegularize"), path + ".epsRegularize");

    const ValidationReport report = validate(spec);
    if (!report.ok()) {
        const Violation& v = report.violations.front();
        throw Error(ErrorKind::Validation, "problem." + v.to_string(), "problem." + v.path);
    }
    return spec;
}

PortfolioParams parse_portfolio(const json& j, const std::string& path) {
    reject_unknown(j, {"r", "mu", "sigma", "alphaStar", "x0", "beta", "T"}, path);
    PortfolioParams p;
    p.r = number(require(j, "r", path), path + ".r");
    p.mu = number(require(j, "mu", path), path + ".mu");
    if (j.contains("sigma")) p.sigma = number(j.at("sigma"), path + ".sigma");
    p.alpha_star = number(require(j, "alphaStar", path), path + ".alphaStar");
    p.x0 = number(require(j, "x0", path), path + ".x0");
    p.beta = number(require(j, "beta", path), path + ".beta");
    if (j.contains("T")) p.T = number(j.at("T"), path + ".T");
    try {
        validate(p);
    } catch (const Error& e) {
        throw Error(ErrorKind::Validation, "problem." + std::string(e.what()), "problem." + e.path());
    }
    return p;
}

ComponentForm parse_form(const json& j, const std::string& path) {
    if (j.is_number()) return ComponentForm::constant(j.get<double>());
    if (!j.is_object()) fail(path, "expected a number or a form object");
    if (j.contains("constant")) {
        reject_unknown(j, {"constant"}, path);
        return ComponentForm::constant(number(j.at("constant"), path + ".constant"));
    }
    if (j.contains("scaledExp")) {
        reject_unknown(j, {"scaledExp", "anchor"}, path);
        const VectorXd g = vector(j.at("scaledExp"), path + ".scaledExp");
        if (g.size() != 3) fail(path + ".scaledExp", "expected [g0, g1, g2]");
        const double anchor = j.contains("anchor") ? number(j.at("anchor"), path + ".anchor") : 0.0;
        return ComponentForm::scaled_exp(g[0], g[1], g[2], anchor);
    }
    if (j.contains("offset") || j.contains("terms")) {
        reject_unknown(j, {"offset", "terms"}, path);
        ComponentForm form;
        if (j.contains("offset")) form.offset = number(j.at("offset"), path + ".offset");
        if (j.contains("terms")) {
            const json& terms = j.at("terms");
            if (!terms.is_array()) fail(path + ".terms", "expected an array");
            for (std::size_t i = 0; i < terms.size(); ++i) {
                const std::string ip = path + ".terms[" + std::to_string(i) + "]";
                reject_unknown(terms[i], {"scale", "rate", "anchor"}, ip);
                ExpTerm term;
                term.scale = number(require(terms[i], "scale", ip), ip + ".scale");
                term.rate = number(require(terms[i], "rate", ip), ip + ".rate");
                if (terms[i].contains("anchor")) term.anchor = number(terms[i].at("anchor"), ip + ".anchor");
                form.terms.push_back(term);
            }
        }
        return form;
    }
    fail(path, "expected one of constant, scaledExp, offset/terms");
}

ControlPolicy parse_policy(const json& j, const std::string& path, double horizon) {
    if (!j.is_object()) fail(path, "expected an object");
    if (j.contains("constant")) {
        reject_unknown(j, {"constant"}, path);
        return ControlPolicy::constant(vector(j.at("constant"), path + ".constant"), horizon);
    }
    reject_unknown(j, {"segments"}, path);
    const json& segs = require(j, "segments", path);
    if (!segs.is_array() || segs.empty()) fail(path + ".segments", "expected a non-empty array");
    std::vector<PolicySegment> out;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const std::string sp = path + ".segments[" + std::to_string(i) + "]";
        reject_unknown(segs[i], {"tStart", "tEnd", "components"}, sp);
        PolicySegment seg;
        seg.t_start = number(require(segs[i], "tStart", sp), sp + ".tStart");
        seg.t_end = number(require(segs[i], "tEnd", sp), sp + ".tEnd");
        const json& comps = require(segs[i], "components", sp);
        if (!comps.is_array() || comps.empty()) fail(sp + ".components", "expected a non-empty array");
        for (std::size_t c = 0; c < comps.size(); ++c)
            seg.components.push_back(parse_form(comps[c], sp + ".components[" + std::to_string(c) + "]"));
        out.push_back(std::move(seg));
    }
    try {
        return ControlPolicy(std::move(out));
    } catch (const Error& e) {
        throw Error(ErrorKind::Validation, path + ": " + e.what(), path);
    }
}

NumericOptions parse_numeric(const json& j) {
    const std::string path = "numeric";
    reject_unknown(j, {"nPaths", "nSteps", "seed", "tol", "maxIter", "damping", "rhoList", "tauGuess", "tGrid",
                       "uSamples", "dt", "monteCarlo"},
                   path);
    NumericOptions n;
    if (j.contains("nPaths")) n.n_paths = positive_int(j.at("nPaths"), path + ".nPaths");
    if (j.contains("nSteps")) n.n_steps = positive_int(j.at("nSteps"), path + ".nSteps");
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) fail(path + ".seed", "expected a nonnegative integer");
        n.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("tol")) n.tol = positive(j.at("tol"), path + ".tol");
    if (j.contains("maxIter")) n.max_iter = positive_int(j.at("maxIter"), path + ".maxIter");
    if (j.contains("damping")) {
        n.damping = number(j.at("damping"), path + ".damping");
        if (!(n.damping >= 0.0 && n.damping < 1.0)) fail(path + ".damping", "must lie in [0, 1)");
    }
    if (j.contains("rhoList")) {
        const VectorXd rho = vector(j.at("rhoList"), path + ".rhoList");
        n.rho_list.assign(rho.data(), rho.data() + rho.size());
        if (n.rho_list.empty()) fail(path + ".rhoList", "must not be empty");
        for (std::size_t i = 0; i < n.rho_list.size(); ++i) {
            if (!(n.rho_list[i] > 0.0)) fail(path + ".rhoList", "entries must be positive");
            if (i > 0 && !(n.rho_list[i] < n.rho_list[i - 1])) fail(path + ".rhoList", "must be strictly decreasing");
        }
    }
    if (j.contains("tauGuess")) n.tau_guess = positive(j.at("tauGuess"), path + ".tauGuess");
    if (j.contains("tGrid")) n.t_grid = positive_int(j.at("tGrid"), path + ".tGrid");
    if (j.contains("uSamples")) {
        n.u_samples = positive_int(j.at("uSamples"), path + ".uSamples");
        if (n.u_samples < 2) fail(path + ".uSamples", "must be at least 2");
    }
    if (j.contains("dt")) n.dt = positive(j.at("dt"), path + ".dt");
    if (j.contains("monteCarlo")) {
        if (!j.at("monteCarlo").is_boolean()) fail(path + ".monteCarlo", "expected true or false");
        n.monte_carlo = j.at("monteCarlo").get<bool>();
    }
    if (n.n_paths < 2) fail(path + ".nPaths", "must be at least 2");
    return n;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Validation, std::string("config is not valid JSON: ") + e.what(), "");
    }
    if (!j.is_object()) fail("(root)", "expected a JSON object");
    reject_unknown(j, {"command", "problem", "policy", "direction", "numeric"}, "");

    RunConfig cfg;
    const json& cmd = require(j, "command", "");
    if (!cmd.is_string()) fail("command", "expected a string");
    cfg.command = cmd.get<std::string>();
    const auto& known = known_commands();
    if (std::find(known.begin(), known.end(), cfg.command) == known.end()) fail("command", "unknown command '" + cfg.command + "'");

    const json& pj = require(j, "problem", "");
    if (!pj.is_object()) fail("problem", "expected an object");
    double horizon = 0.0;
    if (pj.contains("portfolio")) {
        reject_unknown(pj, {"portfolio"}, "problem");
        const PortfolioParams p = parse_portfolio(pj.at("portfolio"), "problem.portfolio");
        cfg.problem = p;
        horizon = p.T;
    } else {
        ProblemSpec spec = parse_linear(pj, "problem");
        horizon = spec.T;
        cfg.problem = std::move(spec);
    }
    if (cfg.command == "portfolio" && !cfg.is_portfolio())
        fail("problem.portfolio", "missing required field for the portfolio command");

    if (j.contains("numeric")) cfg.numeric = parse_numeric(j.at("numeric"));
    const int k = cfg.is_portfolio() ? 1 : std::get<ProblemSpec>(cfg.problem).dynamics.k;
    auto check_policy = [&](const ControlPolicy& policy, const std::string& path) {
        const ValidationReport report = validate_policy(policy, horizon, k);
        if (!report.ok()) throw Error(ErrorKind::Validation, path + ": " + report.violations.front().to_string(), path);
    };
    if (j.contains("policy")) {
        cfg.policy = parse_policy(j.at("policy"), "policy", horizon);
        check_policy(*cfg.policy, "policy");
    }
    if (j.contains("direction")) {
        cfg.direction = parse_policy(j.at("direction"), "direction", horizon);
        check_policy(*cfg.direction, "direction");
    }

    const bool linear_needs_policy = cfg.command == "simulate" || cfg.command == "mean" ||
                                     cfg.command == "check-smp" || cfg.command == "verify-variational";
    if (linear_needs_policy && !cfg.is_portfolio() && !cfg.policy) fail("policy", "missing required field");
    if (cfg.command == "verify-variational" && !cfg.direction && !cfg.is_portfolio())
        fail("direction", "missing required field");
    if (cfg.command == "bangbang" && cfg.is_portfolio())
        fail("problem", "bangbang needs a linear time-optimal problem, not a portfolio block");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace utoc
