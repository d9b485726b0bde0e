#ifndef UTOC_CONFIG_HPP
#define UTOC_CONFIG_HPP

#include "utoc/portfolio.hpp"
#include "utoc/problem.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace utoc {

struct NumericOptions {
    int n_paths = 1000;
    int n_steps = 1000;
    std::uint64_t seed = 42;
    double tol = 1e-10;
    int max_iter = 100;
    double damping = 0.5;
    std::vector<double> rho_list{1e-2, 1e-3, 1e-4};
    std::optional<double> tau_guess;
    int t_grid = 2048;
    int u_samples = 101;
    /// Monte Carlo step for the portfolio validation.
    double dt = 1.0 / 256.0;
    /// Portfolio only: run the Monte Carlo validation when set.
    bool monte_carlo = false;
};

struct RunConfig {
    std::string command;
    std::variant<ProblemSpec, PortfolioParams> problem;
    std::optional<ControlPolicy> policy;
    std::optional<ControlPolicy> direction;
    NumericOptions numeric;

    bool is_portfolio() const { return std::holds_alternative<PortfolioParams>(problem); }
};

/// Parses and validates a JSON run configuration. Every failure is an Error(Validation)
/// whose path names the offending field (for example "problem.dynamics.A").
RunConfig parse_config(const std::string& text);

RunConfig load_config(const std::filesystem::path& path);

/// Commands accepted in the "command" field.
const std::vector<std::string>& known_commands();

}  // namespace utoc

#endif  // UTOC_CONFIG_HPP
