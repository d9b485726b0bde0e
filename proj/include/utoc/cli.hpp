#ifndef UTOC_CLI_HPP
#define UTOC_CLI_HPP

#include "utoc/config.hpp"
#include "utoc/error.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>

namespace utoc {

struct CliOptions {
    std::filesystem::path out_dir = "out";
    /// 0 means hardware concurrency; never changes artifact bytes.
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

/// 1 I/O, 2 validation or domain, 3 non-convergence family, 4 assumption violation or singular arc.
int exit_code(ErrorKind kind);

/// Executes one command and writes its artifacts (always including summary.json). Throws Error.
void run(const RunConfig& config, const CliOptions& options, std::ostream& out);

/// Loads the config, runs it and maps failures to exit codes with one JSON diagnostic line on `err`.
int run_cli(const std::filesystem::path& config_path, const CliOptions& options, std::ostream& out, std::ostream& err);

}  // namespace utoc

#endif  // UTOC_CLI_HPP
