#include "utoc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Time-optimal and stochastic optimal control toolkit"};
    std::string config;
    std::string out_dir = "out";
    int threads = 0;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config, "JSON run configuration")->required();
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads (0 = hardware count)")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "Override numeric.seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    utoc::CliOptions options;
    options.out_dir = out_dir;
    options.threads = threads;
    options.seed = seed;
    return utoc::run_cli(config, options, std::cout, std::cerr);
}
