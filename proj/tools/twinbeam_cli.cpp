#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twinbeam/cli.hpp"

using namespace twinbeam;

int main(int argc, char** argv)
{
    CLI::App app{"Twin-beam parametric down-conversion simulator and "
                 "spatial correlation analysis"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers, shots;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI configuration file")
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--workers", workers, "worker threads")
            ->check(CLI::PositiveNumber);
        sub->add_option("--shots", shots, "shots per gain")
            ->check(CLI::PositiveNumber);
    };

    std::vector<std::string> inputs;
    auto* simulate = app.add_subcommand("simulate", "write one frame file per "
                                                    "(gain, shot)");
    add_common(simulate);

    auto* analyze = app.add_subcommand("analyze", "per-shot correlation report");
    add_common(analyze);
    analyze->add_option("frames", inputs, ".twb frame files or two-block CSV")
        ->required();

    std::string mode;
    auto* sweep = app.add_subcommand("sweep", "gain, binning or misalignment "
                                              "sweep");
    add_common(sweep);
    sweep->add_option("mode", mode, "gain | binning | misalignment")
        ->required()
        ->check(CLI::IsMember({"gain", "binning", "misalignment"}));
    sweep->add_option("frames", inputs,
                      "frame files to sweep; simulated from the config if "
                      "omitted");

    auto* selftest = app.add_subcommand("selftest", "calibration and oracle "
                                                    "battery");

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        int rc = app.exit(e);
        return rc == 0 ? cli::ok : cli::config_error;
    }

    try
    {
        if (selftest->parsed())
            return cli::cmd_selftest(std::cout);

        RunConfig cfg = default_config();
        if (!config_path.empty())
            cfg = load_config(config_path);
        apply_env_overrides(cfg, process_environment());
        if (out_dir)
            cfg.io.out_dir = *out_dir;
        if (seed)
            cfg.io.seed = *seed;
        if (workers)
            cfg.io.workers = *workers;
        if (shots)
            cfg.io.shots = *shots;
        resolve(cfg);

        if (simulate->parsed())
            return cli::cmd_simulate(cfg, std::cout);
        if (analyze->parsed())
            return cli::cmd_analyze(cfg, inputs, std::cout);
        auto m = mode == "gain"      ? cli::SweepMode::gain
                 : mode == "binning" ? cli::SweepMode::binning
                                     : cli::SweepMode::misalignment;
        return cli::cmd_sweep(cfg, m, inputs, std::cout);
    }
    catch (ConfigError const& e)
    {
        std::cerr << "config error: " << e.what() << "\n";
        return cli::config_error;
    }
    catch (NumericalDivergence const& e)
    {
        std::cerr << "numerical divergence: " << e.what() << "\n";
        return cli::divergence;
    }
    catch (std::exception const& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return cli::other_error;
    }
}
