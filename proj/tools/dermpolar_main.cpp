// Batch front end: augment | structures | diagnose | gradcheck.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dermpolar/config.hpp"
#include "dermpolar/errors.hpp"
#include "dermpolar/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string input_dir = ".";
    std::string output_dir;
    std::string cases;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool output_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_input) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    if (needs_input) {
        cmd->add_option("--input", args.input_dir, "input directory")->required();
    }
    cmd->add_option("--output", args.output_dir, "output directory")
        ->each([&args](const std::string&) { args.output_set = true; });
    cmd->add_option("--seed", args.seed, "seed for every random draw")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--cases", args.cases, "comma-separated case ids to process");
}

/// CLI flags override their config-file counterparts.
dermpolar::PipelineConfig resolve_config(const CommonArgs& args, bool needs_output) {
    dermpolar::PipelineConfig config;
    if (!args.config_path.empty()) {
        config = dermpolar::PipelineConfig::from_file(args.config_path);
    }
    if (args.seed_set) {
        config.seed = args.seed;
    }
    if (args.output_set) {
        config.output_dir = args.output_dir;
    }
    if (needs_output && config.output_dir.empty()) {
        throw dermpolar::ConfigError("an output directory is required (--output or config)");
    }
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dermoscopy analysis pipeline"};
    app.require_subcommand(1);

    CommonArgs augment_args, structures_args, diagnose_args, gradcheck_args;
    CLI::App* augment = app.add_subcommand("augment", "build the 24 views per case");
    add_common(augment, augment_args, true);
    CLI::App* structures =
        app.add_subcommand("structures", "score the eight structure patterns per view");
    add_common(structures, structures_args, true);
    CLI::App* diagnose =
        app.add_subcommand("diagnose", "per-view diagnosis and cross-view fusion");
    add_common(diagnose, diagnose_args, true);
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every block");
    add_common(gradcheck, gradcheck_args, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (augment->parsed()) {
            const auto config = resolve_config(augment_args, true);
            const auto report = dermpolar::run_augment(
                config, augment_args.input_dir, config.output_dir, augment_args.cases,
                std::cerr);
            std::cout << "augment: " << report.succeeded << " succeeded, " << report.failed
                      << " failed\n";
            return report.exit_code();
        }
        if (structures->parsed()) {
            const auto config = resolve_config(structures_args, true);
            const auto report = dermpolar::run_structures(
                config, structures_args.input_dir, config.output_dir, structures_args.cases,
                std::cerr);
            std::cout << "structures: " << report.succeeded << " succeeded, "
                      << report.failed << " failed\n";
            return report.exit_code();
        }
        if (diagnose->parsed()) {
            const auto config = resolve_config(diagnose_args, true);
            const auto report = dermpolar::run_diagnose(
                config, diagnose_args.input_dir, config.output_dir, diagnose_args.cases,
                std::cerr);
            std::cout << "diagnose: " << report.succeeded << " succeeded, " << report.failed
                      << " failed\n";
            return report.exit_code();
        }
        const auto config = resolve_config(gradcheck_args, false);
        return dermpolar::run_gradcheck(config, std::cout);
    } catch (const dermpolar::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
