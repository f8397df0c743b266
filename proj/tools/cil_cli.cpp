// cil: class-incremental multi-label experiments from the command line.
//
//   cil gen-data  --config cfg.json --out data/ [--force]
//   cil run       --config cfg.json --out results/ [--seed N]
//   cil compare   --config cfg.json --out results/
//   cil gradcheck
//
// Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.
// Verbosity: CIL_LOG_LEVEL=0|1|2.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cil/app.hpp"
#include "cil/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Class-incremental multi-label learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool force = false;
    std::string corrupt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config");
        sub->add_option("--seed", seed, "Seed (overrides the config)");
        sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    };
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic train/eval dataset");
    add_common(gen);
    gen->add_flag("--force", force, "Overwrite existing dataset files");
    auto* run = app.add_subcommand("run", "Run one strategy through every phase");
    add_common(run);
    auto* compare = app.add_subcommand("compare", "Run several strategies from a shared base learner");
    add_common(compare);
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
    gradcheck->add_option("--corrupt", corrupt, "Skew one item's analytic gradient (harness test)")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? cil::exit_ok : cil::exit_validation;
    }

    if (gradcheck->parsed()) return cil::cmd_gradcheck(std::cout, corrupt);

    cil::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = cil::load_config(config_path);
        if (seed) cil::apply_seed(cfg, *seed);
        if (!out_dir.empty()) cfg.out = out_dir;
    } catch (const std::exception& e) {
        std::cerr << "cil: " << e.what() << "\n";
        return cil::exit_validation;
    }

    if (gen->parsed()) return cil::cmd_gen_data(cfg, force, std::cerr);
    if (run->parsed()) return cil::cmd_run(cfg, std::cerr);
    return cil::cmd_compare(cfg, std::cerr);
}
