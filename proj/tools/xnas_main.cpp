#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xnas/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"crossbar-aware robust architecture search"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_dir;
    std::uint64_t seed_override = 0;
    bool have_seed = false;

    auto add_common = [&](CLI::App* cmd, bool needs_checkpoint) {
        cmd->add_option("--config", config_path, "run configuration file (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        if (needs_checkpoint)
            cmd->add_option("--checkpoint", checkpoint_path, "checkpoint from a search run")
                ->required()
                ->check(CLI::ExistingFile);
        cmd->add_option("--out", out_dir, "output directory (default: config output_dir)");
        cmd->add_option_function<std::uint64_t>(
            "--seed",
            [&](std::uint64_t s) {
                seed_override = s;
                have_seed = true;
            },
            "override the config seed");
    };

    CLI::App* search = app.add_subcommand("search", "two-phase supernet search");
    add_common(search, false);
    CLI::App* finetune = app.add_subcommand("finetune", "fine-tune a derived subnet");
    add_common(finetune, true);
    CLI::App* eval = app.add_subcommand("eval", "clean and PGD-n accuracy on the test split");
    add_common(eval, true);
    CLI::App* sweep = app.add_subcommand("sweep", "device-variation sweep at fixed weights");
    add_common(sweep, true);

    CLI11_PARSE(app, argc, argv);

    try {
        xnas::RunConfig cfg = xnas::load_run_config(config_path);
        if (have_seed) {
            cfg.seed = seed_override;
            cfg.train.seed = seed_override;
        }
        const std::string out = out_dir.empty() ? cfg.output_dir : out_dir;
        if (search->parsed()) return xnas::cmd_search(cfg, out);
        if (finetune->parsed()) return xnas::cmd_finetune(cfg, checkpoint_path, out);
        if (eval->parsed()) return xnas::cmd_eval(cfg, checkpoint_path, out);
        if (sweep->parsed()) return xnas::cmd_sweep(cfg, checkpoint_path, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
