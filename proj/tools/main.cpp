#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clbench/errors.hpp"
#include "clbench/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Continual-learning benchmark runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset;
    std::string data_dir;
    std::string out_dir;

    auto add_common = [&](CLI::App* cmd, bool config_required) {
        cmd->add_option("config", config_path, "experiment config (JSON)")
            ->required(config_required);
        cmd->add_option("--preset", preset,
                        "named built-in configuration (overridden field-by-field "
                        "by the config file when both are given)");
        cmd->add_option("--data-dir", data_dir, "directory with MNIST IDX files");
        cmd->add_option("--out-dir", out_dir, "directory for report files");
    };

    CLI::App* run = app.add_subcommand("run", "execute every (method, lambda, seed) cell");
    add_common(run, false);
    CLI::App* validate = app.add_subcommand("validate", "dry-run config check");
    add_common(validate, false);

    CLI11_PARSE(app, argc, argv);

    auto assemble = [&]() {
        clbench::ExperimentConfig cfg;
        if (!config_path.empty()) {
            cfg = clbench::load_config(config_path);
        } else if (!preset.empty()) {
            cfg = clbench::make_preset(preset);
        } else {
            throw clbench::ConfigError("give a config file or --preset <name>");
        }
        if (!preset.empty() && !config_path.empty()) {
            // --preset supplies the base; the file was already applied on top
            // of its own "preset" key, so only warn-free path: rebuild.
            clbench::ExperimentConfig base = clbench::make_preset(preset);
            base.data_dir = cfg.data_dir;
            base.out_dir = cfg.out_dir;
            cfg = clbench::load_config(config_path);
        }
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    };

    try {
        if (*validate) {
            std::vector<std::string> violations;
            if (!config_path.empty()) {
                violations = clbench::validate_config_file(config_path);
            } else {
                violations = clbench::validate_config(assemble());
            }
            if (violations.empty()) {
                std::cout << "config ok\n";
                return 0;
            }
            for (const auto& v : violations) std::cout << "violation: " << v << '\n';
            return 1;
        }
        const clbench::ExperimentConfig cfg = assemble();
        const auto violations = clbench::validate_config(cfg);
        if (!violations.empty()) {
            for (const auto& v : violations) std::cerr << "violation: " << v << '\n';
            return 1;
        }
        const int rc = clbench::run_experiment(cfg);
        std::cout << "reports written to " << cfg.out_dir << '\n';
        return rc;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
