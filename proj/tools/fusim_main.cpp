// fusim: partition, train, unlearn and evaluate federated experiments from a config file.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusim/app/config.hpp"
#include "fusim/app/experiment.hpp"
#include "fusim/error.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Options {
    std::vector<std::string> configs;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> routes;
};

fusim::app::ExperimentConfig load(const std::string& path, const Options& opt, const std::string& route) {
    auto cfg = fusim::app::load_config(path);
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.federation.seed = *opt.seed;
        cfg.unlearn.cccu.seed = *opt.seed;
    }
    if (!route.empty()) {
        const auto r = fusim::app::parse_route(route);
        if (!r) throw fusim::ConfigError(0, "--route must be one of none, delete, relabel, zeroing, fedcccu; got " + route);
        cfg.unlearn.route = *r;
    }
    return cfg;
}

void add_common(CLI::App* cmd, Options& opt, bool many_configs) {
    if (many_configs) {
        cmd->add_option("--config", opt.configs, "Experiment config (repeatable)")->required();
        cmd->add_option("--route", opt.routes, "Route override, repeatable with a single config");
    } else {
        cmd->add_option("--config", opt.configs, "Experiment config")->required()->expected(1);
        cmd->add_option("--route", opt.routes, "Route override: none, delete, relabel, zeroing, fedcccu")
            ->expected(1);
    }
    cmd->add_option("--out", opt.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", opt.seed, "Seed override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic federated learning and unlearning simulator"};
    app.require_subcommand(1);
    Options opt;

    struct Stage {
        const char* name;
        const char* help;
        void (*fn)(const fusim::app::ExperimentConfig&, const std::filesystem::path&);
    };
    const Stage stages[] = {
        {"partition", "Build the client partition plan", fusim::app::stage_partition},
        {"train", "Federated training from the partition plan", fusim::app::stage_train},
        {"unlearn", "Apply the configured unlearning route to the trained model", fusim::app::stage_unlearn},
        {"evaluate", "Per-client per-class reports before and after unlearning", fusim::app::stage_evaluate},
        {"run", "All stages in order", fusim::app::run_experiment},
    };
    std::vector<std::pair<CLI::App*, const Stage*>> commands;
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, opt, false);
        commands.emplace_back(cmd, &s);
    }
    auto* compare = app.add_subcommand("compare", "Train once and tabulate several routes side by side");
    add_common(compare, opt, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    std::vector<fusim::app::ExperimentConfig> configs;
    try {
        if (compare->parsed()) {
            if (opt.routes.empty()) {
                for (const auto& path : opt.configs) configs.push_back(load(path, opt, ""));
            } else {
                if (opt.configs.size() != 1) throw fusim::ConfigError(0, "--route with compare takes a single --config");
                for (const auto& r : opt.routes) configs.push_back(load(opt.configs.front(), opt, r));
            }
        } else {
            configs.push_back(load(opt.configs.front(), opt, opt.routes.empty() ? "" : opt.routes.front()));
        }
    } catch (const fusim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }

    try {
        if (compare->parsed()) {
            fusim::app::compare_routes(configs, opt.out);
            std::cout << "wrote " << (std::filesystem::path(opt.out) / "compare").string() << "\n";
            return kOk;
        }
        for (const auto& [cmd, stage] : commands) {
            if (!cmd->parsed()) continue;
            stage->fn(configs.front(), opt.out);
            std::cout << stage->name << ": done (" << opt.out << ")\n";
        }
    } catch (const fusim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
