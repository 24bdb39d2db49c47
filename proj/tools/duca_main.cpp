// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// duca run|grid|compare [--config FILE] [overrides...]
//
// Exit codes: 0 success, 2 bad configuration or arguments, 3 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duca/errors.h"
#include "duca/harness.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
    std::string config;
    std::string policy;
    std::optional<std::size_t> cycle;
    std::optional<double> ratio;
    std::string strategy;
    std::string seeds;
    std::string out;
    std::optional<std::size_t> steps;
    bool full_attention = false;
    std::vector<std::size_t> cycles;
    std::vector<double> ratios;
};

// "0,1,4-7" -> {0, 1, 4, 5, 6, 7}
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    auto parse_u64 = [&](const std::string& s) -> std::uint64_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
            throw duca::ConfigError("bad seed '" + s + "' in --seeds " + text);
        }
        return std::stoull(s);
    };
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            seeds.push_back(parse_u64(item));
            continue;
        }
        const std::uint64_t lo = parse_u64(item.substr(0, dash));
        const std::uint64_t hi = parse_u64(item.substr(dash + 1));
        if (hi < lo) throw duca::ConfigError("empty seed range '" + item + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    }
    if (seeds.empty()) throw duca::ConfigError("--seeds must list at least one seed");
    return seeds;
}

duca::ExperimentConfig resolve_config(const Overrides& o) {
    duca::ExperimentConfig cfg = o.config.empty() ? duca::ExperimentConfig{} : duca::load_config(o.config);
    if (!o.policy.empty()) cfg.policy = duca::parse_policy(o.policy);
    if (o.cycle) cfg.cycle = *o.cycle;
    if (o.ratio) cfg.ratio = *o.ratio;
    if (!o.strategy.empty()) cfg.strategy = o.strategy;
    if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
    if (!o.out.empty()) cfg.output = o.out;
    if (o.steps) cfg.sampler.steps = *o.steps;
    if (o.full_attention) cfg.efficient_attention = false;
    if (!o.cycles.empty()) cfg.grid_cycles = o.cycles;
    if (!o.ratios.empty()) cfg.grid_ratios = o.ratios;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON experiment config");
    cmd->add_option("--cycle,-N", o.cycle, "Cache cycle length");
    cmd->add_option("--ratio,-R", o.ratio, "Fraction of tokens cached in conservative steps");
    cmd->add_option("--strategy", o.strategy, "Token selection strategy");
    cmd->add_option("--seeds", o.seeds, "Seed list, e.g. 0,1,4-7");
    cmd->add_option("--steps", o.steps, "Sampling steps");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_flag("--full-attention", o.full_attention, "Materialize attention maps (enables attn-* strategies)");
}

void print_paths(const std::vector<std::filesystem::path>& paths) {
    for (const auto& p : paths) std::cout << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual feature caching experiments on a toy diffusion transformer"};
    app.require_subcommand(1);

    Overrides run_o, compare_o, grid_o;
    CLI::App* run = app.add_subcommand("run", "Run one caching policy against the uncached reference");
    add_common(run, run_o);
    run->add_option("--policy", run_o.policy, "none | conservative | aggressive | duca");

    CLI::App* compare = app.add_subcommand("compare", "Run all four policies under one config");
    add_common(compare, compare_o);

    CLI::App* grid = app.add_subcommand("grid", "Sweep cycle length and cache ratio under duca");
    add_common(grid, grid_o);
    grid->add_option("--cycles", grid_o.cycles, "Cycle lengths to sweep")->delimiter(',');
    grid->add_option("--ratios", grid_o.ratios, "Cache ratios to sweep")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (run->parsed()) {
            const auto cfg = resolve_config(run_o);
            print_paths(duca::write_report(duca::run_experiment(cfg), cfg.output));
        } else if (compare->parsed()) {
            const auto cfg = resolve_config(compare_o);
            print_paths(duca::write_report(duca::run_comparison(cfg), cfg.output));
        } else {
            const auto cfg = resolve_config(grid_o);
            print_paths(duca::write_grid_report(duca::ablation_grid(cfg, cfg.grid_cycles, cfg.grid_ratios),
                                                cfg.output));
        }
    } catch (const duca::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
