// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner behind the `duca` CLI. A run pairs every policy
// trajectory with an identically seeded uncached reference, then reports
// per-step caching error and FLOPs.
//
// Config document (JSON; every key optional, unknown keys rejected):
//
//   {
//     "model":   {"depth": 4, "hidden": 64, "heads": 4, "tokens": 64,
//                 "classes": 10, "mlp_ratio": 4.0, "max_timesteps": 1000,
//                 "seed": 0, "weights": "path/to/file.bin"},
//     "sampler": {"steps": 20, "beta_start": 1e-4, "beta_end": 0.02},
//     "policy": "duca",            // none | conservative | aggressive | duca
//     "cycle": 5,
//     "ratio": 0.9,
//     "skip_depth": 3,             // default depth - 1
//     "strategy": "random",
//     "efficient_attention": true,
//     "class_label": 0,
//     "seeds": [0],
//     "output": "out",
//     "grid": {"cycles": [3, 4, 5, 6, 7, 8], "ratios": [0.5, 0.7, 0.9]}
//   }
//
// When "model.weights" is set the model dimensions come from the file.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duca/cache_engine.h"
#include "duca/model.h"
#include "duca/sampler.h"

namespace duca {

inline constexpr std::string_view kCurvesHeader =
    "policy,seed,step,step_kind,error_l2,flops_step,flops_cum,computed_tokens";
inline constexpr std::string_view kGridHeader =
    "N,R,flops_speedup,terminal_error,terminal_error_std,flops_total";

struct SamplerConfig {
    std::size_t steps = 20;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct ExperimentConfig {
    ModelConfig model;
    std::uint64_t model_seed = 0;
    std::optional<std::filesystem::path> weights;
    SamplerConfig sampler;
    Policy policy = Policy::kDuca;
    std::size_t cycle = 5;
    double ratio = 0.9;
    std::optional<std::size_t> skip_depth;
    std::string strategy = "random";
    bool efficient_attention = true;
    std::size_t class_label = 0;
    std::vector<std::uint64_t> seeds = {0};
    std::filesystem::path output = "out";
    std::vector<std::size_t> grid_cycles = {3, 4, 5, 6, 7, 8};
    std::vector<double> grid_ratios = {0.5, 0.7, 0.9};

    // All violated constraints at once; empty when valid.
    std::vector<std::string> problems() const;
    // Throws ConfigError listing every problem.
    void validate() const;
};

// Parses a JSON document. Unknown keys, type errors and invalid values are
// all reported together in one ConfigError.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<StepKind> kinds;
    RunLog log;
    ErrorTrace error;
    std::uint64_t total_flops = 0;
    std::uint64_t reference_flops = 0;

    double terminal_error() const { return error.errors.back(); }
};

struct PolicyReport {
    Policy policy = Policy::kDuca;
    std::size_t cycle = 0;
    double ratio = 0.0;
    std::vector<SeedRun> runs;

    double mean_flops() const;
    double mean_reference_flops() const;
    // Uncached FLOPs over policy FLOPs.
    double flops_speedup() const;
    double mean_terminal_error() const;
    // Sample standard deviation; 0 with a single seed.
    double std_terminal_error() const;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<PolicyReport> policies;
};

struct GridCell {
    std::size_t cycle = 0;
    double ratio = 0.0;
    PolicyReport report;
};

struct GridReport {
    ExperimentConfig config;
    std::vector<GridCell> cells;
};

// Builds the model a config describes (seeded init or weight file).
DiTModel build_model(const ExperimentConfig& cfg);

RunReport run_experiment(const ExperimentConfig& cfg);
// Runs none, conservative, aggressive and duca under one config.
RunReport run_comparison(const ExperimentConfig& cfg);
// Cartesian product of cycles × ratios under the duca policy.
GridReport ablation_grid(const ExperimentConfig& base, const std::vector<std::size_t>& cycles,
                         const std::vector<double>& ratios);

// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

std::string render_curves_csv(const RunReport& report);
std::string render_summary_json(const RunReport& report);
std::string render_grid_csv(const GridReport& report);
std::string render_grid_json(const GridReport& report);

// summary.json + curves.csv into dir (created if missing).
std::vector<std::filesystem::path> write_report(const RunReport& report, const std::filesystem::path& dir);
// grid.csv + grid.json into dir.
std::vector<std::filesystem::path> write_grid_report(const GridReport& report,
                                                     const std::filesystem::path& dir);

}  // namespace duca
