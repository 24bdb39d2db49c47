// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic reverse process. Each step moves x_t to the posterior mean
//
//     x_{t-1} = (x_t − (1 − α_t) / √(1 − ᾱ_t) · ε) / √α_t
//
// with no injected noise.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "duca/cache_engine.h"
#include "duca/model.h"
#include "duca/tensor.h"
#include "duca/token_select.h"

namespace duca {

// Timesteps are 1-based: t ∈ [1, steps()].
class NoiseSchedule {
public:
    // Linear beta ramp. Requires 0 < beta_start ≤ beta_end < 1.
    static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);
    // Explicit betas, each in [0, 1).
    static NoiseSchedule from_betas(std::vector<double> betas);

    std::size_t steps() const { return beta_.size(); }
    double beta(std::size_t t) const { return beta_.at(check(t)); }
    double alpha(std::size_t t) const { return alpha_.at(check(t)); }
    double bar_alpha(std::size_t t) const { return bar_alpha_.at(check(t)); }

private:
    explicit NoiseSchedule(std::vector<double> betas);
    std::size_t check(std::size_t t) const;

    std::vector<double> beta_, alpha_, bar_alpha_;
};

NoiseSchedule make_noise_schedule(std::size_t steps, double beta_start, double beta_end);

// One deterministic reverse step. Throws StepRangeError for t == 0.
Tensor reverse_step(const Tensor& x_t, const Tensor& eps, std::size_t t, const NoiseSchedule& sched);

struct Trajectory {
    std::vector<Tensor> states;  // x_T, ..., x_0
    std::vector<StepKind> step_kinds;
    RunLog log;
    std::uint64_t total_flops = 0;
};

struct TrajectoryOptions {
    std::size_t class_label = 0;
    SelectionStrategy strategy;
    bool efficient_attention = true;
};

// Seeded standard-normal x_T of the model's token shape.
Tensor initial_noise(const ModelConfig& cfg, std::uint64_t seed);

// Runs the plan through the cache engine. plan.kinds.size() must equal
// sched.steps(). Selection randomness is a separate stream of the same seed.
Trajectory run_trajectory(const DiTModel& model, const SchedulePlan& plan, const NoiseSchedule& sched,
                          std::uint64_t seed, const TrajectoryOptions& options = {});

// The uncached pipeline: model_forward_full at every step, no cache at all.
Trajectory run_uncached(const DiTModel& model, const NoiseSchedule& sched, std::uint64_t seed,
                        std::size_t class_label = 0);

struct ErrorTrace {
    std::vector<double> errors;  // one per state, e[0] for x_T
};

// Per-state L2 distance between a cached run and its reference.
ErrorTrace caching_error(const Trajectory& cached, const Trajectory& reference);

}  // namespace duca
