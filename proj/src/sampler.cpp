// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/sampler.h"

#include <cmath>

#include "duca/errors.h"
#include "duca/rng.h"

namespace duca {

namespace {

constexpr std::uint64_t kSelectionStreamTag = 0x5e1ec7;

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ConfigError("noise schedule needs at least one step");
    double running = 1.0;
    for (double b : beta_) {
        if (!(b >= 0.0 && b < 1.0)) {
            throw ConfigError("beta values must lie in [0, 1), got " + std::to_string(b));
        }
        alpha_.push_back(1.0 - b);
        running *= 1.0 - b;
        bar_alpha_.push_back(running);
    }
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("need 0 < beta_start <= beta_end < 1, got beta_start=" +
                          std::to_string(beta_start) + " beta_end=" + std::to_string(beta_end));
    }
    std::vector<double> betas(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[i] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    return NoiseSchedule(std::move(betas));
}

std::size_t NoiseSchedule::check(std::size_t t) const {
    if (t < 1 || t > beta_.size()) {
        throw StepRangeError("timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(beta_.size()) + "]");
    }
    return t - 1;
}

NoiseSchedule make_noise_schedule(std::size_t steps, double beta_start, double beta_end) {
    return NoiseSchedule::linear(steps, beta_start, beta_end);
}

Tensor reverse_step(const Tensor& x_t, const Tensor& eps, std::size_t t, const NoiseSchedule& sched) {
    if (t == 0) throw StepRangeError("reverse step is undefined at t = 0");
    if (x_t.shape() != eps.shape()) {
        throw DimensionError("reverse_step: x_t " + shape_to_string(x_t.shape()) + " vs eps " +
                             shape_to_string(eps.shape()));
    }
    const double alpha = sched.alpha(t);
    const double one_minus_bar = 1.0 - sched.bar_alpha(t);
    const double eps_coef = (1.0 - alpha) == 0.0 ? 0.0 : (1.0 - alpha) / std::sqrt(one_minus_bar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    Tensor out = x_t;
    auto od = out.data();
    auto ed = eps.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = inv_sqrt_alpha * (od[i] - eps_coef * ed[i]);
    return out;
}

Tensor initial_noise(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x({cfg.tokens, cfg.hidden});
    for (double& v : x.data()) v = rng.normal();
    return x;
}

Trajectory run_trajectory(const DiTModel& model, const SchedulePlan& plan, const NoiseSchedule& sched,
                          std::uint64_t seed, const TrajectoryOptions& options) {
    if (plan.kinds.size() != sched.steps()) {
        throw ConfigError("plan has " + std::to_string(plan.kinds.size()) +
                          " steps but the noise schedule has " + std::to_string(sched.steps()));
    }
    const std::size_t steps = sched.steps();
    StepOptions step_options;
    step_options.ratio = plan.ratio;
    step_options.strategy = options.strategy;
    step_options.skip_depth = plan.skip_depth;
    step_options.efficient_attention = options.efficient_attention;

    FeatureCache cache(model.config());
    FlopsMeter meter;
    Rng selection_rng = Rng::stream(seed, kSelectionStreamTag);
    Trajectory traj;
    traj.states.reserve(steps + 1);
    traj.states.push_back(initial_noise(model.config(), seed));
    for (std::size_t i = 0; i < steps; ++i) {
        const std::size_t t = steps - i;
        const Tensor& x = traj.states.back();
        const Tensor eps = execute_step(plan.kinds[i], model, cache, x, t, options.class_label,
                                        step_options, selection_rng, meter, traj.log);
        traj.states.push_back(reverse_step(x, eps, t, sched));
        traj.step_kinds.push_back(plan.kinds[i]);
    }
    traj.total_flops = meter.total();
    return traj;
}

Trajectory run_uncached(const DiTModel& model, const NoiseSchedule& sched, std::uint64_t seed,
                        std::size_t class_label) {
    const std::size_t steps = sched.steps();
    const std::size_t per_sublayer = model.config().tokens;
    FlopsMeter meter;
    Trajectory traj;
    traj.states.push_back(initial_noise(model.config(), seed));
    for (std::size_t i = 0; i < steps; ++i) {
        const std::size_t t = steps - i;
        const Tensor& x = traj.states.back();
        const std::uint64_t before = meter.total();
        const Tensor eps = model_forward_full(model, x, t, class_label, meter);
        traj.states.push_back(reverse_step(x, eps, t, sched));
        traj.step_kinds.push_back(StepKind::kFresh);
        traj.log.push_back({t, StepKind::kFresh, meter.total() - before,
                            std::vector<std::size_t>(2 * model.config().depth, per_sublayer)});
    }
    traj.total_flops = meter.total();
    return traj;
}

ErrorTrace caching_error(const Trajectory& cached, const Trajectory& reference) {
    if (cached.states.size() != reference.states.size()) {
        throw ComparisonError("trajectories have " + std::to_string(cached.states.size()) + " and " +
                              std::to_string(reference.states.size()) + " states");
    }
    ErrorTrace trace;
    trace.errors.reserve(cached.states.size());
    for (std::size_t i = 0; i < cached.states.size(); ++i) {
        const Tensor& a = cached.states[i];
        const Tensor& b = reference.states[i];
        if (a.shape() != b.shape()) {
            throw ComparisonError("state " + std::to_string(i) + " shapes differ: " +
                                  shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < a.numel(); ++j) {
            const double d = a[j] - b[j];
            sum += d * d;
        }
        trace.errors.push_back(std::sqrt(sum));
    }
    return trace;
}

}  // namespace duca
