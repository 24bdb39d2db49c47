// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/cache_engine.h"

#include <algorithm>
#include <numeric>

#include "duca/errors.h"

namespace duca {

std::string_view to_string(StepKind kind) {
    switch (kind) {
        case StepKind::kFresh: return "fresh";
        case StepKind::kConservative: return "conservative";
        case StepKind::kAggressive: return "aggressive";
    }
    return "unknown";
}

std::string_view to_string(Policy policy) {
    switch (policy) {
        case Policy::kNone: return "none";
        case Policy::kConservative: return "conservative";
        case Policy::kAggressive: return "aggressive";
        case Policy::kDuca: return "duca";
    }
    return "unknown";
}

Policy parse_policy(std::string_view name) {
    for (Policy p : {Policy::kNone, Policy::kConservative, Policy::kAggressive, Policy::kDuca}) {
        if (to_string(p) == name) return p;
    }
    throw ConfigError("unknown policy '" + std::string(name) +
                      "' (expected none, conservative, aggressive or duca)");
}

SchedulePlan build_schedule(std::size_t steps, std::size_t cycle) {
    return build_policy_plan(Policy::kDuca, steps, cycle);
}

SchedulePlan build_policy_plan(Policy policy, std::size_t steps, std::size_t cycle) {
    if (steps < 1) throw ConfigError("schedule needs at least one step");
    if (cycle < 1) throw ConfigError("cycle length must be at least 1");
    SchedulePlan plan;
    plan.cycle = policy == Policy::kNone ? 1 : cycle;
    plan.kinds.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const std::size_t pos = i % plan.cycle;
        StepKind kind = StepKind::kFresh;
        if (pos != 0) {
            switch (policy) {
                case Policy::kNone: break;
                case Policy::kConservative: kind = StepKind::kConservative; break;
                case Policy::kAggressive: kind = StepKind::kAggressive; break;
                case Policy::kDuca:
                    kind = (pos % 2 == 1) ? StepKind::kConservative : StepKind::kAggressive;
                    break;
            }
        }
        plan.kinds.push_back(kind);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// FeatureCache

FeatureCache::FeatureCache(const ModelConfig& cfg) {
    cfg.validate();
    const Shape s{cfg.tokens, cfg.hidden};
    branch_.assign(cfg.depth, {Tensor(s), Tensor(s)});
    freshness_.assign(cfg.depth, {std::vector<std::int64_t>(cfg.tokens, kNeverWritten),
                                  std::vector<std::int64_t>(cfg.tokens, kNeverWritten)});
    block_out_.assign(cfg.depth, Tensor(s));
    keys_.assign(cfg.depth, Tensor(s));
    values_.assign(cfg.depth, Tensor(s));
    scores_.assign(cfg.depth, std::nullopt);
}

void FeatureCache::check_read(std::size_t l) const {
    if (!initialized_) throw CacheStateError("feature cache read before the first fresh step");
    if (l >= block_out_.size()) {
        throw IndexError("cache block " + std::to_string(l) + " out of range for depth " +
                         std::to_string(block_out_.size()));
    }
}

const Tensor& FeatureCache::branch(std::size_t l, Sublayer s) const {
    check_read(l);
    return branch_[l][slot(s)];
}

const Tensor& FeatureCache::block_out(std::size_t l) const {
    check_read(l);
    return block_out_[l];
}

const Tensor& FeatureCache::keys(std::size_t l) const {
    check_read(l);
    return keys_[l];
}

const Tensor& FeatureCache::values(std::size_t l) const {
    check_read(l);
    return values_[l];
}

const std::optional<Tensor>& FeatureCache::scores(std::size_t l) const {
    check_read(l);
    return scores_[l];
}

std::span<const std::int64_t> FeatureCache::freshness(std::size_t l, Sublayer s) const {
    return freshness_.at(l)[slot(s)];
}

void FeatureCache::write_branch(std::size_t l, Sublayer s, std::span<const std::size_t> rows,
                                const Tensor& src, std::int64_t t) {
    scatter_rows(branch_.at(l)[slot(s)], rows, src);
    auto& stamps = freshness_[l][slot(s)];
    for (std::size_t r : rows) stamps[r] = t;
}

void FeatureCache::write_branch(std::size_t l, Sublayer s, const Tensor& full, std::int64_t t) {
    Tensor& dst = branch_.at(l)[slot(s)];
    if (full.shape() != dst.shape()) {
        throw DimensionError("branch write of shape " + shape_to_string(full.shape()) + " into " +
                             shape_to_string(dst.shape()));
    }
    dst = full;
    auto& stamps = freshness_[l][slot(s)];
    std::fill(stamps.begin(), stamps.end(), t);
}

void FeatureCache::write_kv(std::size_t l, std::span<const std::size_t> rows, const Tensor& k,
                            const Tensor& v) {
    scatter_rows(keys_.at(l), rows, k);
    scatter_rows(values_.at(l), rows, v);
}

void FeatureCache::write_kv(std::size_t l, const Tensor& k, const Tensor& v) {
    if (k.shape() != keys_.at(l).shape() || v.shape() != values_[l].shape()) {
        throw DimensionError("key/value write has shape " + shape_to_string(k.shape()));
    }
    keys_[l] = k;
    values_[l] = v;
}

void FeatureCache::write_scores(std::size_t l, std::optional<Tensor> scores) {
    scores_.at(l) = std::move(scores);
}

void FeatureCache::write_score_rows(std::size_t l, std::span<const std::size_t> rows,
                                    const Tensor& partial) {
    auto& full = scores_.at(l);
    if (!full) return;
    const std::size_t heads = full->dim(0), n = full->dim(1), m = rows.size();
    if (partial.rank() != 3 || partial.dim(0) != heads || partial.dim(1) != m || partial.dim(2) != n) {
        throw DimensionError("score row write of shape " + shape_to_string(partial.shape()));
    }
    auto dst = full->data();
    auto src = partial.data();
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(src.begin() + (h * m + i) * n, n, dst.begin() + (h * n + rows[i]) * n);
}

void FeatureCache::write_block_out(std::size_t l, const Tensor& out) {
    if (out.shape() != block_out_.at(l).shape()) {
        throw DimensionError("block output write of shape " + shape_to_string(out.shape()));
    }
    block_out_[l] = out;
}

// ---------------------------------------------------------------------------
// Executors

namespace {

std::size_t slot_index(std::size_t l, Sublayer s) { return 2 * l + static_cast<std::size_t>(s); }

// Full computation of block l, refreshing every cache entry of the block.
Tensor refresh_block(const DiTModel& model, FeatureCache& cache, std::size_t l, const Tensor& x,
                     const Tensor& cond, std::int64_t t, bool expose_scores, FlopsMeter& meter) {
    BranchOutput sa = sublayer_branch(model, l, Sublayer::kAttention, x, cond, expose_scores, meter);
    cache.write_branch(l, Sublayer::kAttention, sa.value, t);
    cache.write_kv(l, *sa.keys, *sa.values);
    cache.write_scores(l, std::move(sa.attention_scores));
    Tensor h = add(x, sa.value, meter);

    BranchOutput ff = sublayer_branch(model, l, Sublayer::kMlp, h, cond, expose_scores, meter);
    cache.write_branch(l, Sublayer::kMlp, ff.value, t);
    h = add(h, ff.value, meter);
    cache.write_block_out(l, h);
    return h;
}

}  // namespace

StepOutput fresh_step(const DiTModel& model, FeatureCache& cache, const Tensor& x_t, std::size_t t,
                      std::size_t c, FlopsMeter& meter, bool expose_scores) {
    const ModelConfig& cfg = model.config();
    const Tensor cond = embed_condition(t, c, model);
    Tensor h = prepare_input(model, x_t);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        h = refresh_block(model, cache, l, h, cond, static_cast<std::int64_t>(t), expose_scores, meter);
    }
    cache.mark_initialized();
    return {std::move(h), std::vector<std::size_t>(2 * cfg.depth, cfg.tokens)};
}

StepOutput conservative_step(const DiTModel& model, FeatureCache& cache, const Tensor& x_t,
                             std::size_t t, std::size_t c, double ratio,
                             const SelectionStrategy& strategy, Rng& rng, FlopsMeter& meter,
                             bool expose_scores) {
    if (!cache.initialized()) {
        throw CacheStateError("conservative step before the first fresh step");
    }
    const ModelConfig& cfg = model.config();
    const auto stamp = static_cast<std::int64_t>(t);
    const Tensor cond = embed_condition(t, c, model);
    Tensor h = prepare_input(model, x_t);
    std::vector<std::size_t> computed(2 * cfg.depth, 0);

    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const BlockWeights& w = model.block(l);

        // Self-attention: refreshed queries attend over the full, mixed-freshness K/V.
        {
            const auto& cached_scores = cache.scores(l);
            const SelectionContext ctx{&h, &cache.keys(l), &cache.values(l),
                                       cached_scores ? &*cached_scores : nullptr};
            const TokenPartition part = select_tokens(strategy, ctx, ratio, rng);
            const Modulation mod = adaln_modulation(w.attn_mod, cond, meter);
            const Tensor xc = gather_rows(h, part.compute_idx);
            cache.write_kv(l, part.compute_idx, matmul(xc, w.wk, meter), matmul(xc, w.wv, meter));
            const Tensor q = matmul(xc, w.wq, meter);
            AttentionCore core = attend(q, cache.keys(l), cache.values(l), cfg.heads, expose_scores, meter);
            const Tensor branch = adaln_apply(matmul(core.output, w.wo, meter), mod, meter);
            cache.write_branch(l, Sublayer::kAttention, part.compute_idx, branch, stamp);
            if (core.scores) cache.write_score_rows(l, part.compute_idx, *core.scores);
            h = add(h, cache.branch(l, Sublayer::kAttention), meter);
            computed[slot_index(l, Sublayer::kAttention)] = part.compute_idx.size();
        }

        // MLP.
        {
            const auto& cached_scores = cache.scores(l);
            const SelectionContext ctx{&h, &cache.keys(l), &cache.values(l),
                                       cached_scores ? &*cached_scores : nullptr};
            const TokenPartition part = select_tokens(strategy, ctx, ratio, rng);
            const Modulation mod = adaln_modulation(w.mlp_mod, cond, meter);
            const Tensor branch = adaln_apply(mlp(gather_rows(h, part.compute_idx), w, meter), mod, meter);
            cache.write_branch(l, Sublayer::kMlp, part.compute_idx, branch, stamp);
            h = add(h, cache.branch(l, Sublayer::kMlp), meter);
            computed[slot_index(l, Sublayer::kMlp)] = part.compute_idx.size();
        }
        cache.write_block_out(l, h);
    }
    return {std::move(h), std::move(computed)};
}

StepOutput aggressive_step(const DiTModel& model, FeatureCache& cache, const Tensor& /*x_t*/,
                           std::size_t t, std::size_t c, std::size_t skip_depth, FlopsMeter& meter,
                           bool expose_scores) {
    const ModelConfig& cfg = model.config();
    if (skip_depth < 1 || skip_depth > cfg.depth - 1) {
        throw ConfigError("skip depth " + std::to_string(skip_depth) + " outside [1, " +
                          std::to_string(cfg.depth - 1) + "]");
    }
    if (!cache.initialized()) {
        throw CacheStateError("aggressive step before the first fresh step");
    }
    const Tensor cond = embed_condition(t, c, model);
    Tensor h = cache.block_out(skip_depth - 1);
    std::vector<std::size_t> computed(2 * cfg.depth, 0);
    for (std::size_t l = skip_depth; l < cfg.depth; ++l) {
        h = refresh_block(model, cache, l, h, cond, static_cast<std::int64_t>(t), expose_scores, meter);
        computed[slot_index(l, Sublayer::kAttention)] = cfg.tokens;
        computed[slot_index(l, Sublayer::kMlp)] = cfg.tokens;
    }
    return {std::move(h), std::move(computed)};
}

std::size_t StepRecord::total_computed() const {
    return std::accumulate(computed_tokens.begin(), computed_tokens.end(), std::size_t{0});
}

Tensor execute_step(StepKind kind, const DiTModel& model, FeatureCache& cache, const Tensor& x_t,
                    std::size_t t, std::size_t c, const StepOptions& options, Rng& rng,
                    FlopsMeter& meter, RunLog& log) {
    const bool expose = !options.efficient_attention;
    const std::uint64_t before = meter.total();
    StepOutput out;
    switch (kind) {
        case StepKind::kFresh:
            out = fresh_step(model, cache, x_t, t, c, meter, expose);
            break;
        case StepKind::kConservative:
            out = conservative_step(model, cache, x_t, t, c, options.ratio, options.strategy, rng,
                                    meter, expose);
            break;
        case StepKind::kAggressive:
            out = aggressive_step(model, cache, x_t, t, c,
                                  options.skip_depth.value_or(model.config().depth - 1), meter, expose);
            break;
    }
    log.push_back({t, kind, meter.total() - before, std::move(out.computed_tokens)});
    return std::move(out.eps);
}

}  // namespace duca
