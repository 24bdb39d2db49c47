// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature cache and the three step executors.
//
//  * Fresh: full forward; every cache entry is rewritten.
//  * Conservative: every sublayer computes its branch for a subset of tokens
//    and reuses cached branch rows for the rest. Computed rows are written
//    back. Residuals are always added for every token.
//  * Aggressive: blocks 1..l_skip are skipped; the cached output of block
//    l_skip feeds blocks l_skip+1..L, which run in full.
//
// Within a cycle of N steps, position 0 is fresh, odd positions are
// conservative and even positions are aggressive.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duca/flops.h"
#include "duca/model.h"
#include "duca/rng.h"
#include "duca/tensor.h"
#include "duca/token_select.h"

namespace duca {

enum class StepKind { kFresh, kConservative, kAggressive };
std::string_view to_string(StepKind kind);

enum class Policy { kNone, kConservative, kAggressive, kDuca };
std::string_view to_string(Policy policy);
Policy parse_policy(std::string_view name);

struct SchedulePlan {
    std::vector<StepKind> kinds;
    std::size_t cycle = 5;
    double ratio = 0.9;
    // Number of leading blocks an aggressive step skips. Unset means depth − 1.
    std::optional<std::size_t> skip_depth;
};

// DuCa alternation over `steps` steps with cycle length `cycle`. A trailing
// partial cycle is truncated.
SchedulePlan build_schedule(std::size_t steps, std::size_t cycle);

// Same cycle structure for the comparison policies: kNone is all fresh,
// kConservative / kAggressive use one caching kind for every non-fresh step.
SchedulePlan build_policy_plan(Policy policy, std::size_t steps, std::size_t cycle);

inline constexpr std::int64_t kNeverWritten = -1;

class FeatureCache {
public:
    explicit FeatureCache(const ModelConfig& cfg);

    bool initialized() const { return initialized_; }
    std::size_t depth() const { return block_out_.size(); }

    // Reads throw CacheStateError until a fresh step has populated the cache.
    const Tensor& branch(std::size_t l, Sublayer s) const;
    const Tensor& block_out(std::size_t l) const;
    const Tensor& keys(std::size_t l) const;
    const Tensor& values(std::size_t l) const;
    // Present only when the writer ran with attention scores exposed.
    const std::optional<Tensor>& scores(std::size_t l) const;
    // Per-token timestep of the last branch write.
    std::span<const std::int64_t> freshness(std::size_t l, Sublayer s) const;

    void write_branch(std::size_t l, Sublayer s, std::span<const std::size_t> rows, const Tensor& src,
                      std::int64_t t);
    void write_branch(std::size_t l, Sublayer s, const Tensor& full, std::int64_t t);
    void write_kv(std::size_t l, std::span<const std::size_t> rows, const Tensor& k, const Tensor& v);
    void write_kv(std::size_t l, const Tensor& k, const Tensor& v);
    void write_scores(std::size_t l, std::optional<Tensor> scores);
    void write_score_rows(std::size_t l, std::span<const std::size_t> rows, const Tensor& partial);
    void write_block_out(std::size_t l, const Tensor& out);
    void mark_initialized() { initialized_ = true; }

private:
    void check_read(std::size_t l) const;
    static std::size_t slot(Sublayer s) { return static_cast<std::size_t>(s); }

    bool initialized_ = false;
    std::vector<std::array<Tensor, 2>> branch_;
    std::vector<std::array<std::vector<std::int64_t>, 2>> freshness_;
    std::vector<Tensor> block_out_, keys_, values_;
    std::vector<std::optional<Tensor>> scores_;
};

struct StepOutput {
    Tensor eps;
    // Computed token rows per (block, sublayer), index 2·l + s.
    std::vector<std::size_t> computed_tokens;
};

StepOutput fresh_step(const DiTModel& model, FeatureCache& cache, const Tensor& x_t, std::size_t t,
                      std::size_t c, FlopsMeter& meter, bool expose_scores = false);

StepOutput conservative_step(const DiTModel& model, FeatureCache& cache, const Tensor& x_t,
                             std::size_t t, std::size_t c, double ratio,
                             const SelectionStrategy& strategy, Rng& rng, FlopsMeter& meter,
                             bool expose_scores = false);

// x_t is not read: the skipped prefix is replaced by the cache.
StepOutput aggressive_step(const DiTModel& model, FeatureCache& cache, const Tensor& x_t,
                           std::size_t t, std::size_t c, std::size_t skip_depth, FlopsMeter& meter,
                           bool expose_scores = false);

struct StepOptions {
    double ratio = 0.9;
    SelectionStrategy strategy;
    std::optional<std::size_t> skip_depth;  // defaults to depth − 1
    // Efficient attention never materializes score matrices.
    bool efficient_attention = true;
};

struct StepRecord {
    std::size_t timestep = 0;
    StepKind kind = StepKind::kFresh;
    std::uint64_t flops = 0;
    std::vector<std::size_t> computed_tokens;

    std::size_t total_computed() const;
};

using RunLog = std::vector<StepRecord>;

// Dispatches on kind and appends (t, kind, FLOPs delta, computed tokens) to log.
Tensor execute_step(StepKind kind, const DiTModel& model, FeatureCache& cache, const Tensor& x_t,
                    std::size_t t, std::size_t c, const StepOptions& options, Rng& rng,
                    FlopsMeter& meter, RunLog& log);

}  // namespace duca
