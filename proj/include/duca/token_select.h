// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token partitioning for conservative caching steps. Every strategy splits
// the token indices into a compute set and a cache set of fixed sizes; they
// differ only in how tokens are scored.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "duca/rng.h"
#include "duca/tensor.h"

namespace duca {

enum class ScoreKind { kRandom, kAttention, kKNorm, kVNorm, kSimilarity };
enum class Direction { kMax, kMin };

struct SelectionStrategy {
    ScoreKind kind = ScoreKind::kRandom;
    Direction direction = Direction::kMax;  // ignored by kRandom
    double base_fraction = 0.01;            // kSimilarity only

    bool needs_attention_scores() const { return kind == ScoreKind::kAttention; }

    // CLI names: random, attn-max, attn-min, knorm-max, knorm-min,
    // vnorm-max, vnorm-min, sim-max, sim-min.
    static SelectionStrategy parse(std::string_view name);
    std::string name() const;

    friend bool operator==(const SelectionStrategy&, const SelectionStrategy&) = default;
};

// The nine strategy names in CLI order.
const std::vector<std::string>& strategy_names();

struct TokenPartition {
    std::vector<std::size_t> compute_idx;  // sorted
    std::vector<std::size_t> cache_idx;    // sorted
};

// Inputs a strategy may read. Pointers are non-owning and may be null when
// the execution mode does not provide the field.
struct SelectionContext {
    const Tensor* hidden = nullptr;  // tokens × hidden
    const Tensor* keys = nullptr;    // tokens × hidden
    const Tensor* values = nullptr;  // tokens × hidden
    const Tensor* scores = nullptr;  // heads × tokens × tokens, softmax rows
};

// max(1, round_half_up((1 − ratio)·n)). Throws ConfigError for ratio outside [0, 1).
std::size_t compute_count(std::size_t n, double ratio);

TokenPartition select_tokens(const SelectionStrategy& strategy, const SelectionContext& ctx,
                             double ratio, Rng& rng);

std::vector<double> score_knorm(const Tensor& keys);
std::vector<double> score_vnorm(const Tensor& values);
// Attention received by each token, averaged over heads and queries.
std::vector<double> score_attention(const Tensor& scores);

// Computes the `count` highest (or lowest) scoring tokens; ties go to the
// lower index.
TokenPartition partition_by_score(const std::vector<double>& scores, std::size_t count,
                                  Direction direction);

// Random base tokens are always computed; the rest of the compute budget
// goes to the remaining tokens with the highest (kMax) or lowest (kMin)
// mean cosine similarity to the base set.
TokenPartition similarity_partition(const Tensor& hidden, double ratio, double base_fraction,
                                    Direction direction, Rng& rng);

}  // namespace duca
