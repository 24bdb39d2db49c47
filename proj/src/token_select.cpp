// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/token_select.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duca/errors.h"

namespace duca {

namespace {

// Guards round-half-up against products like 0.1·15 = 1.4999999999999998.
constexpr double kRoundSlack = 1e-9;

std::size_t round_half_up(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5 + kRoundSlack));
}

void check_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("cache ratio must lie in [0, 1), got " + std::to_string(ratio));
    }
}

TokenPartition from_compute_mask(const std::vector<bool>& computed) {
    TokenPartition p;
    for (std::size_t i = 0; i < computed.size(); ++i) {
        (computed[i] ? p.compute_idx : p.cache_idx).push_back(i);
    }
    return p;
}

std::vector<double> row_norms(const Tensor& t) {
    std::vector<double> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) out[i] = l2_norm(t.row(i));
    return out;
}

const Tensor& require(const Tensor* t, const char* field, const SelectionStrategy& s) {
    if (t == nullptr) {
        throw CapabilityError("strategy " + s.name() + " needs " + field + ", which is unavailable");
    }
    return *t;
}

}  // namespace

SelectionStrategy SelectionStrategy::parse(std::string_view name) {
    if (name == "random") return {ScoreKind::kRandom, Direction::kMax};
    const auto dash = name.rfind('-');
    if (dash == std::string_view::npos) throw ConfigError("unknown strategy '" + std::string(name) + "'");
    const auto base = name.substr(0, dash);
    const auto dir = name.substr(dash + 1);
    SelectionStrategy s;
    if (dir == "max") {
        s.direction = Direction::kMax;
    } else if (dir == "min") {
        s.direction = Direction::kMin;
    } else {
        throw ConfigError("unknown strategy '" + std::string(name) + "'");
    }
    if (base == "attn") {
        s.kind = ScoreKind::kAttention;
    } else if (base == "knorm") {
        s.kind = ScoreKind::kKNorm;
    } else if (base == "vnorm") {
        s.kind = ScoreKind::kVNorm;
    } else if (base == "sim") {
        s.kind = ScoreKind::kSimilarity;
    } else {
        throw ConfigError("unknown strategy '" + std::string(name) + "'");
    }
    return s;
}

std::string SelectionStrategy::name() const {
    std::string base;
    switch (kind) {
        case ScoreKind::kRandom: return "random";
        case ScoreKind::kAttention: base = "attn"; break;
        case ScoreKind::kKNorm: base = "knorm"; break;
        case ScoreKind::kVNorm: base = "vnorm"; break;
        case ScoreKind::kSimilarity: base = "sim"; break;
    }
    return base + (direction == Direction::kMax ? "-max" : "-min");
}

const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names = {"random",    "attn-max",  "attn-min",
                                                   "knorm-max", "knorm-min", "vnorm-max",
                                                   "vnorm-min", "sim-max",   "sim-min"};
    return names;
}

std::size_t compute_count(std::size_t n, double ratio) {
    check_ratio(ratio);
    const std::size_t k = round_half_up((1.0 - ratio) * static_cast<double>(n));
    return std::clamp<std::size_t>(k, 1, n);
}

TokenPartition partition_by_score(const std::vector<double>& scores, std::size_t count,
                                  Direction direction) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    // stable_sort keeps ascending index order among equal scores.
    if (direction == Direction::kMax) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    } else {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    }
    std::vector<bool> computed(scores.size(), false);
    for (std::size_t i = 0; i < std::min(count, order.size()); ++i) computed[order[i]] = true;
    return from_compute_mask(computed);
}

std::vector<double> score_knorm(const Tensor& keys) { return row_norms(keys); }

std::vector<double> score_vnorm(const Tensor& values) { return row_norms(values); }

std::vector<double> score_attention(const Tensor& scores) {
    if (scores.rank() != 3 || scores.dim(1) == 0) {
        throw DimensionError("attention scores must be heads×queries×keys, got " +
                             shape_to_string(scores.shape()));
    }
    const std::size_t heads = scores.dim(0), queries = scores.dim(1), keys = scores.dim(2);
    std::vector<double> out(keys, 0.0);
    const auto data = scores.data();
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < queries; ++q)
            for (std::size_t k = 0; k < keys; ++k) out[k] += data[(h * queries + q) * keys + k];
    const double denom = static_cast<double>(heads * queries);
    for (double& v : out) v /= denom;
    return out;
}

TokenPartition similarity_partition(const Tensor& hidden, double ratio, double base_fraction,
                                    Direction direction, Rng& rng) {
    const std::size_t n = hidden.rows();
    const std::size_t k = compute_count(n, ratio);
    if (!(base_fraction >= 0.0) || base_fraction >= 1.0 - ratio) {
        throw ConfigError("similarity base fraction " + std::to_string(base_fraction) +
                          " must be below the compute fraction " + std::to_string(1.0 - ratio));
    }
    const std::size_t base_count =
        std::min(k, std::max<std::size_t>(1, round_half_up(base_fraction * static_cast<double>(n))));

    // Partial Fisher-Yates for a uniform base subset.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < base_count; ++i) std::swap(perm[i], perm[i + rng.index(n - i)]);

    std::vector<bool> computed(n, false);
    for (std::size_t i = 0; i < base_count; ++i) computed[perm[i]] = true;

    std::vector<std::size_t> rest;
    std::vector<double> rest_scores;
    for (std::size_t i = 0; i < n; ++i) {
        if (computed[i]) continue;
        double sum = 0.0;
        for (std::size_t b = 0; b < base_count; ++b) {
            sum += cosine_similarity(hidden.row(i), hidden.row(perm[b]));
        }
        rest.push_back(i);
        rest_scores.push_back(sum / static_cast<double>(base_count));
    }
    const TokenPartition picked = partition_by_score(rest_scores, k - base_count, direction);
    for (std::size_t j : picked.compute_idx) computed[rest[j]] = true;
    return from_compute_mask(computed);
}

TokenPartition select_tokens(const SelectionStrategy& strategy, const SelectionContext& ctx,
                             double ratio, Rng& rng) {
    check_ratio(ratio);
    switch (strategy.kind) {
        case ScoreKind::kRandom: {
            const Tensor& hidden = require(ctx.hidden, "hidden states", strategy);
            const std::size_t n = hidden.rows();
            std::vector<double> random_scores(n);
            for (double& s : random_scores) s = rng.uniform();
            // The largest random scores are cached, so the smallest are computed.
            return partition_by_score(random_scores, compute_count(n, ratio), Direction::kMin);
        }
        case ScoreKind::kAttention: {
            const Tensor& scores = require(ctx.scores, "attention scores", strategy);
            const auto s = score_attention(scores);
            return partition_by_score(s, compute_count(s.size(), ratio), strategy.direction);
        }
        case ScoreKind::kKNorm: {
            const auto s = score_knorm(require(ctx.keys, "keys", strategy));
            return partition_by_score(s, compute_count(s.size(), ratio), strategy.direction);
        }
        case ScoreKind::kVNorm: {
            const auto s = score_vnorm(require(ctx.values, "values", strategy));
            return partition_by_score(s, compute_count(s.size(), ratio), strategy.direction);
        }
        case ScoreKind::kSimilarity:
            return similarity_partition(require(ctx.hidden, "hidden states", strategy), ratio,
                                        strategy.base_fraction, strategy.direction, rng);
    }
    throw ConfigError("unknown selection strategy");
}

}  // namespace duca
