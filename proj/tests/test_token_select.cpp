// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "duca/errors.h"
#include "duca/rng.h"
#include "duca/token_select.h"
#include "test_support.h"

using namespace duca;
using Catch::Matchers::WithinAbs;

namespace {

void check_partition(const TokenPartition& p, std::size_t n, std::size_t expected_compute) {
    CHECK(p.compute_idx.size() == expected_compute);
    CHECK(std::is_sorted(p.compute_idx.begin(), p.compute_idx.end()));
    CHECK(std::is_sorted(p.cache_idx.begin(), p.cache_idx.end()));
    std::vector<std::size_t> all = p.compute_idx;
    all.insert(all.end(), p.cache_idx.begin(), p.cache_idx.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(n);
    for (std::size_t i = 0; i < n; ++i) expected[i] = i;
    CHECK(all == expected);
}

Tensor uniform_scores(std::size_t heads, std::size_t n) {
    return Tensor::filled({heads, n, n}, 1.0 / static_cast<double>(n));
}

}  // namespace

TEST_CASE("compute count rounding") {
    CHECK(compute_count(64, 0.9) == 6);
    CHECK(compute_count(100, 0.9) == 10);
    CHECK(compute_count(64, 0.0) == 64);
    CHECK(compute_count(64, 0.999) == 1);
    CHECK(compute_count(15, 0.9) == 2);  // 1.5 rounds half up
    CHECK(compute_count(5, 0.9) == 1);   // 0.5 rounds half up
    CHECK(compute_count(3, 0.9) == 1);   // floor of one
    CHECK_THROWS_AS(compute_count(10, 1.0), ConfigError);
    CHECK_THROWS_AS(compute_count(10, -0.1), ConfigError);
}

TEST_CASE("strategy names round-trip") {
    CHECK(strategy_names().size() == 9);
    for (const auto& name : strategy_names()) CHECK(SelectionStrategy::parse(name).name() == name);
    CHECK(SelectionStrategy::parse("attn-max").needs_attention_scores());
    CHECK_FALSE(SelectionStrategy::parse("sim-min").needs_attention_scores());
    CHECK_THROWS_AS(SelectionStrategy::parse("topk"), ConfigError);
}

TEST_CASE("random selection examples") {
    const Tensor hidden({100, 4});
    const SelectionContext ctx{&hidden, nullptr, nullptr, nullptr};
    Rng a(5), b(5);
    const auto p = select_tokens(SelectionStrategy::parse("random"), ctx, 0.9, a);
    check_partition(p, 100, 10);
    CHECK(select_tokens(SelectionStrategy::parse("random"), ctx, 0.9, b).compute_idx == p.compute_idx);
}

TEST_CASE("norm scores") {
    const Tensor k = Tensor::matrix(2, 2, {3, 4, 0, 0});
    const auto s = score_knorm(k);
    CHECK(s[0] == 5.0);
    CHECK(s[1] == 0.0);
    const Tensor r = testing::random_matrix(6, 5, 3);
    const auto v = score_vnorm(r);
    for (std::size_t i = 0; i < 6; ++i) {
        double sq = 0.0;
        for (double x : r.row(i)) sq += x * x;
        CHECK_THAT(v[i], WithinAbs(std::sqrt(sq), 1e-12));
    }
}

TEST_CASE("knorm-max computes the largest key") {
    const Tensor keys = Tensor::matrix(3, 1, {3, 1, 2});
    const Tensor hidden({3, 1});
    const SelectionContext ctx{&hidden, &keys, &keys, nullptr};
    Rng rng(0);
    // R = 0.8 on 3 tokens leaves round(0.6) = 1 computed.
    auto p = select_tokens(SelectionStrategy::parse("knorm-max"), ctx, 0.8, rng);
    CHECK(p.compute_idx == std::vector<std::size_t>{0});
    p = select_tokens(SelectionStrategy::parse("knorm-min"), ctx, 0.8, rng);
    CHECK(p.compute_idx == std::vector<std::size_t>{1});
}

TEST_CASE("partition ties go to the lower index") {
    const std::vector<double> s = {1, 2, 2, 1, 2};
    CHECK(partition_by_score(s, 2, Direction::kMax).compute_idx == std::vector<std::size_t>{1, 2});
    CHECK(partition_by_score(s, 1, Direction::kMin).compute_idx == std::vector<std::size_t>{0});
}

TEST_CASE("attention scores") {
    const auto uniform = score_attention(uniform_scores(2, 4));
    for (double v : uniform) CHECK_THAT(v, WithinAbs(0.25, 1e-15));

    Tensor sink({3, 5, 5});
    for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t i = 0; i < 5; ++i) sink[(h * 5 + i) * 5 + 2] = 1.0;
    const auto s = score_attention(sink);
    for (std::size_t j = 0; j < 5; ++j) CHECK(s[j] == (j == 2 ? 1.0 : 0.0));

    Tensor rnd({2, 6, 6});
    const Tensor logits = testing::random_matrix(12, 6, 4);
    const Tensor probs = softmax_rows(logits);
    std::copy(probs.data().begin(), probs.data().end(), rnd.data().begin());
    const auto col = score_attention(rnd);
    for (std::size_t j = 0; j < 6; ++j) {
        double sum = 0.0;
        for (std::size_t r = 0; r < 12; ++r) sum += probs(r, j);
        CHECK_THAT(col[j], WithinAbs(sum / 12.0, 1e-12));
    }
}

TEST_CASE("attention strategies need exposed scores") {
    const Tensor hidden = testing::random_matrix(10, 4, 1);
    const SelectionContext no_scores{&hidden, &hidden, &hidden, nullptr};
    Rng rng(0);
    CHECK_THROWS_AS(select_tokens(SelectionStrategy::parse("attn-max"), no_scores, 0.5, rng), CapabilityError);
    CHECK_THROWS_AS(select_tokens(SelectionStrategy::parse("attn-min"), no_scores, 0.5, rng), CapabilityError);
    for (const auto& name : strategy_names()) {
        if (name.starts_with("attn")) continue;
        CHECK_NOTHROW(select_tokens(SelectionStrategy::parse(name), no_scores, 0.5, rng));
    }
    const Tensor scores = uniform_scores(1, 10);
    const SelectionContext with_scores{&hidden, &hidden, &hidden, &scores};
    check_partition(select_tokens(SelectionStrategy::parse("attn-max"), with_scores, 0.5, rng), 10, 5);
}

TEST_CASE("similarity: identical tokens") {
    const Tensor hidden = Tensor::filled({20, 3}, 0.7);
    Rng a(1), b(1);
    const auto mx = similarity_partition(hidden, 0.8, 0.05, Direction::kMax, a);
    const auto mn = similarity_partition(hidden, 0.8, 0.05, Direction::kMin, b);
    check_partition(mx, 20, 4);
    CHECK(mx.compute_idx == mn.compute_idx);
}

TEST_CASE("similarity: min computes the orthogonal token first") {
    // Every token but 3 is parallel to the others; with one base token drawn
    // from the parallel group, token 3 is the least similar remainder.
    Tensor hidden({10, 2});
    for (std::size_t i = 0; i < 10; ++i) hidden(i, 0) = 1.0 + 0.1 * static_cast<double>(i);
    hidden(3, 0) = 0.0;
    hidden(3, 1) = 1.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto p = similarity_partition(hidden, 0.8, 0.1, Direction::kMin, rng);
        REQUIRE(p.compute_idx.size() == 2);
        CHECK(std::count(p.compute_idx.begin(), p.compute_idx.end(), 3) == 1);
    }
}

TEST_CASE("similarity base fraction must leave room") {
    const Tensor hidden = testing::random_matrix(10, 3, 2);
    Rng rng(0);
    CHECK_THROWS_AS(similarity_partition(hidden, 0.9, 0.1, Direction::kMax, rng), ConfigError);
    CHECK_NOTHROW(similarity_partition(hidden, 0.5, 0.1, Direction::kMax, rng));
}

TEST_CASE("partitions are complete for every strategy") {
    Rng cases(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + cases.index(60);
        const double ratio = cases.uniform() * 0.95;
        const Tensor hidden = testing::random_matrix(n, 8, trial);
        const Tensor keys = testing::random_matrix(n, 8, trial + 1000);
        Tensor scores({2, n, n});
        const Tensor probs = softmax_rows(testing::random_matrix(2 * n, n, trial + 2000));
        std::copy(probs.data().begin(), probs.data().end(), scores.data().begin());
        const SelectionContext ctx{&hidden, &keys, &keys, &scores};
        for (const auto& name : strategy_names()) {
            Rng rng(trial);
            check_partition(select_tokens(SelectionStrategy::parse(name), ctx, ratio, rng), n,
                            compute_count(n, ratio));
        }
    }
}

TEST_CASE("sim-min picks a more diverse compute set than sim-max") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor hidden = testing::random_matrix(64, 16, seed + 300);
        Rng a(seed), b(seed);
        const auto mn = similarity_partition(hidden, 0.8, 0.02, Direction::kMin, a);
        const auto mx = similarity_partition(hidden, 0.8, 0.02, Direction::kMax, b);
        CHECK(testing::mean_pairwise_cosine(hidden, mn.compute_idx) <=
              testing::mean_pairwise_cosine(hidden, mx.compute_idx));
    }
}
