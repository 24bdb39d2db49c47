// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duca/errors.h"
#include "duca/model.h"
#include "duca/weights_io.h"
#include "test_support.h"

using namespace duca;
using Catch::Matchers::WithinAbs;

namespace {

// Block forward written directly from the sublayer formulas with loops,
// sharing no code with the model's forward path beyond the weights.
Tensor oracle_adaln(const Tensor& y, const AdaLNWeights& w, const Tensor& cond) {
    const std::size_t n = y.rows(), d = y.cols();
    std::vector<double> params(3 * d);
    for (std::size_t j = 0; j < 3 * d; ++j) {
        double s = w.bias[j];
        for (std::size_t i = 0; i < d; ++i) {
            const double c = cond[i];
            s += c / (1.0 + std::exp(-c)) * w.proj(i, j);
        }
        params[j] = s;
    }
    Tensor out({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += y(r, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (y(r, j) - mean) * (y(r, j) - mean);
        var /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double norm = (y(r, j) - mean) / std::sqrt(var + 1e-5);
            out(r, j) = (1.0 + params[2 * d + j]) * (norm * (1.0 + params[d + j]) + params[j]);
        }
    }
    return out;
}

Tensor oracle_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

Tensor oracle_attention(const Tensor& x, const BlockWeights& w, std::size_t heads) {
    const Tensor q = oracle_matmul(x, w.wq), k = oracle_matmul(x, w.wk), v = oracle_matmul(x, w.wv);
    const std::size_t n = x.rows(), d = x.cols(), dh = d / heads;
    Tensor o({n, d});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += q(i, h * dh + e) * k(j, h * dh + e);
                logits[j] = s / std::sqrt(static_cast<double>(dh));
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (double& l : logits) z += (l = std::exp(l - mx));
            for (std::size_t e = 0; e < dh; ++e) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += logits[j] / z * v(j, h * dh + e);
                o(i, h * dh + e) = s;
            }
        }
    }
    return oracle_matmul(o, w.wo);
}

Tensor oracle_mlp(const Tensor& x, const BlockWeights& w) {
    Tensor h = oracle_matmul(x, w.w1);
    const double k = std::sqrt(2.0 / M_PI);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) {
            const double u = h(i, j) + w.b1[j];
            h(i, j) = 0.5 * u * (1.0 + std::tanh(k * (u + 0.044715 * u * u * u)));
        }
    Tensor out = oracle_matmul(h, w.w2);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += w.b2[j];
    return out;
}

Tensor oracle_block(const DiTModel& model, std::size_t l, const Tensor& x, const Tensor& cond) {
    const BlockWeights& w = model.block(l);
    Tensor a = oracle_adaln(oracle_attention(x, w, model.config().heads), w.attn_mod, cond);
    Tensor h = x;
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] += a[i];
    Tensor m = oracle_adaln(oracle_mlp(h, w), w.mlp_mod, cond);
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] += m[i];
    return h;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) { return gather_rows(x, perm); }

}  // namespace

TEST_CASE("model config validation collects every problem") {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.hidden = 10;
    cfg.heads = 4;
    const auto problems = cfg.problems();
    CHECK(problems.size() >= 2);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(ModelConfig{}.problems().empty());
    CHECK_THROWS_AS(init_model(0, cfg), ConfigError);
}

TEST_CASE("init_model is deterministic in seed and config") {
    const auto cfg = testing::small_config();
    CHECK(encode_weights(init_model(7, cfg)) == encode_weights(init_model(7, cfg)));
    CHECK_FALSE(init_model(1, cfg) == init_model(2, cfg));
}

TEST_CASE("init_model zero-initializes modulation") {
    const DiTModel model = init_model(3, testing::small_config());
    model.for_each_weight([](const std::string& name, const Tensor& w) {
        if (name.find("_mod.") != std::string::npos || name.ends_with("b1") || name.ends_with("b2")) {
            for (double v : w.data()) CHECK(v == 0.0);
        }
    });
}

TEST_CASE("branches at init equal the plain layer norm of the sublayer output") {
    const DiTModel model = init_model(5, testing::small_config());
    const auto& cfg = model.config();
    const Tensor x = testing::random_matrix(cfg.tokens, cfg.hidden, 8);
    const Tensor cond = embed_condition(10, 1, model);
    FlopsMeter meter;
    const Tensor branch = sublayer_branch(model, 0, Sublayer::kAttention, x, cond, false, meter).value;
    const Tensor expected = layer_norm(oracle_attention(x, model.block(0), cfg.heads));
    CHECK(max_abs_diff(branch, expected) < 1e-10);
    const Tensor mlp_branch = sublayer_branch(model, 1, Sublayer::kMlp, x, cond, false, meter).value;
    CHECK(max_abs_diff(mlp_branch, layer_norm(oracle_mlp(x, model.block(1)))) < 1e-10);
}

TEST_CASE("timestep sinusoid") {
    const Tensor zero = timestep_sinusoid(0, 8);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(zero[i] == 0.0);
        CHECK(zero[4 + i] == 1.0);
    }
    const Tensor s = timestep_sinusoid(5, 8);
    for (std::size_t i = 0; i < 4; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / 4.0);
        CHECK_THAT(s[i], WithinAbs(std::sin(5.0 * f), 1e-12));
        CHECK_THAT(s[4 + i], WithinAbs(std::cos(5.0 * f), 1e-12));
    }
}

TEST_CASE("embed_condition matches a scalar recomputation") {
    const DiTModel model = init_model(11, testing::small_config());
    const auto& cfg = model.config();
    const auto& w = model.condition();
    const std::size_t d = cfg.hidden, half = d / 2;
    std::vector<double> sinus(d);
    for (std::size_t i = 0; i < half; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        sinus[i] = std::sin(5.0 * f);
        sinus[half + i] = std::cos(5.0 * f);
    }
    const std::size_t hid = w.time_w1.cols();
    std::vector<double> h(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        double s = w.time_b1[j];
        for (std::size_t i = 0; i < d; ++i) s += sinus[i] * w.time_w1(i, j);
        h[j] = s / (1.0 + std::exp(-s));
    }
    const Tensor e = embed_condition(5, 3, model);
    REQUIRE(e.shape() == Shape{d});
    for (std::size_t j = 0; j < d; ++j) {
        double s = w.time_b2[j];
        for (std::size_t i = 0; i < hid; ++i) s += h[i] * w.time_w2(i, j);
        s += w.class_table(3, j);
        CHECK_THAT(e[j], WithinAbs(s, 1e-12));
    }
}

TEST_CASE("embed_condition distinguishes classes and checks ranges") {
    const DiTModel model = init_model(11, testing::small_config());
    CHECK_FALSE(embed_condition(4, 0, model) == embed_condition(4, 1, model));
    CHECK_THROWS_AS(embed_condition(100, 0, model), IndexError);
    CHECK_THROWS_AS(embed_condition(0, 4, model), IndexError);
}

TEST_CASE("attention on a hand-set 2-token example") {
    BlockWeights w;
    w.wq = Tensor::identity(2);
    w.wk = Tensor::identity(2);
    w.wv = Tensor::matrix(2, 2, {1, 2, 3, 4});
    w.wo = Tensor::identity(2);
    FlopsMeter meter;
    const BranchOutput out = attention(Tensor::identity(2), w, 1, true, meter);
    const double a = 1.0 / std::sqrt(2.0);
    const double p = std::exp(a) / (std::exp(a) + 1.0);
    CHECK_THAT(out.value(0, 0), WithinAbs(p * 1 + (1 - p) * 3, 1e-10));
    CHECK_THAT(out.value(0, 1), WithinAbs(p * 2 + (1 - p) * 4, 1e-10));
    CHECK_THAT(out.value(1, 0), WithinAbs((1 - p) * 1 + p * 3, 1e-10));
    CHECK_THAT(out.value(1, 1), WithinAbs((1 - p) * 2 + p * 4, 1e-10));
    REQUIRE(out.attention_scores);
    CHECK_THAT((*out.attention_scores)[0], WithinAbs(p, 1e-12));
    REQUIRE(out.keys);
    REQUIRE(out.values);
    CHECK(*out.values == w.wv);
}

TEST_CASE("single-token attention ignores scores") {
    const DiTModel model = init_model(2, testing::small_config());
    const BlockWeights& w = model.block(0);
    const Tensor x = testing::random_matrix(1, 16, 4);
    FlopsMeter meter;
    const Tensor out = attention(x, w, 2, false, meter).value;
    CHECK(max_abs_diff(out, oracle_matmul(oracle_matmul(x, w.wv), w.wo)) < 1e-12);
}

TEST_CASE("exposed score rows sum to one and exposure leaves values unchanged") {
    const DiTModel model = testing::with_random_modulation(init_model(2, testing::small_config()), 1);
    const auto& cfg = model.config();
    const Tensor x = testing::random_matrix(cfg.tokens, cfg.hidden, 6);
    const Tensor cond = embed_condition(3, 2, model);
    FlopsMeter m1, m2;
    const BranchOutput on = sublayer_branch(model, 1, Sublayer::kAttention, x, cond, true, m1);
    const BranchOutput off = sublayer_branch(model, 1, Sublayer::kAttention, x, cond, false, m2);
    REQUIRE(on.attention_scores);
    CHECK_FALSE(off.attention_scores);
    CHECK(off.keys);
    CHECK(max_abs_diff(on.value, off.value) < 1e-12);
    CHECK(m1.total() == m2.total());
    const Tensor& s = *on.attention_scores;
    REQUIRE(s.shape() == Shape{cfg.heads, cfg.tokens, cfg.tokens});
    for (std::size_t r = 0; r < cfg.heads * cfg.tokens; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < cfg.tokens; ++j) sum += s[r * cfg.tokens + j];
        CHECK_THAT(sum, WithinAbs(1.0, 1e-6));
    }
    const BranchOutput mlp_out = sublayer_branch(model, 1, Sublayer::kMlp, x, cond, true, m1);
    CHECK_FALSE(mlp_out.keys);
    CHECK_FALSE(mlp_out.attention_scores);
    CHECK(mlp_out.value.shape() == Shape{cfg.tokens, cfg.hidden});
}

TEST_CASE("sublayer_branch rejects an invalid block index") {
    const DiTModel model = init_model(2, testing::small_config());
    FlopsMeter meter;
    const Tensor x({12, 16});
    CHECK_THROWS_AS(sublayer_branch(model, 2, Sublayer::kMlp, x, embed_condition(1, 0, model), false, meter),
                    IndexError);
}

TEST_CASE("block forward matches the monolithic oracle") {
    const DiTModel model = testing::with_random_modulation(init_model(9, testing::small_config()), 4);
    const auto& cfg = model.config();
    const Tensor x = testing::random_matrix(cfg.tokens, cfg.hidden, 21);
    const Tensor cond = embed_condition(17, 2, model);
    FlopsMeter meter;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        CHECK(max_abs_diff(block_forward(model, l, x, cond, meter), oracle_block(model, l, x, cond)) < 1e-12);
    }
}

TEST_CASE("sublayer composition reproduces the full forward") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const DiTModel model =
            testing::with_random_modulation(init_model(seed, testing::small_config(3)), seed + 100);
        const auto& cfg = model.config();
        const Tensor x_t = testing::random_matrix(cfg.tokens, cfg.hidden, seed + 50);
        const Tensor cond = embed_condition(42, 1, model);
        FlopsMeter meter;
        Tensor h = prepare_input(model, x_t);
        for (std::size_t l = 0; l < cfg.depth; ++l) {
            h = add(h, sublayer_branch(model, l, Sublayer::kAttention, h, cond, false, meter).value, meter);
            h = add(h, sublayer_branch(model, l, Sublayer::kMlp, h, cond, false, meter).value, meter);
        }
        const Tensor full = model_forward_full(model, x_t, 42, 1, meter);
        CHECK(max_abs_diff(h, full) < 1e-12);
        CHECK(model_forward_full(model, x_t, 42, 1, meter) == full);
    }
}

TEST_CASE("blocks are permutation equivariant") {
    const DiTModel model = testing::with_random_modulation(init_model(4, testing::small_config()), 9);
    const auto& cfg = model.config();
    const Tensor x = testing::random_matrix(cfg.tokens, cfg.hidden, 77);
    const Tensor cond = embed_condition(8, 0, model);
    std::vector<std::size_t> perm(cfg.tokens);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[5]);
    FlopsMeter meter;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const Tensor direct = permute_rows(block_forward(model, l, x, cond, meter), perm);
        const Tensor permuted = block_forward(model, l, permute_rows(x, perm), cond, meter);
        CHECK(max_abs_diff(direct, permuted) < 1e-9);
    }
}

TEST_CASE("full forward FLOPs match the closed form and ignore input values") {
    const ModelConfig cfg;  // L=4, d=64, heads=4, n=64
    const DiTModel model = init_model(0, cfg);
    FlopsMeter a, b;
    model_forward_full(model, testing::random_matrix(64, 64, 1), 10, 0, a);
    model_forward_full(model, Tensor({64, 64}), 900, 9, b);
    CHECK(a.total() == testing::forward_flops(cfg));
    CHECK(b.total() == a.total());
}

TEST_CASE("model rejects mis-shaped weights") {
    const auto cfg = testing::small_config();
    std::vector<Tensor> weights;
    init_model(0, cfg).for_each_weight([&](const std::string&, const Tensor& w) { weights.push_back(w); });
    auto bad = weights;
    bad[6] = Tensor({3, 3});
    CHECK_THROWS_AS(model_from_weights(cfg, bad), DimensionError);
    bad = weights;
    bad.pop_back();
    CHECK_THROWS(model_from_weights(cfg, bad));
    CHECK(model_from_weights(cfg, weights) == init_model(0, cfg));
}
