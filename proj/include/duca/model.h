// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy class-conditional diffusion transformer. Each block is a self-attention
// sublayer followed by an MLP sublayer, and every sublayer computes
//
//     F(x) = x + AdaLN(f(x))
//
// where AdaLN layer-normalizes the sublayer output f(x) and modulates it with
// per-channel shift/scale/gate vectors projected from the conditioning vector.
// The non-residual term AdaLN(f(x)) is what the feature cache stores.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duca/flops.h"
#include "duca/tensor.h"

namespace duca {

struct ModelConfig {
    std::size_t depth = 4;
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t tokens = 64;
    std::size_t classes = 10;
    double mlp_ratio = 4.0;
    std::size_t max_timesteps = 1000;

    std::size_t head_dim() const { return hidden / heads; }
    std::size_t mlp_hidden() const;

    // Every violated constraint, empty when valid.
    std::vector<std::string> problems() const;
    // Throws ConfigError listing all problems.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Sublayer { kAttention = 0, kMlp = 1 };
inline constexpr std::array<Sublayer, 2> kSublayers = {Sublayer::kAttention, Sublayer::kMlp};
std::string_view to_string(Sublayer s);

struct AdaLNWeights {
    Tensor proj;  // hidden × 3·hidden, columns ordered [shift | scale | gate]
    Tensor bias;  // 3·hidden

    friend bool operator==(const AdaLNWeights&, const AdaLNWeights&) = default;
};

struct BlockWeights {
    Tensor wq, wk, wv, wo;  // hidden × hidden
    Tensor w1;              // hidden × mlp_hidden
    Tensor b1;              // mlp_hidden
    Tensor w2;              // mlp_hidden × hidden
    Tensor b2;              // hidden
    AdaLNWeights attn_mod;
    AdaLNWeights mlp_mod;

    friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct ConditionWeights {
    Tensor time_w1, time_b1, time_w2, time_b2;  // 2-layer MLP over the timestep sinusoid
    Tensor class_table;                          // classes × hidden

    friend bool operator==(const ConditionWeights&, const ConditionWeights&) = default;
};

class DiTModel {
public:
    // Validates every weight shape against the config.
    DiTModel(ModelConfig config, std::vector<BlockWeights> blocks, ConditionWeights condition);

    const ModelConfig& config() const { return config_; }
    const BlockWeights& block(std::size_t l) const;
    const ConditionWeights& condition() const { return condition_; }
    const Tensor& positional_encoding() const { return positional_; }

    // Visits every weight tensor in canonical order (the weight-file order).
    void for_each_weight(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    friend bool operator==(const DiTModel& a, const DiTModel& b) {
        return a.config_ == b.config_ && a.blocks_ == b.blocks_ && a.condition_ == b.condition_;
    }

private:
    ModelConfig config_;
    std::vector<BlockWeights> blocks_;
    ConditionWeights condition_;
    Tensor positional_;
};

// Canonical weight order with expected shapes. Shared by initialization and
// the weight file reader/writer.
struct WeightSlot {
    std::string name;
    Shape shape;
};
std::vector<WeightSlot> weight_layout(const ModelConfig& cfg);

// Seeded initialization. Projections (attention, MLP, timestep MLP, class
// table) are N(0, 0.02²) drawn in weight_layout order; biases are zero; the
// AdaLN modulation projections are zero so each branch starts out as the
// plain layer norm of its sublayer output.
DiTModel init_model(std::uint64_t seed, const ModelConfig& cfg);

// Builds a model from tensors in weight_layout order.
DiTModel model_from_weights(const ModelConfig& cfg, std::vector<Tensor> weights);

// Sinusoid of timestep t: first half sin(t·f_i), second half cos(t·f_i) with
// f_i = 10000^(-i/half). An odd trailing channel is zero.
Tensor timestep_sinusoid(std::size_t t, std::size_t dim);

// Fixed additive position code for the input tokens (tokens × dim).
Tensor sinusoidal_positions(std::size_t tokens, std::size_t dim);

// Conditioning vector: timestep MLP over the sinusoid plus the class
// embedding. Not metered: conditioning sits outside the denoiser body.
Tensor embed_condition(std::size_t t, std::size_t c, const DiTModel& model);

// x_t plus the position code. Not metered.
Tensor prepare_input(const DiTModel& model, const Tensor& x_t);

struct Modulation {
    Tensor shift, scale, gate;
};

// shift/scale/gate = SiLU(cond)·proj + bias.
Modulation adaln_modulation(const AdaLNWeights& w, const Tensor& cond, FlopsMeter& meter);

// (1 + gate) ⊙ (layer_norm(y) ⊙ (1 + scale) + shift), row-wise.
Tensor adaln_apply(const Tensor& y, const Modulation& mod, FlopsMeter& meter);

struct AttentionCore {
    Tensor output;                // queries × hidden, before the output projection
    std::optional<Tensor> scores;  // heads × queries × keys, only if exposed
};

// Multi-head scaled dot-product attention of projected queries over full
// projected keys/values.
AttentionCore attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                     std::size_t heads, bool expose_scores, FlopsMeter& meter);

struct BranchOutput {
    Tensor value;
    std::optional<Tensor> attention_scores;
    std::optional<Tensor> keys;
    std::optional<Tensor> values;
};

// Self-attention f_SA(x) = softmax(QKᵀ/√d_h)·V·Wo. The value is the raw
// attention output (no AdaLN). With expose_scores off the score matrices are
// dropped, as a memory-efficient kernel would.
BranchOutput attention(const Tensor& x, const BlockWeights& w, std::size_t heads,
                       bool expose_scores, FlopsMeter& meter);

// f_MLP(x) = gelu(x·W1 + b1)·W2 + b2.
Tensor mlp(const Tensor& x, const BlockWeights& w, FlopsMeter& meter);

// AdaLN(f(x)) for block l and sublayer s, without the residual.
BranchOutput sublayer_branch(const DiTModel& model, std::size_t l, Sublayer s, const Tensor& x,
                             const Tensor& cond, bool expose_scores, FlopsMeter& meter);

// Applies both sublayers of block l with residuals.
Tensor block_forward(const DiTModel& model, std::size_t l, const Tensor& x, const Tensor& cond,
                     FlopsMeter& meter);

// ε_θ(x_t, t, c): all blocks in order, no caching.
Tensor model_forward_full(const DiTModel& model, const Tensor& x_t, std::size_t t, std::size_t c,
                          FlopsMeter& meter);

}  // namespace duca
