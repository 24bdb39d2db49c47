// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/model.h"

#include <cmath>
#include <sstream>

#include "duca/errors.h"
#include "duca/rng.h"

namespace duca {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kSinusoidBase = 10000.0;

bool is_gaussian_slot(const std::string& name) {
    static const char* const kSuffixes[] = {".wq", ".wk", ".wv", ".wo", ".w1", ".w2",
                                            "time_w1", "time_w2", "class_table"};
    for (const char* suffix : kSuffixes) {
        const std::string s(suffix);
        if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
            return true;
        }
    }
    return false;
}

Tensor as_row(const Tensor& v) { return Tensor({1, v.numel()}, {v.data().begin(), v.data().end()}); }

Tensor as_vector(const Tensor& row) { return Tensor::vector({row.data().begin(), row.data().end()}); }

Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t count) {
    Tensor out({t.rows(), count});
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = t(i, begin + j);
    return out;
}

void place_cols(Tensor& dst, std::size_t begin, const Tensor& src) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) = src(i, j);
}

}  // namespace

std::size_t ModelConfig::mlp_hidden() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(hidden)));
}

std::vector<std::string> ModelConfig::problems() const {
    std::vector<std::string> out;
    if (depth < 2) out.push_back("depth must be >= 2 (got " + std::to_string(depth) + ")");
    if (hidden < 2) out.push_back("hidden must be >= 2 (got " + std::to_string(hidden) + ")");
    if (heads == 0) {
        out.push_back("heads must be positive");
    } else if (hidden % heads != 0) {
        out.push_back("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
    }
    if (tokens == 0) out.push_back("tokens must be positive");
    if (classes == 0) out.push_back("classes must be positive");
    if (!(mlp_ratio > 0.0) || !std::isfinite(mlp_ratio)) {
        out.push_back("mlp_ratio must be a positive finite number");
    } else if (mlp_hidden() == 0) {
        out.push_back("mlp_ratio * hidden rounds to zero");
    }
    if (max_timesteps == 0) out.push_back("max_timesteps must be positive");
    return out;
}

void ModelConfig::validate() const {
    const auto issues = problems();
    if (issues.empty()) return;
    std::ostringstream os;
    os << "invalid model config:";
    for (const auto& p : issues) os << "\n  - " << p;
    throw ConfigError(os.str());
}

std::string_view to_string(Sublayer s) {
    return s == Sublayer::kAttention ? "attn" : "mlp";
}

std::vector<WeightSlot> weight_layout(const ModelConfig& cfg) {
    const std::size_t d = cfg.hidden;
    const std::size_t h = cfg.mlp_hidden();
    std::vector<WeightSlot> slots = {
        {"cond.time_w1", {d, d}},
        {"cond.time_b1", {d}},
        {"cond.time_w2", {d, d}},
        {"cond.time_b2", {d}},
        {"cond.class_table", {cfg.classes, d}},
    };
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        slots.push_back({p + "attn.wq", {d, d}});
        slots.push_back({p + "attn.wk", {d, d}});
        slots.push_back({p + "attn.wv", {d, d}});
        slots.push_back({p + "attn.wo", {d, d}});
        slots.push_back({p + "mlp.w1", {d, h}});
        slots.push_back({p + "mlp.b1", {h}});
        slots.push_back({p + "mlp.w2", {h, d}});
        slots.push_back({p + "mlp.b2", {d}});
        slots.push_back({p + "attn_mod.proj", {d, 3 * d}});
        slots.push_back({p + "attn_mod.bias", {3 * d}});
        slots.push_back({p + "mlp_mod.proj", {d, 3 * d}});
        slots.push_back({p + "mlp_mod.bias", {3 * d}});
    }
    return slots;
}

DiTModel::DiTModel(ModelConfig config, std::vector<BlockWeights> blocks, ConditionWeights condition)
    : config_(config), blocks_(std::move(blocks)), condition_(std::move(condition)) {
    config_.validate();
    if (blocks_.size() != config_.depth) {
        throw DimensionError("model has " + std::to_string(blocks_.size()) + " blocks, config depth is " +
                             std::to_string(config_.depth));
    }
    const auto layout = weight_layout(config_);
    std::size_t i = 0;
    for_each_weight([&](const std::string& name, const Tensor& t) {
        if (t.shape() != layout[i].shape) {
            throw DimensionError("weight " + name + " has shape " + shape_to_string(t.shape()) +
                                 ", expected " + shape_to_string(layout[i].shape));
        }
        ++i;
    });
    positional_ = sinusoidal_positions(config_.tokens, config_.hidden);
}

const BlockWeights& DiTModel::block(std::size_t l) const {
    if (l >= blocks_.size()) {
        throw IndexError("block index " + std::to_string(l) + " out of range for depth " +
                         std::to_string(blocks_.size()));
    }
    return blocks_[l];
}

void DiTModel::for_each_weight(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    fn("cond.time_w1", condition_.time_w1);
    fn("cond.time_b1", condition_.time_b1);
    fn("cond.time_w2", condition_.time_w2);
    fn("cond.time_b2", condition_.time_b2);
    fn("cond.class_table", condition_.class_table);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        const BlockWeights& b = blocks_[l];
        fn(p + "attn.wq", b.wq);
        fn(p + "attn.wk", b.wk);
        fn(p + "attn.wv", b.wv);
        fn(p + "attn.wo", b.wo);
        fn(p + "mlp.w1", b.w1);
        fn(p + "mlp.b1", b.b1);
        fn(p + "mlp.w2", b.w2);
        fn(p + "mlp.b2", b.b2);
        fn(p + "attn_mod.proj", b.attn_mod.proj);
        fn(p + "attn_mod.bias", b.attn_mod.bias);
        fn(p + "mlp_mod.proj", b.mlp_mod.proj);
        fn(p + "mlp_mod.bias", b.mlp_mod.bias);
    }
}

DiTModel model_from_weights(const ModelConfig& cfg, std::vector<Tensor> weights) {
    cfg.validate();
    const std::size_t expected = weight_layout(cfg).size();
    if (weights.size() != expected) {
        throw DimensionError("expected " + std::to_string(expected) + " weight tensors, got " +
                             std::to_string(weights.size()));
    }
    auto it = std::make_move_iterator(weights.begin());
    ConditionWeights cond{*it++, *it++, *it++, *it++, *it++};
    std::vector<BlockWeights> blocks;
    blocks.reserve(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        BlockWeights b;
        b.wq = *it++;
        b.wk = *it++;
        b.wv = *it++;
        b.wo = *it++;
        b.w1 = *it++;
        b.b1 = *it++;
        b.w2 = *it++;
        b.b2 = *it++;
        b.attn_mod.proj = *it++;
        b.attn_mod.bias = *it++;
        b.mlp_mod.proj = *it++;
        b.mlp_mod.bias = *it++;
        blocks.push_back(std::move(b));
    }
    return DiTModel(cfg, std::move(blocks), std::move(cond));
}

DiTModel init_model(std::uint64_t seed, const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    std::vector<Tensor> weights;
    for (const WeightSlot& slot : weight_layout(cfg)) {
        Tensor t(slot.shape);
        if (is_gaussian_slot(slot.name)) {
            for (double& v : t.data()) v = kInitStd * rng.normal();
        }
        weights.push_back(std::move(t));
    }
    return model_from_weights(cfg, std::move(weights));
}

Tensor timestep_sinusoid(std::size_t t, std::size_t dim) {
    Tensor out({dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(kSinusoidBase) * static_cast<double>(i) /
                                     static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq;
        out[i] = std::sin(arg);
        out[half + i] = std::cos(arg);
    }
    return out;
}

Tensor sinusoidal_positions(std::size_t tokens, std::size_t dim) {
    Tensor out({tokens, dim});
    for (std::size_t p = 0; p < tokens; ++p) {
        auto code = timestep_sinusoid(p, dim);
        std::copy(code.data().begin(), code.data().end(), out.row(p).begin());
    }
    return out;
}

Tensor embed_condition(std::size_t t, std::size_t c, const DiTModel& model) {
    const ModelConfig& cfg = model.config();
    if (t >= cfg.max_timesteps) {
        throw IndexError("timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(cfg.max_timesteps) + ")");
    }
    if (c >= cfg.classes) {
        throw IndexError("class " + std::to_string(c) + " outside [0, " + std::to_string(cfg.classes) +
                         ")");
    }
    const ConditionWeights& w = model.condition();
    FlopsMeter unmetered;
    Tensor h = as_row(timestep_sinusoid(t, cfg.hidden));
    h = add_row_vector(matmul(h, w.time_w1, unmetered), w.time_b1, unmetered);
    h = silu(h, unmetered);
    h = add_row_vector(matmul(h, w.time_w2, unmetered), w.time_b2, unmetered);
    Tensor out = as_vector(h);
    auto cls = w.class_table.row(c);
    for (std::size_t j = 0; j < out.numel(); ++j) out[j] += cls[j];
    return out;
}

Tensor prepare_input(const DiTModel& model, const Tensor& x_t) {
    const ModelConfig& cfg = model.config();
    if (x_t.shape() != Shape{cfg.tokens, cfg.hidden}) {
        throw DimensionError("x_t has shape " + shape_to_string(x_t.shape()) + ", model expects " +
                             shape_to_string({cfg.tokens, cfg.hidden}));
    }
    FlopsMeter unmetered;
    return add(x_t, model.positional_encoding(), unmetered);
}

Modulation adaln_modulation(const AdaLNWeights& w, const Tensor& cond, FlopsMeter& meter) {
    const std::size_t d = cond.numel();
    Tensor params = matmul(silu(as_row(cond), meter), w.proj, meter);
    params = add_row_vector(params, w.bias, meter);
    Modulation mod{Tensor({d}), Tensor({d}), Tensor({d})};
    for (std::size_t j = 0; j < d; ++j) {
        mod.shift[j] = params(0, j);
        mod.scale[j] = params(0, d + j);
        mod.gate[j] = params(0, 2 * d + j);
    }
    return mod;
}

Tensor adaln_apply(const Tensor& y, const Modulation& mod, FlopsMeter& meter) {
    Tensor out = layer_norm(y, meter);
    const std::size_t d = out.cols();
    std::vector<double> scale1(d), gate1(d);
    for (std::size_t j = 0; j < d; ++j) {
        scale1[j] = 1.0 + mod.scale[j];
        gate1[j] = 1.0 + mod.gate[j];
    }
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] = gate1[j] * (r[j] * scale1[j] + mod.shift[j]);
    }
    meter.add(2 * d + 3 * out.numel());
    return out;
}

AttentionCore attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                     std::size_t heads, bool expose_scores, FlopsMeter& meter) {
    const std::size_t m = queries.rows();
    const std::size_t n = keys.rows();
    const std::size_t d = queries.cols();
    if (keys.cols() != d || values.rows() != n || values.cols() != d || heads == 0 || d % heads) {
        throw DimensionError("attend: queries " + shape_to_string(queries.shape()) + ", keys " +
                             shape_to_string(keys.shape()) + ", values " +
                             shape_to_string(values.shape()) + ", heads " + std::to_string(heads));
    }
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    AttentionCore core{Tensor({m, d}), std::nullopt};
    if (expose_scores) core.scores = Tensor({heads, m, n});
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(queries, h * dh, dh);
        const Tensor kh_t = transpose(slice_cols(keys, h * dh, dh));
        const Tensor vh = slice_cols(values, h * dh, dh);
        const Tensor probs = softmax_rows(scale(matmul(qh, kh_t, meter), inv_sqrt, meter), meter);
        place_cols(core.output, h * dh, matmul(probs, vh, meter));
        if (expose_scores) {
            auto dst = core.scores->data().subspan(h * m * n, m * n);
            std::copy(probs.data().begin(), probs.data().end(), dst.begin());
        }
    }
    return core;
}

BranchOutput attention(const Tensor& x, const BlockWeights& w, std::size_t heads,
                       bool expose_scores, FlopsMeter& meter) {
    Tensor q = matmul(x, w.wq, meter);
    Tensor k = matmul(x, w.wk, meter);
    Tensor v = matmul(x, w.wv, meter);
    AttentionCore core = attend(q, k, v, heads, expose_scores, meter);
    BranchOutput out;
    out.value = matmul(core.output, w.wo, meter);
    out.attention_scores = std::move(core.scores);
    out.keys = std::move(k);
    out.values = std::move(v);
    return out;
}

Tensor mlp(const Tensor& x, const BlockWeights& w, FlopsMeter& meter) {
    Tensor h = gelu(add_row_vector(matmul(x, w.w1, meter), w.b1, meter), meter);
    return add_row_vector(matmul(h, w.w2, meter), w.b2, meter);
}

BranchOutput sublayer_branch(const DiTModel& model, std::size_t l, Sublayer s, const Tensor& x,
                             const Tensor& cond, bool expose_scores, FlopsMeter& meter) {
    const BlockWeights& w = model.block(l);
    const ModelConfig& cfg = model.config();
    if (x.rank() != 2 || x.cols() != cfg.hidden) {
        throw DimensionError("sublayer input has shape " + shape_to_string(x.shape()));
    }
    switch (s) {
        case Sublayer::kAttention: {
            BranchOutput out = attention(x, w, cfg.heads, expose_scores, meter);
            out.value = adaln_apply(out.value, adaln_modulation(w.attn_mod, cond, meter), meter);
            return out;
        }
        case Sublayer::kMlp: {
            BranchOutput out;
            out.value = adaln_apply(mlp(x, w, meter), adaln_modulation(w.mlp_mod, cond, meter), meter);
            return out;
        }
    }
    throw IndexError("unknown sublayer " + std::to_string(static_cast<int>(s)));
}

Tensor block_forward(const DiTModel& model, std::size_t l, const Tensor& x, const Tensor& cond,
                     FlopsMeter& meter) {
    Tensor h = add(x, sublayer_branch(model, l, Sublayer::kAttention, x, cond, false, meter).value, meter);
    return add(h, sublayer_branch(model, l, Sublayer::kMlp, h, cond, false, meter).value, meter);
}

Tensor model_forward_full(const DiTModel& model, const Tensor& x_t, std::size_t t, std::size_t c,
                          FlopsMeter& meter) {
    const Tensor cond = embed_condition(t, c, model);
    Tensor h = prepare_input(model, x_t);
    for (std::size_t l = 0; l < model.config().depth; ++l) h = block_forward(model, l, h, cond, meter);
    return h;
}

}  // namespace duca
