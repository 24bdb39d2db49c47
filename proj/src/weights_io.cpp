// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/weights_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "duca/errors.h"

namespace duca {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ConfigError("weight file truncated at byte " + std::to_string(pos_));
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

std::size_t header_field(std::int32_t v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("weight file field ") + name + " must be positive");
    return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const DiTModel& model) {
    const ModelConfig& cfg = model.config();
    std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
    put_u32(out, kWeightFormatVersion);
    for (std::size_t v : {cfg.depth, cfg.hidden, cfg.heads, cfg.tokens, cfg.classes, cfg.mlp_hidden(),
                          cfg.max_timesteps}) {
        put_u32(out, static_cast<std::uint32_t>(v));
    }
    model.for_each_weight([&](const std::string&, const Tensor& t) {
        for (double v : t.data()) put_f64(out, v);
    });
    return out;
}

DiTModel decode_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kWeightHeaderBytes || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
        throw ConfigError("not a weight file (bad magic)");
    }
    const std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
    Reader r(body);
    const std::uint32_t version = r.u32();
    if (version != kWeightFormatVersion) {
        throw ConfigError("unsupported weight file version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.depth = header_field(r.i32(), "depth");
    cfg.hidden = header_field(r.i32(), "hidden");
    cfg.heads = header_field(r.i32(), "heads");
    cfg.tokens = header_field(r.i32(), "tokens");
    cfg.classes = header_field(r.i32(), "classes");
    const std::size_t mlp_hidden = header_field(r.i32(), "mlp_hidden");
    cfg.max_timesteps = header_field(r.i32(), "max_timesteps");
    cfg.mlp_ratio = static_cast<double>(mlp_hidden) / static_cast<double>(cfg.hidden);
    cfg.validate();
    if (cfg.mlp_hidden() != mlp_hidden) {
        throw ConfigError("mlp_hidden " + std::to_string(mlp_hidden) + " not representable");
    }

    std::vector<Tensor> weights;
    for (const WeightSlot& slot : weight_layout(cfg)) {
        Tensor t(slot.shape);
        for (double& v : t.data()) v = r.f64();
        weights.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw ConfigError("weight file has " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return model_from_weights(cfg, std::move(weights));
}

void save_weights(const DiTModel& model, const std::filesystem::path& path) {
    const auto bytes = encode_weights(model);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FilesystemError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FilesystemError("write failed for " + path.string());
}

DiTModel load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FilesystemError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_weights(bytes);
}

}  // namespace duca
