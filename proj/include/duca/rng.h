// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace duca {

// Seeded random source with a fully specified output sequence: std::mt19937_64
// plus in-house uniform and Gaussian transforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Derives an independent stream from a seed and a stream tag.
    static Rng stream(std::uint64_t seed, std::uint64_t tag);

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Standard normal (Box-Muller).
    double normal();
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace duca
