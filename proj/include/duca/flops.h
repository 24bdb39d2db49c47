// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace duca {

// Per-element costs of the non-matmul kernels. A multiply-add is 2 FLOPs.
namespace flop_cost {
inline constexpr std::uint64_t kSoftmax = 4;    // subtract max, exp, accumulate, divide
inline constexpr std::uint64_t kLayerNorm = 5;  // mean, center, square + accumulate, divide
inline constexpr std::uint64_t kGelu = 8;       // tanh approximation
inline constexpr std::uint64_t kSilu = 3;       // exp, add, divide
inline constexpr std::uint64_t kElementwise = 1;
}  // namespace flop_cost

// Counts floating-point operations for one run. Only grows; reset() is for
// run boundaries.
class FlopsMeter {
public:
    void add(std::uint64_t flops) { total_ += flops; }
    std::uint64_t total() const { return total_; }
    void reset() { total_ = 0; }

private:
    std::uint64_t total_ = 0;
};

}  // namespace duca
