// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0
//
// Raw binary weight files.
//
//   offset  size  field
//   0       4     magic "DUCA"
//   4       4     format version (uint32 LE, currently 1)
//   8       4     depth          (int32 LE)
//   12      4     hidden         (int32 LE)
//   16      4     heads          (int32 LE)
//   20      4     tokens         (int32 LE)
//   24      4     classes        (int32 LE)
//   28      4     mlp_hidden     (int32 LE)
//   32      4     max_timesteps  (int32 LE)
//   36      ...   every tensor of weight_layout() in order, row-major,
//                 IEEE-754 binary64 little-endian
//
// mlp_ratio is recovered as mlp_hidden / hidden.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duca/model.h"

namespace duca {

inline constexpr char kWeightMagic[4] = {'D', 'U', 'C', 'A'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;
inline constexpr std::size_t kWeightHeaderBytes = 36;

std::vector<std::uint8_t> encode_weights(const DiTModel& model);
DiTModel decode_weights(const std::vector<std::uint8_t>& bytes);

void save_weights(const DiTModel& model, const std::filesystem::path& path);
DiTModel load_weights(const std::filesystem::path& path);

}  // namespace duca
