// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace duca {

// Shape or length mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input for which an operation is undefined (e.g. layer norm over a single channel).
class DegenerateInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid user-facing configuration. The CLI maps this to exit status 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Timestep outside the range a reverse step is defined for.
class StepRangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Cache read before any fresh step populated it.
class CacheStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A selection strategy needs something the execution mode does not provide,
// e.g. attention scores under efficient attention.
class CapabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Trajectories that cannot be compared (length or shape mismatch).
class ComparisonError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FilesystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace duca
