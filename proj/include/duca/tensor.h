// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "duca/flops.h"

namespace duca {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. Every dimension is positive and the
// element count always equals the product of the shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor vector(std::vector<double> data);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rank-2 helpers.
    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const double> row(std::size_t i) const;
    std::span<double> row(std::size_t i);
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// a[m×k] · b[k×n]. Adds 2·m·k·n to the meter.
Tensor matmul(const Tensor& a, const Tensor& b, FlopsMeter& meter);

Tensor transpose(const Tensor& t);

// Elementwise a + b, metered at one FLOP per element.
Tensor add(const Tensor& a, const Tensor& b, FlopsMeter& meter);
// Adds a length-n vector to every row of an m×n matrix.
Tensor add_row_vector(const Tensor& m, const Tensor& v, FlopsMeter& meter);
Tensor scale(const Tensor& t, double factor, FlopsMeter& meter);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& t, FlopsMeter& meter);
Tensor softmax_rows(const Tensor& t);

inline constexpr double kLayerNormEpsilon = 1e-5;

// Per-row normalization to zero mean and unit variance (population variance,
// epsilon inside the square root). Requires at least two columns.
Tensor layer_norm(const Tensor& x, FlopsMeter& meter);
Tensor layer_norm(const Tensor& x);

// Tanh-approximation GELU.
Tensor gelu(const Tensor& x, FlopsMeter& meter);
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);

Tensor silu(const Tensor& x, FlopsMeter& meter);

// dot(a, b) / (|a| |b|). Defined as 0 when either side is the zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Tensor& a, const Tensor& b);

double l2_norm(std::span<const double> v);

// Row gather/scatter for token subsets. No FLOPs.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);
void scatter_rows(Tensor& dst, std::span<const std::size_t> rows, const Tensor& src);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace duca
