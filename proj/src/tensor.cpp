// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "duca/errors.h"

namespace duca {

namespace {

void require_rows_in_range(std::span<const std::size_t> rows, std::size_t n, const char* op) {
    for (std::size_t r : rows) {
        if (r >= n) throw IndexError(std::string(op) + ": row " + std::to_string(r) + " of " + std::to_string(n));
    }
}

std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one dimension");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
    }
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + " expects a matrix, got shape " +
                             shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape_) + " needs " +
                             std::to_string(shape_product(shape_)) + " elements, got " +
                             std::to_string(data_.size()));
    }
}

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols()");
    return shape_[1];
}

std::span<const double> Tensor::row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * shape_[1], shape_[1]);
}

std::span<double> Tensor::row(std::size_t i) {
    return std::span<double>(data_).subspan(i * shape_[1], shape_[1]);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b, FlopsMeter& meter) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
                             " · " + shape_to_string(b.shape()));
    }
    Tensor c({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();
    // i-k-j order: every output row depends only on the matching input row,
    // so computing a subset of rows is bit-identical to slicing a full product.
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    meter.add(2ull * m * k * n);
    return c;
}

Tensor transpose(const Tensor& t) {
    require_rank2(t, "transpose");
    Tensor out({t.dim(1), t.dim(0)});
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) out(j, i) = t(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, FlopsMeter& meter) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
    meter.add(flop_cost::kElementwise * out.numel());
    return out;
}

Tensor add_row_vector(const Tensor& m, const Tensor& v, FlopsMeter& meter) {
    require_rank2(m, "add_row_vector");
    if (v.numel() != m.dim(1)) {
        throw DimensionError("add_row_vector: " + shape_to_string(m.shape()) + " + " +
                             shape_to_string(v.shape()));
    }
    Tensor out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += v[j];
    }
    meter.add(flop_cost::kElementwise * out.numel());
    return out;
}

Tensor scale(const Tensor& t, double factor, FlopsMeter& meter) {
    Tensor out = t;
    for (double& v : out.data()) v *= factor;
    meter.add(flop_cost::kElementwise * out.numel());
    return out;
}

Tensor softmax_rows(const Tensor& t, FlopsMeter& meter) {
    require_rank2(t, "softmax_rows");
    Tensor out = t;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double sum = 0.0;
        for (double& v : r) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : r) v /= sum;
    }
    meter.add(flop_cost::kSoftmax * out.numel());
    return out;
}

Tensor softmax_rows(const Tensor& t) {
    FlopsMeter scratch;
    return softmax_rows(t, scratch);
}

Tensor layer_norm(const Tensor& x, FlopsMeter& meter) {
    require_rank2(x, "layer_norm");
    const std::size_t d = x.dim(1);
    if (d < 2) {
        throw DegenerateInputError("layer_norm needs at least 2 channels, got " + std::to_string(d));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double denom = std::sqrt(var + kLayerNormEpsilon);
        for (double& v : r) v = (v - mean) / denom;
    }
    meter.add(flop_cost::kLayerNorm * out.numel());
    return out;
}

Tensor layer_norm(const Tensor& x) {
    FlopsMeter scratch;
    return layer_norm(x, scratch);
}

double gelu_scalar(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x)));
}

Tensor gelu(const Tensor& x, FlopsMeter& meter) {
    Tensor out = x;
    for (double& v : out.data()) v = gelu_scalar(v);
    meter.add(flop_cost::kGelu * out.numel());
    return out;
}

Tensor gelu(const Tensor& x) {
    FlopsMeter scratch;
    return gelu(x, scratch);
}

Tensor silu(const Tensor& x, FlopsMeter& meter) {
    Tensor out = x;
    for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
    meter.add(flop_cost::kSilu * out.numel());
    return out;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("cosine_similarity: shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    return cosine_similarity(a.data(), b.data());
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    require_rank2(t, "gather_rows");
    require_rows_in_range(rows, t.dim(0), "gather_rows");
    Tensor out({rows.size(), t.dim(1)});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = t.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

void scatter_rows(Tensor& dst, std::span<const std::size_t> rows, const Tensor& src) {
    require_rank2(dst, "scatter_rows");
    if (src.rank() != 2 || src.dim(0) != rows.size() || src.dim(1) != dst.dim(1)) {
        throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " rows into " +
                             shape_to_string(dst.shape()) + " from " + shape_to_string(src.shape()));
    }
    require_rows_in_range(rows, dst.dim(0), "scatter_rows");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto s = src.row(i);
        std::copy(s.begin(), s.end(), dst.row(rows[i]).begin());
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace duca
