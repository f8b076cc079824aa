#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "aai/error.hpp"

namespace aai {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense row-major matrix of 64-bit reals. Mask matrices may hold the
/// negative-infinity sentinel; score and weight matrices stay finite.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct AttentionConfig {
    std::size_t head_dim = 1;
    std::size_t seq_len = 1;

    void validate() const {
        if (head_dim < 1 || seq_len < 1)
            throw Error(ErrorCategory::config, "head_dim and seq_len must be >= 1");
    }
};

}  // namespace aai
