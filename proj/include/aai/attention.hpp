#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "aai/error.hpp"
#include "aai/matrix.hpp"

namespace aai {

/// S[i][j] = dot(q_i, k_j) / sqrt(head_dim) for row vectors q_i, k_j.
/// head_dim is the 1/sqrt(d) scaling parameter; it usually equals the column
/// count but is passed separately.
inline Matrix scaled_dot_product(const Matrix& q, const Matrix& k, std::size_t head_dim) {
    if (head_dim == 0)
        throw Error(ErrorCategory::config, "head_dim must be positive");
    if (!q.same_shape(k))
        throw Error(ErrorCategory::shape, "query/key shape mismatch");

    const std::size_t len = q.rows();
    const std::size_t width = q.cols();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Matrix scores(len, len);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
            double dot = 0.0;
            for (std::size_t d = 0; d < width; ++d) dot += q(i, d) * k(j, d);
            scores(i, j) = dot * inv_sqrt_d;
        }
    }
    return scores;
}

/// Row-wise softmax of scores + mask. Mask entries are finite or -inf;
/// -inf positions come out exactly 0. Max subtraction keeps large mask
/// biases from overflowing exp.
inline Matrix masked_softmax(const Matrix& scores, const Matrix& mask) {
    if (!scores.same_shape(mask))
        throw Error(ErrorCategory::shape, "score/mask shape mismatch");

    const std::size_t rows = scores.rows();
    const std::size_t cols = scores.cols();
    Matrix weights(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double row_max = kNegInf;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = scores(i, j) + mask(i, j);
            if (v > row_max) row_max = v;
        }
        if (row_max == kNegInf)
            throw Error(ErrorCategory::degenerate_input,
                        "fully masked row " + std::to_string(i));
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = scores(i, j) + mask(i, j);
            const double e = (v == kNegInf) ? 0.0 : std::exp(v - row_max);
            weights(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < cols; ++j) weights(i, j) /= denom;
    }
    return weights;
}

/// Output row i is the weights[i]-weighted combination of rows of values.
inline Matrix attend(const Matrix& weights, const Matrix& values) {
    if (weights.cols() != values.rows())
        throw Error(ErrorCategory::shape, "attend inner dimension mismatch");

    Matrix out(weights.rows(), values.cols());
    for (std::size_t i = 0; i < weights.rows(); ++i)
        for (std::size_t j = 0; j < weights.cols(); ++j) {
            const double w = weights(i, j);
            if (w == 0.0) continue;
            for (std::size_t d = 0; d < values.cols(); ++d)
                out(i, d) += w * values(j, d);
        }
    return out;
}

}  // namespace aai
