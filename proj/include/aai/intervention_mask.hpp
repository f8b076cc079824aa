#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "aai/error.hpp"
#include "aai/matrix.hpp"
#include "aai/rule_structure.hpp"
#include "aai/trace_io.hpp"

namespace aai {

enum class MedianScope { causal_entries, all_entries };

struct ReweightParams {
    double coefficient = 1.0;
    double bias = 0.0;
    // Acausal scores never reach the softmax, so the median is taken over the
    // i >= j entries by default; all_entries reads the formula literally.
    MedianScope median_scope = MedianScope::causal_entries;
};

struct HeadMaskPlan {
    std::set<LayerHead> selected_heads;
    ReferencePairSets pairs;
    ReweightParams params;
    bool prefill_only = true;

    bool selects(int layer, int head) const {
        return selected_heads.count({layer, head}) != 0;
    }
};

/// Entry (i, j) = -inf for i < j, 0 otherwise.
inline Matrix causal_mask(std::size_t len) {
    if (len < 1) throw Error(ErrorCategory::config, "mask length must be >= 1");
    Matrix m(len, len, 0.0);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = i + 1; j < len; ++j) m(i, j) = kNegInf;
    return m;
}

/// -inf exactly at the no-reference pairs, 0 elsewhere.
inline Matrix noref_mask(std::size_t len, const ReferencePairSets& pairs) {
    Matrix m(len, len, 0.0);
    for (const auto& [i, j] : pairs.noref_pairs) {
        if (i >= len || j >= len)
            throw Error(ErrorCategory::bounds,
                        "noref pair (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside length " + std::to_string(len));
        m(i, j) = kNegInf;
    }
    return m;
}

/// Median of this head's scores over the given scope. Even-length multisets
/// take the midpoint of the two middle values.
inline double score_median(const Matrix& scores, MedianScope scope) {
    std::vector<double> values;
    if (scope == MedianScope::causal_entries) {
        for (std::size_t i = 0; i < scores.rows(); ++i)
            for (std::size_t j = 0; j <= i && j < scores.cols(); ++j)
                values.push_back(scores(i, j));
    } else {
        values = scores.data();
    }
    if (values.empty())
        throw Error(ErrorCategory::degenerate_input, "median over empty score scope");

    const std::size_t n = values.size();
    auto mid = values.begin() + n / 2;
    std::nth_element(values.begin(), mid, values.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return (lower + upper) / 2.0;
}

/// coefficient * median(scores) + bias at every reference pair, 0 elsewhere.
/// The median is recomputed from the scores of each forward pass.
inline Matrix ref_mask(const Matrix& scores, const ReferencePairSets& pairs,
                       const ReweightParams& params) {
    if (scores.rows() != scores.cols())
        throw Error(ErrorCategory::shape, "ref_mask expects a square score matrix");
    const std::size_t len = scores.rows();
    Matrix m(len, len, 0.0);
    if (pairs.ref_pairs.empty()) return m;

    const double value = params.coefficient * score_median(scores, params.median_scope) +
                         params.bias;
    for (const auto& [i, j] : pairs.ref_pairs) {
        if (i >= len || j >= len)
            throw Error(ErrorCategory::bounds,
                        "ref pair (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside length " + std::to_string(len));
        m(i, j) = value;
    }
    return m;
}

/// Selected heads get M^Ref + M^NoRef + M^Causal; everything else gets the
/// plain causal mask. -inf plus any finite value stays -inf.
inline Matrix compose_final(const Matrix& scores, const HeadMaskPlan& plan, int layer,
                            int head, std::size_t len) {
    if (scores.rows() != len || scores.cols() != len)
        throw Error(ErrorCategory::shape, "score matrix does not match mask length");
    Matrix m = causal_mask(len);
    if (!plan.selects(layer, head)) return m;

    const Matrix boost = ref_mask(scores, plan.pairs, plan.params);
    const Matrix suppress = noref_mask(len, plan.pairs);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j)
            m(i, j) = boost(i, j) + suppress(i, j) + m(i, j);
    return m;
}

}  // namespace aai
