#pragma once

#include <cstddef>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "aai/error.hpp"
#include "aai/matrix.hpp"
#include "aai/trace_io.hpp"

namespace aai {

/// Binarized causal attention map H: bits only in the region i >= j.
struct BinaryAttentionMap {
    std::size_t size = 0;
    std::vector<std::uint8_t> bits;  // row-major size x size

    BinaryAttentionMap() = default;
    explicit BinaryAttentionMap(std::size_t n) : size(n), bits(n * n, 0) {}

    bool at(std::size_t i, std::size_t j) const { return bits[i * size + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits[i * size + j] = v ? 1 : 0; }

    std::size_t active_count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }
};

/// Directional density scores; undefined when the binary map is empty.
struct HeadPattern {
    std::optional<double> diagonal;
    std::optional<double> vertical;
    std::optional<double> horizontal;
    std::size_t active_count = 0;

    bool defined() const { return active_count > 0; }
};

enum class HeadClass { anchor_or_copy, aggregation, other };

inline const char* to_string(HeadClass c) {
    switch (c) {
        case HeadClass::anchor_or_copy: return "anchor_or_copy";
        case HeadClass::aggregation: return "aggregation";
        case HeadClass::other: return "other";
    }
    return "other";
}

/// The printed score formulas and the surrounding prose disagree on which
/// adjacency direction is "vertical". prose: vertical = a key column attended
/// by successive queries (H[i][j] and H[i+1][j]). literal: the formulas as
/// printed (vertical = H[i][j] and H[i][j+1]).
enum class ScoreOrientation { prose, literal };

struct SelectionThresholds {
    double binarize_threshold = 0.04;
    double diag_threshold = 0.3;
    double vert_threshold = 0.6;
    double other_threshold = 0.3;
    ScoreOrientation orientation = ScoreOrientation::prose;
};

inline BinaryAttentionMap binarize(const Matrix& weights, double threshold) {
    if (weights.rows() != weights.cols())
        throw Error(ErrorCategory::shape, "binarize expects a square matrix");
    if (!(threshold > 0.0))
        throw Error(ErrorCategory::config, "binarize threshold must be > 0");

    BinaryAttentionMap map(weights.rows());
    for (std::size_t i = 0; i < weights.rows(); ++i)
        for (std::size_t j = 0; j <= i; ++j)
            map.set(i, j, weights(i, j) > threshold);
    return map;
}

inline HeadPattern directional_scores(const BinaryAttentionMap& map,
                                      ScoreOrientation orientation) {
    const std::size_t len = map.size;
    std::size_t diag_pairs = 0;   // H[i][j] and H[i+1][j+1]
    std::size_t column_pairs = 0; // H[i][j] and H[i+1][j]
    std::size_t row_pairs = 0;    // H[i][j] and H[i][j+1]
    std::size_t active = 0;
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j) {
            if (!map.at(i, j)) continue;
            ++active;
            if (i + 1 < len && j + 1 < len && map.at(i + 1, j + 1)) ++diag_pairs;
            if (i + 1 < len && map.at(i + 1, j)) ++column_pairs;
            if (j + 1 < len && map.at(i, j + 1)) ++row_pairs;
        }

    HeadPattern pattern;
    pattern.active_count = active;
    if (active == 0) return pattern;

    const double total = static_cast<double>(active);
    pattern.diagonal = diag_pairs / total;
    if (orientation == ScoreOrientation::prose) {
        pattern.vertical = column_pairs / total;
        pattern.horizontal = row_pairs / total;
    } else {
        pattern.vertical = row_pairs / total;
        pattern.horizontal = column_pairs / total;
    }
    return pattern;
}

/// anchor/copy when the diagonal score clears its threshold; aggregation when
/// the vertical score is high and the other two stay low. anchor_or_copy wins
/// if both fire.
inline HeadClass classify_head(const HeadPattern& p, const SelectionThresholds& t) {
    if (!p.defined())
        throw Error(ErrorCategory::unclassifiable, "pattern undefined (empty binary map)");
    if (*p.diagonal > t.diag_threshold) return HeadClass::anchor_or_copy;
    if (*p.vertical > t.vert_threshold && *p.horizontal < t.other_threshold &&
        *p.diagonal < t.other_threshold)
        return HeadClass::aggregation;
    return HeadClass::other;
}

struct HeadRecord {
    int layer = 0;
    int head = 0;
    HeadPattern pattern;
    HeadClass cls = HeadClass::other;
};

using HeadTable = std::vector<HeadRecord>;

inline HeadTable analyze_model(const AttentionTrace& trace, const SelectionThresholds& t) {
    HeadTable table;
    table.reserve(static_cast<std::size_t>(trace.num_layers) * trace.num_heads);
    for (int l = 0; l < trace.num_layers; ++l)
        for (int h = 0; h < trace.num_heads; ++h) {
            auto it = trace.weights.find({l, h});
            if (it == trace.weights.end())
                throw Error(ErrorCategory::incomplete_trace,
                            "no weight matrix for layer " + std::to_string(l) +
                                " head " + std::to_string(h));
            HeadRecord rec;
            rec.layer = l;
            rec.head = h;
            rec.pattern = directional_scores(binarize(it->second, t.binarize_threshold),
                                             t.orientation);
            // empty maps stay "other" and are never selected
            rec.cls = rec.pattern.defined() ? classify_head(rec.pattern, t)
                                            : HeadClass::other;
            table.push_back(rec);
        }
    return table;
}

enum class InterventionMode { baseline, aai, aai_agg, all_heads };

inline const char* to_string(InterventionMode m) {
    switch (m) {
        case InterventionMode::baseline: return "baseline";
        case InterventionMode::aai: return "aai";
        case InterventionMode::aai_agg: return "aai-agg";
        case InterventionMode::all_heads: return "all-heads";
    }
    return "baseline";
}

inline std::set<LayerHead> select_heads(const HeadTable& table, InterventionMode mode) {
    std::set<LayerHead> selected;
    for (const auto& rec : table) {
        switch (mode) {
            case InterventionMode::baseline:
                break;
            case InterventionMode::aai:
                if (rec.cls == HeadClass::anchor_or_copy) selected.insert({rec.layer, rec.head});
                break;
            case InterventionMode::aai_agg:
                if (rec.cls == HeadClass::aggregation) selected.insert({rec.layer, rec.head});
                break;
            case InterventionMode::all_heads:
                selected.insert({rec.layer, rec.head});
                break;
        }
    }
    return selected;
}

namespace detail {

inline std::string format_score(const std::optional<double>& s) {
    if (!s) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *s);
    return buf;
}

}  // namespace detail

/// Tab-delimited report: layer, head, s_diag, s_vert, s_horiz, class.
inline std::string format_head_table(const HeadTable& table) {
    std::string out = "layer\thead\ts_diag\ts_vert\ts_horiz\tclass\n";
    for (const auto& rec : table) {
        out += std::to_string(rec.layer) + '\t' + std::to_string(rec.head) + '\t' +
               detail::format_score(rec.pattern.diagonal) + '\t' +
               detail::format_score(rec.pattern.vertical) + '\t' +
               detail::format_score(rec.pattern.horizontal) + '\t' +
               to_string(rec.cls) + '\n';
    }
    return out;
}

/// Structured sidecar next to a trace file: "AAIHEADS1 <json>".
inline std::string head_table_sidecar(const HeadTable& table, const SelectionThresholds& t) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : table) {
        nlohmann::json r{{"layer", rec.layer},
                         {"head", rec.head},
                         {"active", rec.pattern.active_count},
                         {"class", to_string(rec.cls)}};
        if (rec.pattern.defined()) {
            r["s_diag"] = *rec.pattern.diagonal;
            r["s_vert"] = *rec.pattern.vertical;
            r["s_horiz"] = *rec.pattern.horizontal;
        }
        records.push_back(r);
    }
    nlohmann::json doc{{"version", 1},
                       {"binarize_threshold", t.binarize_threshold},
                       {"diag_threshold", t.diag_threshold},
                       {"vert_threshold", t.vert_threshold},
                       {"other_threshold", t.other_threshold},
                       {"orientation", t.orientation == ScoreOrientation::prose ? "prose" : "literal"},
                       {"records", records}};
    return std::string("AAIHEADS1 ") + doc.dump() + "\n";
}

}  // namespace aai
