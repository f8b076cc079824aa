#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aai/error.hpp"
#include "aai/matrix.hpp"

namespace aai {

using LayerHead = std::pair<int, int>;

/// Per-(layer, head) attention capture from one forward pass.
/// Weight matrices are row-stochastic; scores are the pre-softmax values.
struct AttentionTrace {
    int num_layers = 0;
    int num_heads = 0;
    std::size_t seq_len = 0;
    std::vector<std::string> tokens;  // surface forms, one per position
    std::map<LayerHead, Matrix> weights;
    std::map<LayerHead, Matrix> scores;  // optional; empty map when absent

    bool has_scores() const { return !scores.empty(); }

    bool complete() const {
        for (int l = 0; l < num_layers; ++l)
            for (int h = 0; h < num_heads; ++h)
                if (!weights.count({l, h})) return false;
        return true;
    }
};

namespace detail {

inline constexpr char kTraceMagic[] = "AAITRACE1";

inline void write_le_doubles(std::ostream& out, const std::vector<double>& values) {
    for (double v : values) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t swapped = 0;
            for (int b = 0; b < 8; ++b)
                swapped |= ((bits >> (b * 8)) & 0xffu) << ((7 - b) * 8);
            bits = swapped;
        }
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.write(buf, 8);
    }
}

inline bool read_le_doubles(std::istream& in, std::vector<double>& values) {
    for (double& v : values) {
        char buf[8];
        in.read(buf, 8);
        if (in.gcount() != 8) return false;
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t swapped = 0;
            for (int b = 0; b < 8; ++b)
                swapped |= ((bits >> (b * 8)) & 0xffu) << ((7 - b) * 8);
            bits = swapped;
        }
        v = std::bit_cast<double>(bits);
    }
    return true;
}

inline void check_row_stochastic(const Matrix& m, double tol, const std::string& what) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (!(v >= 0.0) || !std::isfinite(v))
                throw Error(ErrorCategory::format, what + ": weight out of range");
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol)
            throw Error(ErrorCategory::format,
                        what + ": row " + std::to_string(i) + " sums to " +
                            std::to_string(sum));
    }
}

}  // namespace detail

/// File layout: one text header line "AAITRACE1 <json>\n" with metadata
/// {version, num_layers, num_heads, seq_len, tokens, has_scores}, then the
/// weight matrices as raw little-endian doubles (layer-major, head-minor,
/// row-major), then the score matrices in the same order when present.
inline void export_trace(const AttentionTrace& trace, const std::string& path) {
    if (!trace.complete())
        throw Error(ErrorCategory::incomplete_trace, "trace is missing head matrices");

    nlohmann::json meta{{"version", 1},
                        {"num_layers", trace.num_layers},
                        {"num_heads", trace.num_heads},
                        {"seq_len", trace.seq_len},
                        {"tokens", trace.tokens},
                        {"has_scores", trace.has_scores()}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCategory::io, "cannot open " + path + " for writing");
    // token surfaces may carry arbitrary bytes; never let the header throw
    out << detail::kTraceMagic << ' '
        << meta.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    for (int l = 0; l < trace.num_layers; ++l)
        for (int h = 0; h < trace.num_heads; ++h)
            detail::write_le_doubles(out, trace.weights.at({l, h}).data());
    if (trace.has_scores()) {
        for (int l = 0; l < trace.num_layers; ++l)
            for (int h = 0; h < trace.num_heads; ++h) {
                auto it = trace.scores.find({l, h});
                if (it == trace.scores.end())
                    throw Error(ErrorCategory::incomplete_trace,
                                "score matrices present for only some heads");
                detail::write_le_doubles(out, it->second.data());
            }
    }
    if (!out) throw Error(ErrorCategory::io, "write failed for " + path);
}

inline AttentionTrace import_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::io, "cannot open " + path);

    std::string header;
    if (!std::getline(in, header))
        throw Error(ErrorCategory::format, "missing trace header");
    const std::string magic = detail::kTraceMagic;
    if (header.rfind(magic + " ", 0) != 0)
        throw Error(ErrorCategory::format, "bad trace magic");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(header.substr(magic.size() + 1));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::format, std::string("bad trace metadata: ") + e.what());
    }

    AttentionTrace trace;
    try {
        if (meta.at("version").get<int>() != 1)
            throw Error(ErrorCategory::format, "unsupported trace version");
        trace.num_layers = meta.at("num_layers").get<int>();
        trace.num_heads = meta.at("num_heads").get<int>();
        trace.seq_len = meta.at("seq_len").get<std::size_t>();
        trace.tokens = meta.at("tokens").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::format, std::string("bad trace metadata: ") + e.what());
    }
    if (trace.num_layers < 1 || trace.num_heads < 1 || trace.seq_len < 1)
        throw Error(ErrorCategory::format, "trace dimensions must be positive");
    const bool expect_scores = meta.value("has_scores", false);

    const std::size_t len = trace.seq_len;
    for (int l = 0; l < trace.num_layers; ++l)
        for (int h = 0; h < trace.num_heads; ++h) {
            Matrix m(len, len);
            if (!detail::read_le_doubles(in, m.data()))
                throw Error(ErrorCategory::incomplete_trace,
                            "trace truncated: missing weights for layer " +
                                std::to_string(l) + " head " + std::to_string(h));
            detail::check_row_stochastic(m, 1e-6, "layer " + std::to_string(l) +
                                                      " head " + std::to_string(h));
            trace.weights[{l, h}] = std::move(m);
        }
    if (expect_scores)
        for (int l = 0; l < trace.num_layers; ++l)
            for (int h = 0; h < trace.num_heads; ++h) {
                Matrix m(len, len);
                if (!detail::read_le_doubles(in, m.data()))
                    throw Error(ErrorCategory::incomplete_trace,
                                "trace truncated: missing scores for layer " +
                                    std::to_string(l) + " head " + std::to_string(h));
                trace.scores[{l, h}] = std::move(m);
            }
    char extra;
    if (in.read(&extra, 1).gcount() == 1)
        throw Error(ErrorCategory::format, "trailing bytes after trace payload");
    return trace;
}

}  // namespace aai
