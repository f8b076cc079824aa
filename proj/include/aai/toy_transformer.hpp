#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "aai/attention.hpp"
#include "aai/error.hpp"
#include "aai/intervention_mask.hpp"
#include "aai/matrix.hpp"
#include "aai/rng.hpp"
#include "aai/trace_io.hpp"

namespace aai {

/// Byte-level vocabulary: ids 0..255 are raw bytes, 256/257 are <bos>/<eos>,
/// anything above is spare.
inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;

struct ModelConfig {
    int num_layers = 2;
    int num_heads = 2;
    std::size_t model_dim = 32;
    std::size_t head_dim = 16;
    std::size_t vocab_size = 258;
    std::size_t max_seq = 512;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_layers < 1 || num_heads < 1)
            throw Error(ErrorCategory::config, "need at least one layer and head");
        if (model_dim != static_cast<std::size_t>(num_heads) * head_dim)
            throw Error(ErrorCategory::config,
                        "model_dim must equal num_heads * head_dim");
        if (vocab_size < 1 || max_seq < 1)
            throw Error(ErrorCategory::config, "vocab_size and max_seq must be >= 1");
    }
};

/// Pre-norm decoder block parameters. Linear weights are [out x in] row-major,
/// applied as y = W x + b. The feed-forward hidden width is 4 * model_dim.
struct BlockParams {
    std::vector<double> ln1_gain, ln1_bias;
    std::vector<double> wq, wk, wv, wo;
    std::vector<double> bq, bk, bv, bo;
    std::vector<double> ln2_gain, ln2_bias;
    std::vector<double> w_ff1, b_ff1;
    std::vector<double> w_ff2, b_ff2;
};

struct Model {
    ModelConfig config;
    std::vector<double> tok_emb;  // vocab x dim
    std::vector<double> pos_emb;  // max_seq x dim
    std::vector<BlockParams> blocks;
    std::vector<double> lnf_gain, lnf_bias;
    std::vector<double> unemb;  // vocab x dim

    std::size_t ff_dim() const { return 4 * config.model_dim; }
};

namespace detail {

inline void fill_uniform(std::vector<double>& v, std::size_t n, DetRng& rng, double scale) {
    v.resize(n);
    for (auto& x : v) x = rng.symmetric(scale);
}

inline double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline void layer_norm(const double* x, const double* gain, const double* bias,
                       std::size_t dim, double* out) {
    double mean = 0.0;
    for (std::size_t d = 0; d < dim; ++d) mean += x[d];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        const double diff = x[d] - mean;
        var += diff * diff;
    }
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t d = 0; d < dim; ++d)
        out[d] = gain[d] * (x[d] - mean) * inv + bias[d];
}

/// y = W x + b with W laid out [out x in] row-major.
inline void linear(const std::vector<double>& w, const std::vector<double>& b,
                   const double* x, std::size_t in_dim, std::size_t out_dim, double* y) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        const double* row = w.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

}  // namespace detail

inline Model init_model(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    DetRng rng(config.seed);
    const std::size_t dim = config.model_dim;
    const std::size_t ff = 4 * dim;
    const double emb_scale = 0.6;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    const double ff_scale = 1.0 / std::sqrt(static_cast<double>(ff));

    detail::fill_uniform(model.tok_emb, config.vocab_size * dim, rng, emb_scale);
    detail::fill_uniform(model.pos_emb, config.max_seq * dim, rng, emb_scale);
    model.blocks.resize(config.num_layers);
    for (auto& blk : model.blocks) {
        blk.ln1_gain.assign(dim, 1.0);
        blk.ln1_bias.assign(dim, 0.0);
        detail::fill_uniform(blk.wq, dim * dim, rng, w_scale);
        detail::fill_uniform(blk.wk, dim * dim, rng, w_scale);
        detail::fill_uniform(blk.wv, dim * dim, rng, w_scale);
        detail::fill_uniform(blk.wo, dim * dim, rng, w_scale);
        blk.bq.assign(dim, 0.0);
        blk.bk.assign(dim, 0.0);
        blk.bv.assign(dim, 0.0);
        blk.bo.assign(dim, 0.0);
        blk.ln2_gain.assign(dim, 1.0);
        blk.ln2_bias.assign(dim, 0.0);
        detail::fill_uniform(blk.w_ff1, ff * dim, rng, w_scale);
        blk.b_ff1.assign(ff, 0.0);
        detail::fill_uniform(blk.w_ff2, dim * ff, rng, ff_scale);
        blk.b_ff2.assign(dim, 0.0);
    }
    model.lnf_gain.assign(dim, 1.0);
    model.lnf_bias.assign(dim, 0.0);
    detail::fill_uniform(model.unemb, config.vocab_size * dim, rng, w_scale);
    return model;
}

inline std::vector<int> encode_text(const std::string& text, const ModelConfig& config) {
    if (config.vocab_size < 256)
        throw Error(ErrorCategory::config, "byte encoding needs vocab_size >= 256");
    std::vector<int> tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
    return tokens;
}

inline std::string token_surface(int token) {
    if (token >= 0 && token < 256) {
        const auto c = static_cast<unsigned char>(token);
        if (c >= 0x20 && c < 0x7f) return std::string(1, static_cast<char>(c));
        char buf[8];
        std::snprintf(buf, sizeof(buf), "\\x%02x", c);
        return buf;
    }
    if (token == kBosToken) return "<bos>";
    if (token == kEosToken) return "<eos>";
    return "<extra" + std::to_string(token) + ">";
}

inline std::string decode_text(const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens)
        if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
    return out;
}

struct PrefillResult {
    std::vector<double> hidden;  // seq x dim, after the final layer norm
    std::vector<double> logits;  // seq x vocab
    AttentionTrace trace;
    std::vector<std::vector<double>> key_cache;    // [layer] -> seq x dim
    std::vector<std::vector<double>> value_cache;  // [layer] -> seq x dim
};

/// Full forward pass over the prompt. Every head's mask comes from
/// compose_final under the plan; the trace records post-intervention weights
/// and pre-intervention scores.
inline PrefillResult prefill(const Model& model, const std::vector<int>& tokens,
                             const HeadMaskPlan& plan, bool capture_trace = true) {
    const ModelConfig& cfg = model.config;
    const std::size_t len = tokens.size();
    if (len == 0) throw Error(ErrorCategory::length, "empty prompt");
    if (len > cfg.max_seq)
        throw Error(ErrorCategory::length,
                    "prompt length " + std::to_string(len) + " exceeds max_seq " +
                        std::to_string(cfg.max_seq));
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw Error(ErrorCategory::bounds, "token id outside vocabulary");

    const std::size_t dim = cfg.model_dim;
    const std::size_t hd = cfg.head_dim;
    const std::size_t ff = model.ff_dim();

    // decode-phase plans carry pairs for generated rows too; prefill only
    // sees its own slice. prefill-only plans keep the hard bounds check.
    const HeadMaskPlan* active_plan = &plan;
    HeadMaskPlan clipped;
    if (!plan.prefill_only) {
        clipped = plan;
        clipped.pairs.ref_pairs.clear();
        clipped.pairs.noref_pairs.clear();
        for (const auto& p : plan.pairs.ref_pairs)
            if (p.first < len && p.second < len) clipped.pairs.ref_pairs.insert(p);
        for (const auto& p : plan.pairs.noref_pairs)
            if (p.first < len && p.second < len) clipped.pairs.noref_pairs.insert(p);
        active_plan = &clipped;
    }

    PrefillResult result;
    result.trace.num_layers = cfg.num_layers;
    result.trace.num_heads = cfg.num_heads;
    result.trace.seq_len = len;
    for (int t : tokens) result.trace.tokens.push_back(token_surface(t));
    result.key_cache.resize(cfg.num_layers);
    result.value_cache.resize(cfg.num_layers);

    std::vector<double> x(len * dim);
    for (std::size_t p = 0; p < len; ++p)
        for (std::size_t d = 0; d < dim; ++d)
            x[p * dim + d] = model.tok_emb[tokens[p] * dim + d] + model.pos_emb[p * dim + d];

    std::vector<double> normed(len * dim), q(len * dim), k(len * dim), v(len * dim);
    std::vector<double> att_mix(len * dim), proj(dim), ffn_hidden(ff);

    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        const BlockParams& blk = model.blocks[layer];
        for (std::size_t p = 0; p < len; ++p)
            detail::layer_norm(&x[p * dim], blk.ln1_gain.data(), blk.ln1_bias.data(), dim,
                               &normed[p * dim]);
        for (std::size_t p = 0; p < len; ++p) {
            detail::linear(blk.wq, blk.bq, &normed[p * dim], dim, dim, &q[p * dim]);
            detail::linear(blk.wk, blk.bk, &normed[p * dim], dim, dim, &k[p * dim]);
            detail::linear(blk.wv, blk.bv, &normed[p * dim], dim, dim, &v[p * dim]);
        }
        result.key_cache[layer] = k;
        result.value_cache[layer] = v;

        for (int head = 0; head < cfg.num_heads; ++head) {
            const std::size_t off = head * hd;
            Matrix qh(len, hd), kh(len, hd), vh(len, hd);
            for (std::size_t p = 0; p < len; ++p)
                for (std::size_t d = 0; d < hd; ++d) {
                    qh(p, d) = q[p * dim + off + d];
                    kh(p, d) = k[p * dim + off + d];
                    vh(p, d) = v[p * dim + off + d];
                }
            Matrix scores = scaled_dot_product(qh, kh, hd);
            Matrix mask = compose_final(scores, *active_plan, layer, head, len);
            Matrix weights = masked_softmax(scores, mask);
            Matrix mixed = attend(weights, vh);
            for (std::size_t p = 0; p < len; ++p)
                for (std::size_t d = 0; d < hd; ++d)
                    att_mix[p * dim + off + d] = mixed(p, d);
            if (capture_trace) {
                result.trace.weights[{layer, head}] = std::move(weights);
                result.trace.scores[{layer, head}] = std::move(scores);
            }
        }
        for (std::size_t p = 0; p < len; ++p) {
            detail::linear(blk.wo, blk.bo, &att_mix[p * dim], dim, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d) x[p * dim + d] += proj[d];
        }
        for (std::size_t p = 0; p < len; ++p) {
            detail::layer_norm(&x[p * dim], blk.ln2_gain.data(), blk.ln2_bias.data(), dim,
                               &normed[p * dim]);
            detail::linear(blk.w_ff1, blk.b_ff1, &normed[p * dim], dim, ff, ffn_hidden.data());
            for (std::size_t h = 0; h < ff; ++h) ffn_hidden[h] = detail::gelu(ffn_hidden[h]);
            detail::linear(blk.w_ff2, blk.b_ff2, ffn_hidden.data(), ff, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d) x[p * dim + d] += proj[d];
        }
    }

    result.hidden.resize(len * dim);
    for (std::size_t p = 0; p < len; ++p)
        detail::layer_norm(&x[p * dim], model.lnf_gain.data(), model.lnf_bias.data(), dim,
                           &result.hidden[p * dim]);
    result.logits.resize(len * cfg.vocab_size);
    for (std::size_t p = 0; p < len; ++p)
        detail::linear(model.unemb, {}, &result.hidden[p * dim], dim, cfg.vocab_size,
                       &result.logits[p * cfg.vocab_size]);
    return result;
}

namespace detail {

inline int argmax_lowest_id(const double* logits, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<int>(best);
}

}  // namespace detail

/// Greedy decoding on top of the prefill KV cache. With prefill_only plans the
/// decode rows use plain causal attention; the prompt-side intervention still
/// carries through the cached keys/values. Ties pick the lowest token id.
inline std::vector<int> greedy_decode(const Model& model, const std::vector<int>& prompt,
                                      const HeadMaskPlan& plan, std::size_t max_new,
                                      const std::set<int>& stop_tokens = {}) {
    const ModelConfig& cfg = model.config;
    if (prompt.size() + max_new > cfg.max_seq)
        throw Error(ErrorCategory::length, "prompt plus max_new exceeds max_seq");
    std::vector<int> generated;
    if (max_new == 0) return generated;

    PrefillResult state = prefill(model, prompt, plan, /*capture_trace=*/false);
    const std::size_t dim = cfg.model_dim;
    const std::size_t hd = cfg.head_dim;
    const std::size_t ff = model.ff_dim();

    int next = detail::argmax_lowest_id(
        &state.logits[(prompt.size() - 1) * cfg.vocab_size], cfg.vocab_size);

    std::vector<double> x(dim), normed(dim), qv(dim), kv(dim), vv(dim);
    std::vector<double> att(dim), proj(dim), ffn_hidden(ff), logits(cfg.vocab_size);

    for (std::size_t step = 0; step < max_new; ++step) {
        if (stop_tokens.count(next)) break;
        generated.push_back(next);
        if (step + 1 == max_new) break;

        const std::size_t pos = prompt.size() + step;
        for (std::size_t d = 0; d < dim; ++d)
            x[d] = model.tok_emb[next * dim + d] + model.pos_emb[pos * dim + d];

        for (int layer = 0; layer < cfg.num_layers; ++layer) {
            const BlockParams& blk = model.blocks[layer];
            detail::layer_norm(x.data(), blk.ln1_gain.data(), blk.ln1_bias.data(), dim,
                               normed.data());
            detail::linear(blk.wq, blk.bq, normed.data(), dim, dim, qv.data());
            detail::linear(blk.wk, blk.bk, normed.data(), dim, dim, kv.data());
            detail::linear(blk.wv, blk.bv, normed.data(), dim, dim, vv.data());
            auto& kc = state.key_cache[layer];
            auto& vc = state.value_cache[layer];
            kc.insert(kc.end(), kv.begin(), kv.end());
            vc.insert(vc.end(), vv.begin(), vv.end());
            const std::size_t klen = kc.size() / dim;

            for (int head = 0; head < cfg.num_heads; ++head) {
                const std::size_t off = head * hd;
                std::vector<double> row(klen);
                const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
                for (std::size_t j = 0; j < klen; ++j) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < hd; ++d)
                        dot += qv[off + d] * kc[j * dim + off + d];
                    row[j] = dot * inv_sqrt;
                }
                std::vector<double> biased = row;
                if (!plan.prefill_only && plan.selects(layer, head)) {
                    // decode-phase extension: masks for the new query row only,
                    // median taken from this row's original scores
                    Matrix row_scores(1, klen);
                    for (std::size_t j = 0; j < klen; ++j) row_scores(0, j) = row[j];
                    const double boost =
                        plan.params.coefficient *
                            score_median(row_scores, MedianScope::all_entries) +
                        plan.params.bias;
                    for (const auto& [i, j] : plan.pairs.ref_pairs)
                        if (i == pos && j < klen) biased[j] = row[j] + boost;
                    for (const auto& [i, j] : plan.pairs.noref_pairs)
                        if (i == pos && j < klen) biased[j] = kNegInf;
                }
                double row_max = kNegInf;
                for (double s : biased) row_max = std::max(row_max, s);
                double denom = 0.0;
                std::vector<double> w(klen);
                for (std::size_t j = 0; j < klen; ++j) {
                    w[j] = (biased[j] == kNegInf) ? 0.0 : std::exp(biased[j] - row_max);
                    denom += w[j];
                }
                for (std::size_t d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < klen; ++j)
                        if (w[j] != 0.0) acc += (w[j] / denom) * vc[j * dim + off + d];
                    att[off + d] = acc;
                }
            }
            detail::linear(blk.wo, blk.bo, att.data(), dim, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d) x[d] += proj[d];
            detail::layer_norm(x.data(), blk.ln2_gain.data(), blk.ln2_bias.data(), dim,
                               normed.data());
            detail::linear(blk.w_ff1, blk.b_ff1, normed.data(), dim, ff, ffn_hidden.data());
            for (std::size_t h = 0; h < ff; ++h) ffn_hidden[h] = detail::gelu(ffn_hidden[h]);
            detail::linear(blk.w_ff2, blk.b_ff2, ffn_hidden.data(), ff, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d) x[d] += proj[d];
        }
        detail::layer_norm(x.data(), model.lnf_gain.data(), model.lnf_bias.data(), dim,
                           normed.data());
        detail::linear(model.unemb, {}, normed.data(), dim, cfg.vocab_size, logits.data());
        next = detail::argmax_lowest_id(logits.data(), cfg.vocab_size);
    }
    return generated;
}

}  // namespace aai
