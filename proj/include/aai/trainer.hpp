#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "aai/error.hpp"
#include "aai/rng.hpp"
#include "aai/toy_transformer.hpp"

namespace aai {

/// Minimal next-byte trainer so copy/induction-like attention patterns can be
/// demonstrated on the synthetic corpus. Training always runs under the plain
/// causal mask; nothing in the intervention path depends on it.
namespace train {

namespace detail {

using aai::detail::gelu;
using aai::detail::layer_norm;
using aai::detail::linear;

inline double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double x3 = x * x * x;
    const double u = c * (x + 0.044715 * x3);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

struct BlockActs {
    std::vector<double> input;       // seq x dim, residual stream entering the block
    std::vector<double> ln1_out;     // seq x dim
    std::vector<double> q, k, v;     // seq x dim
    std::vector<double> att_weights; // heads x seq x seq
    std::vector<double> att_mix;     // seq x dim
    std::vector<double> mid;         // seq x dim, residual after attention
    std::vector<double> ln2_out;     // seq x dim
    std::vector<double> ff_pre;      // seq x ff
};

struct Activations {
    std::size_t seq = 0;
    std::vector<double> embedded;  // seq x dim
    std::vector<BlockActs> blocks;
    std::vector<double> final_in;   // seq x dim, before the final layer norm
    std::vector<double> final_out;  // seq x dim
    std::vector<double> logits;     // seq x vocab
};

inline void forward(const Model& model, const std::vector<int>& tokens, Activations& acts) {
    const ModelConfig& cfg = model.config;
    const std::size_t len = tokens.size();
    const std::size_t dim = cfg.model_dim;
    const std::size_t hd = cfg.head_dim;
    const std::size_t ff = model.ff_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    acts.seq = len;
    acts.embedded.resize(len * dim);
    for (std::size_t p = 0; p < len; ++p)
        for (std::size_t d = 0; d < dim; ++d)
            acts.embedded[p * dim + d] =
                model.tok_emb[tokens[p] * dim + d] + model.pos_emb[p * dim + d];

    acts.blocks.assign(cfg.num_layers, {});
    std::vector<double> x = acts.embedded;
    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        const BlockParams& blk = model.blocks[layer];
        BlockActs& ba = acts.blocks[layer];
        ba.input = x;
        ba.ln1_out.resize(len * dim);
        ba.q.resize(len * dim);
        ba.k.resize(len * dim);
        ba.v.resize(len * dim);
        for (std::size_t p = 0; p < len; ++p) {
            layer_norm(&ba.input[p * dim], blk.ln1_gain.data(), blk.ln1_bias.data(), dim,
                       &ba.ln1_out[p * dim]);
            linear(blk.wq, blk.bq, &ba.ln1_out[p * dim], dim, dim, &ba.q[p * dim]);
            linear(blk.wk, blk.bk, &ba.ln1_out[p * dim], dim, dim, &ba.k[p * dim]);
            linear(blk.wv, blk.bv, &ba.ln1_out[p * dim], dim, dim, &ba.v[p * dim]);
        }
        ba.att_weights.assign(static_cast<std::size_t>(cfg.num_heads) * len * len, 0.0);
        ba.att_mix.assign(len * dim, 0.0);
        for (int head = 0; head < cfg.num_heads; ++head) {
            const std::size_t off = head * hd;
            double* weights = &ba.att_weights[static_cast<std::size_t>(head) * len * len];
            for (std::size_t i = 0; i < len; ++i) {
                double row_max = -1e300;
                std::vector<double> row(i + 1);
                for (std::size_t j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < hd; ++d)
                        dot += ba.q[i * dim + off + d] * ba.k[j * dim + off + d];
                    row[j] = dot * inv_sqrt;
                    if (row[j] > row_max) row_max = row[j];
                }
                double denom = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    row[j] = std::exp(row[j] - row_max);
                    denom += row[j];
                }
                for (std::size_t j = 0; j <= i; ++j) {
                    const double w = row[j] / denom;
                    weights[i * len + j] = w;
                    for (std::size_t d = 0; d < hd; ++d)
                        ba.att_mix[i * dim + off + d] += w * ba.v[j * dim + off + d];
                }
            }
        }
        ba.mid.resize(len * dim);
        std::vector<double> proj(dim);
        for (std::size_t p = 0; p < len; ++p) {
            linear(blk.wo, blk.bo, &ba.att_mix[p * dim], dim, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d)
                ba.mid[p * dim + d] = ba.input[p * dim + d] + proj[d];
        }
        ba.ln2_out.resize(len * dim);
        ba.ff_pre.resize(len * ff);
        x = ba.mid;
        std::vector<double> hidden(ff);
        for (std::size_t p = 0; p < len; ++p) {
            layer_norm(&ba.mid[p * dim], blk.ln2_gain.data(), blk.ln2_bias.data(), dim,
                       &ba.ln2_out[p * dim]);
            linear(blk.w_ff1, blk.b_ff1, &ba.ln2_out[p * dim], dim, ff, &ba.ff_pre[p * ff]);
            for (std::size_t h = 0; h < ff; ++h) hidden[h] = gelu(ba.ff_pre[p * ff + h]);
            linear(blk.w_ff2, blk.b_ff2, hidden.data(), ff, dim, proj.data());
            for (std::size_t d = 0; d < dim; ++d) x[p * dim + d] += proj[d];
        }
    }
    acts.final_in = x;
    acts.final_out.resize(len * dim);
    acts.logits.resize(len * cfg.vocab_size);
    for (std::size_t p = 0; p < len; ++p) {
        layer_norm(&acts.final_in[p * dim], model.lnf_gain.data(), model.lnf_bias.data(),
                   dim, &acts.final_out[p * dim]);
        linear(model.unemb, {}, &acts.final_out[p * dim], dim, cfg.vocab_size,
               &acts.logits[p * cfg.vocab_size]);
    }
}

struct Gradients {
    std::vector<double> tok_emb, pos_emb;
    std::vector<BlockParams> blocks;
    std::vector<double> lnf_gain, lnf_bias;
    std::vector<double> unemb;

    static Gradients zeros_like(const Model& model) {
        Gradients g;
        g.tok_emb.assign(model.tok_emb.size(), 0.0);
        g.pos_emb.assign(model.pos_emb.size(), 0.0);
        g.blocks.resize(model.blocks.size());
        for (std::size_t l = 0; l < model.blocks.size(); ++l) {
            const BlockParams& b = model.blocks[l];
            BlockParams& gb = g.blocks[l];
            gb.ln1_gain.assign(b.ln1_gain.size(), 0.0);
            gb.ln1_bias.assign(b.ln1_bias.size(), 0.0);
            gb.wq.assign(b.wq.size(), 0.0);
            gb.wk.assign(b.wk.size(), 0.0);
            gb.wv.assign(b.wv.size(), 0.0);
            gb.wo.assign(b.wo.size(), 0.0);
            gb.bq.assign(b.bq.size(), 0.0);
            gb.bk.assign(b.bk.size(), 0.0);
            gb.bv.assign(b.bv.size(), 0.0);
            gb.bo.assign(b.bo.size(), 0.0);
            gb.ln2_gain.assign(b.ln2_gain.size(), 0.0);
            gb.ln2_bias.assign(b.ln2_bias.size(), 0.0);
            gb.w_ff1.assign(b.w_ff1.size(), 0.0);
            gb.b_ff1.assign(b.b_ff1.size(), 0.0);
            gb.w_ff2.assign(b.w_ff2.size(), 0.0);
            gb.b_ff2.assign(b.b_ff2.size(), 0.0);
        }
        g.lnf_gain.assign(model.lnf_gain.size(), 0.0);
        g.lnf_bias.assign(model.lnf_bias.size(), 0.0);
        g.unemb.assign(model.unemb.size(), 0.0);
        return g;
    }
};

/// d(loss)/d(x) for y = layer_norm(x) given d(loss)/d(y); also accumulates
/// gain/bias gradients.
inline void layer_norm_backward(const double* x, const double* gain, std::size_t dim,
                                const double* dy, double* dx, double* dgain,
                                double* dbias) {
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

    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        const double xhat = (x[d] - mean) * inv;
        const double dxhat = dy[d] * gain[d];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dgain[d] += dy[d] * xhat;
        dbias[d] += dy[d];
    }
    const double n = static_cast<double>(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        const double xhat = (x[d] - mean) * inv;
        const double dxhat = dy[d] * gain[d];
        dx[d] = (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n) * inv;
    }
}

inline void linear_backward(const std::vector<double>& w, const double* x,
                            std::size_t in_dim, std::size_t out_dim, const double* dy,
                            double* dx, double* dw, double* db) {
    for (std::size_t i = 0; i < in_dim; ++i) dx[i] = 0.0;
    for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = dy[o];
        if (db) db[o] += g;
        const double* row = w.data() + o * in_dim;
        double* drow = dw + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
            drow[i] += g * x[i];
            dx[i] += row[i] * g;
        }
    }
}

/// Mean cross entropy of position p predicting tokens[p+1]; fills dlogits.
inline double loss_and_dlogits(const std::vector<double>& logits,
                               const std::vector<int>& tokens, std::size_t vocab,
                               std::vector<double>& dlogits) {
    const std::size_t len = tokens.size();
    const std::size_t count = len - 1;
    dlogits.assign(len * vocab, 0.0);
    double loss = 0.0;
    for (std::size_t p = 0; p + 1 < len; ++p) {
        const double* row = &logits[p * vocab];
        double row_max = row[0];
        for (std::size_t t = 1; t < vocab; ++t) row_max = std::max(row_max, row[t]);
        double denom = 0.0;
        for (std::size_t t = 0; t < vocab; ++t) denom += std::exp(row[t] - row_max);
        const int target = tokens[p + 1];
        loss += -(row[target] - row_max - std::log(denom));
        double* drow = &dlogits[p * vocab];
        for (std::size_t t = 0; t < vocab; ++t)
            drow[t] = std::exp(row[t] - row_max) / denom / static_cast<double>(count);
        drow[target] -= 1.0 / static_cast<double>(count);
    }
    return loss / static_cast<double>(count);
}

inline void backward(const Model& model, const std::vector<int>& tokens,
                     const Activations& acts, const std::vector<double>& dlogits,
                     Gradients& grads) {
    const ModelConfig& cfg = model.config;
    const std::size_t len = acts.seq;
    const std::size_t dim = cfg.model_dim;
    const std::size_t hd = cfg.head_dim;
    const std::size_t ff = model.ff_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> dx(len * dim, 0.0);
    std::vector<double> d_hidden(dim);
    // unembedding and final layer norm
    for (std::size_t p = 0; p < len; ++p) {
        for (std::size_t d = 0; d < dim; ++d) d_hidden[d] = 0.0;
        for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
            const double g = dlogits[p * cfg.vocab_size + t];
            if (g == 0.0) continue;
            const double* row = model.unemb.data() + t * dim;
            double* drow = grads.unemb.data() + t * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                drow[d] += g * acts.final_out[p * dim + d];
                d_hidden[d] += row[d] * g;
            }
        }
        layer_norm_backward(&acts.final_in[p * dim], model.lnf_gain.data(), dim,
                            d_hidden.data(), &dx[p * dim], grads.lnf_gain.data(),
                            grads.lnf_bias.data());
    }

    std::vector<double> d_ln(dim), d_pre(ff), d_hid(ff), d_mix(len * dim), d_q(len * dim),
        d_k(len * dim), d_v(len * dim), d_row(len), proj(dim);
    for (int layer = cfg.num_layers - 1; layer >= 0; --layer) {
        const BlockParams& blk = model.blocks[layer];
        BlockParams& gb = grads.blocks[layer];
        const BlockActs& ba = acts.blocks[layer];

        // feed-forward sub-block; dx currently holds d(loss)/d(block output)
        std::vector<double> d_mid = dx;  // residual path
        std::vector<double> hidden(ff);
        for (std::size_t p = 0; p < len; ++p) {
            for (std::size_t h = 0; h < ff; ++h)
                hidden[h] = gelu(ba.ff_pre[p * ff + h]);
            linear_backward(blk.w_ff2, hidden.data(), ff, dim, &dx[p * dim], d_hid.data(),
                            gb.w_ff2.data(), gb.b_ff2.data());
            for (std::size_t h = 0; h < ff; ++h)
                d_pre[h] = d_hid[h] * gelu_grad(ba.ff_pre[p * ff + h]);
            linear_backward(blk.w_ff1, &ba.ln2_out[p * dim], dim, ff, d_pre.data(),
                            d_ln.data(), gb.w_ff1.data(), gb.b_ff1.data());
            std::vector<double> d_from_ln(dim);
            layer_norm_backward(&ba.mid[p * dim], blk.ln2_gain.data(), dim, d_ln.data(),
                                d_from_ln.data(), gb.ln2_gain.data(), gb.ln2_bias.data());
            for (std::size_t d = 0; d < dim; ++d) d_mid[p * dim + d] += d_from_ln[d];
        }

        // attention sub-block; d_mid holds d(loss)/d(mid)
        std::vector<double> d_input = d_mid;  // residual path
        std::fill(d_mix.begin(), d_mix.end(), 0.0);
        for (std::size_t p = 0; p < len; ++p)
            linear_backward(blk.wo, &ba.att_mix[p * dim], dim, dim, &d_mid[p * dim],
                            &d_mix[p * dim], gb.wo.data(), gb.bo.data());

        std::fill(d_q.begin(), d_q.end(), 0.0);
        std::fill(d_k.begin(), d_k.end(), 0.0);
        std::fill(d_v.begin(), d_v.end(), 0.0);
        for (int head = 0; head < cfg.num_heads; ++head) {
            const std::size_t off = head * hd;
            const double* weights =
                &ba.att_weights[static_cast<std::size_t>(head) * len * len];
            for (std::size_t i = 0; i < len; ++i) {
                // dA[i][j] = dot(d_mix_i, v_j); dv_j += A[i][j] * d_mix_i
                double dot_dA_A = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double w = weights[i * len + j];
                    double da = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) {
                        da += d_mix[i * dim + off + d] * ba.v[j * dim + off + d];
                        d_v[j * dim + off + d] += w * d_mix[i * dim + off + d];
                    }
                    d_row[j] = da;
                    dot_dA_A += da * w;
                }
                for (std::size_t j = 0; j <= i; ++j) {
                    const double w = weights[i * len + j];
                    const double ds = w * (d_row[j] - dot_dA_A) * inv_sqrt;
                    for (std::size_t d = 0; d < hd; ++d) {
                        d_q[i * dim + off + d] += ds * ba.k[j * dim + off + d];
                        d_k[j * dim + off + d] += ds * ba.q[i * dim + off + d];
                    }
                }
            }
        }
        for (std::size_t p = 0; p < len; ++p) {
            std::vector<double> d_ln1(dim, 0.0), tmp(dim);
            linear_backward(blk.wq, &ba.ln1_out[p * dim], dim, dim, &d_q[p * dim],
                            tmp.data(), gb.wq.data(), gb.bq.data());
            for (std::size_t d = 0; d < dim; ++d) d_ln1[d] += tmp[d];
            linear_backward(blk.wk, &ba.ln1_out[p * dim], dim, dim, &d_k[p * dim],
                            tmp.data(), gb.wk.data(), gb.bk.data());
            for (std::size_t d = 0; d < dim; ++d) d_ln1[d] += tmp[d];
            linear_backward(blk.wv, &ba.ln1_out[p * dim], dim, dim, &d_v[p * dim],
                            tmp.data(), gb.wv.data(), gb.bv.data());
            for (std::size_t d = 0; d < dim; ++d) d_ln1[d] += tmp[d];
            std::vector<double> d_from_ln(dim);
            layer_norm_backward(&ba.input[p * dim], blk.ln1_gain.data(), dim, d_ln1.data(),
                                d_from_ln.data(), gb.ln1_gain.data(), gb.ln1_bias.data());
            for (std::size_t d = 0; d < dim; ++d) d_input[p * dim + d] += d_from_ln[d];
        }
        dx = d_input;
    }

    for (std::size_t p = 0; p < len; ++p)
        for (std::size_t d = 0; d < dim; ++d) {
            grads.tok_emb[tokens[p] * dim + d] += dx[p * dim + d];
            grads.pos_emb[p * dim + d] += dx[p * dim + d];
        }
}

inline void sgd_step(std::vector<double>& param, const std::vector<double>& grad,
                     double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace detail

/// Mean cross entropy of predicting tokens[1..] from tokens[..n-1].
inline double next_byte_loss(const Model& model, const std::vector<int>& tokens) {
    if (tokens.size() < 2)
        throw Error(ErrorCategory::length, "need at least two tokens for a loss");
    detail::Activations acts;
    detail::forward(model, tokens, acts);
    std::vector<double> dlogits;
    return detail::loss_and_dlogits(acts.logits, tokens, model.config.vocab_size, dlogits);
}

/// One forward/backward/SGD step on the given window; returns the loss.
inline double train_step(Model& model, const std::vector<int>& tokens, double lr) {
    if (tokens.size() < 2)
        throw Error(ErrorCategory::length, "need at least two tokens to train");
    detail::Activations acts;
    detail::forward(model, tokens, acts);
    std::vector<double> dlogits;
    const double loss =
        detail::loss_and_dlogits(acts.logits, tokens, model.config.vocab_size, dlogits);
    detail::Gradients grads = detail::Gradients::zeros_like(model);
    detail::backward(model, tokens, acts, dlogits, grads);

    detail::sgd_step(model.tok_emb, grads.tok_emb, lr);
    detail::sgd_step(model.pos_emb, grads.pos_emb, lr);
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        BlockParams& b = model.blocks[l];
        BlockParams& g = grads.blocks[l];
        detail::sgd_step(b.ln1_gain, g.ln1_gain, lr);
        detail::sgd_step(b.ln1_bias, g.ln1_bias, lr);
        detail::sgd_step(b.wq, g.wq, lr);
        detail::sgd_step(b.wk, g.wk, lr);
        detail::sgd_step(b.wv, g.wv, lr);
        detail::sgd_step(b.wo, g.wo, lr);
        detail::sgd_step(b.bq, g.bq, lr);
        detail::sgd_step(b.bk, g.bk, lr);
        detail::sgd_step(b.bv, g.bv, lr);
        detail::sgd_step(b.bo, g.bo, lr);
        detail::sgd_step(b.ln2_gain, g.ln2_gain, lr);
        detail::sgd_step(b.ln2_bias, g.ln2_bias, lr);
        detail::sgd_step(b.w_ff1, g.w_ff1, lr);
        detail::sgd_step(b.b_ff1, g.b_ff1, lr);
        detail::sgd_step(b.w_ff2, g.w_ff2, lr);
        detail::sgd_step(b.b_ff2, g.b_ff2, lr);
    }
    detail::sgd_step(model.lnf_gain, grads.lnf_gain, lr);
    detail::sgd_step(model.lnf_bias, grads.lnf_bias, lr);
    detail::sgd_step(model.unemb, grads.unemb, lr);
    return loss;
}

struct TrainStats {
    std::size_t steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Trains on random byte windows of the corpus. Deterministic per seed.
inline TrainStats train_next_byte(Model& model, const std::string& corpus,
                                  std::size_t steps, double lr, std::size_t window,
                                  std::uint64_t seed) {
    if (corpus.size() < window + 1)
        throw Error(ErrorCategory::length, "corpus shorter than training window");
    if (window + 1 > model.config.max_seq)
        throw Error(ErrorCategory::length, "window does not fit max_seq");
    DetRng rng(seed);
    TrainStats stats;
    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t start = rng.index(corpus.size() - window);
        std::vector<int> tokens;
        tokens.reserve(window + 1);
        for (std::size_t i = 0; i <= window && start + i < corpus.size(); ++i)
            tokens.push_back(static_cast<unsigned char>(corpus[start + i]));
        const double loss = train_step(model, tokens, lr);
        if (s == 0) stats.first_loss = loss;
        stats.last_loss = loss;
        ++stats.steps;
    }
    return stats;
}

}  // namespace train
}  // namespace aai
