#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aai/toy_transformer.hpp"
#include "aai/trainer.hpp"

using aai::Model;
using aai::ModelConfig;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.model_dim = 4;
    cfg.head_dim = 2;
    cfg.vocab_size = 9;
    cfg.max_seq = 8;
    cfg.seed = 11;
    return cfg;
}

double loss_of(const Model& model, const std::vector<int>& tokens) {
    return aai::train::next_byte_loss(model, tokens);
}

// central finite difference on one parameter slot
double numeric_grad(Model model, std::vector<double> Model::*field, std::size_t idx,
                    const std::vector<int>& tokens, double h = 1e-5) {
    (model.*field)[idx] += h;
    const double up = loss_of(model, tokens);
    (model.*field)[idx] -= 2.0 * h;
    const double down = loss_of(model, tokens);
    return (up - down) / (2.0 * h);
}

double numeric_block_grad(Model model, std::vector<double> aai::BlockParams::*field,
                          std::size_t idx, const std::vector<int>& tokens, double h = 1e-5,
                          std::size_t layer = 0) {
    (model.blocks[layer].*field)[idx] += h;
    const double up = loss_of(model, tokens);
    (model.blocks[layer].*field)[idx] -= 2.0 * h;
    const double down = loss_of(model, tokens);
    return (up - down) / (2.0 * h);
}

}  // namespace

TEST_CASE("trainer forward agrees with prefill") {
    const Model model = aai::init_model(micro_config());
    const std::vector<int> tokens{1, 4, 2, 7, 3};
    aai::train::detail::Activations acts;
    aai::train::detail::forward(model, tokens, acts);
    const aai::PrefillResult ref = aai::prefill(model, tokens, aai::HeadMaskPlan{}, false);
    REQUIRE(acts.logits.size() == ref.logits.size());
    for (std::size_t i = 0; i < acts.logits.size(); ++i)
        CHECK(std::abs(acts.logits[i] - ref.logits[i]) <= 1e-12);
}

TEST_CASE("analytic gradients match finite differences") {
    const Model model = aai::init_model(micro_config());
    const std::vector<int> tokens{1, 4, 2, 7, 3, 5};

    aai::train::detail::Activations acts;
    aai::train::detail::forward(model, tokens, acts);
    std::vector<double> dlogits;
    aai::train::detail::loss_and_dlogits(acts.logits, tokens, model.config.vocab_size,
                                         dlogits);
    auto grads = aai::train::detail::Gradients::zeros_like(model);
    aai::train::detail::backward(model, tokens, acts, dlogits, grads);

    auto close = [](double a, double b) {
        return std::abs(a - b) <= 1e-6 * std::max({1.0, std::abs(a), std::abs(b)});
    };

    SECTION("unembedding") {
        for (std::size_t idx : {0u, 5u, 17u})
            CHECK(close(grads.unemb[idx], numeric_grad(model, &Model::unemb, idx, tokens)));
    }
    SECTION("token and position embeddings") {
        const std::size_t tok_idx = tokens[2] * model.config.model_dim + 1;
        CHECK(close(grads.tok_emb[tok_idx],
                    numeric_grad(model, &Model::tok_emb, tok_idx, tokens)));
        CHECK(close(grads.pos_emb[5], numeric_grad(model, &Model::pos_emb, 5, tokens)));
    }
    SECTION("attention projections") {
        for (std::size_t idx : {0u, 3u, 9u, 14u}) {
            CHECK(close(grads.blocks[0].wq[idx],
                        numeric_block_grad(model, &aai::BlockParams::wq, idx, tokens)));
            CHECK(close(grads.blocks[0].wk[idx],
                        numeric_block_grad(model, &aai::BlockParams::wk, idx, tokens)));
            CHECK(close(grads.blocks[0].wv[idx],
                        numeric_block_grad(model, &aai::BlockParams::wv, idx, tokens)));
            CHECK(close(grads.blocks[0].wo[idx],
                        numeric_block_grad(model, &aai::BlockParams::wo, idx, tokens)));
        }
    }
    SECTION("feed-forward and layer norms") {
        CHECK(close(grads.blocks[0].w_ff1[7],
                    numeric_block_grad(model, &aai::BlockParams::w_ff1, 7, tokens)));
        CHECK(close(grads.blocks[0].w_ff2[11],
                    numeric_block_grad(model, &aai::BlockParams::w_ff2, 11, tokens)));
        CHECK(close(grads.blocks[0].ln1_gain[2],
                    numeric_block_grad(model, &aai::BlockParams::ln1_gain, 2, tokens)));
        CHECK(close(grads.blocks[0].ln2_bias[3],
                    numeric_block_grad(model, &aai::BlockParams::ln2_bias, 3, tokens)));
        CHECK(close(grads.lnf_gain[1], numeric_grad(model, &Model::lnf_gain, 1, tokens)));
    }
}

TEST_CASE("gradients flow correctly across stacked blocks") {
    ModelConfig cfg = micro_config();
    cfg.num_layers = 2;
    cfg.seed = 23;
    const Model model = aai::init_model(cfg);
    const std::vector<int> tokens{2, 6, 1, 8, 4};

    aai::train::detail::Activations acts;
    aai::train::detail::forward(model, tokens, acts);
    std::vector<double> dlogits;
    aai::train::detail::loss_and_dlogits(acts.logits, tokens, cfg.vocab_size, dlogits);
    auto grads = aai::train::detail::Gradients::zeros_like(model);
    aai::train::detail::backward(model, tokens, acts, dlogits, grads);

    auto close = [](double a, double b) {
        return std::abs(a - b) <= 1e-6 * std::max({1.0, std::abs(a), std::abs(b)});
    };
    // parameters in the lower block only see the loss through the upper one
    for (std::size_t idx : {1u, 6u, 12u}) {
        CHECK(close(grads.blocks[0].wq[idx],
                    numeric_block_grad(model, &aai::BlockParams::wq, idx, tokens, 1e-5, 0)));
        CHECK(close(grads.blocks[0].w_ff2[idx],
                    numeric_block_grad(model, &aai::BlockParams::w_ff2, idx, tokens, 1e-5, 0)));
        CHECK(close(grads.blocks[1].wv[idx],
                    numeric_block_grad(model, &aai::BlockParams::wv, idx, tokens, 1e-5, 1)));
    }
    const std::size_t tok_idx = tokens[0] * cfg.model_dim;
    CHECK(close(grads.tok_emb[tok_idx],
                numeric_grad(model, &Model::tok_emb, tok_idx, tokens)));
}

TEST_CASE("training reduces the loss on a repetitive corpus") {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.model_dim = 16;
    cfg.head_dim = 8;
    cfg.vocab_size = 258;
    cfg.max_seq = 40;
    cfg.seed = 4;
    Model model = aai::init_model(cfg);

    std::string corpus;
    for (int i = 0; i < 40; ++i) corpus += "abcabcabc ";
    const std::vector<int> probe = aai::encode_text(corpus.substr(0, 30), cfg);
    const double before = aai::train::next_byte_loss(model, probe);
    const auto stats = aai::train::train_next_byte(model, corpus, 60, 0.05, 24, 1);
    const double after = aai::train::next_byte_loss(model, probe);
    CHECK(stats.steps == 60);
    CHECK(after < before);
}

TEST_CASE("trainer input validation") {
    Model model = aai::init_model(micro_config());
    CHECK_THROWS_AS(aai::train::train_step(model, {1}, 0.1), aai::Error);
    CHECK_THROWS_AS(aai::train::train_next_byte(model, "ab", 1, 0.1, 24, 0), aai::Error);
}
