#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <thread>

#include "aai/head_pattern.hpp"
#include "aai/toy_transformer.hpp"
#include "oracles.hpp"

using aai::BinaryAttentionMap;
using aai::HeadClass;
using aai::HeadPattern;
using aai::Matrix;
using aai::ScoreOrientation;
using aai::SelectionThresholds;

namespace {

BinaryAttentionMap random_map(std::mt19937_64& gen, std::size_t len, double density) {
    BinaryAttentionMap map(len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            map.set(i, j, (static_cast<double>(gen() >> 11) * 0x1.0p-53) < density);
    return map;
}

}  // namespace

TEST_CASE("binarize") {
    SECTION("identity weights above threshold") {
        const auto map = aai::binarize(Matrix::identity(4), 0.04);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(map.at(i, j) == (i == j));
    }
    SECTION("upper-triangle activity is clipped by the causal guard") {
        Matrix a(2, 2, 0.0);
        a(0, 1) = 0.9;
        const auto map = aai::binarize(a, 0.04);
        CHECK(map.active_count() == 0);
    }
    SECTION("matches the per-entry oracle on a random row-stochastic matrix") {
        std::mt19937_64 gen(99);
        Matrix a(6, 6);
        for (std::size_t i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                a(i, j) = static_cast<double>(gen() >> 11) * 0x1.0p-53;
                sum += a(i, j);
            }
            for (std::size_t j = 0; j < 6; ++j) a(i, j) /= sum;
        }
        const auto map = aai::binarize(a, 0.04);
        const auto expected = oracle::naive_binarize(a, 0.04);
        CHECK(map.bits == expected.bits);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(aai::binarize(Matrix(2, 3), 0.04), aai::Error);
        CHECK_THROWS_AS(aai::binarize(Matrix(2, 2), 0.0), aai::Error);
    }
    SECTION("monotone in threshold") {
        std::mt19937_64 gen(3);
        Matrix a(8, 8);
        for (auto& v : a.data()) v = static_cast<double>(gen() >> 11) * 0x1.0p-53;
        const auto low = aai::binarize(a, 0.1);
        const auto high = aai::binarize(a, 0.4);
        for (std::size_t idx = 0; idx < low.bits.size(); ++idx)
            if (high.bits[idx]) CHECK(low.bits[idx]);
    }
}

TEST_CASE("directional_scores analytic fixtures") {
    SECTION("identity map: (0.75, 0, 0) under both orientations") {
        BinaryAttentionMap map(4);
        for (std::size_t i = 0; i < 4; ++i) map.set(i, i, true);
        for (auto orientation : {ScoreOrientation::prose, ScoreOrientation::literal}) {
            const HeadPattern p = aai::directional_scores(map, orientation);
            REQUIRE(p.defined());
            CHECK(*p.diagonal == 0.75);
            CHECK(*p.vertical == 0.0);
            CHECK(*p.horizontal == 0.0);
        }
    }
    SECTION("full key column: vertical under prose, horizontal under literal") {
        BinaryAttentionMap map(4);
        for (std::size_t i = 0; i < 4; ++i) map.set(i, 0, true);
        const HeadPattern prose = aai::directional_scores(map, ScoreOrientation::prose);
        CHECK(*prose.diagonal == 0.0);
        CHECK(*prose.vertical == 0.75);
        CHECK(*prose.horizontal == 0.0);
        const HeadPattern literal = aai::directional_scores(map, ScoreOrientation::literal);
        CHECK(*literal.diagonal == 0.0);
        CHECK(*literal.vertical == 0.0);
        CHECK(*literal.horizontal == 0.75);
    }
    SECTION("off-diagonal segment: diagonal 2/3") {
        BinaryAttentionMap map(6);
        map.set(3, 0, true);
        map.set(4, 1, true);
        map.set(5, 2, true);
        const HeadPattern p = aai::directional_scores(map, ScoreOrientation::prose);
        CHECK(*p.diagonal == 2.0 / 3.0);
        CHECK(*p.vertical == 0.0);
        CHECK(*p.horizontal == 0.0);
    }
    SECTION("empty map is undefined") {
        const HeadPattern p =
            aai::directional_scores(BinaryAttentionMap(4), ScoreOrientation::prose);
        CHECK_FALSE(p.defined());
        CHECK_FALSE(p.diagonal.has_value());
    }
}

TEST_CASE("directional_scores equals the brute-force oracle") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 4 + gen() % 29;
        const double density = 0.05 + 0.9 * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
        const BinaryAttentionMap map = random_map(gen, len, density);
        for (auto orientation : {ScoreOrientation::prose, ScoreOrientation::literal}) {
            const HeadPattern got = aai::directional_scores(map, orientation);
            const HeadPattern want = oracle::naive_directional_scores(map, orientation);
            REQUIRE(got.active_count == want.active_count);
            if (!want.defined()) {
                CHECK_FALSE(got.defined());
                continue;
            }
            CHECK(*got.diagonal == *want.diagonal);
            CHECK(*got.vertical == *want.vertical);
            CHECK(*got.horizontal == *want.horizontal);
            CHECK(*got.diagonal >= 0.0);
            CHECK(*got.diagonal <= 1.0);
            CHECK(*got.vertical <= 1.0);
            CHECK(*got.horizontal <= 1.0);
        }
    }
}

TEST_CASE("directional_scores is safe to call concurrently") {
    std::mt19937_64 gen(71);
    std::vector<BinaryAttentionMap> maps;
    for (int i = 0; i < 64; ++i) maps.push_back(random_map(gen, 24, 0.3));
    std::vector<HeadPattern> serial(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i)
        serial[i] = aai::directional_scores(maps[i], ScoreOrientation::prose);

    std::vector<HeadPattern> parallel(maps.size());
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w)
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < maps.size(); i += 4)
                parallel[i] = aai::directional_scores(maps[i], ScoreOrientation::prose);
        });
    for (auto& t : workers) t.join();
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK(parallel[i].active_count == serial[i].active_count);
        CHECK(parallel[i].diagonal == serial[i].diagonal);
        CHECK(parallel[i].vertical == serial[i].vertical);
        CHECK(parallel[i].horizontal == serial[i].horizontal);
    }
}

TEST_CASE("classify_head") {
    const SelectionThresholds defaults;
    auto pattern = [](double d, double v, double h) {
        HeadPattern p;
        p.diagonal = d;
        p.vertical = v;
        p.horizontal = h;
        p.active_count = 10;
        return p;
    };
    CHECK(aai::classify_head(pattern(0.75, 0.0, 0.0), defaults) == HeadClass::anchor_or_copy);
    CHECK(aai::classify_head(pattern(0.1, 0.8, 0.1), defaults) == HeadClass::aggregation);
    CHECK(aai::classify_head(pattern(0.2, 0.2, 0.2), defaults) == HeadClass::other);
    SECTION("strict inequalities at the boundaries") {
        CHECK(aai::classify_head(pattern(0.3, 0.0, 0.0), defaults) == HeadClass::other);
        CHECK(aai::classify_head(pattern(0.0, 0.6, 0.0), defaults) == HeadClass::other);
        CHECK(aai::classify_head(pattern(0.0, 0.61, 0.3), defaults) == HeadClass::other);
    }
    SECTION("anchor_or_copy wins when both criteria fire") {
        SelectionThresholds loose;
        loose.other_threshold = 0.9;  // lets aggregation fire alongside a high diagonal
        CHECK(aai::classify_head(pattern(0.5, 0.7, 0.1), loose) == HeadClass::anchor_or_copy);
    }
    SECTION("undefined pattern is unclassifiable") {
        HeadPattern p;
        CHECK_THROWS_AS(aai::classify_head(p, defaults), aai::Error);
    }
    SECTION("defaults echo the published configuration") {
        CHECK(defaults.binarize_threshold == 0.04);
        CHECK(defaults.diag_threshold == 0.3);
        CHECK(defaults.vert_threshold == 0.6);
        CHECK(defaults.other_threshold == 0.3);
    }
}

namespace {

aai::AttentionTrace synthetic_trace() {
    aai::AttentionTrace trace;
    trace.num_layers = 2;
    trace.num_heads = 2;
    trace.seq_len = 4;
    trace.tokens = {"a", "b", "c", "d"};
    // (0,0) identity pattern, (0,1) key-column pattern, others diffuse
    trace.weights[{0, 0}] = Matrix::identity(4);
    Matrix column(4, 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        column(i, 0) = 1.0;  // every query attends to key 0
    }
    trace.weights[{0, 1}] = column;
    Matrix diffuse(4, 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) diffuse(i, j) = 1.0 / (i + 1);
    trace.weights[{1, 0}] = diffuse;
    trace.weights[{1, 1}] = diffuse;
    return trace;
}

}  // namespace

TEST_CASE("analyze_model and select_heads") {
    const aai::AttentionTrace trace = synthetic_trace();
    const SelectionThresholds defaults;
    const aai::HeadTable table = aai::analyze_model(trace, defaults);
    REQUIRE(table.size() == 4);

    SECTION("classes per constructed pattern") {
        CHECK(table[0].cls == HeadClass::anchor_or_copy);
        CHECK(table[1].cls == HeadClass::aggregation);
    }
    SECTION("selection modes") {
        CHECK(aai::select_heads(table, aai::InterventionMode::baseline).empty());
        CHECK(aai::select_heads(table, aai::InterventionMode::all_heads).size() == 4);
        const auto aai_heads = aai::select_heads(table, aai::InterventionMode::aai);
        CHECK(aai_heads.count({0, 0}) == 1);
        const auto agg = aai::select_heads(table, aai::InterventionMode::aai_agg);
        CHECK(agg == std::set<aai::LayerHead>{{0, 1}});
        // mutually exclusive criteria under the defaults
        for (const auto& lh : aai_heads) CHECK(agg.count(lh) == 0);
    }
    SECTION("missing head matrix is an incomplete-trace error") {
        aai::AttentionTrace broken = trace;
        broken.weights.erase({1, 1});
        CHECK_THROWS_AS(aai::analyze_model(broken, defaults), aai::Error);
    }
    SECTION("deterministic and permutation-consistent") {
        const aai::HeadTable again = aai::analyze_model(trace, defaults);
        REQUIRE(again.size() == table.size());
        for (std::size_t i = 0; i < table.size(); ++i) {
            CHECK(again[i].cls == table[i].cls);
            CHECK(again[i].pattern.diagonal == table[i].pattern.diagonal);
        }
        // swapping two heads' matrices swaps their records and nothing else
        aai::AttentionTrace permuted = trace;
        std::swap(permuted.weights.at({0, 0}), permuted.weights.at({0, 1}));
        const aai::HeadTable swapped = aai::analyze_model(permuted, defaults);
        CHECK(swapped[0].cls == table[1].cls);
        CHECK(swapped[1].cls == table[0].cls);
        CHECK(swapped[2].cls == table[2].cls);
    }
    SECTION("seeded toy trace analyzes to byte-identical tables across runs") {
        auto table_bytes = [] {
            aai::ModelConfig cfg;
            cfg.num_layers = 2;
            cfg.num_heads = 2;
            cfg.model_dim = 16;
            cfg.head_dim = 8;
            cfg.max_seq = 48;
            cfg.seed = 314;
            const aai::Model model = aai::init_model(cfg);
            std::vector<int> tokens;
            for (int i = 0; i < 20; ++i) tokens.push_back(65 + i % 26);
            const auto out = aai::prefill(model, tokens, aai::HeadMaskPlan{});
            return aai::format_head_table(
                aai::analyze_model(out.trace, aai::SelectionThresholds{}));
        };
        CHECK(table_bytes() == table_bytes());
    }
    SECTION("report formatting is stable") {
        const std::string report = aai::format_head_table(table);
        CHECK(report.find("layer\thead\ts_diag\ts_vert\ts_horiz\tclass") == 0);
        CHECK(report.find("anchor_or_copy") != std::string::npos);
        CHECK(report.find("aggregation") != std::string::npos);
        CHECK(report == aai::format_head_table(table));
        const std::string sidecar = aai::head_table_sidecar(table, defaults);
        CHECK(sidecar.rfind("AAIHEADS1 ", 0) == 0);
        const auto parsed = nlohmann::json::parse(sidecar.substr(10));
        CHECK(parsed.at("records").size() == 4);
        CHECK(parsed.at("binarize_threshold") == 0.04);
        CHECK(parsed.at("records")[0].at("class") == "anchor_or_copy");
    }
}
