#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "aai/attention.hpp"
#include "aai/intervention_mask.hpp"
#include "oracles.hpp"

using aai::kNegInf;
using aai::Matrix;
using aai::MedianScope;
using aai::ReferencePairSets;
using aai::ReweightParams;

TEST_CASE("causal_mask") {
    SECTION("length one") {
        const Matrix m = aai::causal_mask(1);
        CHECK(m(0, 0) == 0.0);
    }
    SECTION("strict upper triangle blocked") {
        const Matrix m = aai::causal_mask(3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(m(i, j) == (i < j ? kNegInf : 0.0));
    }
    SECTION("uniform rows after softmax of zeros") {
        for (std::size_t len : {1u, 2u, 5u, 9u}) {
            const Matrix a = aai::masked_softmax(Matrix(len, len, 0.0), aai::causal_mask(len));
            for (std::size_t i = 0; i < len; ++i)
                for (std::size_t j = 0; j < len; ++j) {
                    const double expected = j <= i ? 1.0 / static_cast<double>(i + 1) : 0.0;
                    CHECK(std::abs(a(i, j) - expected) <= 1e-12);
                }
        }
    }
}

TEST_CASE("noref_mask") {
    SECTION("empty set gives zeros") {
        const Matrix m = aai::noref_mask(4, {});
        for (double v : m.data()) CHECK(v == 0.0);
    }
    SECTION("single pair") {
        ReferencePairSets pairs;
        pairs.noref_pairs.insert({4, 1});
        const Matrix m = aai::noref_mask(6, pairs);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                CHECK(m(i, j) == ((i == 4 && j == 1) ? kNegInf : 0.0));
    }
    SECTION("out of bounds") {
        ReferencePairSets pairs;
        pairs.noref_pairs.insert({7, 0});
        CHECK_THROWS_AS(aai::noref_mask(6, pairs), aai::Error);
    }
}

TEST_CASE("score_median") {
    SECTION("fixed lower-triangle multiset {2,-1,0,3,1,-2} has median 0.5") {
        Matrix s(3, 3, 99.0);  // acausal entries must be ignored
        s(0, 0) = 2.0;
        s(1, 0) = -1.0;
        s(1, 1) = 0.0;
        s(2, 0) = 3.0;
        s(2, 1) = 1.0;
        s(2, 2) = -2.0;
        CHECK(aai::score_median(s, MedianScope::causal_entries) == 0.5);
    }
    SECTION("matches the sort-based oracle on random matrices") {
        std::mt19937_64 gen(31);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t len = 1 + gen() % 12;
            Matrix s(len, len);
            for (auto& v : s.data())
                v = (static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * 10.0;
            CHECK(aai::score_median(s, MedianScope::causal_entries) ==
                  oracle::sort_median(oracle::causal_entries(s)));
            CHECK(aai::score_median(s, MedianScope::all_entries) ==
                  oracle::sort_median(s.data()));
        }
    }
}

TEST_CASE("ref_mask") {
    ReferencePairSets pairs;
    pairs.ref_pairs.insert({2, 0});
    pairs.ref_pairs.insert({2, 1});
    Matrix s(3, 3, 99.0);
    s(0, 0) = 2.0;
    s(1, 0) = -1.0;
    s(1, 1) = 0.0;
    s(2, 0) = 3.0;
    s(2, 1) = 1.0;
    s(2, 2) = -2.0;

    SECTION("vanishing reweight") {
        ReweightParams params{0.0, 0.0, MedianScope::causal_entries};
        const Matrix m = aai::ref_mask(s, pairs, params);
        for (double v : m.data()) CHECK(v == 0.0);
    }
    SECTION("adaptive value c*median+b at ref pairs") {
        ReweightParams params{1.0, 0.0, MedianScope::causal_entries};
        const Matrix m = aai::ref_mask(s, pairs, params);
        CHECK(m(2, 0) == 0.5);
        CHECK(m(2, 1) == 0.5);
        CHECK(m(0, 0) == 0.0);
    }
    SECTION("bias-only reweight ignores the scores") {
        ReweightParams params{0.0, 7.0, MedianScope::causal_entries};
        const Matrix m = aai::ref_mask(s, pairs, params);
        CHECK(m(2, 0) == 7.0);
        CHECK(m(2, 1) == 7.0);
    }
    SECTION("bounds") {
        ReferencePairSets bad;
        bad.ref_pairs.insert({9, 0});
        CHECK_THROWS_AS(aai::ref_mask(s, bad, ReweightParams{}), aai::Error);
    }
    SECTION("empty median scope is a degenerate-input error") {
        ReferencePairSets some;
        some.ref_pairs.insert({0, 0});
        try {
            aai::ref_mask(Matrix(), some, ReweightParams{});
            FAIL("expected degenerate-input error");
        } catch (const aai::Error& e) {
            CHECK(e.category() == aai::ErrorCategory::degenerate_input);
        }
    }
}

namespace {

aai::HeadMaskPlan plan_with(const ReferencePairSets& pairs, double coef, double bias) {
    aai::HeadMaskPlan plan;
    plan.selected_heads.insert({0, 0});
    plan.pairs = pairs;
    plan.params.coefficient = coef;
    plan.params.bias = bias;
    return plan;
}

double ref_mass(const Matrix& weights, std::size_t row,
                const std::set<aai::IndexPair>& refs) {
    double mass = 0.0;
    for (const auto& [i, j] : refs)
        if (i == row) mass += weights(i, j);
    return mass;
}

}  // namespace

TEST_CASE("compose_final") {
    std::mt19937_64 gen(77);
    const std::size_t len = 5;
    Matrix s(len, len);
    for (auto& v : s.data())
        v = (static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * 2.0;

    ReferencePairSets pairs;
    pairs.ref_pairs = {{3, 0}, {3, 1}, {4, 2}};
    pairs.noref_pairs = {{4, 0}, {2, 1}};

    SECTION("non-selected heads get the pure causal mask") {
        const aai::HeadMaskPlan plan = plan_with(pairs, 1.0, 0.0);
        const Matrix m = aai::compose_final(s, plan, 1, 1, len);
        CHECK(m == aai::causal_mask(len));
    }
    SECTION("empty pair sets reduce to the causal mask exactly") {
        const aai::HeadMaskPlan plan = plan_with({}, 1.0, 0.0);
        const Matrix m = aai::compose_final(s, plan, 0, 0, len);
        CHECK(m == aai::causal_mask(len));
    }
    SECTION("selected head equals the independently summed oracle") {
        const aai::HeadMaskPlan plan = plan_with(pairs, 1.5, -0.25);
        const Matrix got = aai::compose_final(s, plan, 0, 0, len);
        const Matrix a = aai::ref_mask(s, pairs, plan.params);
        const Matrix b = aai::noref_mask(len, pairs);
        const Matrix c = aai::causal_mask(len);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < len; ++j)
                CHECK(got(i, j) == a(i, j) + b(i, j) + c(i, j));
    }
    SECTION("suppression: weights at noref positions are exactly zero") {
        const aai::HeadMaskPlan plan = plan_with(pairs, 1.0, 0.0);
        const Matrix m = aai::compose_final(s, plan, 0, 0, len);
        const Matrix w = aai::masked_softmax(s, m);
        for (const auto& [i, j] : pairs.noref_pairs) CHECK(w(i, j) == 0.0);
    }
    SECTION("composition is order-independent") {
        const aai::HeadMaskPlan plan = plan_with(pairs, 2.0, 1.0);
        const Matrix a = aai::ref_mask(s, pairs, plan.params);
        const Matrix b = aai::noref_mask(len, pairs);
        const Matrix c = aai::causal_mask(len);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < len; ++j) {
                const double order1 = a(i, j) + b(i, j) + c(i, j);
                const double order2 = c(i, j) + a(i, j) + b(i, j);
                const double order3 = b(i, j) + c(i, j) + a(i, j);
                CHECK(order1 == order2);
                CHECK(order2 == order3);
            }
    }
}

TEST_CASE("directional reweighting shifts attention mass on ref keys") {
    // constructed score matrix with a known positive median
    const std::size_t len = 4;
    Matrix s(len, len, 0.0);
    s(3, 0) = 1.0;
    s(3, 1) = -0.5;
    s(3, 2) = 0.25;
    s(3, 3) = 0.75;
    s(1, 0) = 2.0;
    s(2, 2) = 4.0;
    const double median = aai::score_median(s, MedianScope::causal_entries);

    ReferencePairSets pairs;
    pairs.ref_pairs = {{3, 0}, {3, 2}};  // row 3 keeps unmasked non-ref keys 1 and 3

    const Matrix baseline =
        aai::masked_softmax(s, aai::compose_final(s, plan_with({}, 0.0, 0.0), 0, 0, len));
    const double base_mass = ref_mass(baseline, 3, pairs.ref_pairs);

    SECTION("boost > 0 strictly increases ref mass") {
        const auto plan = plan_with(pairs, 1.0, 1.0);  // median >= 0, bias 1 => positive
        REQUIRE(plan.params.coefficient * median + plan.params.bias > 0.0);
        const Matrix w = aai::masked_softmax(s, aai::compose_final(s, plan, 0, 0, len));
        CHECK(ref_mass(w, 3, pairs.ref_pairs) > base_mass);
    }
    SECTION("boost < 0 strictly decreases ref mass") {
        const auto plan = plan_with(pairs, 1.0, -1.0 - median);
        REQUIRE(plan.params.coefficient * median + plan.params.bias < 0.0);
        const Matrix w = aai::masked_softmax(s, aai::compose_final(s, plan, 0, 0, len));
        CHECK(ref_mass(w, 3, pairs.ref_pairs) < base_mass);
    }
    SECTION("boost == 0 leaves the row unchanged") {
        const auto plan = plan_with(pairs, 1.0, -median);  // c*median + b == 0 exactly
        REQUIRE(plan.params.coefficient * median + plan.params.bias == 0.0);
        const Matrix w = aai::masked_softmax(s, aai::compose_final(s, plan, 0, 0, len));
        for (std::size_t j = 0; j < len; ++j)
            CHECK(std::abs(w(3, j) - baseline(3, j)) <= 1e-12);
    }
}
