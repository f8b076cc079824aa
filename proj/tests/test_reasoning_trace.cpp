#include <catch2/catch_amalgamated.hpp>

#include "aai/reasoning_trace.hpp"
#include "fixtures.hpp"

using aai::parse_trace;
using aai::ReasoningTrace;
using aai::Verdict;

TEST_CASE("parse_trace on the stored appendix-style answer block") {
    const std::string block =
        fixtures::read_file(fixtures::fixture_dir() + "/reasoning_block.txt");
    const ReasoningTrace trace = parse_trace(block);

    // one merged fact-collection step plus three rule applications
    REQUIRE(trace.steps.size() == 4);
    CHECK_FALSE(trace.steps[0].is_inference);
    CHECK(trace.steps[0].rule_numbers == std::vector<int>{6, 7});
    CHECK(trace.steps[0].produced ==
          std::vector<std::string>{"Harry is kind", "Harry is smart"});
    CHECK(trace.steps[1].is_inference);
    CHECK(trace.steps[1].rule_numbers == std::vector<int>{16});
    CHECK(trace.steps[1].consumed == std::vector<std::string>{"Harry is smart"});
    CHECK(trace.steps[1].produced == std::vector<std::string>{"Harry is quiet"});
    CHECK(trace.steps[2].rule_numbers == std::vector<int>{12});
    CHECK(trace.steps[3].rule_numbers == std::vector<int>{8});
    CHECK(trace.steps[3].consumed ==
          std::vector<std::string>{"Harry is kind", "Harry is big"});

    REQUIRE(trace.kb_snapshots.size() == 5);
    CHECK(trace.kb_snapshots[0].empty());
    CHECK(trace.kb_snapshots[1] ==
          std::vector<std::string>{"Harry is kind", "Harry is smart"});
    CHECK(trace.kb_snapshots[4].size() == 5);

    CHECK(trace.verdict == Verdict::truth("true"));
}

TEST_CASE("parse_trace edge cases") {
    SECTION("empty input") {
        const ReasoningTrace trace = parse_trace("");
        CHECK(trace.steps.empty());
        CHECK(trace.kb_snapshots.empty());
        CHECK(trace.verdict == Verdict::abstain());
    }
    SECTION("malformed step lines degrade to opaque, rest still parses") {
        const std::string text =
            "# KB = {}\n"
            "=> F(broken line with no arrow\n"
            "=> Rule3 = `A is b`\n"
            "# KB = {A is b}\n"
            "=> Validate(Question=`A is b`, KB('A is b')) = True.\n";
        const ReasoningTrace trace = parse_trace(text);
        REQUIRE(trace.steps.size() == 1);
        CHECK(trace.steps[0].rule_numbers == std::vector<int>{3});
        CHECK(trace.kb_snapshots.size() == 2);
        CHECK(trace.verdict == Verdict::truth("true"));
        CHECK(trace.opaque_lines.size() == 1);
    }
    SECTION("consecutive collections merge; snapshots break runs") {
        const std::string text =
            "=> Rule1 = `a`\n=> Rule2 = `b`\n# KB = {a, b}\n=> Rule3 = `c`\n";
        const ReasoningTrace trace = parse_trace(text);
        REQUIRE(trace.steps.size() == 2);
        CHECK(trace.steps[0].rule_numbers == std::vector<int>{1, 2});
        CHECK(trace.steps[1].rule_numbers == std::vector<int>{3});
    }
    SECTION("option verdict") {
        const ReasoningTrace trace =
            parse_trace("Check all the above options => answer: B");
        CHECK(trace.verdict == Verdict::option('B'));
    }
    SECTION("unknown verdict from a bare Validate line") {
        const ReasoningTrace trace =
            parse_trace("=> Validate(Question=`x`, KB) = Unknown.");
        CHECK(trace.verdict == Verdict::truth("unknown"));
    }
    SECTION("consumed premises parse from both KB[] and KB() forms") {
        const ReasoningTrace a =
            parse_trace("=> F(KB['x is y'], Rule4) => `x is z`");
        REQUIRE(a.steps.size() == 1);
        CHECK(a.steps[0].consumed == std::vector<std::string>{"x is y"});
        const ReasoningTrace b =
            parse_trace("=> F(KB('p is q', 'r is s'), Rule7) => `t is u`");
        REQUIRE(b.steps.size() == 1);
        CHECK(b.steps[0].consumed == std::vector<std::string>{"p is q", "r is s"});
        CHECK(b.steps[0].rule_numbers == std::vector<int>{7});
    }
}
