#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "aai/error.hpp"
#include "aai/prompt.hpp"
#include "aai/reasoning_trace.hpp"
#include "aai/rng.hpp"

namespace aai {

enum class WorldLabel { yes, no, unknown };

inline const char* to_string(WorldLabel l) {
    switch (l) {
        case WorldLabel::yes: return "true";
        case WorldLabel::no: return "false";
        case WorldLabel::unknown: return "unknown";
    }
    return "unknown";
}

/// Attribute-level condition or conclusion; rules quantify over entities.
struct WorldAtom {
    int attribute = 0;
    bool positive = true;
};

struct WorldFact {
    int entity = 0;
    int attribute = 0;
    bool positive = true;
};

struct WorldRule {
    std::vector<WorldAtom> conditions;
    WorldAtom conclusion;
};

/// Gold reasoning step: a fact collection or one rule application.
struct GoldStep {
    int rule_number = 0;  // 1-based position in the rendered context
    std::vector<std::string> consumed;
    std::string produced;
    bool is_collection = false;
};

struct SyntheticWorld {
    std::vector<std::string> entities;
    std::vector<std::string> attributes;
    std::vector<WorldFact> facts;
    std::vector<WorldRule> rules;
    /// Rendered context order: (is_fact, index into facts or rules). The item
    /// at position k is tagged Rule(k+1) by tag_rules.
    std::vector<std::pair<bool, std::size_t>> order;
    WorldFact question;
    WorldLabel label = WorldLabel::unknown;
    std::vector<GoldStep> gold_trace;

    std::string atom_text(int entity, const WorldAtom& atom) const {
        return entities[entity] + (atom.positive ? " is " : " is not ") +
               attributes[atom.attribute];
    }
    std::string fact_text(const WorldFact& f) const {
        return atom_text(f.entity, {f.attribute, f.positive});
    }
    std::string rule_text(const WorldRule& r) const {
        std::string out = "If something";
        for (std::size_t c = 0; c < r.conditions.size(); ++c) {
            out += (c == 0 ? " is " : " and ");
            if (!r.conditions[c].positive) out += "not ";
            out += attributes[r.conditions[c].attribute];
        }
        out += " then it is ";
        if (!r.conclusion.positive) out += "not ";
        out += attributes[r.conclusion.attribute];
        return out;
    }
    std::string sentence_at(std::size_t position) const {
        const auto& [is_fact, idx] = order[position];
        return (is_fact ? fact_text(facts[idx]) : rule_text(rules[idx])) + ".";
    }
    int rule_number_of_fact(std::size_t fact_idx) const {
        for (std::size_t k = 0; k < order.size(); ++k)
            if (order[k].first && order[k].second == fact_idx) return static_cast<int>(k) + 1;
        return 0;
    }
    int rule_number_of_rule(std::size_t rule_idx) const {
        for (std::size_t k = 0; k < order.size(); ++k)
            if (!order[k].first && order[k].second == rule_idx) return static_cast<int>(k) + 1;
        return 0;
    }
};

inline std::string render_context(const SyntheticWorld& world) {
    std::string out;
    for (std::size_t k = 0; k < world.order.size(); ++k) {
        if (k > 0) out += ' ';
        out += world.sentence_at(k);
    }
    return out;
}

inline std::string question_statement(const SyntheticWorld& world) {
    return world.fact_text(world.question) + ".";
}

inline std::string render_question(const SyntheticWorld& world) {
    return "Based on the above information, is the following statement true, false, or "
           "unknown? " +
           question_statement(world);
}

struct ForwardChainResult {
    std::set<std::tuple<int, int, bool>> derived;  // (entity, attribute, positive)
    WorldLabel label = WorldLabel::unknown;
};

/// Least fixpoint of rule application over the facts, with the open-world
/// label convention: true if the queried atom is derived, false if its
/// negation is, unknown otherwise.
inline ForwardChainResult forward_chain(const SyntheticWorld& world) {
    ForwardChainResult result;
    auto add = [&](int entity, int attribute, bool positive) {
        if (result.derived.count({entity, attribute, !positive}))
            throw Error(ErrorCategory::inconsistent_world,
                        "derived both polarities of " +
                            world.atom_text(entity, {attribute, positive}));
        result.derived.insert({entity, attribute, positive});
    };
    for (const auto& f : world.facts) add(f.entity, f.attribute, f.positive);

    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& rule : world.rules) {
            for (int e = 0; e < static_cast<int>(world.entities.size()); ++e) {
                bool satisfied = true;
                for (const auto& cond : rule.conditions)
                    if (!result.derived.count({e, cond.attribute, cond.positive})) {
                        satisfied = false;
                        break;
                    }
                if (!satisfied) continue;
                if (result.derived.count({e, rule.conclusion.attribute,
                                          rule.conclusion.positive}))
                    continue;
                add(e, rule.conclusion.attribute, rule.conclusion.positive);
                changed = true;
            }
        }
    }

    const auto& q = world.question;
    if (result.derived.count({q.entity, q.attribute, q.positive}))
        result.label = WorldLabel::yes;
    else if (result.derived.count({q.entity, q.attribute, !q.positive}))
        result.label = WorldLabel::no;
    else
        result.label = WorldLabel::unknown;
    return result;
}

namespace detail {

inline const std::vector<std::string>& entity_name_pool() {
    static const std::vector<std::string> pool{
        "Anne", "Bob",   "Carol", "Dave",  "Erin",  "Fiona",
        "Gary", "Harry", "Ivan",  "Julia", "Kevin", "Laura"};
    return pool;
}

inline const std::vector<std::string>& attribute_name_pool() {
    static const std::vector<std::string> pool{
        "red",   "blue",  "green", "kind",  "quiet", "round", "rough",  "smart",
        "young", "cold",  "nice",  "big",   "furry", "happy", "hungry", "tired",
        "brave", "calm",  "sharp", "soft",  "tall",  "warm",  "wise",   "bright"};
    return pool;
}

inline std::string pool_name(const std::vector<std::string>& pool, std::size_t i) {
    const std::size_t n = pool.size();
    if (i < n) return pool[i];
    return pool[i % n] + std::to_string(i / n + 1);
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, DetRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace detail

struct GeneratedExample {
    SyntheticWorld world;
    std::string context;
    std::string question;
};

/// Builds a world whose question needs exactly `depth` rule applications,
/// with `width` distractor chains on other entities. The label cycles with
/// the seeded generator; the forward-chaining oracle re-verifies it before
/// returning.
inline GeneratedExample generate_world(int depth, int width, std::uint64_t seed) {
    if (depth < 0 || width < 1)
        throw Error(ErrorCategory::generation, "need depth >= 0 and width >= 1");

    for (int attempt = 0; attempt < 8; ++attempt) {
        DetRng rng(seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ull);
        SyntheticWorld world;

        const WorldLabel label =
            std::array<WorldLabel, 3>{WorldLabel::yes, WorldLabel::no,
                                      WorldLabel::unknown}[rng.index(3)];

        // entity 0 is the question entity; one extra entity per distractor chain
        std::vector<std::size_t> entity_ids(detail::entity_name_pool().size());
        for (std::size_t i = 0; i < entity_ids.size(); ++i) entity_ids[i] = i;
        detail::shuffle_in_place(entity_ids, rng);
        for (int e = 0; e < 1 + width; ++e)
            world.entities.push_back(
                detail::pool_name(detail::entity_name_pool(), entity_ids[e % entity_ids.size()] +
                                                                  (e / entity_ids.size()) *
                                                                      entity_ids.size()));

        // attribute layout: chain attrs [0..depth], distractors, one reserved
        // "mystery" attribute that nothing ever derives
        const int chain_attrs = depth + 1;
        const int distractor_attrs = 2 * width;
        const int total_attrs = chain_attrs + distractor_attrs + 1;
        std::vector<std::size_t> attr_ids(detail::attribute_name_pool().size());
        for (std::size_t i = 0; i < attr_ids.size(); ++i) attr_ids[i] = i;
        detail::shuffle_in_place(attr_ids, rng);
        for (int a = 0; a < total_attrs; ++a)
            world.attributes.push_back(
                detail::pool_name(detail::attribute_name_pool(),
                                  attr_ids[a % attr_ids.size()] +
                                      (a / attr_ids.size()) * attr_ids.size()));
        const int mystery_attr = total_attrs - 1;

        // main chain: fact (e0, a0), rules a_k -> a_{k+1}
        world.facts.push_back({0, 0, depth > 0 || label != WorldLabel::no});
        std::vector<std::size_t> chain_rule_idx;
        for (int k = 0; k < depth; ++k) {
            WorldRule rule;
            rule.conditions.push_back({k, true});
            if (k >= 1 && rng.chance(0.3)) rule.conditions.push_back({k - 1, true});
            const bool last = (k == depth - 1);
            rule.conclusion = {k + 1, !(last && label == WorldLabel::no)};
            chain_rule_idx.push_back(world.rules.size());
            world.rules.push_back(rule);
        }

        // distractor chains: fact (ec, d0) and rule d0 -> d1, never touching
        // the chain attributes
        for (int c = 0; c < width; ++c) {
            const int d0 = chain_attrs + 2 * c;
            const int d1 = chain_attrs + 2 * c + 1;
            world.facts.push_back({1 + c, d0, true});
            WorldRule rule;
            rule.conditions.push_back({d0, true});
            rule.conclusion = {d1, true};
            world.rules.push_back(rule);
        }

        // question about the chain tip, or about the underivable attribute
        world.label = label;
        world.question = {0, label == WorldLabel::unknown ? mystery_attr : depth, true};

        // deterministic shuffle of the rendered sentence order
        for (std::size_t f = 0; f < world.facts.size(); ++f) world.order.push_back({true, f});
        for (std::size_t r = 0; r < world.rules.size(); ++r)
            world.order.push_back({false, r});
        detail::shuffle_in_place(world.order, rng);

        // gold trace: collect the question entity's facts, then walk the chain
        for (std::size_t f = 0; f < world.facts.size(); ++f) {
            if (world.facts[f].entity != 0) continue;
            GoldStep step;
            step.is_collection = true;
            step.rule_number = world.rule_number_of_fact(f);
            step.produced = world.fact_text(world.facts[f]);
            world.gold_trace.push_back(step);
        }
        for (std::size_t k = 0; k < chain_rule_idx.size(); ++k) {
            const WorldRule& rule = world.rules[chain_rule_idx[k]];
            GoldStep step;
            step.rule_number = world.rule_number_of_rule(chain_rule_idx[k]);
            for (const auto& cond : rule.conditions)
                step.consumed.push_back(world.atom_text(0, cond));
            step.produced = world.atom_text(0, rule.conclusion);
            world.gold_trace.push_back(step);
        }

        try {
            if (forward_chain(world).label != label) continue;
        } catch (const Error&) {
            continue;
        }
        GeneratedExample out;
        out.context = render_context(world);
        out.question = render_question(world);
        out.world = std::move(world);
        return out;
    }
    throw Error(ErrorCategory::generation,
                "could not generate a consistent world for the given parameters");
}

/// Renders the gold trace in the generated-answer syntax that parse_trace
/// understands.
inline std::string render_gold_trace(const SyntheticWorld& world) {
    std::string out = "# (Answer): Start from the object and their condition mentioned in "
                      "the question to collect relevant facts: " +
                      world.entities[world.question.entity] + "\n# KB = {}\n";
    std::vector<std::string> kb;
    auto kb_line = [&]() {
        std::string line = "# KB = {";
        for (std::size_t i = 0; i < kb.size(); ++i) {
            if (i > 0) line += ", ";
            line += kb[i];
        }
        return line + "}\n";
    };
    bool any_collection = false;
    for (const auto& step : world.gold_trace) {
        if (!step.is_collection) continue;
        out += "=> Rule" + std::to_string(step.rule_number) + " = `" + step.produced + "`\n";
        kb.push_back(step.produced);
        any_collection = true;
    }
    if (any_collection) out += kb_line();
    for (const auto& step : world.gold_trace) {
        if (step.is_collection) continue;
        out += "=> F(KB[";
        for (std::size_t c = 0; c < step.consumed.size(); ++c) {
            if (c > 0) out += ", ";
            out += "'" + step.consumed[c] + "'";
        }
        out += "], Rule" + std::to_string(step.rule_number) + ") => `" + step.produced + "`\n";
        kb.push_back(step.produced);
        out += kb_line();
    }
    out += "# valid the question with current infered premies\n";
    out += "=> Validate(Question=`" + question_statement(world) + "`, ";
    switch (world.label) {
        case WorldLabel::yes:
            out += "KB('" + world.fact_text(world.question) + "')) = True.";
            break;
        case WorldLabel::no:
            out += "KB('" +
                   world.atom_text(world.question.entity,
                                   {world.question.attribute, !world.question.positive}) +
                   "')) = False.";
            break;
        case WorldLabel::unknown:
            out += "KB) = Unknown.";
            break;
    }
    out += "\n";
    return out;
}

struct ValidationReport {
    bool valid = true;
    std::size_t step_index = 0;
    std::string violation;

    static ValidationReport failure(std::size_t step, std::string why) {
        return {false, step, std::move(why)};
    }
};

inline std::string to_string(const ValidationReport& report) {
    if (report.valid) return "valid";
    return "invalid at step " + std::to_string(report.step_index) + ": " + report.violation;
}

namespace detail {

struct ParsedPremise {
    int entity = -1;
    int attribute = -1;
    bool positive = true;
};

inline bool parse_premise(const SyntheticWorld& world, const std::string& text,
                          ParsedPremise& out) {
    const std::size_t is_pos = text.find(" is ");
    if (is_pos == std::string::npos) return false;
    const std::string entity = text.substr(0, is_pos);
    std::string rest = text.substr(is_pos + 4);
    out.positive = true;
    if (rest.rfind("not ", 0) == 0) {
        out.positive = false;
        rest = rest.substr(4);
    }
    out.entity = -1;
    for (std::size_t e = 0; e < world.entities.size(); ++e)
        if (world.entities[e] == entity) out.entity = static_cast<int>(e);
    out.attribute = -1;
    for (std::size_t a = 0; a < world.attributes.size(); ++a)
        if (world.attributes[a] == rest) out.attribute = static_cast<int>(a);
    return out.entity >= 0 && out.attribute >= 0;
}

}  // namespace detail

/// Semantic check of a parsed trace against a generated world: every cited
/// rule must exist, collections must restate facts, rule applications must
/// have their conditions in the current KB and produce the rule's conclusion,
/// snapshots must grow monotonically, and the verdict must match the
/// forward-chaining label.
inline ValidationReport validate_trace(const ReasoningTrace& trace,
                                       const SyntheticWorld& world) {
    std::set<std::string> kb;
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const TraceStep& step = trace.steps[s];
        if (!step.is_inference) {
            for (std::size_t k = 0; k < step.rule_numbers.size(); ++k) {
                const int num = step.rule_numbers[k];
                if (num < 1 || num > static_cast<int>(world.order.size()))
                    return ValidationReport::failure(s, "cited Rule" + std::to_string(num) +
                                                            " does not exist");
                const auto& [is_fact, idx] = world.order[num - 1];
                if (!is_fact)
                    return ValidationReport::failure(
                        s, "Rule" + std::to_string(num) + " is not a fact");
                if (k >= step.produced.size() ||
                    world.fact_text(world.facts[idx]) != step.produced[k])
                    return ValidationReport::failure(
                        s, "collected premise does not match Rule" + std::to_string(num));
                kb.insert(step.produced[k]);
            }
            continue;
        }

        if (step.rule_numbers.empty())
            return ValidationReport::failure(s, "rule application cites no rule");
        const int num = step.rule_numbers.front();
        if (num < 1 || num > static_cast<int>(world.order.size()))
            return ValidationReport::failure(
                s, "cited Rule" + std::to_string(num) + " does not exist");
        const auto& [is_fact, idx] = world.order[num - 1];
        if (is_fact)
            return ValidationReport::failure(
                s, "Rule" + std::to_string(num) + " is a fact, not an inference rule");
        const WorldRule& rule = world.rules[idx];

        if (step.produced.empty())
            return ValidationReport::failure(s, "rule application produced nothing");
        detail::ParsedPremise produced;
        if (!detail::parse_premise(world, step.produced.front(), produced))
            return ValidationReport::failure(
                s, "cannot parse produced premise '" + step.produced.front() + "'");
        if (produced.attribute != rule.conclusion.attribute ||
            produced.positive != rule.conclusion.positive)
            return ValidationReport::failure(
                s, "produced premise does not match the conclusion of Rule" +
                       std::to_string(num));
        for (const auto& cond : rule.conditions) {
            const std::string needed = world.atom_text(produced.entity, cond);
            if (!kb.count(needed))
                return ValidationReport::failure(
                    s, "condition '" + needed + "' of Rule" + std::to_string(num) +
                           " is not in the KB");
        }
        for (const auto& premise : step.consumed)
            if (!kb.count(premise))
                return ValidationReport::failure(
                    s, "consumed premise '" + premise + "' is not in the KB");
        kb.insert(step.produced.front());
    }

    for (std::size_t i = 1; i < trace.kb_snapshots.size(); ++i) {
        const auto& prev = trace.kb_snapshots[i - 1];
        const auto& cur = trace.kb_snapshots[i];
        for (const auto& item : prev)
            if (std::find(cur.begin(), cur.end(), item) == cur.end())
                return ValidationReport::failure(
                    i, "KB snapshot dropped premise '" + item + "'");
    }

    const WorldLabel label = forward_chain(world).label;
    if (trace.verdict.kind != Verdict::Kind::truth)
        return ValidationReport::failure(trace.steps.size(), "missing final verdict");
    if (trace.verdict.value != to_string(label))
        return ValidationReport::failure(
            trace.steps.size(), "verdict " + trace.verdict.value +
                                    " does not match the oracle label " + to_string(label));
    return {};
}

/// Structural check for traces over real (non-canonical) prompts: cited rule
/// numbers in range, snapshots monotone, verdict present.
inline ValidationReport validate_structure(const ReasoningTrace& trace,
                                           int num_context_rules) {
    for (std::size_t s = 0; s < trace.steps.size(); ++s)
        for (int num : trace.steps[s].rule_numbers)
            if (num < 1 || num > num_context_rules)
                return ValidationReport::failure(
                    s, "cited Rule" + std::to_string(num) + " does not exist");
    for (std::size_t i = 1; i < trace.kb_snapshots.size(); ++i)
        for (const auto& item : trace.kb_snapshots[i - 1])
            if (std::find(trace.kb_snapshots[i].begin(), trace.kb_snapshots[i].end(),
                          item) == trace.kb_snapshots[i].end())
                return ValidationReport::failure(i,
                                                 "KB snapshot dropped premise '" + item + "'");
    if (trace.verdict.kind == Verdict::Kind::abstain)
        return ValidationReport::failure(trace.steps.size(), "missing final verdict");
    return {};
}

}  // namespace aai
