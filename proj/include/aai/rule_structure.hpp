#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "aai/error.hpp"

namespace aai {

struct Token {
    std::string text;
    std::size_t begin = 0;  // byte offset into the source text
    std::size_t end = 0;    // one past the last byte
};

/// Half-open range of token indices.
struct TokenRange {
    std::size_t first = 0;
    std::size_t last = 0;

    bool contains(std::size_t idx) const { return idx >= first && idx < last; }
    bool intersects(const TokenRange& other) const {
        return first < other.last && other.first < last;
    }
};

namespace detail {

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace detail

/// Splits text into runs of letters/underscores, runs of digits, runs of
/// whitespace, and single punctuation bytes. Concatenating the surface forms
/// reconstructs the input exactly.
inline std::vector<Token> tokenize(const std::string& text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto classify = [](unsigned char c) -> int {
        if (std::isalpha(c) || c == '_') return 0;
        if (std::isdigit(c)) return 1;
        if (std::isspace(c)) return 2;
        return 3;  // punctuation and non-ASCII bytes, one token each
    };
    while (i < n) {
        const int cls = classify(static_cast<unsigned char>(text[i]));
        std::size_t j = i + 1;
        if (cls != 3)
            while (j < n && classify(static_cast<unsigned char>(text[j])) == cls) ++j;
        tokens.push_back({text.substr(i, j - i), i, j});
        i = j;
    }
    return tokens;
}

inline std::string detokenize(const std::vector<Token>& tokens) {
    std::string out;
    for (const auto& t : tokens) out += t.text;
    return out;
}

/// Rule identity. Few-shot prompts repeat Rule1, Rule2, ... once per example
/// block, so identifiers are scoped to the "### Example" section they appear
/// in; section 0 is everything before the first such header.
struct RuleKey {
    int section = 0;
    int number = 0;

    auto operator<=>(const RuleKey&) const = default;
};

struct RuleMention {
    RuleKey key;
    TokenRange range;
};

struct RuleAnnotatedSequence {
    std::string text;
    std::vector<Token> tokens;
    std::map<RuleKey, TokenRange> rule_spans;
    std::vector<RuleMention> identifier_mentions;  // resolved (span exists)
    std::vector<RuleMention> dangling_mentions;    // no matching span; never paired
};

namespace detail {

struct CharMatch {
    std::size_t begin = 0;
    std::size_t end = 0;
    int number = 0;
};

/// Character-level matches of word-bounded "Rule<digits>".
inline std::vector<CharMatch> find_rule_identifiers(const std::string& text) {
    std::vector<CharMatch> out;
    std::size_t pos = 0;
    while ((pos = text.find("Rule", pos)) != std::string::npos) {
        const bool bounded_left = pos == 0 || !is_word_char(text[pos - 1]);
        std::size_t d = pos + 4;
        while (d < text.size() && std::isdigit(static_cast<unsigned char>(text[d]))) ++d;
        const bool has_digits = d > pos + 4;
        const bool bounded_right = d == text.size() || !is_word_char(text[d]);
        if (bounded_left && has_digits && bounded_right) {
            out.push_back({pos, d, std::stoi(text.substr(pos + 4, d - pos - 4))});
            pos = d;
        } else {
            pos += 4;
        }
    }
    return out;
}

/// Maps a byte range to the covering token index range.
inline TokenRange project_to_tokens(const std::vector<Token>& tokens, std::size_t begin,
                                    std::size_t end) {
    TokenRange range;
    bool found = false;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t].begin < end && begin < tokens[t].end) {
            if (!found) range.first = t;
            range.last = t + 1;
            found = true;
        }
    }
    return range;
}

}  // namespace detail

/// Finds rule definition lines ("# (Rule<n>): ...") and every word-bounded
/// mention of Rule<n>. A rule's span runs from its identifier through the end
/// of the definition line; the leading "# (" punctuation stays outside.
inline RuleAnnotatedSequence annotate_rules(const std::vector<Token>& tokens) {
    RuleAnnotatedSequence seq;
    seq.tokens = tokens;
    seq.text = detokenize(tokens);
    const std::string& text = seq.text;

    // Section boundaries at "### Example" headers.
    std::vector<std::size_t> section_starts{0};
    std::size_t pos = 0;
    while ((pos = text.find("### Example", pos)) != std::string::npos) {
        if (pos == 0 || text[pos - 1] == '\n') section_starts.push_back(pos);
        pos += 11;
    }
    auto section_of = [&](std::size_t offset) {
        int s = 0;
        for (std::size_t k = 1; k < section_starts.size(); ++k)
            if (offset >= section_starts[k]) s = static_cast<int>(k);
        return s;
    };

    // Definition lines: "# (Rule<n>):" at line start.
    std::size_t line_begin = 0;
    while (line_begin < text.size()) {
        std::size_t line_end = text.find('\n', line_begin);
        if (line_end == std::string::npos) line_end = text.size();
        const std::string_view line(text.data() + line_begin, line_end - line_begin);
        if (line.rfind("# (Rule", 0) == 0) {
            std::size_t d = line_begin + 7;
            while (d < line_end && std::isdigit(static_cast<unsigned char>(text[d]))) ++d;
            if (d > line_begin + 7 && d + 1 < line_end && text[d] == ')' && text[d + 1] == ':') {
                RuleKey key{section_of(line_begin),
                            std::stoi(text.substr(line_begin + 7, d - line_begin - 7))};
                if (seq.rule_spans.count(key))
                    throw Error(ErrorCategory::annotation,
                                "duplicate definition of Rule" + std::to_string(key.number));
                // identifier starts at "Rule", span runs to end of line
                seq.rule_spans[key] =
                    detail::project_to_tokens(tokens, line_begin + 3, line_end);
            }
        }
        line_begin = line_end + 1;
    }

    for (const auto& m : detail::find_rule_identifiers(text)) {
        RuleKey key{section_of(m.begin), m.number};
        RuleMention mention{key, detail::project_to_tokens(tokens, m.begin, m.end)};
        if (seq.rule_spans.count(key))
            seq.identifier_mentions.push_back(mention);
        else
            seq.dangling_mentions.push_back(mention);
    }
    return seq;
}

inline RuleAnnotatedSequence annotate_text(const std::string& text) {
    return annotate_rules(tokenize(text));
}

using IndexPair = std::pair<std::size_t, std::size_t>;  // (query i, key j), i >= j

struct ReferencePairSets {
    std::set<IndexPair> ref_pairs;
    std::set<IndexPair> noref_pairs;

    bool empty() const { return ref_pairs.empty() && noref_pairs.empty(); }
};

enum class PairScope { all_sections, last_section };

struct PairOptions {
    bool include_defining = true;
    PairScope scope = PairScope::all_sections;
};

/// For each mention of rule r: ref pairs bind its query positions to r's own
/// span, noref pairs to every other rule span in the same example section.
/// Pairs in the acausal region (i < j) are dropped.
inline ReferencePairSets build_pair_sets(const RuleAnnotatedSequence& seq,
                                         const PairOptions& opts = {}) {
    ReferencePairSets sets;
    int last_section = 0;
    for (const auto& [key, span] : seq.rule_spans)
        last_section = std::max(last_section, key.section);

    for (const auto& mention : seq.identifier_mentions) {
        if (opts.scope == PairScope::last_section && mention.key.section != last_section)
            continue;
        const TokenRange& own_span = seq.rule_spans.at(mention.key);
        if (!opts.include_defining && mention.range.intersects(own_span)) continue;

        for (std::size_t i = mention.range.first; i < mention.range.last; ++i) {
            for (const auto& [key, span] : seq.rule_spans) {
                if (key.section != mention.key.section) continue;
                auto& target = (key == mention.key) ? sets.ref_pairs : sets.noref_pairs;
                for (std::size_t j = span.first; j < span.last; ++j)
                    if (i >= j) target.insert({i, j});
            }
        }
    }
    return sets;
}

/// Projects token-index pairs down to byte-index pairs via token offsets, for
/// models whose attention positions are bytes.
inline ReferencePairSets to_byte_pairs(const RuleAnnotatedSequence& seq,
                                       const ReferencePairSets& token_pairs) {
    ReferencePairSets out;
    auto expand = [&](const std::set<IndexPair>& in, std::set<IndexPair>& dst) {
        for (const auto& [ti, tj] : in) {
            const Token& qt = seq.tokens[ti];
            const Token& kt = seq.tokens[tj];
            for (std::size_t bi = qt.begin; bi < qt.end; ++bi)
                for (std::size_t bj = kt.begin; bj < kt.end; ++bj)
                    if (bi >= bj) dst.insert({bi, bj});
        }
    };
    expand(token_pairs.ref_pairs, out.ref_pairs);
    expand(token_pairs.noref_pairs, out.noref_pairs);
    return out;
}

/// Sorted "i j REF|NOREF" lines for inspection and golden tests.
inline std::string format_pair_sets(const ReferencePairSets& sets) {
    std::vector<std::pair<IndexPair, bool>> all;
    for (const auto& p : sets.ref_pairs) all.push_back({p, true});
    for (const auto& p : sets.noref_pairs) all.push_back({p, false});
    std::sort(all.begin(), all.end());
    std::string out;
    for (const auto& [p, is_ref] : all)
        out += std::to_string(p.first) + ' ' + std::to_string(p.second) +
               (is_ref ? " REF\n" : " NOREF\n");
    return out;
}

}  // namespace aai
