#pragma once

#include <cstddef>
#include <regex>
#include <string>
#include <vector>

#include "aai/prompt.hpp"

namespace aai {

/// One knowledge-base update: either a run of direct fact collections
/// ("=> RuleN = `X`" lines) or a single rule application
/// ("=> F(KB[...], RuleN) => `X`").
struct TraceStep {
    bool is_inference = false;
    std::vector<int> rule_numbers;        // one per collected fact; exactly one for F steps
    std::vector<std::string> consumed;    // premises cited inside F(...)
    std::vector<std::string> produced;    // one per collected fact; one for F steps
};

struct ReasoningTrace {
    std::vector<TraceStep> steps;
    std::vector<std::vector<std::string>> kb_snapshots;
    Verdict verdict;
    std::vector<std::string> opaque_lines;
};

namespace detail {

/// Contents of `...`, '...' or "..." segments, in order.
inline std::vector<std::string> quoted_segments(const std::string& text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char q = text[i];
        if (q != '`' && q != '\'' && q != '"') continue;
        const std::size_t close = text.find(q, i + 1);
        if (close == std::string::npos) break;
        out.push_back(text.substr(i + 1, close - i - 1));
        i = close;
    }
    return out;
}

inline std::vector<int> rule_numbers_in(const std::string& text) {
    std::vector<int> out;
    static const std::regex re(R"(\bRule(\d+)\b)");
    for (auto it = std::sregex_iterator(text.begin(), text.end(), re);
         it != std::sregex_iterator(); ++it)
        out.push_back(std::stoi((*it)[1].str()));
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

/// Best-effort line-by-line parse of a generated reasoning block. Lines that
/// fit no pattern are kept as opaque; nothing throws.
inline ReasoningTrace parse_trace(const std::string& generated) {
    ReasoningTrace trace;
    static const std::regex collect_re(R"(^=>\s*Rule(\d+)\s*=\s*(.+)$)");
    static const std::regex verdict_re(R"(=\s*(True|False|Uncertain|Unknown)\s*\.?\s*$)");
    static const std::regex option_re(R"(answer:\s*([A-Z])\s*\.?\s*$)");

    bool last_was_collection = false;
    std::size_t begin = 0;
    while (begin <= generated.size()) {
        std::size_t end = generated.find('\n', begin);
        if (end == std::string::npos) end = generated.size();
        const std::string line = detail::trim(generated.substr(begin, end - begin));
        begin = end + 1;
        if (line.empty()) continue;

        // knowledge-base snapshot
        if (line.rfind("# KB =", 0) == 0 || line.rfind("=> KB =", 0) == 0) {
            const std::size_t open = line.find('{');
            const std::size_t close = line.rfind('}');
            if (open != std::string::npos && close != std::string::npos && close > open) {
                std::vector<std::string> items;
                std::string inner = line.substr(open + 1, close - open - 1);
                std::size_t pos = 0;
                while (pos < inner.size()) {
                    std::size_t comma = inner.find(", ", pos);
                    if (comma == std::string::npos) comma = inner.size();
                    const std::string item = detail::trim(inner.substr(pos, comma - pos));
                    if (!item.empty()) items.push_back(item);
                    pos = comma + 2;
                }
                trace.kb_snapshots.push_back(items);
                last_was_collection = false;
                continue;
            }
        }

        std::smatch m;
        // final verdict
        if (line.find("Validate(") != std::string::npos ||
            std::regex_search(line, m, verdict_re) ||
            std::regex_search(line, m, option_re)) {
            std::smatch vm;
            if (std::regex_search(line, vm, verdict_re)) {
                trace.verdict = Verdict::truth(detail::normalize_truth(vm[1].str()));
                last_was_collection = false;
                continue;
            }
            if (std::regex_search(line, vm, option_re)) {
                trace.verdict = Verdict::option(vm[1].str()[0]);
                last_was_collection = false;
                continue;
            }
        }

        // rule application: "=> F(<args>) => <produced>"
        if (line.rfind("=> F(", 0) == 0) {
            const std::size_t arrow = line.rfind("=>");
            if (arrow > 0 && arrow != line.find("=>")) {
                const std::string args = line.substr(5, arrow - 5);
                const std::string produced_part = line.substr(arrow + 2);
                const auto rules = detail::rule_numbers_in(args);
                TraceStep step;
                step.is_inference = true;
                if (!rules.empty()) step.rule_numbers.push_back(rules.back());
                step.consumed = detail::quoted_segments(args);
                const auto quoted = detail::quoted_segments(produced_part);
                step.produced.push_back(quoted.empty() ? detail::trim(produced_part)
                                                       : quoted.back());
                trace.steps.push_back(std::move(step));
                last_was_collection = false;
                continue;
            }
        }

        // direct fact collection: "=> RuleN = `X`"; consecutive lines merge
        if (std::regex_match(line, m, collect_re)) {
            const auto quoted = detail::quoted_segments(m[2].str());
            const std::string produced =
                quoted.empty() ? detail::trim(m[2].str()) : quoted.back();
            if (!last_was_collection) {
                trace.steps.emplace_back();
                trace.steps.back().is_inference = false;
            }
            trace.steps.back().rule_numbers.push_back(std::stoi(m[1].str()));
            trace.steps.back().produced.push_back(produced);
            last_was_collection = true;
            continue;
        }

        trace.opaque_lines.push_back(line);
        last_was_collection = false;
    }
    return trace;
}

}  // namespace aai
