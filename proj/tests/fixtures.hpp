#pragma once

// Shared fixture inputs for template rendering and extraction tests. The
// golden files under tests/golden/ were produced from exactly these inputs.

#include <fstream>
#include <sstream>
#include <string>

#include "aai/error.hpp"
#include "aai/prompt.hpp"

namespace fixtures {

inline std::string source_dir() { return AAI_SOURCE_DIR; }
inline std::string templates_dir() { return source_dir() + "/assets/templates"; }
inline std::string golden_dir() { return source_dir() + "/tests/golden"; }
inline std::string fixture_dir() { return source_dir() + "/tests/fixtures"; }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw aai::Error(aai::ErrorCategory::io, "missing fixture file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline aai::PromptInputs inputs_for(aai::DatasetFamily family) {
    aai::PromptInputs in;
    switch (family) {
        case aai::DatasetFamily::proofwriter:
            in.rule_content = aai::tag_rules(
                "The cow is blue. The cow is round. If something is blue then it is kind.");
            in.question =
                "Based on the above information, is the following statement true, false, "
                "or unknown? The cow is kind.";
            break;
        case aai::DatasetFamily::prontoqa:
            in.rule_content = aai::tag_rules(
                "Every wumpus is a jompus. Jompuses are small. Rex is a wumpus.");
            in.question = "Is the following statement true or false? Rex is small.";
            break;
        case aai::DatasetFamily::logical_deduction:
            in.rule_content = aai::tag_rules(
                "On a shelf there are three books: a red book, a green book, and a blue "
                "book. The red book is to the left of the green book. The blue book is "
                "the rightmost.");
            in.question = "Which of the following is true?";
            in.options = aai::format_options({"The red book is the rightmost.",
                                              "The green book is the rightmost.",
                                              "The blue book is the rightmost."});
            break;
        case aai::DatasetFamily::folio:
            in.rule_content = aai::tag_rules(
                "All mammals are animals. Whales are mammals. Rocks are not animals.");
            in.question = "Whales are animals.";
            break;
        case aai::DatasetFamily::gsm8k:
            in.context =
                "Sara had 5 apples. She bought 3 more apples. How many apples does Sara "
                "have now?";
            break;
    }
    return in;
}

/// k-th generated-answer block of a template: from the k-th "# (Answer):"
/// through the following "-------" separator (or end of text).
inline std::string answer_block(const std::string& asset_text, int k) {
    std::size_t pos = 0;
    for (int i = 0; i <= k; ++i) {
        pos = asset_text.find("# (Answer):", pos);
        if (pos == std::string::npos)
            throw aai::Error(aai::ErrorCategory::io, "answer block not found");
        if (i < k) pos += 11;
    }
    std::size_t end = asset_text.find("\n-------", pos);
    if (end == std::string::npos) end = asset_text.size();
    return asset_text.substr(pos, end - pos);
}

}  // namespace fixtures
