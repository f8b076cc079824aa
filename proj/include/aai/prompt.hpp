#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "aai/error.hpp"

namespace aai {

enum class PromptStyle { symbolic_aided, compact };

enum class DatasetFamily { proofwriter, prontoqa, logical_deduction, folio, gsm8k };

inline const char* to_string(PromptStyle s) {
    return s == PromptStyle::symbolic_aided ? "symbolic_aided" : "compact";
}

inline const char* to_string(DatasetFamily f) {
    switch (f) {
        case DatasetFamily::proofwriter: return "proofwriter";
        case DatasetFamily::prontoqa: return "prontoqa";
        case DatasetFamily::logical_deduction: return "logical_deduction";
        case DatasetFamily::folio: return "folio";
        case DatasetFamily::gsm8k: return "gsm8k";
    }
    return "proofwriter";
}

inline DatasetFamily family_from_string(const std::string& name) {
    if (name == "proofwriter") return DatasetFamily::proofwriter;
    if (name == "prontoqa") return DatasetFamily::prontoqa;
    if (name == "logical_deduction") return DatasetFamily::logical_deduction;
    if (name == "folio") return DatasetFamily::folio;
    if (name == "gsm8k") return DatasetFamily::gsm8k;
    throw Error(ErrorCategory::config, "unknown dataset family: " + name);
}

struct PromptTemplate {
    PromptStyle style = PromptStyle::symbolic_aided;
    DatasetFamily family = DatasetFamily::proofwriter;
    std::string body;
};

inline std::string template_filename(PromptStyle style, DatasetFamily family) {
    return std::string(to_string(style)) + "_" + to_string(family) + ".txt";
}

/// Loads one of the versioned template assets. The symbolic-aided style has no
/// gsm8k variant.
inline PromptTemplate load_template(const std::string& templates_dir, PromptStyle style,
                                    DatasetFamily family) {
    if (style == PromptStyle::symbolic_aided && family == DatasetFamily::gsm8k)
        throw Error(ErrorCategory::load, "no symbolic_aided template for gsm8k");
    const std::string path = templates_dir + "/" + template_filename(style, family);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::load, "cannot open template " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return PromptTemplate{style, family, buf.str()};
}

/// Splits context into sentences at ". " / ".\n" boundaries and tags sentence
/// k as "# (Rulek): <sentence>".
inline std::string tag_rules(const std::string& context) {
    std::vector<std::string> sentences;
    std::string current;
    for (std::size_t i = 0; i < context.size(); ++i) {
        const char c = context[i];
        current.push_back(c);
        const bool sentence_end =
            c == '.' && (i + 1 == context.size() || context[i + 1] == ' ' ||
                         context[i + 1] == '\n');
        if (sentence_end) {
            sentences.push_back(current);
            current.clear();
            while (i + 1 < context.size() &&
                   (context[i + 1] == ' ' || context[i + 1] == '\n'))
                ++i;
        }
    }
    // trailing text without a final period still counts as a sentence
    while (!current.empty() && std::isspace(static_cast<unsigned char>(current.back())))
        current.pop_back();
    if (!current.empty()) sentences.push_back(current);

    std::string out;
    for (std::size_t k = 0; k < sentences.size(); ++k) {
        if (k > 0) out += '\n';
        out += "# (Rule" + std::to_string(k + 1) + "): " + sentences[k];
    }
    return out;
}

struct PromptInputs {
    std::string rule_content;
    std::string question;
    std::string options;
    std::string context;
};

/// "A) first\nB) second\n..." from an ordered option list.
inline std::string format_options(const std::vector<std::string>& options) {
    std::string out;
    for (std::size_t k = 0; k < options.size(); ++k) {
        if (k > 0) out += '\n';
        out += static_cast<char>('A' + k);
        out += ") " + options[k];
    }
    return out;
}

/// Byte-exact placeholder substitution. Every placeholder present in the body
/// must have a non-empty value.
inline std::string render_prompt(const PromptTemplate& tmpl, const PromptInputs& inputs) {
    struct Slot {
        const char* placeholder;
        const std::string* value;
    };
    const Slot slots[] = {{"{{RULE CONTENT}}", &inputs.rule_content},
                          {"{{QUESTION}}", &inputs.question},
                          {"{{OPTIONS}}", &inputs.options},
                          {"{{CONTEXT}}", &inputs.context}};
    std::string out = tmpl.body;
    for (const auto& slot : slots) {
        const std::string ph = slot.placeholder;
        std::size_t pos;
        while ((pos = out.find(ph)) != std::string::npos) {
            if (slot.value->empty())
                throw Error(ErrorCategory::render, "missing value for " + ph);
            out.replace(pos, ph.size(), *slot.value);
        }
    }
    if (out.find("{{") != std::string::npos && out.find("}}") != std::string::npos)
        throw Error(ErrorCategory::render, "unresolved placeholder in template");
    return out;
}

inline std::string render_prompt(const PromptTemplate& tmpl, const std::string& rule_content,
                                 const std::string& question,
                                 const std::string& options = "") {
    PromptInputs in;
    in.rule_content = rule_content;
    in.question = question;
    in.options = options;
    return render_prompt(tmpl, in);
}

struct Verdict {
    enum class Kind { abstain, truth, option, number };
    Kind kind = Kind::abstain;
    std::string value;  // "true"/"false"/"unknown", an option letter, or a number

    bool operator==(const Verdict&) const = default;

    static Verdict abstain() { return {}; }
    static Verdict truth(const std::string& v) { return {Kind::truth, v}; }
    static Verdict option(char letter) { return {Kind::option, std::string(1, letter)}; }
    static Verdict number(const std::string& v) { return {Kind::number, v}; }
};

inline std::string to_string(const Verdict& v) {
    return v.kind == Verdict::Kind::abstain ? std::string("abstain") : v.value;
}

namespace detail {

inline std::string normalize_truth(const std::string& word) {
    if (word == "True") return "true";
    if (word == "False") return "false";
    return "unknown";  // Unknown and Uncertain collapse to one value
}

inline std::string canonical_number(const std::string& literal) {
    std::string cleaned;
    for (char c : literal)
        if (c != ',') cleaned.push_back(c);
    while (!cleaned.empty() && cleaned.back() == '.') cleaned.pop_back();
    const double value = std::strtod(cleaned.c_str(), nullptr);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

inline bool last_regex_match(const std::string& text, const std::regex& re,
                             std::smatch& out) {
    bool found = false;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), re);
         it != std::sregex_iterator(); ++it) {
        out = *it;
        found = true;
    }
    return found;
}

}  // namespace detail

/// Pulls the final verdict out of a generated answer; the last matching
/// pattern wins. Never throws: unmatched text yields the abstain verdict.
inline Verdict extract_answer(const std::string& generated, DatasetFamily family) {
    std::smatch m;
    switch (family) {
        case DatasetFamily::proofwriter:
        case DatasetFamily::folio: {
            static const std::regex re(R"(=\s*(True|False|Uncertain|Unknown)\b)");
            if (detail::last_regex_match(generated, re, m))
                return Verdict::truth(detail::normalize_truth(m[1].str()));
            return Verdict::abstain();
        }
        case DatasetFamily::prontoqa: {
            static const std::regex re(R"(=\s*(True|False)\b)");
            if (detail::last_regex_match(generated, re, m))
                return Verdict::truth(detail::normalize_truth(m[1].str()));
            return Verdict::abstain();
        }
        case DatasetFamily::logical_deduction: {
            static const std::regex re(R"(answer:\s*([A-Z])\b)");
            if (detail::last_regex_match(generated, re, m))
                return Verdict::option(m[1].str()[0]);
            return Verdict::abstain();
        }
        case DatasetFamily::gsm8k: {
            const std::size_t eq = generated.rfind('=');
            if (eq == std::string::npos) return Verdict::abstain();
            const std::string tail = generated.substr(eq + 1);
            static const std::regex re(R"(-?\d[\d,]*(\.\d+)?)");
            if (detail::last_regex_match(tail, re, m))
                return Verdict::number(detail::canonical_number(m[0].str()));
            return Verdict::abstain();
        }
    }
    return Verdict::abstain();
}

}  // namespace aai
