#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aai/error.hpp"
#include "aai/head_pattern.hpp"
#include "aai/intervention_mask.hpp"
#include "aai/matrix.hpp"
#include "aai/prompt.hpp"
#include "aai/rule_structure.hpp"
#include "aai/toy_transformer.hpp"
#include "aai/trainer.hpp"

namespace aai {

struct DatasetRecord {
    std::string id;
    std::string context;
    std::string question;
    std::vector<std::string> options;
    std::string answer;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline bool is_number_literal(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    bool digit = false, dot = false;
    for (; i < s.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(s[i]))) {
            digit = true;
        } else if (s[i] == '.' && !dot) {
            dot = true;
        } else {
            return false;
        }
    }
    return digit;
}

}  // namespace detail

/// Gold answer normalized to the same verdict space extract_answer uses.
inline Verdict gold_verdict(const DatasetRecord& record, DatasetFamily family) {
    switch (family) {
        case DatasetFamily::proofwriter:
        case DatasetFamily::folio:
        case DatasetFamily::prontoqa: {
            std::string v = record.answer;
            for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (v == "uncertain") v = "unknown";
            return Verdict::truth(v);
        }
        case DatasetFamily::logical_deduction:
            return Verdict::option(record.answer[0]);
        case DatasetFamily::gsm8k:
            return Verdict::number(detail::canonical_number(record.answer));
    }
    return Verdict::abstain();
}

inline void check_answer_domain(const DatasetRecord& record, DatasetFamily family,
                                std::size_t line) {
    const std::string where = "line " + std::to_string(line) + " (id " + record.id + ")";
    std::string lower = record.answer;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    switch (family) {
        case DatasetFamily::proofwriter:
        case DatasetFamily::folio:
            if (lower != "true" && lower != "false" && lower != "unknown" &&
                lower != "uncertain")
                throw Error(ErrorCategory::schema,
                            where + ": answer must be true/false/unknown");
            break;
        case DatasetFamily::prontoqa:
            if (lower != "true" && lower != "false")
                throw Error(ErrorCategory::schema, where + ": answer must be true/false");
            break;
        case DatasetFamily::logical_deduction:
            if (record.answer.size() != 1 || record.answer[0] < 'A' || record.answer[0] > 'Z')
                throw Error(ErrorCategory::schema, where + ": answer must be an option letter");
            if (!record.options.empty() &&
                record.answer[0] - 'A' >= static_cast<int>(record.options.size()))
                throw Error(ErrorCategory::schema, where + ": answer letter beyond options");
            break;
        case DatasetFamily::gsm8k:
            if (!detail::is_number_literal(record.answer))
                throw Error(ErrorCategory::schema, where + ": answer must be numeric");
            break;
    }
}

/// JSONL loader: one record per line with fields id/context/question/answer
/// and optional options.
inline std::vector<DatasetRecord> load_dataset(const std::string& path,
                                               DatasetFamily family) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open dataset " + path);
    std::vector<DatasetRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCategory::load,
                        "line " + std::to_string(line_no) + ": " + e.what());
        }
        DatasetRecord rec;
        try {
            rec.id = j.at("id").get<std::string>();
            rec.context = j.at("context").get<std::string>();
            rec.question = j.at("question").get<std::string>();
            rec.answer = j.at("answer").get<std::string>();
            if (j.contains("options"))
                rec.options = j.at("options").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCategory::load,
                        "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen_ids.insert(rec.id).second)
            throw Error(ErrorCategory::schema,
                        "line " + std::to_string(line_no) + ": duplicate id " + rec.id);
        check_answer_domain(rec, family, line_no);
        records.push_back(std::move(rec));
    }
    return records;
}

inline void save_dataset(const std::vector<DatasetRecord>& records, std::ostream& out) {
    for (const auto& rec : records) {
        nlohmann::json j{{"id", rec.id},
                         {"context", rec.context},
                         {"question", rec.question},
                         {"answer", rec.answer}};
        if (!rec.options.empty()) j["options"] = rec.options;
        out << j.dump() << '\n';
    }
}

/// Completions file: JSONL of {"id", "completion"}.
inline std::map<std::string, std::string> load_completions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open completions " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            out[j.at("id").get<std::string>()] = j.at("completion").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCategory::load,
                        "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

struct RunResult {
    std::string id;
    std::string prompt_hash;
    std::string generated;
    Verdict extracted;
    bool correct = false;
    double millis = 0.0;
};

struct Score {
    double accuracy = 0.0;
    std::size_t total = 0;
    std::size_t correct = 0;
    std::map<std::pair<std::string, std::string>, std::size_t> confusion;  // (gold, predicted)
};

inline Score score(const std::vector<RunResult>& results,
                   const std::vector<DatasetRecord>& records, DatasetFamily family) {
    if (results.empty()) throw Error(ErrorCategory::empty_input, "no results to score");
    std::map<std::string, std::string> gold;
    for (const auto& rec : records) gold[rec.id] = to_string(gold_verdict(rec, family));
    Score s;
    s.total = results.size();
    for (const auto& r : results) {
        if (r.correct) ++s.correct;
        ++s.confusion[{gold[r.id], to_string(r.extracted)}];
    }
    s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.total);
    return s;
}

/// The prompt fed to the toy model: tagged rules, then the question, then an
/// open answer line.
inline std::string render_toy_prompt(const DatasetRecord& record) {
    return tag_rules(record.context) + "\n# (Question): " + record.question +
           "\n# (Answer):";
}

struct ToyRunConfig {
    ModelConfig model;
    InterventionMode mode = InterventionMode::baseline;
    SelectionThresholds thresholds;
    ReweightParams params;
    bool prefill_only = true;
    PairOptions pair_options;
    std::size_t max_new = 48;
    std::size_t calibration_index = 0;
    // optional next-byte pre-training on the dataset prompts
    std::size_t train_steps = 0;
    double train_lr = 0.05;
    std::size_t train_window = 64;
    std::uint64_t train_seed = 1;
};

struct ExperimentResult {
    std::vector<RunResult> results;
    Score score;
    HeadTable head_table;
    AttentionTrace calibration_trace;  // baseline prefill used for selection
    std::set<LayerHead> selected_heads;
    std::size_t total_heads = 0;

    double selected_fraction() const {
        return total_heads == 0
                   ? 0.0
                   : static_cast<double>(selected_heads.size()) /
                         static_cast<double>(total_heads);
    }
};

/// Toy-model evaluation: head selection is calibrated once on the prefill
/// attention of one record's prompt, then every record runs prefill+decode
/// under the resulting mask plan.
inline ExperimentResult run_toy_experiment(const std::vector<DatasetRecord>& records,
                                           DatasetFamily family, const ToyRunConfig& cfg) {
    if (records.empty()) throw Error(ErrorCategory::empty_input, "empty dataset");
    if (cfg.calibration_index >= records.size())
        throw Error(ErrorCategory::bounds, "calibration index outside dataset");

    ExperimentResult exp;
    exp.total_heads = static_cast<std::size_t>(cfg.model.num_layers) * cfg.model.num_heads;
    Model model = init_model(cfg.model);
    if (cfg.train_steps > 0) {
        std::string corpus;
        for (const auto& rec : records) corpus += render_toy_prompt(rec) + "\n";
        const std::size_t window =
            std::min(cfg.train_window, cfg.model.max_seq > 1 ? cfg.model.max_seq - 1
                                                             : cfg.train_window);
        train::train_next_byte(model, corpus, cfg.train_steps, cfg.train_lr, window,
                               cfg.train_seed);
    }

    const std::string calibration_prompt =
        render_toy_prompt(records[cfg.calibration_index]);
    const HeadMaskPlan baseline;
    PrefillResult calibration =
        prefill(model, encode_text(calibration_prompt, cfg.model), baseline);
    exp.head_table = analyze_model(calibration.trace, cfg.thresholds);
    exp.selected_heads = select_heads(exp.head_table, cfg.mode);
    exp.calibration_trace = std::move(calibration.trace);

    for (const auto& rec : records) {
        const auto start = std::chrono::steady_clock::now();
        const std::string prompt = render_toy_prompt(rec);

        HeadMaskPlan plan;
        plan.selected_heads = exp.selected_heads;
        plan.params = cfg.params;
        plan.prefill_only = cfg.prefill_only;
        const RuleAnnotatedSequence seq = annotate_text(prompt);
        plan.pairs = to_byte_pairs(seq, build_pair_sets(seq, cfg.pair_options));

        const std::vector<int> tokens = encode_text(prompt, cfg.model);
        std::vector<int> generated;
        try {
            generated = greedy_decode(model, tokens, plan, cfg.max_new);
        } catch (const Error& e) {
            throw Error(e.category(), "record " + rec.id + ": " + e.what());
        }

        RunResult result;
        result.id = rec.id;
        result.prompt_hash = detail::hex64(detail::fnv1a64(prompt));
        result.generated = decode_text(generated);
        result.extracted = extract_answer(result.generated, family);
        result.correct = result.extracted == gold_verdict(rec, family);
        result.millis = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        exp.results.push_back(std::move(result));
    }
    exp.score = score(exp.results, records, family);
    return exp;
}

/// Replay mode: pure text processing over externally produced completions;
/// the model is never touched.
inline ExperimentResult run_replay(const std::vector<DatasetRecord>& records,
                                   DatasetFamily family,
                                   const std::map<std::string, std::string>& completions) {
    if (records.empty()) throw Error(ErrorCategory::empty_input, "empty dataset");
    ExperimentResult exp;
    for (const auto& rec : records) {
        auto it = completions.find(rec.id);
        if (it == completions.end())
            throw Error(ErrorCategory::coverage, "no completion for id " + rec.id);
        RunResult result;
        result.id = rec.id;
        result.prompt_hash = detail::hex64(detail::fnv1a64(rec.context + "\n" + rec.question));
        result.generated = it->second;
        result.extracted = extract_answer(result.generated, family);
        result.correct = result.extracted == gold_verdict(rec, family);
        exp.results.push_back(std::move(result));
    }
    exp.score = score(exp.results, records, family);
    return exp;
}

enum class HeatmapFormat { pgm, csv };

/// PGM: 8-bit grayscale with min/max scaling (flat matrices go all black).
/// CSV: full-precision values.
inline void heatmap_export(const Matrix& matrix, const std::string& path,
                           HeatmapFormat format) {
    if (!matrix.all_finite())
        throw Error(ErrorCategory::degenerate_input, "heatmap input must be finite");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCategory::io, "cannot open " + path + " for writing");
    if (format == HeatmapFormat::pgm) {
        double lo = matrix(0, 0), hi = matrix(0, 0);
        for (double v : matrix.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        out << "P5\n" << matrix.cols() << ' ' << matrix.rows() << "\n255\n";
        for (double v : matrix.data()) {
            const double scaled = (hi == lo) ? 0.0 : 255.0 * (v - lo) / (hi - lo);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
        }
    } else {
        char buf[40];
        for (std::size_t i = 0; i < matrix.rows(); ++i) {
            for (std::size_t j = 0; j < matrix.cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", matrix(i, j));
                if (j > 0) out << ',';
                out << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw Error(ErrorCategory::io, "write failed for " + path);
}

/// Deterministic text report: config echo, selected-head fraction, accuracy,
/// confusion counts. Timing is deliberately left out so identical runs give
/// identical bytes.
inline std::string build_report(const ExperimentResult& exp,
                                const std::vector<std::pair<std::string, std::string>>&
                                    config_echo) {
    char buf[64];
    std::string out = "aai run report\n";
    for (const auto& [key, value] : config_echo) out += key + ": " + value + "\n";
    std::snprintf(buf, sizeof(buf), "%.6f", exp.selected_fraction());
    out += "selected heads: " + std::to_string(exp.selected_heads.size()) + "/" +
           std::to_string(exp.total_heads) + " (fraction " + buf + ")\n";
    out += "records: " + std::to_string(exp.score.total) + "\n";
    std::snprintf(buf, sizeof(buf), "%.6f", exp.score.accuracy);
    out += "accuracy: " + std::string(buf) + "\n";
    out += "confusion (gold -> predicted):\n";
    for (const auto& [key, count] : exp.score.confusion)
        out += "  " + key.first + " -> " + key.second + ": " + std::to_string(count) + "\n";
    return out;
}

}  // namespace aai
