// Command-line front end: head analysis, mask construction, toy-model runs,
// evaluation, synthetic data generation and matrix export.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aai/eval_harness.hpp"
#include "aai/head_pattern.hpp"
#include "aai/intervention_mask.hpp"
#include "aai/prompt.hpp"
#include "aai/rule_structure.hpp"
#include "aai/synthetic_world.hpp"
#include "aai/toy_transformer.hpp"
#include "aai/trace_io.hpp"

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw aai::Error(aai::ErrorCategory::io, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw aai::Error(aai::ErrorCategory::io, "cannot open " + path);
    out << text;
    if (!out) throw aai::Error(aai::ErrorCategory::io, "write failed for " + path);
}

aai::ScoreOrientation parse_orientation(const std::string& name) {
    if (name == "prose") return aai::ScoreOrientation::prose;
    if (name == "literal") return aai::ScoreOrientation::literal;
    throw aai::Error(aai::ErrorCategory::config, "orientation must be prose or literal");
}

aai::MedianScope parse_median_scope(const std::string& name) {
    if (name == "causal") return aai::MedianScope::causal_entries;
    if (name == "all") return aai::MedianScope::all_entries;
    throw aai::Error(aai::ErrorCategory::config, "median scope must be causal or all");
}

aai::InterventionMode parse_mode(const std::string& name) {
    if (name == "baseline") return aai::InterventionMode::baseline;
    if (name == "aai") return aai::InterventionMode::aai;
    if (name == "aai-agg") return aai::InterventionMode::aai_agg;
    if (name == "all-heads") return aai::InterventionMode::all_heads;
    throw aai::Error(aai::ErrorCategory::config,
                     "mode must be baseline|aai|aai-agg|all-heads");
}

struct ThresholdFlags {
    double binarize = 0.04;
    double diag = 0.3;
    double vert = 0.6;
    double other = 0.3;
    std::string orientation = "prose";

    void attach(CLI::App* cmd) {
        cmd->add_option("--binarize-threshold", binarize, "binarization cutoff")
            ->capture_default_str();
        cmd->add_option("--diag-threshold", diag, "anchor/copy diagonal threshold")
            ->capture_default_str();
        cmd->add_option("--vert-threshold", vert, "aggregation vertical threshold")
            ->capture_default_str();
        cmd->add_option("--other-threshold", other, "aggregation horizontal/diagonal cap")
            ->capture_default_str();
        cmd->add_option("--orientation", orientation, "prose|literal score orientation")
            ->capture_default_str();
    }
    aai::SelectionThresholds to_thresholds() const {
        aai::SelectionThresholds t;
        t.binarize_threshold = binarize;
        t.diag_threshold = diag;
        t.vert_threshold = vert;
        t.other_threshold = other;
        t.orientation = parse_orientation(orientation);
        return t;
    }
};

struct ReweightFlags {
    double coef = 1.0;
    double bias = 0.0;
    std::string median_scope = "causal";
    bool include_defining = true;

    void attach(CLI::App* cmd) {
        cmd->add_option("--coef", coef, "reweighting coefficient c")->capture_default_str();
        cmd->add_option("--bias", bias, "reweighting bias b")->capture_default_str();
        cmd->add_option("--median-scope", median_scope, "causal|all median scope")
            ->capture_default_str();
        cmd->add_flag("--include-defining,!--no-include-defining", include_defining,
                      "bind the defining identifier occurrence too (default on)");
    }
    aai::ReweightParams to_params() const {
        aai::ReweightParams p;
        p.coefficient = coef;
        p.bias = bias;
        p.median_scope = parse_median_scope(median_scope);
        return p;
    }
};

struct ModelFlags {
    int layers = 2;
    int heads = 2;
    std::size_t model_dim = 32;
    std::size_t head_dim = 16;
    std::size_t max_seq = 1024;
    std::uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--layers", layers, "decoder layers")->capture_default_str();
        cmd->add_option("--heads", heads, "attention heads per layer")
            ->capture_default_str();
        cmd->add_option("--model-dim", model_dim, "residual width")->capture_default_str();
        cmd->add_option("--head-dim", head_dim, "per-head width")->capture_default_str();
        cmd->add_option("--max-seq", max_seq, "maximum sequence length")
            ->capture_default_str();
        cmd->add_option("--seed", seed, "weight generator seed")->capture_default_str();
    }
    aai::ModelConfig to_config() const {
        aai::ModelConfig cfg;
        cfg.num_layers = layers;
        cfg.num_heads = heads;
        cfg.model_dim = model_dim;
        cfg.head_dim = head_dim;
        cfg.max_seq = max_seq;
        cfg.seed = seed;
        return cfg;
    }
};

int cmd_analyze_heads(const std::string& trace_path, const ThresholdFlags& flags,
                      const std::string& report_path, const std::string& sidecar_path) {
    const aai::AttentionTrace trace = aai::import_trace(trace_path);
    const aai::SelectionThresholds thresholds = flags.to_thresholds();
    const aai::HeadTable table = aai::analyze_model(trace, thresholds);
    const std::string report = aai::format_head_table(table);
    std::cout << report;
    std::size_t anchors = 0, aggs = 0;
    for (const auto& rec : table) {
        anchors += rec.cls == aai::HeadClass::anchor_or_copy;
        aggs += rec.cls == aai::HeadClass::aggregation;
    }
    std::cout << "# anchor_or_copy: " << anchors << "  aggregation: " << aggs
              << "  total: " << table.size() << "\n";
    if (!report_path.empty()) write_text_file(report_path, report);
    if (!sidecar_path.empty())
        write_text_file(sidecar_path, aai::head_table_sidecar(table, thresholds));
    return 0;
}

int cmd_build_masks(const std::string& prompt_path, const ReweightFlags& flags,
                    const std::string& scope, bool byte_pairs,
                    const std::string& pairs_out, const std::string& trace_path,
                    const std::string& masks_out) {
    const std::string prompt = read_text_file(prompt_path);
    const aai::RuleAnnotatedSequence seq = aai::annotate_text(prompt);

    aai::PairOptions opts;
    opts.include_defining = flags.include_defining;
    if (scope == "last")
        opts.scope = aai::PairScope::last_section;
    else if (scope != "all")
        throw aai::Error(aai::ErrorCategory::config, "--scope must be all or last");
    aai::ReferencePairSets pairs = aai::build_pair_sets(seq, opts);
    if (byte_pairs) pairs = aai::to_byte_pairs(seq, pairs);

    const std::string lines = aai::format_pair_sets(pairs);
    if (pairs_out.empty())
        std::cout << lines;
    else
        write_text_file(pairs_out, lines);
    std::cerr << "rules: " << seq.rule_spans.size()
              << "  mentions: " << seq.identifier_mentions.size()
              << "  dangling: " << seq.dangling_mentions.size()
              << "  ref pairs: " << pairs.ref_pairs.size()
              << "  noref pairs: " << pairs.noref_pairs.size() << "\n";

    if (!masks_out.empty()) {
        const aai::ReweightParams params = flags.to_params();
        aai::AttentionTrace masks;
        if (!trace_path.empty()) {
            // compose the full per-head final mask over an existing trace
            const aai::AttentionTrace src = aai::import_trace(trace_path);
            if (!src.has_scores())
                throw aai::Error(aai::ErrorCategory::format,
                                 "trace has no score matrices to take medians from");
            masks.num_layers = src.num_layers;
            masks.num_heads = src.num_heads;
            masks.seq_len = src.seq_len;
            masks.tokens = src.tokens;
            const aai::Matrix causal = aai::causal_mask(src.seq_len);
            const aai::Matrix suppress = aai::noref_mask(src.seq_len, pairs);
            for (const auto& [lh, scores] : src.scores) {
                const aai::Matrix boost = aai::ref_mask(scores, pairs, params);
                aai::Matrix final_mask(src.seq_len, src.seq_len);
                for (std::size_t i = 0; i < src.seq_len; ++i)
                    for (std::size_t j = 0; j < src.seq_len; ++j)
                        final_mask(i, j) = boost(i, j) + suppress(i, j) + causal(i, j);
                masks.scores[lh] = final_mask;
                masks.weights[lh] = aai::masked_softmax(
                    aai::Matrix(src.seq_len, src.seq_len, 0.0), final_mask);
            }
        } else {
            // no scores available: median defaults to 0, so the boost is
            // c*0 + b at every ref pair
            const std::size_t len = seq.tokens.size();
            if (len == 0)
                throw aai::Error(aai::ErrorCategory::empty_input, "prompt has no tokens");
            masks.num_layers = 1;
            masks.num_heads = 1;
            masks.seq_len = len;
            for (const auto& tok : seq.tokens) masks.tokens.push_back(tok.text);
            const aai::Matrix causal = aai::causal_mask(len);
            const aai::Matrix suppress = aai::noref_mask(len, pairs);
            aai::Matrix final_mask(len, len);
            for (std::size_t i = 0; i < len; ++i)
                for (std::size_t j = 0; j < len; ++j)
                    final_mask(i, j) = suppress(i, j) + causal(i, j);
            for (const auto& [i, j] : pairs.ref_pairs)
                final_mask(i, j) += params.coefficient * 0.0 + params.bias;
            masks.scores[{0, 0}] = final_mask;
            masks.weights[{0, 0}] =
                aai::masked_softmax(aai::Matrix(len, len, 0.0), final_mask);
        }
        aai::export_trace(masks, masks_out);
        std::cerr << "masks written to " << masks_out << "\n";
    }
    return 0;
}

int cmd_gen_synth(int depth, int width, std::uint64_t seed, int count,
                  const std::string& out_path, const std::string& gold_out) {
    std::vector<aai::DatasetRecord> records;
    std::vector<std::pair<std::string, std::string>> gold;
    for (int i = 0; i < count; ++i) {
        const auto ex = aai::generate_world(depth, width, seed + i);
        aai::DatasetRecord rec;
        rec.id = "synth-d" + std::to_string(depth) + "-s" + std::to_string(seed) + "-" +
                 std::to_string(i);
        rec.context = ex.context;
        rec.question = ex.question;
        rec.answer = aai::to_string(ex.world.label);
        gold.push_back({rec.id, aai::render_gold_trace(ex.world)});
        records.push_back(std::move(rec));
    }
    if (out_path.empty()) {
        aai::save_dataset(records, std::cout);
    } else {
        std::ofstream out(out_path);
        if (!out) throw aai::Error(aai::ErrorCategory::io, "cannot open " + out_path);
        aai::save_dataset(records, out);
    }
    if (!gold_out.empty()) {
        std::ofstream out(gold_out);
        if (!out) throw aai::Error(aai::ErrorCategory::io, "cannot open " + gold_out);
        for (const auto& [id, completion] : gold) {
            nlohmann::json j{{"id", id}, {"completion", completion}};
            out << j.dump() << "\n";
        }
    }
    return 0;
}

std::vector<std::pair<std::string, std::string>> config_echo(const aai::ToyRunConfig& cfg,
                                                             const std::string& mode) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "layers=%d heads=%d dim=%zu head_dim=%zu max_seq=%zu seed=%llu",
                  cfg.model.num_layers, cfg.model.num_heads, cfg.model.model_dim,
                  cfg.model.head_dim, cfg.model.max_seq,
                  static_cast<unsigned long long>(cfg.model.seed));
    std::vector<std::pair<std::string, std::string>> echo{{"mode", mode}, {"model", buf}};
    std::snprintf(buf, sizeof(buf), "binarize=%g diag=%g vert=%g other=%g orientation=%s",
                  cfg.thresholds.binarize_threshold, cfg.thresholds.diag_threshold,
                  cfg.thresholds.vert_threshold, cfg.thresholds.other_threshold,
                  cfg.thresholds.orientation == aai::ScoreOrientation::prose ? "prose"
                                                                             : "literal");
    echo.push_back({"thresholds", buf});
    std::snprintf(buf, sizeof(buf), "coef=%g bias=%g median_scope=%s prefill_only=%s",
                  cfg.params.coefficient, cfg.params.bias,
                  cfg.params.median_scope == aai::MedianScope::causal_entries ? "causal"
                                                                              : "all",
                  cfg.prefill_only ? "true" : "false");
    echo.push_back({"reweight", buf});
    return echo;
}

void write_run_outputs(const aai::ExperimentResult& exp, const aai::ToyRunConfig& cfg,
                       const std::string& mode, const std::string& completions_out,
                       const std::string& report_out) {
    const std::string report = aai::build_report(exp, config_echo(cfg, mode));
    std::cout << report;
    if (!report_out.empty()) write_text_file(report_out, report);
    if (!completions_out.empty()) {
        std::ofstream out(completions_out);
        if (!out)
            throw aai::Error(aai::ErrorCategory::io, "cannot open " + completions_out);
        for (const auto& r : exp.results) {
            nlohmann::json j{{"id", r.id}, {"completion", r.generated}};
            // raw model output is arbitrary bytes, not necessarily UTF-8
            out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
                << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-aware intervention toolkit"};
    app.require_subcommand(1);

    // analyze-heads
    auto* analyze = app.add_subcommand("analyze-heads",
                                       "classify heads from an attention trace");
    std::string trace_path, report_path, sidecar_path;
    ThresholdFlags analyze_thresholds;
    analyze->add_option("--trace", trace_path, "attention trace file")->required();
    analyze_thresholds.attach(analyze);
    analyze->add_option("--report", report_path, "also write the table here");
    analyze->add_option("--sidecar", sidecar_path, "write structured records here");

    // build-masks
    auto* build = app.add_subcommand("build-masks",
                                     "derive reference pair sets and masks from a prompt");
    std::string prompt_path, pairs_out, masks_trace, masks_out, pair_scope = "all";
    bool byte_pairs = false;
    ReweightFlags build_reweight;
    build->add_option("--prompt", prompt_path, "prompt text file")->required();
    build_reweight.attach(build);
    build->add_option("--scope", pair_scope, "bind all|last example sections")
        ->capture_default_str();
    build->add_flag("--byte-pairs", byte_pairs, "emit byte-level pair indices");
    build->add_option("--pairs-out", pairs_out, "write pair lines here (default stdout)");
    build->add_option("--trace", masks_trace, "score source for the adaptive boost");
    build->add_option("--masks-out", masks_out, "write composed masks in trace format");

    // run
    auto* run = app.add_subcommand("run", "evaluate the toy model under an intervention");
    std::string run_dataset, run_family = "proofwriter", run_mode = "aai";
    std::string run_completions_out, run_report_out, run_trace_out;
    bool prefill_only = true;
    std::size_t max_new = 48, calibration_index = 0, train_steps = 0;
    double train_lr = 0.05;
    ModelFlags run_model;
    ThresholdFlags run_thresholds;
    ReweightFlags run_reweight;
    run->add_option("--dataset", run_dataset, "JSONL dataset")->required();
    run->add_option("--family", run_family, "dataset family")->capture_default_str();
    run->add_option("--mode", run_mode, "baseline|aai|aai-agg|all-heads")
        ->capture_default_str();
    run->add_flag("--prefill-only,!--decode-phase", prefill_only,
                  "apply masks only during the prompt forward pass (default on)");
    run->add_option("--max-new", max_new, "tokens to decode per record")
        ->capture_default_str();
    run->add_option("--calibration-index", calibration_index,
                    "record whose prompt calibrates head selection")
        ->capture_default_str();
    run->add_option("--train-steps", train_steps,
                    "optional next-byte pre-training steps on the dataset prompts")
        ->capture_default_str();
    run->add_option("--train-lr", train_lr, "pre-training learning rate")
        ->capture_default_str();
    run_model.attach(run);
    run_thresholds.attach(run);
    run_reweight.attach(run);
    run->add_option("--completions-out", run_completions_out,
                    "write generated completions JSONL");
    run->add_option("--report-out", run_report_out, "write the run report here");
    run->add_option("--trace-out", run_trace_out, "export the calibration trace");

    // eval
    auto* eval = app.add_subcommand("eval", "score a dataset (replay or toy mode)");
    std::string eval_dataset, eval_family = "proofwriter", eval_completions;
    std::string eval_mode = "baseline", eval_report_out;
    ModelFlags eval_model;
    ThresholdFlags eval_thresholds;
    ReweightFlags eval_reweight;
    eval->add_option("--dataset", eval_dataset, "JSONL dataset")->required();
    eval->add_option("--family", eval_family, "dataset family")->capture_default_str();
    eval->add_option("--completions", eval_completions,
                     "replay these completions instead of running the toy model");
    eval->add_option("--mode", eval_mode, "toy-mode intervention")->capture_default_str();
    eval->add_option("--report-out", eval_report_out, "write the report here");
    eval_model.attach(eval);
    eval_thresholds.attach(eval);
    eval_reweight.attach(eval);

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate synthetic reasoning worlds");
    int depth = 3, width = 2, count = 10;
    std::uint64_t gen_seed = 0;
    std::string gen_out, gen_gold_out;
    gen->add_option("--depth", depth, "rule applications to reach the answer")
        ->capture_default_str();
    gen->add_option("--width", width, "distractor chains")->capture_default_str();
    gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen->add_option("--count", count, "number of examples")->capture_default_str();
    gen->add_option("--out", gen_out, "output JSONL (default stdout)");
    gen->add_option("--gold-out", gen_gold_out, "write gold traces as completions JSONL");

    // viz
    auto* viz = app.add_subcommand("viz", "export one trace matrix as pgm or csv");
    std::string viz_matrix, viz_format = "pgm", viz_out;
    bool viz_scores = false;
    viz->add_option("--matrix", viz_matrix, "<trace-file>:<layer>:<head>")->required();
    viz->add_option("--format", viz_format, "pgm|csv")->capture_default_str();
    viz->add_option("--out", viz_out, "output path (default derived)");
    viz->add_flag("--scores", viz_scores, "export pre-softmax scores instead of weights");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze)
            return cmd_analyze_heads(trace_path, analyze_thresholds, report_path,
                                     sidecar_path);
        if (*build)
            return cmd_build_masks(prompt_path, build_reweight, pair_scope, byte_pairs,
                                   pairs_out, masks_trace, masks_out);
        if (*gen) return cmd_gen_synth(depth, width, gen_seed, count, gen_out, gen_gold_out);
        if (*run) {
            const auto records =
                aai::load_dataset(run_dataset, aai::family_from_string(run_family));
            aai::ToyRunConfig cfg;
            cfg.model = run_model.to_config();
            cfg.mode = parse_mode(run_mode);
            cfg.thresholds = run_thresholds.to_thresholds();
            cfg.params = run_reweight.to_params();
            cfg.pair_options.include_defining = run_reweight.include_defining;
            cfg.prefill_only = prefill_only;
            cfg.max_new = max_new;
            cfg.calibration_index = calibration_index;
            cfg.train_steps = train_steps;
            cfg.train_lr = train_lr;
            const auto exp = aai::run_toy_experiment(
                records, aai::family_from_string(run_family), cfg);
            if (!run_trace_out.empty())
                aai::export_trace(exp.calibration_trace, run_trace_out);
            write_run_outputs(exp, cfg, run_mode, run_completions_out, run_report_out);
            return 0;
        }
        if (*eval) {
            const auto family = aai::family_from_string(eval_family);
            const auto records = aai::load_dataset(eval_dataset, family);
            if (!eval_completions.empty()) {
                const auto exp = aai::run_replay(records, family,
                                                 aai::load_completions(eval_completions));
                const std::string report =
                    aai::build_report(exp, {{"mode", "replay"},
                                            {"dataset", eval_dataset},
                                            {"family", eval_family}});
                std::cout << report;
                if (!eval_report_out.empty()) write_text_file(eval_report_out, report);
                return 0;
            }
            aai::ToyRunConfig cfg;
            cfg.model = eval_model.to_config();
            cfg.mode = parse_mode(eval_mode);
            cfg.thresholds = eval_thresholds.to_thresholds();
            cfg.params = eval_reweight.to_params();
            cfg.pair_options.include_defining = eval_reweight.include_defining;
            const auto exp = aai::run_toy_experiment(records, family, cfg);
            write_run_outputs(exp, cfg, eval_mode, "", eval_report_out);
            return 0;
        }
        if (*viz) {
            const std::size_t c2 = viz_matrix.rfind(':');
            const std::size_t c1 = c2 == std::string::npos ? std::string::npos
                                                           : viz_matrix.rfind(':', c2 - 1);
            if (c1 == std::string::npos)
                throw aai::Error(aai::ErrorCategory::config,
                                 "--matrix expects <trace-file>:<layer>:<head>");
            const std::string file = viz_matrix.substr(0, c1);
            const int layer = std::stoi(viz_matrix.substr(c1 + 1, c2 - c1 - 1));
            const int head = std::stoi(viz_matrix.substr(c2 + 1));
            const aai::AttentionTrace trace = aai::import_trace(file);
            const auto& source = viz_scores ? trace.scores : trace.weights;
            auto it = source.find({layer, head});
            if (it == source.end())
                throw aai::Error(aai::ErrorCategory::bounds,
                                 "trace has no matrix for layer " + std::to_string(layer) +
                                     " head " + std::to_string(head));
            const aai::HeatmapFormat format = viz_format == "csv"
                                                  ? aai::HeatmapFormat::csv
                                                  : aai::HeatmapFormat::pgm;
            if (viz_format != "csv" && viz_format != "pgm")
                throw aai::Error(aai::ErrorCategory::config, "--format must be pgm or csv");
            std::string out = viz_out;
            if (out.empty())
                out = file + "." + std::to_string(layer) + "." + std::to_string(head) +
                      (format == aai::HeatmapFormat::csv ? ".csv" : ".pgm");
            aai::Matrix matrix = it->second;
            if (viz_scores) {
                // score matrices from mask exports may carry -inf; clip for display
                double lo = 0.0;
                for (double v : matrix.data())
                    if (std::isfinite(v)) lo = std::min(lo, v);
                for (auto& v : matrix.data())
                    if (!std::isfinite(v)) v = lo - 1.0;
            }
            aai::heatmap_export(matrix, out, format);
            std::cout << "wrote " << out << "\n";
            return 0;
        }
    } catch (const aai::Error& e) {
        std::cerr << "error [" << aai::to_string(e.category()) << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
