// Command-line front end for the annotation pipeline.
//
// Exit codes: 0 success, 1 runtime error, 3 partial per-record failures when
// --strict is set. Usage errors follow CLI11's defaults.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "annotator/config.hpp"
#include "annotator/pipeline.hpp"
#include "annotator/taxonomy.hpp"
#include "annotator/version.hpp"

namespace {

// Every value-bearing flag writes into `storage`; only flags the user passed
// are forwarded, so precedence is flag > config file > environment > default.
struct ConfigOptions {
    std::string config_path;
    std::map<std::string, CLI::Option*> opts;
    std::map<std::string, std::string> storage;
    bool system_split = false;
    bool strict = false;
    CLI::Option* system_split_opt = nullptr;
    CLI::Option* strict_opt = nullptr;
};

void add_config_options(CLI::App& app, ConfigOptions& co) {
    app.add_option("--config", co.config_path, "config file with key = value lines");
    auto opt = [&](const char* flag, const char* key, const char* help) {
        co.opts[key] = app.add_option(flag, co.storage[key], help);
    };
    opt("--taxonomy", "taxonomy_path", "taxonomy file (TSV or JSON)");
    opt("--corpus", "corpus_path", "metadata records (JSONL or CSV)");
    opt("--template", "template_path", "prompt template file (default: built-in)");
    opt("--strategy", "strategy", "demonstration selection: random|relevant");
    opt("--random-mode", "random_mode", "random redraws: per_target|run_fixed");
    opt("--k", "k", "demonstrations per prompt");
    opt("--seed", "seed", "run seed; all randomness derives from it");
    opt("--description-budget", "description_budget", "max description bytes in prompts");
    opt("--test-per-division", "test_per_division", "test records sampled per division");
    opt("--cap-per-division", "cap_per_division", "demo pool cap per division");
    opt("--model", "model", "chat model id");
    opt("--temperature", "temperature", "sampling temperature");
    opt("--n", "n", "completions per request");
    opt("--max-tokens", "max_tokens", "completion token cap");
    opt("--backend", "backend", "completion backend: http|replay|mock");
    opt("--base-url", "base_url", "backend origin (also ANNOTATOR_BASE_URL)");
    opt("--replay", "replay_path", "recorded replies for the replay backend");
    opt("--mock-rules", "mock_rules_path", "keyword rules for the mock backend");
    opt("--parallelism", "parallelism", "concurrent completion workers");
    opt("--rpm", "requests_per_minute", "request rate cap (0 = off)");
    opt("--embedding-provider", "embedding_provider", "embeddings: local|remote");
    opt("--embedding-model", "embedding_model", "remote embedding model id");
    opt("--output-dir", "output_dir", "root for run directories");
    opt("--cache-dir", "cache_dir", "cache root (default: inside the run dir)");
    opt("--match-mode", "match_mode", "scoring mode: stratum|any_gold");
    opt("--min-support", "min_support", "exclude classes with fewer test records");
    co.system_split_opt =
        app.add_flag("--system-split", co.system_split, "emit a system+user message pair");
    co.strict_opt =
        app.add_flag("--strict", co.strict, "exit 3 when any record fails to annotate");
}

annotator::RunConfig make_config(const ConfigOptions& co) {
    annotator::RunConfig config;
    if (!co.config_path.empty()) annotator::apply_config_file(config, co.config_path);
    std::map<std::string, std::string> pairs;
    for (const auto& [key, option] : co.opts)
        if (option->count() > 0) pairs[key] = co.storage.at(key);
    if (co.system_split_opt->count() > 0) pairs["system_split"] = co.system_split ? "true" : "false";
    if (co.strict_opt->count() > 0) pairs["strict"] = co.strict ? "true" : "false";
    annotator::apply_config_pairs(config, pairs);
    annotator::apply_environment(config);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subject annotation for dataset metadata records"};
    app.set_version_flag("--version", std::string(annotator::kVersion));
    app.require_subcommand(1);

    auto* taxonomy_cmd = app.add_subcommand("taxonomy", "taxonomy utilities");
    taxonomy_cmd->require_subcommand(1);
    auto* validate_cmd = taxonomy_cmd->add_subcommand("validate", "load and check a taxonomy file");
    std::string taxonomy_path;
    validate_cmd->add_option("path", taxonomy_path, "taxonomy file")->required();

    auto* sample_cmd = app.add_subcommand("sample", "split a corpus into demo pool and test set");
    ConfigOptions sample_opts;
    add_config_options(*sample_cmd, sample_opts);

    auto* annotate_cmd = app.add_subcommand("annotate", "classify every test record");
    ConfigOptions annotate_opts;
    add_config_options(*annotate_cmd, annotate_opts);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against true labels");
    ConfigOptions evaluate_opts;
    add_config_options(*evaluate_cmd, evaluate_opts);

    auto* compare_cmd = app.add_subcommand("compare", "diff two evaluation reports (B - A)");
    std::string report_a, report_b, compare_out;
    compare_cmd->add_option("report_a", report_a, "baseline report.json")->required();
    compare_cmd->add_option("report_b", report_b, "candidate report.json")->required();
    compare_cmd->add_option("-o,--output", compare_out, "write the table here instead of stdout");

    auto* report_cmd = app.add_subcommand("report", "re-render a stored report");
    std::string report_path, report_format = "markdown", report_out;
    report_cmd->add_option("report_json", report_path, "report.json to render")->required();
    report_cmd->add_option("--format", report_format, "markdown|csv|json");
    report_cmd->add_option("-o,--output", report_out, "write here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(taxonomy_cmd)) {
            annotator::Taxonomy tax = annotator::Taxonomy::from_file(taxonomy_path);
            std::cout << "ok: " << tax.divisions().size() << " divisions, "
                      << tax.descendants().size() << " descendant codes\n";
            return 0;
        }
        if (app.got_subcommand(sample_cmd)) {
            auto result = annotator::cmd_sample(make_config(sample_opts));
            std::cout << "sampled " << result.split.demo_pool.size() << " demo + "
                      << result.split.test_set.size() << " test records into "
                      << result.run_dir.string() << "\n";
            return 0;
        }
        if (app.got_subcommand(annotate_cmd)) {
            annotator::RunConfig config = make_config(annotate_opts);
            auto result = annotator::cmd_annotate(config);
            for (const auto& [id, message] : result.errors)
                std::cerr << "record " << id << ": " << message << "\n";
            std::cout << "annotated " << result.manifest.total << " records ("
                      << result.manifest.succeeded << " ok, " << result.manifest.failed
                      << " failed, " << result.manifest.cache_hits << " cache hits) in "
                      << result.run_dir.string() << "\n";
            if (config.strict && result.manifest.failed > 0) return 3;
            return 0;
        }
        if (app.got_subcommand(evaluate_cmd)) {
            auto result = annotator::cmd_evaluate(make_config(evaluate_opts));
            std::cout << "macro " << annotator::detail::format_fixed(result.report.macro_precision, 4)
                      << ", micro " << annotator::detail::format_fixed(result.report.micro_precision, 4)
                      << ", std dev " << annotator::detail::format_fixed(result.report.std_dev, 4)
                      << " over " << result.report.included_classes.size()
                      << " classes; reports in " << result.run_dir.string() << "\n";
            return 0;
        }
        if (app.got_subcommand(compare_cmd)) {
            auto result = annotator::cmd_compare(report_a, report_b);
            if (compare_out.empty()) std::cout << result.rendered;
            else annotator::detail::write_text_file(compare_out, result.rendered);
            return 0;
        }
        if (app.got_subcommand(report_cmd)) {
            std::string rendered = annotator::cmd_report(
                report_path, annotator::report_format_from_string(report_format));
            if (report_out.empty()) std::cout << rendered;
            else annotator::detail::write_text_file(report_out, rendered);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
