#pragma once

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "annotator/config.hpp"
#include "annotator/corpus.hpp"
#include "annotator/embedding.hpp"
#include "annotator/errors.hpp"
#include "annotator/evaluation.hpp"
#include "annotator/gateway.hpp"
#include "annotator/prompting.hpp"
#include "annotator/response_parser.hpp"
#include "annotator/taxonomy.hpp"
#include "annotator/version.hpp"

namespace annotator {

struct RunManifest {
    std::string run_id;
    std::string tool_version = kVersion;
    nlohmann::ordered_json config;
    int64_t total = 0;
    int64_t succeeded = 0;
    int64_t failed = 0;
    int64_t cache_hits = 0;
    int64_t backend_calls = 0;
    std::string started_at;
    std::string finished_at;
    int64_t wall_ms = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["run_id"] = run_id;
        j["tool_version"] = tool_version;
        j["config"] = config;
        j["counts"] = {{"total", total},
                       {"succeeded", succeeded},
                       {"failed", failed},
                       {"cache_hits", cache_hits}};
        j["backend_calls"] = backend_calls;
        j["timings"] = {{"started_at", started_at},
                        {"finished_at", finished_at},
                        {"wall_ms", wall_ms}};
        return j;
    }
};

namespace detail {

inline std::string utc_now_iso8601() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::vector<MetadataRecord> load_records_file(const std::filesystem::path& path,
                                                     ParseMode mode = ParseMode::strict,
                                                     ParseStats* stats = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path.string());
    RecordFormat format =
        path.extension() == ".csv" ? RecordFormat::csv : RecordFormat::jsonl;
    ParseStats local;
    return parse_records(in, format, mode, stats ? stats : &local);
}

inline std::vector<PredictionRow> load_predictions_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open predictions file: " + path.string());
    std::vector<PredictionRow> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            rows.push_back(prediction_from_jsonl_line(line));
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace detail

inline std::filesystem::path run_dir_for(const RunConfig& config) {
    return std::filesystem::path(config.output_dir) / run_id_for(config);
}

struct SampleResult {
    std::filesystem::path run_dir;
    StratifiedSplit split;
    std::map<std::string, int64_t> available;
    std::map<std::string, int64_t> demo_counts;
    std::map<std::string, int64_t> test_counts;
};

// Splits the corpus into a demonstration pool and a test set and records the
// per-division counts next to them.
inline SampleResult cmd_sample(const RunConfig& config) {
    config.validate();
    Taxonomy tax = Taxonomy::from_file(config.taxonomy_path);
    auto records = detail::load_records_file(config.corpus_path);
    if (records.empty()) throw ConfigError("no records in corpus: " + config.corpus_path);

    SampleResult result;
    result.split =
        build_split(records, tax, config.cap_per_division, config.test_per_division, config.seed);
    for (const auto& r : records) {
        auto stratum = stratum_of(r, tax);
        if (stratum) ++result.available[*stratum];
    }
    for (const auto& e : result.split.demo_pool) ++result.demo_counts[e.stratum];
    for (const auto& e : result.split.test_set) ++result.test_counts[e.stratum];

    result.run_dir = run_dir_for(config);
    std::filesystem::create_directories(result.run_dir);
    {
        std::ofstream out(result.run_dir / "demo_pool.jsonl", std::ios::binary);
        if (!out) throw IoError("cannot write demo_pool.jsonl");
        std::vector<MetadataRecord> pool;
        for (const auto& e : result.split.demo_pool) pool.push_back(e.record);
        write_records(out, pool, RecordFormat::jsonl);
    }
    {
        std::ofstream out(result.run_dir / "test_set.jsonl", std::ios::binary);
        if (!out) throw IoError("cannot write test_set.jsonl");
        std::vector<MetadataRecord> test;
        for (const auto& e : result.split.test_set) test.push_back(e.record);
        write_records(out, test, RecordFormat::jsonl);
    }
    {
        std::string tsv = "code\tlabel\tavailable\tdemo_pool\ttest\n";
        for (const auto& d : tax.divisions()) {
            auto get = [&](const std::map<std::string, int64_t>& m) {
                auto it = m.find(d.code);
                return it == m.end() ? int64_t{0} : it->second;
            };
            tsv += d.code + "\t" + d.label + "\t" + std::to_string(get(result.available)) + "\t" +
                   std::to_string(get(result.demo_counts)) + "\t" +
                   std::to_string(get(result.test_counts)) + "\n";
        }
        detail::write_text_file(result.run_dir / "sample_counts.tsv", tsv);
    }
    return result;
}

struct AnnotateResult {
    std::filesystem::path run_dir;
    RunManifest manifest;
    std::vector<PredictionRow> predictions;
    std::vector<std::pair<std::string, std::string>> errors;  // record id -> message
};

namespace detail {

inline std::unique_ptr<ChatBackend> make_backend(const RunConfig& config) {
    if (config.backend == "mock")
        return std::make_unique<RuleMockBackend>(RuleMockBackend::from_file(config.mock_rules_path));
    if (config.backend == "replay")
        return std::make_unique<ReplayBackend>(ReplayBackend::from_file(config.replay_path));
    std::string base_url = config.base_url.empty() ? "https://api.openai.com" : config.base_url;
    if (config.api_key.empty())
        throw ConfigError("http backend requires ANNOTATOR_API_KEY in the environment");
    return std::make_unique<HttpChatBackend>(base_url, config.api_key, RetryPolicy{},
                                             config.requests_per_minute);
}

inline std::shared_ptr<EmbeddingProvider> make_embedding_provider(const RunConfig& config) {
    if (config.embedding_provider == "local") return std::make_shared<LocalHashingProvider>();
    std::string base_url = config.base_url.empty() ? "https://api.openai.com" : config.base_url;
    if (config.api_key.empty())
        throw ConfigError("remote embeddings require ANNOTATOR_API_KEY in the environment");
    return std::make_shared<RemoteEmbeddingProvider>(base_url, config.embedding_model,
                                                     config.api_key);
}

}  // namespace detail

// Annotates every test record: select demonstrations, render the prompt,
// complete, parse. Prompt construction is sequential and deterministic;
// completion fans out through batch_complete. Per-record failures become
// `others` rows and are tallied in the manifest instead of aborting the run.
inline AnnotateResult cmd_annotate(const RunConfig& config) {
    config.validate();
    auto wall_start = std::chrono::steady_clock::now();

    Taxonomy tax = Taxonomy::from_file(config.taxonomy_path);
    PromptTemplate tpl = config.template_path.empty()
                             ? PromptTemplate::default_template()
                             : PromptTemplate::from_file(config.template_path);

    AnnotateResult result;
    result.run_dir = run_dir_for(config);
    std::filesystem::path pool_path = result.run_dir / "demo_pool.jsonl";
    std::filesystem::path test_path = result.run_dir / "test_set.jsonl";
    if (!std::filesystem::exists(pool_path) || !std::filesystem::exists(test_path))
        throw ConfigError("split files missing under " + result.run_dir.string() +
                          "; run the sample step first");
    auto pool = detail::load_records_file(pool_path);
    auto test_set = detail::load_records_file(test_path);
    if (pool.empty()) throw ConfigError("demo pool is empty");
    if (test_set.empty()) throw ConfigError("test set is empty");

    std::filesystem::path cache_root =
        config.cache_dir.empty() ? result.run_dir / "cache" : std::filesystem::path(config.cache_dir);
    ResponseCache response_cache(cache_root / "responses");

    FieldPolicy policy{static_cast<size_t>(config.description_budget)};
    std::optional<DemoIndex> index;
    std::vector<EmbeddingVector> target_embeddings;
    if (config.strategy == Strategy::relevant) {
        auto provider = std::make_shared<CachingProvider>(
            detail::make_embedding_provider(config),
            std::make_shared<EmbeddingCache>(cache_root / "embeddings"));
        index = build_demo_index(pool, *provider, policy);
        target_embeddings.reserve(test_set.size());
        for (const auto& r : test_set) {
            try {
                target_embeddings.push_back(provider->embed(policy.prompt_text(r)));
            } catch (const std::exception& e) {
                throw Error("embedding failed for record \"" + r.id + "\": " + e.what());
            }
        }
    }

    std::vector<BatchJob> jobs;
    jobs.reserve(test_set.size());
    for (size_t i = 0; i < test_set.size(); ++i) {
        const MetadataRecord& target = test_set[i];
        SelectionResult sel = select_demonstrations(
            config.strategy, target, pool, tax, config.k, config.seed,
            index ? &*index : nullptr, index ? &target_embeddings[i] : nullptr,
            config.random_mode);
        PromptDocument doc = render_prompt(target, sel.demos, tax, tpl, policy);
        jobs.push_back({target.id, to_messages(doc, config.system_split)});
    }

    auto backend = detail::make_backend(config);

    RunManifest manifest;
    manifest.run_id = run_id_for(config);
    manifest.config = config_to_json(config);
    manifest.started_at = detail::utc_now_iso8601();
    manifest.total = static_cast<int64_t>(jobs.size());

    auto finish_manifest = [&] {
        manifest.backend_calls = static_cast<int64_t>(backend->calls());
        manifest.finished_at = detail::utc_now_iso8601();
        manifest.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - wall_start)
                               .count();
        detail::write_text_file(result.run_dir / "manifest.json",
                                manifest.to_json().dump(2) + "\n");
    };

    std::vector<BatchOutcome> outcomes;
    try {
        outcomes = batch_complete(jobs, config.params, *backend, &response_cache,
                                  config.parallelism);
    } catch (const std::exception&) {
        manifest.failed = manifest.total;
        finish_manifest();
        throw;
    }

    std::string jsonl;
    for (const auto& o : outcomes) {
        PredictionRow row;
        row.record_id = o.record_id;
        if (o.ok()) {
            row.prediction = parse_response(o.result->content, tax);
            row.finish_reason = o.result->finish_reason;
            ++manifest.succeeded;
            if (o.result->from_cache) ++manifest.cache_hits;
        } else {
            row.prediction.codes = {std::string(kOthers)};
            row.prediction.shape = ReplyShape::empty;
            row.finish_reason = "error";
            ++manifest.failed;
            result.errors.emplace_back(o.record_id, o.error);
        }
        jsonl += prediction_to_jsonl_line(row) + "\n";
        result.predictions.push_back(std::move(row));
    }
    detail::write_text_file(result.run_dir / "predictions.jsonl", jsonl);
    finish_manifest();
    result.manifest = manifest;
    return result;
}

struct EvaluateResult {
    std::filesystem::path run_dir;
    EvaluationReport report;
};

inline EvaluateResult cmd_evaluate(const RunConfig& config) {
    config.validate();
    Taxonomy tax = Taxonomy::from_file(config.taxonomy_path);
    EvaluateResult result;
    result.run_dir = run_dir_for(config);
    auto test_set = detail::load_records_file(result.run_dir / "test_set.jsonl");
    auto predictions = detail::load_predictions_file(result.run_dir / "predictions.jsonl");
    result.report =
        evaluate_run(predictions, test_set, tax, config.match_mode, config.min_support);
    detail::write_text_file(result.run_dir / "report.md",
                            render_report(result.report, ReportFormat::markdown));
    detail::write_text_file(result.run_dir / "report.json",
                            render_report(result.report, ReportFormat::json));
    detail::write_text_file(result.run_dir / "confusion.csv",
                            render_report(result.report, ReportFormat::csv));
    return result;
}

struct Comparison {
    struct Row {
        std::string code;
        std::optional<double> a;
        std::optional<double> b;
        std::optional<double> delta;  // b - a, defined only when both sides are
        bool in_both_aggregates = false;
    };
    std::vector<Row> rows;
    double macro_delta = 0.0;
    double micro_delta = 0.0;
    double std_dev_delta = 0.0;
    int improved = 0;
    int regressed = 0;
    int unchanged = 0;
};

inline Comparison compare_reports(const EvaluationReport& a, const EvaluationReport& b) {
    if (a.confusion.divisions != b.confusion.divisions)
        throw EvalError("reports cover different division sets");
    Comparison cmp;
    std::set<std::string> inc_a(a.included_classes.begin(), a.included_classes.end());
    std::set<std::string> inc_b(b.included_classes.begin(), b.included_classes.end());
    for (const auto& code : a.confusion.divisions) {
        Comparison::Row row;
        row.code = code;
        auto pa = a.per_class_precision.find(code);
        auto pb = b.per_class_precision.find(code);
        if (pa != a.per_class_precision.end()) row.a = pa->second;
        if (pb != b.per_class_precision.end()) row.b = pb->second;
        if (row.a && row.b) row.delta = *row.b - *row.a;
        row.in_both_aggregates = inc_a.count(code) && inc_b.count(code);
        if (row.in_both_aggregates && row.delta) {
            if (*row.delta > 0) ++cmp.improved;
            else if (*row.delta < 0) ++cmp.regressed;
            else ++cmp.unchanged;
        }
        cmp.rows.push_back(std::move(row));
    }
    cmp.macro_delta = b.macro_precision - a.macro_precision;
    cmp.micro_delta = b.micro_precision - a.micro_precision;
    cmp.std_dev_delta = b.std_dev - a.std_dev;
    return cmp;
}

inline std::string render_comparison(const Comparison& cmp, const EvaluationReport& a,
                                     const EvaluationReport& b) {
    auto fmt = [](const std::optional<double>& v) {
        return v ? detail::format_fixed(*v, 4) : std::string("-");
    };
    std::string out = "# Strategy comparison (B - A)\n\n";
    out += "| Code | Division | A | B | Delta |\n";
    out += "|------|----------|---|---|-------|\n";
    for (const auto& row : cmp.rows) {
        if (!row.a && !row.b) continue;
        auto lab = a.labels.find(row.code);
        out += "| " + row.code + " | " + (lab == a.labels.end() ? "" : lab->second) + " | " +
               fmt(row.a) + " | " + fmt(row.b) + " | " + fmt(row.delta) +
               (row.in_both_aggregates ? "" : " (outside aggregates)") + " |\n";
    }
    out += "| - | Macro Average | " + detail::format_fixed(a.macro_precision, 4) + " | " +
           detail::format_fixed(b.macro_precision, 4) + " | " +
           detail::format_fixed(cmp.macro_delta, 4) + " |\n";
    out += "| - | Micro Average | " + detail::format_fixed(a.micro_precision, 4) + " | " +
           detail::format_fixed(b.micro_precision, 4) + " | " +
           detail::format_fixed(cmp.micro_delta, 4) + " |\n";
    out += "| - | Standard Deviation | " + detail::format_fixed(a.std_dev, 4) + " | " +
           detail::format_fixed(b.std_dev, 4) + " | " +
           detail::format_fixed(cmp.std_dev_delta, 4) + " |\n";
    out += "\nImproved: " + std::to_string(cmp.improved) +
           ". Regressed: " + std::to_string(cmp.regressed) +
           ". Unchanged: " + std::to_string(cmp.unchanged) + ".\n";
    return out;
}

struct CompareResult {
    EvaluationReport a;
    EvaluationReport b;
    Comparison comparison;
    std::string rendered;
};

inline CompareResult cmd_compare(const std::filesystem::path& report_a,
                                 const std::filesystem::path& report_b) {
    CompareResult result;
    try {
        result.a = report_from_json(nlohmann::json::parse(detail::read_text_file(report_a)));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(report_a.string() + ": " + e.what());
    }
    try {
        result.b = report_from_json(nlohmann::json::parse(detail::read_text_file(report_b)));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(report_b.string() + ": " + e.what());
    }
    result.comparison = compare_reports(result.a, result.b);
    result.rendered = render_comparison(result.comparison, result.a, result.b);
    return result;
}

// Re-renders a stored report in another format.
inline std::string cmd_report(const std::filesystem::path& report_json, ReportFormat format) {
    EvaluationReport report;
    try {
        report = report_from_json(nlohmann::json::parse(detail::read_text_file(report_json)));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(report_json.string() + ": " + e.what());
    }
    return render_report(report, format);
}

}  // namespace annotator
