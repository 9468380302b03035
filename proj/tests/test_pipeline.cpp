#include "annotator/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "annotator/fixtures.hpp"
#include "fixture_run.hpp"
#include "test_support.hpp"

using namespace annotator;
using testsupport::golden_run_config;
using testsupport::TempDir;

namespace {

std::map<std::string, int64_t> counts_map(std::initializer_list<std::pair<std::string, int64_t>> kv) {
    return std::map<std::string, int64_t>(kv.begin(), kv.end());
}

size_t line_count(const std::filesystem::path& p) {
    std::string text = testsupport::read_file(p);
    size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

}  // namespace

TEST(CmdSample, SplitsTheGoldenCorpusDeterministically) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    SampleResult result = cmd_sample(config);

    EXPECT_EQ(result.run_dir, out.path() / run_id_for(config));
    EXPECT_EQ(result.split.test_set.size(), 37u);
    EXPECT_EQ(result.split.demo_pool.size(), 14u);

    EXPECT_EQ(result.available,
              counts_map({{"01", 7},
                          {"04", 8},
                          {"05", 8},
                          {"06", 8},
                          {"08", 7},
                          {"09", 7},
                          {"11", 6},
                          {"13", 3},
                          {"15", 3},
                          {"21", 3}}));
    EXPECT_EQ(result.demo_counts, counts_map({{"01", 2},
                                              {"04", 2},
                                              {"05", 2},
                                              {"06", 2},
                                              {"08", 2},
                                              {"09", 2},
                                              {"11", 2}}));
    EXPECT_EQ(result.test_counts, counts_map({{"01", 4},
                                              {"04", 4},
                                              {"05", 4},
                                              {"06", 4},
                                              {"08", 4},
                                              {"09", 4},
                                              {"11", 4},
                                              {"13", 3},
                                              {"15", 3},
                                              {"21", 3}}));

    EXPECT_EQ(line_count(result.run_dir / "demo_pool.jsonl"), 14u);
    EXPECT_EQ(line_count(result.run_dir / "test_set.jsonl"), 37u);

    std::string tsv = testsupport::read_file(result.run_dir / "sample_counts.tsv");
    EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "code\tlabel\tavailable\tdemo_pool\ttest");
    EXPECT_NE(tsv.find("01\tmathematical sciences\t7\t2\t4\n"), std::string::npos);
    EXPECT_NE(tsv.find("02\tphysical sciences\t0\t0\t0\n"), std::string::npos);
    EXPECT_NE(tsv.find("13\teducation\t3\t0\t3\n"), std::string::npos);
    EXPECT_EQ(line_count(result.run_dir / "sample_counts.tsv"), 23u);

    std::set<std::string> demo_ids, test_ids;
    for (const auto& e : result.split.demo_pool) demo_ids.insert(e.record.id);
    for (const auto& e : result.split.test_set) test_ids.insert(e.record.id);
    for (const auto& id : demo_ids) EXPECT_FALSE(test_ids.count(id)) << id;

    TempDir out2;
    RunConfig config2 = golden_run_config(out2.path(), Strategy::random);
    SampleResult again = cmd_sample(config2);
    EXPECT_EQ(testsupport::read_file(result.run_dir / "demo_pool.jsonl"),
              testsupport::read_file(again.run_dir / "demo_pool.jsonl"));
    EXPECT_EQ(testsupport::read_file(result.run_dir / "test_set.jsonl"),
              testsupport::read_file(again.run_dir / "test_set.jsonl"));
}

TEST(CmdSample, RejectsAnEmptyCorpus) {
    TempDir out;
    testsupport::write_file(out.path() / "empty.jsonl", "\n\n");
    RunConfig config = golden_run_config(out.path() / "runs", Strategy::random);
    config.corpus_path = (out.path() / "empty.jsonl").string();
    try {
        cmd_sample(config);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("no records in corpus"), std::string::npos);
    }
}

TEST(CmdAnnotate, RequiresTheSampleStep) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    try {
        cmd_annotate(config);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run the sample step first"), std::string::npos);
    }
}

TEST(CmdAnnotate, MockRunFillsTheManifest) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    cmd_sample(config);
    AnnotateResult result = cmd_annotate(config);

    EXPECT_EQ(result.manifest.run_id, run_id_for(config));
    EXPECT_EQ(result.manifest.tool_version, kVersion);
    EXPECT_EQ(result.manifest.total, 37);
    EXPECT_EQ(result.manifest.succeeded, 37);
    EXPECT_EQ(result.manifest.failed, 0);
    EXPECT_EQ(result.manifest.cache_hits, 0);
    EXPECT_EQ(result.manifest.backend_calls, 37);
    EXPECT_TRUE(result.errors.empty());
    EXPECT_GE(result.manifest.wall_ms, 0);

    std::regex iso8601(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)");
    EXPECT_TRUE(std::regex_match(result.manifest.started_at, iso8601));
    EXPECT_TRUE(std::regex_match(result.manifest.finished_at, iso8601));

    auto manifest_json =
        nlohmann::ordered_json::parse(testsupport::read_file(result.run_dir / "manifest.json"));
    EXPECT_EQ(manifest_json.at("counts").at("total"), 37);
    EXPECT_EQ(manifest_json.at("counts").at("succeeded"), 37);
    EXPECT_EQ(manifest_json.at("counts").at("cache_hits"), 0);
    EXPECT_EQ(manifest_json.at("backend_calls"), 37);
    EXPECT_EQ(manifest_json.at("config").dump(), config_to_json(config).dump());
    EXPECT_FALSE(manifest_json.at("config").contains("api_key"));

    ASSERT_EQ(result.predictions.size(), 37u);
    auto test_set = detail::load_records_file(result.run_dir / "test_set.jsonl");
    ASSERT_EQ(test_set.size(), 37u);
    for (size_t i = 0; i < 37; ++i) {
        EXPECT_EQ(result.predictions[i].record_id, test_set[i].id);
        EXPECT_EQ(result.predictions[i].finish_reason, "stop");
        EXPECT_EQ(result.predictions[i].prediction.codes.size(), 1u) << test_set[i].id;
    }
    auto reread = detail::load_predictions_file(result.run_dir / "predictions.jsonl");
    ASSERT_EQ(reread.size(), 37u);
    for (size_t i = 0; i < 37; ++i) EXPECT_EQ(reread[i], result.predictions[i]);
}

TEST(CmdAnnotate, SecondRunIsServedFromTheCache) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    cmd_sample(config);
    AnnotateResult first = cmd_annotate(config);
    std::string first_bytes = testsupport::read_file(first.run_dir / "predictions.jsonl");

    AnnotateResult second = cmd_annotate(config);
    EXPECT_EQ(second.manifest.succeeded, 37);
    EXPECT_EQ(second.manifest.cache_hits, 37);
    EXPECT_EQ(second.manifest.backend_calls, 0);
    EXPECT_EQ(testsupport::read_file(second.run_dir / "predictions.jsonl"), first_bytes);
}

TEST(CmdAnnotate, ParallelismDoesNotChangeTheBytes) {
    TempDir out1, out2;
    RunConfig base = golden_run_config(out1.path(), Strategy::random);
    base.parallelism = 1;
    cmd_sample(base);
    auto serial = cmd_annotate(base);

    RunConfig wide = golden_run_config(out2.path(), Strategy::random);
    wide.parallelism = 8;
    EXPECT_EQ(run_id_for(wide), run_id_for(base));
    cmd_sample(wide);
    auto parallel = cmd_annotate(wide);

    EXPECT_EQ(testsupport::read_file(serial.run_dir / "predictions.jsonl"),
              testsupport::read_file(parallel.run_dir / "predictions.jsonl"));
}

TEST(CmdAnnotate, RelevantStrategyBuildsAnEmbeddingCache) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::relevant);
    cmd_sample(config);
    AnnotateResult result = cmd_annotate(config);
    EXPECT_EQ(result.manifest.succeeded, 37);
    EXPECT_EQ(result.manifest.backend_calls, 37);

    size_t embedding_entries = 0;
    for (const auto& entry :
         std::filesystem::directory_iterator(result.run_dir / "cache" / "embeddings"))
        if (entry.path().extension() == ".json") ++embedding_entries;
    // 14 pool records plus 37 targets, all distinct texts.
    EXPECT_EQ(embedding_entries, 51u);
}

TEST(CmdAnnotate, SharedCacheDirServesASecondOutputDir) {
    TempDir shared, out_a, out_b;
    RunConfig a = golden_run_config(out_a.path(), Strategy::random);
    a.cache_dir = (shared.path() / "cache").string();
    cmd_sample(a);
    EXPECT_EQ(cmd_annotate(a).manifest.backend_calls, 37);

    RunConfig b = golden_run_config(out_b.path(), Strategy::random);
    b.cache_dir = a.cache_dir;
    cmd_sample(b);
    AnnotateResult second = cmd_annotate(b);
    EXPECT_EQ(second.manifest.cache_hits, 37);
    EXPECT_EQ(second.manifest.backend_calls, 0);
}

TEST(CmdAnnotate, AbortsWhenEveryJobFails) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    config.backend = "replay";
    config.replay_path = (out.path() / "empty_replay.json").string();
    testsupport::write_file(config.replay_path, "{}\n");
    cmd_sample(config);

    EXPECT_THROW(cmd_annotate(config), Error);
    auto run_dir = run_dir_for(config);
    EXPECT_FALSE(std::filesystem::exists(run_dir / "predictions.jsonl"));
    auto manifest = nlohmann::json::parse(testsupport::read_file(run_dir / "manifest.json"));
    EXPECT_EQ(manifest.at("counts").at("total"), 37);
    EXPECT_EQ(manifest.at("counts").at("failed"), 37);
    EXPECT_EQ(manifest.at("counts").at("succeeded"), 0);
}

TEST(CmdAnnotate, PartialFailuresBecomeOthersRows) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    config.backend = "replay";
    config.replay_path = (out.path() / "replay.json").string();
    cmd_sample(config);

    RunConfig mock_config = golden_run_config(out.path(), Strategy::random);
    auto jobs = testsupport::rebuild_jobs(config);
    ASSERT_EQ(jobs.size(), 37u);
    RuleMockBackend mock = RuleMockBackend::from_file(mock_config.mock_rules_path);
    std::set<std::string> holdback = {jobs[0].record_id, jobs[5].record_id};
    nlohmann::json replay = nlohmann::json::object();
    for (const auto& job : jobs) {
        if (holdback.count(job.record_id)) continue;
        auto reply = mock.complete(job.messages, GenerationParams{});
        replay[ReplayBackend::prompt_key(job.messages)] = {{"content", reply.content},
                                                           {"finish_reason", "stop"}};
    }
    testsupport::write_file(config.replay_path, replay.dump());

    AnnotateResult result = cmd_annotate(config);
    EXPECT_EQ(result.manifest.succeeded, 35);
    EXPECT_EQ(result.manifest.failed, 2);
    ASSERT_EQ(result.errors.size(), 2u);
    std::set<std::string> failed_ids;
    for (const auto& [id, message] : result.errors) {
        failed_ids.insert(id);
        EXPECT_NE(message.find("no entry for prompt hash"), std::string::npos);
    }
    EXPECT_EQ(failed_ids, holdback);

    for (const auto& row : result.predictions) {
        if (holdback.count(row.record_id)) {
            EXPECT_EQ(row.prediction.codes, (std::vector<std::string>{"others"}));
            EXPECT_EQ(row.prediction.shape, ReplyShape::empty);
            EXPECT_EQ(row.finish_reason, "error");
        } else {
            EXPECT_EQ(row.finish_reason, "stop");
        }
    }
}

TEST(CmdEvaluate, WritesInternallyConsistentReports) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    cmd_sample(config);
    cmd_annotate(config);
    EvaluateResult result = cmd_evaluate(config);
    const EvaluationReport& report = result.report;

    EXPECT_EQ(report.min_support, 4);
    EXPECT_EQ(report.match_mode, MatchMode::stratum);
    std::map<std::string, int64_t> expected_support = counts_map({{"01", 4},
                                                                  {"04", 4},
                                                                  {"05", 4},
                                                                  {"06", 4},
                                                                  {"08", 4},
                                                                  {"09", 4},
                                                                  {"11", 4},
                                                                  {"13", 3},
                                                                  {"15", 3},
                                                                  {"21", 3}});
    // Support covers every division; strata absent from the test set carry zero.
    for (int d = 1; d <= 22; ++d)
        expected_support.emplace((d < 10 ? "0" : "") + std::to_string(d), 0);
    EXPECT_EQ(report.support, expected_support);
    std::map<std::string, std::string> excluded(report.excluded_classes.begin(),
                                                report.excluded_classes.end());
    EXPECT_EQ(excluded.at("13"), "support 3 < 4");
    EXPECT_EQ(excluded.at("15"), "support 3 < 4");
    EXPECT_EQ(excluded.at("21"), "support 3 < 4");
    ASSERT_FALSE(report.included_classes.empty());

    double sum = 0.0;
    int64_t diag = 0, predicted = 0;
    std::vector<double> values;
    for (const auto& code : report.included_classes) {
        auto p = report.per_class_precision.at(code);
        ASSERT_TRUE(p.has_value()) << code;
        values.push_back(*p);
        sum += *p;
        size_t idx = *report.confusion.index_of(code);
        diag += report.confusion.cells[idx][idx];
        predicted += report.confusion.col_sum(idx);
    }
    EXPECT_NEAR(report.macro_precision, sum / values.size(), 1e-12);
    EXPECT_NEAR(report.micro_precision, static_cast<double>(diag) / predicted, 1e-12);
    double mean = sum / values.size();
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    double expected_std = values.size() > 1 ? std::sqrt(sq / (values.size() - 1)) : 0.0;
    EXPECT_NEAR(report.std_dev, expected_std, 1e-12);
    EXPECT_NEAR(report.micro_precision_unfiltered,
                static_cast<double>(report.confusion.diagonal_sum()) / report.confusion.total(),
                1e-12);
    EXPECT_EQ(report.confusion.total(), 37);

    auto first_md = testsupport::read_file(result.run_dir / "report.md");
    auto parsed = report_from_json(
        nlohmann::json::parse(testsupport::read_file(result.run_dir / "report.json")));
    EXPECT_EQ(parsed, report);
    EXPECT_FALSE(testsupport::read_file(result.run_dir / "confusion.csv").empty());

    EvaluateResult again = cmd_evaluate(config);
    EXPECT_EQ(testsupport::read_file(again.run_dir / "report.md"), first_md);
    EXPECT_EQ(again.report, report);
}

TEST(CmdEvaluate, RequiresPredictions) {
    TempDir out;
    RunConfig config = golden_run_config(out.path(), Strategy::random);
    cmd_sample(config);
    EXPECT_THROW(cmd_evaluate(config), IoError);
}

TEST(RunDirHelpers, ComposeOutputDirAndRunId) {
    RunConfig config = golden_run_config("/tmp/a", Strategy::random);
    EXPECT_EQ(run_dir_for(config), std::filesystem::path("/tmp/a") / run_id_for(config));
    RunConfig moved = config;
    moved.output_dir = "/tmp/b";
    EXPECT_EQ(run_dir_for(moved).filename(), run_dir_for(config).filename());
}

TEST(Timestamps, UtcIso8601Shape) {
    std::regex iso8601(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)");
    EXPECT_TRUE(std::regex_match(detail::utc_now_iso8601(), iso8601));
}

namespace {

// Two hand-built reports over the shipped taxonomy for the comparison tests.
struct ReportPair {
    Taxonomy tax;
    EvaluationReport a;
    EvaluationReport b;

    ReportPair()
        : tax(annotator::fixtures::FixtureBundle(testsupport::fixtures_dir()).taxonomy()) {
        std::map<std::string, std::optional<double>> pa = {
            {"01", 0.5}, {"04", 0.8}, {"05", std::nullopt}, {"09", 0.7}};
        std::map<std::string, std::optional<double>> pb = {
            {"01", 0.6}, {"04", 0.7}, {"05", 0.9}, {"09", 0.7}};
        std::map<std::string, int64_t> support = {
            {"01", 30}, {"04", 30}, {"05", 30}, {"06", 10}, {"09", 30}};
        a = report_from_scores(pa, support, tax, 20);
        b = report_from_scores(pb, support, tax, 20);
    }
};

}  // namespace

TEST(CompareReports, DeltasAndVerdictCounts) {
    ReportPair pair;
    Comparison cmp = compare_reports(pair.a, pair.b);

    EXPECT_EQ(pair.a.included_classes, (std::vector<std::string>{"01", "04", "09"}));
    EXPECT_EQ(pair.b.included_classes, (std::vector<std::string>{"01", "04", "05", "09"}));
    EXPECT_NEAR(cmp.macro_delta, 2.9 / 4 - 2.0 / 3, 1e-12);
    EXPECT_EQ(cmp.improved, 1);
    EXPECT_EQ(cmp.regressed, 1);
    EXPECT_EQ(cmp.unchanged, 1);
    ASSERT_EQ(cmp.rows.size(), 22u);

    for (const auto& row : cmp.rows) {
        if (row.code == "01") {
            ASSERT_TRUE(row.delta);
            EXPECT_NEAR(*row.delta, 0.1, 1e-12);
            EXPECT_TRUE(row.in_both_aggregates);
        }
        if (row.code == "05") {
            EXPECT_FALSE(row.a.has_value());
            ASSERT_TRUE(row.b.has_value());
            EXPECT_FALSE(row.delta.has_value());
            EXPECT_FALSE(row.in_both_aggregates);
        }
        if (row.code == "02") {
            EXPECT_FALSE(row.a.has_value());
            EXPECT_FALSE(row.b.has_value());
        }
    }

    std::string rendered = render_comparison(cmp, pair.a, pair.b);
    EXPECT_EQ(rendered.rfind("# Strategy comparison (B - A)", 0), 0u);
    EXPECT_NE(rendered.find("| 01 | mathematical sciences | 0.5000 | 0.6000 | 0.1000 |"),
              std::string::npos);
    EXPECT_NE(rendered.find("| 05 | environmental sciences | - | 0.9000 | - (outside aggregates) |"),
              std::string::npos);
    EXPECT_EQ(rendered.find("| 02 |"), std::string::npos);
    EXPECT_NE(rendered.find("Improved: 1. Regressed: 1. Unchanged: 1.\n"), std::string::npos);
}

TEST(CompareReports, RejectsMismatchedDivisionSets) {
    ReportPair pair;
    TempDir dir;
    testsupport::write_file(dir.path() / "mini.tsv", "01\tmathematical sciences\n");
    Taxonomy mini = Taxonomy::from_file((dir.path() / "mini.tsv").string());
    EvaluationReport other =
        report_from_scores({{"01", 0.5}}, {{"01", 30}}, mini, 20);
    EXPECT_THROW(compare_reports(pair.a, other), EvalError);
}

TEST(CmdCompare, ReadsReportsFromDisk) {
    ReportPair pair;
    TempDir dir;
    testsupport::write_file(dir.path() / "a.json", render_report(pair.a, ReportFormat::json));
    testsupport::write_file(dir.path() / "b.json", render_report(pair.b, ReportFormat::json));

    CompareResult result = cmd_compare(dir.path() / "a.json", dir.path() / "b.json");
    EXPECT_EQ(result.a, pair.a);
    EXPECT_EQ(result.b, pair.b);
    EXPECT_NEAR(result.comparison.macro_delta, 2.9 / 4 - 2.0 / 3, 1e-12);
    EXPECT_EQ(result.rendered, render_comparison(result.comparison, pair.a, pair.b));

    testsupport::write_file(dir.path() / "broken.json", "not json");
    try {
        cmd_compare(dir.path() / "a.json", dir.path() / "broken.json");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("broken.json"), std::string::npos);
    }
}

TEST(CmdReport, RerendersAStoredReport) {
    ReportPair pair;
    TempDir dir;
    testsupport::write_file(dir.path() / "a.json", render_report(pair.a, ReportFormat::json));
    EXPECT_EQ(cmd_report(dir.path() / "a.json", ReportFormat::markdown),
              render_report(pair.a, ReportFormat::markdown));
    EXPECT_EQ(cmd_report(dir.path() / "a.json", ReportFormat::csv),
              render_report(pair.a, ReportFormat::csv));

    testsupport::write_file(dir.path() / "broken.json", "{\"match_mode\":");
    EXPECT_THROW(cmd_report(dir.path() / "broken.json", ReportFormat::markdown), ParseError);
}
