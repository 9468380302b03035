#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "annotator/config.hpp"
#include "annotator/pipeline.hpp"
#include "test_support.hpp"

namespace testsupport {

// The pinned configuration behind the stored golden run outputs. Any change
// here invalidates fixtures/golden/{random,relevant}; rerun golden_regen and
// audit the diff before committing.
inline annotator::RunConfig golden_run_config(const std::filesystem::path& output_dir,
                                              annotator::Strategy strategy) {
    annotator::RunConfig c;
    auto fx = fixtures_dir();
    c.taxonomy_path = (fx / "taxonomy/anzsrc_for_2008_divisions.tsv").string();
    c.corpus_path = (fx / "corpus/synthetic_corpus.jsonl").string();
    c.template_path = (fx / "templates/default_prompt.txt").string();
    c.strategy = strategy;
    c.k = 3;
    c.seed = 42;
    c.description_budget = 600;
    c.test_per_division = 4;
    c.cap_per_division = 2;
    c.backend = "mock";
    c.mock_rules_path = (fx / "mock_rules.tsv").string();
    c.min_support = 4;
    c.output_dir = output_dir.string();
    return c;
}

// Files covered by the byte-identity check. The manifest is excluded on
// purpose: it carries wall-clock timings.
inline const std::vector<std::string>& golden_output_files() {
    static const std::vector<std::string> files = {
        "demo_pool.jsonl", "test_set.jsonl",  "sample_counts.tsv", "predictions.jsonl",
        "report.md",       "report.json",     "confusion.csv"};
    return files;
}

// Rebuilds the exact jobs cmd_annotate would submit for an already sampled
// run. Lets tests prime replay recordings without a live backend.
inline std::vector<annotator::BatchJob> rebuild_jobs(const annotator::RunConfig& config) {
    using namespace annotator;
    Taxonomy tax = Taxonomy::from_file(config.taxonomy_path);
    PromptTemplate tpl = PromptTemplate::from_file(config.template_path);
    FieldPolicy policy{static_cast<size_t>(config.description_budget)};
    auto run_dir = run_dir_for(config);
    auto pool = detail::load_records_file(run_dir / "demo_pool.jsonl");
    auto test_set = detail::load_records_file(run_dir / "test_set.jsonl");
    std::vector<BatchJob> jobs;
    for (const auto& target : test_set) {
        SelectionResult sel =
            select_demonstrations(config.strategy, target, pool, tax, config.k, config.seed,
                                  nullptr, nullptr, config.random_mode);
        PromptDocument doc = render_prompt(target, sel.demos, tax, tpl, policy);
        jobs.push_back({target.id, to_messages(doc, config.system_split)});
    }
    return jobs;
}

}  // namespace testsupport
