#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "annotator/corpus.hpp"
#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"
#include "annotator/gateway.hpp"
#include "annotator/prompting.hpp"
#include "annotator/taxonomy.hpp"

namespace annotator::fixtures {

// Two-column TSV (code, integer count), `#` comments allowed.
inline std::map<std::string, int64_t> load_counts_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open counts file: " + path.string());
    std::map<std::string, int64_t> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = detail::trim(line);
        if (s.empty() || s.front() == '#') continue;
        size_t tab = s.find('\t');
        if (tab == std::string_view::npos)
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected code<TAB>count");
        std::string code(detail::trim(s.substr(0, tab)));
        std::string value(detail::trim(s.substr(tab + 1)));
        if (out.count(code))
            throw ParseError(path.string() + ": duplicate code " + code);
        try {
            out[code] = std::stoll(value);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": bad count \"" + value + "\"");
        }
    }
    return out;
}

// Two-column TSV (code, real value in [0,1]).
inline std::map<std::string, double> load_scores_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scores file: " + path.string());
    std::map<std::string, double> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = detail::trim(line);
        if (s.empty() || s.front() == '#') continue;
        size_t tab = s.find('\t');
        if (tab == std::string_view::npos)
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected code<TAB>value");
        std::string code(detail::trim(s.substr(0, tab)));
        std::string value(detail::trim(s.substr(tab + 1)));
        if (out.count(code))
            throw ParseError(path.string() + ": duplicate code " + code);
        double v;
        try {
            v = std::stod(value);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": bad value \"" + value + "\"");
        }
        if (v < 0.0 || v > 1.0)
            throw ParseError(path.string() + ": score for " + code + " outside [0,1]");
        out[code] = v;
    }
    return out;
}

struct BundleExpectations {
    int64_t total_test_count = 1684;   // reference split size
    size_t scored_divisions = 20;      // divisions with published precision per strategy
    size_t min_corpus_records = 60;
    size_t min_corpus_strata = 6;
};

// Accessor for the shipped test assets. Loads are validated so an edit that
// breaks an invariant fails loudly in the suite rather than skewing results.
class FixtureBundle {
public:
    explicit FixtureBundle(std::filesystem::path root) : root_(std::move(root)) {
        if (!std::filesystem::is_directory(root_))
            throw IoError("fixture root is not a directory: " + root_.string());
    }

    const std::filesystem::path& root() const { return root_; }

    // Relative path lookup with an existence check.
    std::filesystem::path open(std::string_view name) const {
        std::filesystem::path p = root_ / name;
        if (!std::filesystem::exists(p))
            throw IoError("missing fixture: " + p.string());
        return p;
    }

    Taxonomy taxonomy() const {
        return Taxonomy::from_file(open("taxonomy/anzsrc_for_2008_divisions.tsv").string());
    }

    PromptTemplate prompt_template() const {
        return PromptTemplate::from_file(open("templates/default_prompt.txt").string());
    }

    std::vector<MetadataRecord> synthetic_corpus() const {
        std::ifstream in(open("corpus/synthetic_corpus.jsonl"));
        ParseStats stats;
        return parse_records(in, RecordFormat::jsonl, ParseMode::strict, &stats);
    }

    // The worked classification example: one demonstration record and one
    // unlabeled-style target record.
    std::vector<MetadataRecord> showcase_records() const {
        std::ifstream in(open("corpus/showcase_records.jsonl"));
        ParseStats stats;
        return parse_records(in, RecordFormat::jsonl, ParseMode::strict, &stats);
    }

    std::filesystem::path showcase_prompt_path() const { return open("golden/showcase_prompt.txt"); }

    std::string showcase_prompt() const {
        std::ifstream in(showcase_prompt_path(), std::ios::binary);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return text;
    }

    std::map<std::string, int64_t> reference_counts() const {
        return load_counts_tsv(open("tables/reference_test_counts.tsv"));
    }

    std::map<std::string, double> reference_precision(Strategy strategy) const {
        std::string name = std::string("tables/reference_precision_") +
                           std::string(to_string(strategy)) + ".tsv";
        return load_scores_tsv(open(name));
    }

    RuleMockBackend mock_backend() const {
        return RuleMockBackend::from_file(open("mock_rules.tsv").string());
    }

    ReplayBackend replay_backend() const {
        return ReplayBackend::from_file(open("replay/showcase_replies.json").string());
    }

    std::filesystem::path golden_dir(std::string_view run_name) const {
        return open(std::string("golden/") + std::string(run_name));
    }

    // Cross-fixture invariants. Checked in one place so every test that uses
    // the bundle can assume them.
    void validate(const BundleExpectations& expect = {}) const {
        Taxonomy tax = taxonomy();

        auto counts = reference_counts();
        int64_t total = 0;
        for (const auto& [code, n] : counts) {
            if (!tax.has_division(code))
                throw ParseError("reference counts mention unknown division " + code);
            if (n <= 0) throw ParseError("reference count for " + code + " is not positive");
            total += n;
        }
        if (counts.size() != tax.divisions().size())
            throw ParseError("reference counts cover " + std::to_string(counts.size()) +
                             " divisions, expected " + std::to_string(tax.divisions().size()));
        if (total != expect.total_test_count)
            throw ParseError("reference counts sum to " + std::to_string(total) + ", expected " +
                             std::to_string(expect.total_test_count));

        for (Strategy s : {Strategy::random, Strategy::relevant}) {
            auto scores = reference_precision(s);
            if (scores.size() != expect.scored_divisions)
                throw ParseError("reference precision (" + std::string(to_string(s)) + ") has " +
                                 std::to_string(scores.size()) + " entries, expected " +
                                 std::to_string(expect.scored_divisions));
            for (const auto& [code, v] : scores)
                if (!tax.has_division(code))
                    throw ParseError("reference precision mentions unknown division " + code);
        }

        auto corpus = synthetic_corpus();
        if (corpus.size() < expect.min_corpus_records)
            throw ParseError("synthetic corpus has " + std::to_string(corpus.size()) +
                             " records, expected at least " +
                             std::to_string(expect.min_corpus_records));
        RuleMockBackend mock = mock_backend();
        std::map<std::string, int64_t> strata;
        for (const auto& rec : corpus) {
            auto stratum = stratum_of(rec, tax);
            if (!stratum)
                throw ParseError("synthetic record " + rec.id + " has no stratum");
            ++strata[*stratum];
            // The mock backend must be able to produce this record's own
            // division, otherwise the golden run degenerates.
            std::string text = rec.title + "\n" + rec.description;
            std::string want = tax.label_of(*stratum);
            bool recoverable = false;
            for (const auto& [keyword, label] : mock.rules())
                if (normalize_label(label) == want && detail::contains_ci(text, keyword)) {
                    recoverable = true;
                    break;
                }
            if (!recoverable)
                throw ParseError("synthetic record " + rec.id +
                                 " is not recoverable by any mock rule for its stratum");
        }
        if (strata.size() < expect.min_corpus_strata)
            throw ParseError("synthetic corpus spans " + std::to_string(strata.size()) +
                             " divisions, expected at least " +
                             std::to_string(expect.min_corpus_strata));

        for (const auto& [keyword, label] : mock.rules())
            if (!tax.match_label(label) && label != "Unknown")
                throw ParseError("mock rule label \"" + label + "\" is not a division label");
    }

private:
    std::filesystem::path root_;
};

}  // namespace annotator::fixtures
