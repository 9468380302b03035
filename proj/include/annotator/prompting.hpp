#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "annotator/corpus.hpp"
#include "annotator/detail/hashing.hpp"
#include "annotator/embedding.hpp"
#include "annotator/errors.hpp"
#include "annotator/taxonomy.hpp"

namespace annotator {

enum class Strategy { random, relevant };

inline std::string_view to_string(Strategy s) {
    return s == Strategy::random ? "random" : "relevant";
}

inline Strategy strategy_from_string(std::string_view s) {
    if (s == "random") return Strategy::random;
    if (s == "relevant") return Strategy::relevant;
    throw ConfigError("unknown strategy \"" + std::string(s) + "\" (expected random|relevant)");
}

// Whether random demonstrations are redrawn per target record or fixed for
// the whole run.
enum class RandomMode { per_target, run_fixed };

inline std::string_view to_string(RandomMode m) {
    return m == RandomMode::per_target ? "per_target" : "run_fixed";
}

inline RandomMode random_mode_from_string(std::string_view s) {
    if (s == "per_target") return RandomMode::per_target;
    if (s == "run_fixed") return RandomMode::run_fixed;
    throw ConfigError("unknown random mode \"" + std::string(s) +
                      "\" (expected per_target|run_fixed)");
}

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

// A labeled example embedded in the prompt.
struct Demonstration {
    MetadataRecord record;
    std::vector<std::string> labels;  // lowercase division labels, reply order
};

// Labels are the divisions of the record's gold codes, first occurrence kept.
// Codes whose division is not in the taxonomy are skipped, mirroring
// stratum_of; a record with no usable code cannot serve as a demonstration.
inline Demonstration make_demonstration(const MetadataRecord& record, const Taxonomy& taxonomy) {
    Demonstration d{record, {}};
    std::set<std::string> seen;
    for (const auto& code : record.gold_codes) {
        if (!detail::all_digits(code) || (code.size() != 2 && code.size() != 4 && code.size() != 6))
            continue;
        std::string division = code.substr(0, 2);
        if (!taxonomy.has_division(division) || !seen.insert(division).second) continue;
        d.labels.push_back(taxonomy.label_of(division));
    }
    if (d.labels.empty())
        throw Error("record \"" + record.id + "\" has no gold code in the taxonomy");
    return d;
}

struct PromptTemplate {
    std::string skeleton;
    std::string rules_text;
    std::string examples_header = "Examples of dataset classification:";

    static const std::string& default_rules() {
        static const std::string rules =
            "Note: Identify the relevant categories of the following dataset by examining its "
            "title and description. The answers should be limited to a maximum of three, "
            "separated by \" / \", and arranged in order of relevance, with the most relevant "
            "listed first.";
        return rules;
    }

    static const std::string& default_skeleton() {
        static const std::string skeleton =
            "You are an assistant at Research Data Australia (RDA), and your task is to "
            "accurately determine the categories of a dataset given its title and description. "
            "Please categorize the given dataset into the divisions of Australian and New "
            "Zealand Standard Research Classification (ANZSRC):\n"
            "\n"
            "{{divisions}}\n"
            "\n"
            "{{examples}}{{rules}}\n"
            "\n"
            "The following is information about the target dataset:\n"
            "\n"
            "Dataset title: {{target_title}}\n"
            "Dataset description: {{target_description}} Categories:";
        return skeleton;
    }

    static PromptTemplate default_template() {
        return {default_skeleton(), default_rules()};
    }

    // One trailing newline is dropped so that a file saved with a final
    // newline still renders text ending in the `Categories:` sentinel.
    static PromptTemplate from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open prompt template: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string text = buf.str();
        if (!text.empty() && text.back() == '\n') text.pop_back();
        if (!text.empty() && text.back() == '\r') text.pop_back();
        return {std::move(text), default_rules()};
    }
};

// A fully rendered prompt plus the provenance of its demonstrations.
struct PromptDocument {
    std::string text;
    std::string target_id;
    std::vector<std::string> demo_ids;
    Strategy strategy = Strategy::random;
    std::string rules;
    // Byte offset of the {{system_end}} marker, when the template has one.
    std::optional<size_t> system_split;
};

namespace detail {

inline std::string join_slash(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += " / ";
        out += parts[i];
    }
    return out;
}

}  // namespace detail

// Renders the four-component prompt: instruction with the " / "-joined
// division list, numbered demonstration blocks, the rules note, and the
// target block ending in `Categories:`. Byte-deterministic in its inputs.
inline PromptDocument render_prompt(const MetadataRecord& target,
                                    const std::vector<Demonstration>& demos,
                                    const Taxonomy& taxonomy, const PromptTemplate& tpl,
                                    const FieldPolicy& policy = {}) {
    std::vector<std::string> division_labels;
    division_labels.reserve(taxonomy.size());
    for (const auto& d : taxonomy.divisions()) division_labels.push_back(d.label);

    std::string examples;
    if (!demos.empty()) {
        examples = tpl.examples_header + "\n\n";
        for (size_t i = 0; i < demos.size(); ++i) {
            const Demonstration& d = demos[i];
            examples += std::to_string(i + 1) + ". Dataset title: " + d.record.title +
                        " Dataset description: " +
                        truncate_for_prompt(d.record.description, policy.description_budget) +
                        " Categories: " + detail::join_slash(d.labels) + ".";
            examples += "\n\n";
        }
    }

    std::unordered_map<std::string, std::string> values = {
        {"divisions", detail::join_slash(division_labels)},
        {"examples", examples},
        {"rules", tpl.rules_text},
        {"target_title", target.title},
        {"target_description", truncate_for_prompt(target.description, policy.description_budget)},
    };

    PromptDocument doc;
    doc.target_id = target.id;
    doc.rules = tpl.rules_text;
    for (const auto& d : demos) doc.demo_ids.push_back(d.record.id);

    // Single pass over the skeleton; substituted content is never rescanned.
    const std::string& skel = tpl.skeleton;
    size_t pos = 0;
    while (pos < skel.size()) {
        size_t open = skel.find("{{", pos);
        if (open == std::string::npos) {
            doc.text.append(skel, pos, std::string::npos);
            break;
        }
        doc.text.append(skel, pos, open - pos);
        size_t close = skel.find("}}", open + 2);
        if (close == std::string::npos) {  // literal braces, not a placeholder
            doc.text.append(skel, open, std::string::npos);
            break;
        }
        std::string name = skel.substr(open + 2, close - open - 2);
        if (name == "system_end") {
            doc.system_split = doc.text.size();
        } else {
            auto it = values.find(name);
            if (it == values.end())
                throw Error("unresolved template placeholder {{" + name + "}}");
            doc.text += it->second;
        }
        pos = close + 2;
    }
    return doc;
}

// Default: one user message with the full text. When the template carries a
// {{system_end}} marker and the split flag is on, the text before the marker
// becomes a system message; concatenating the pair reproduces the full text.
inline std::vector<ChatMessage> to_messages(const PromptDocument& doc, bool system_split = false) {
    if (doc.text.empty()) throw Error("to_messages: empty prompt document");
    if (system_split && doc.system_split) {
        size_t off = *doc.system_split;
        return {{"system", doc.text.substr(0, off)}, {"user", doc.text.substr(off)}};
    }
    return {{"user", doc.text}};
}

struct SelectionResult {
    std::vector<Demonstration> demos;
    // Set when fewer eligible records exist than requested.
    bool pool_exhausted = false;
};

// Picks k demonstrations for a target. Random draws are uniform without
// replacement from a generator seeded per (seed, target id), or per seed
// alone in run_fixed mode, so batch runs are reproducible record by record.
// Relevant selection takes the top-k of the embedding index. The target
// itself is never eligible.
inline SelectionResult select_demonstrations(Strategy strategy, const MetadataRecord& target,
                                             const std::vector<MetadataRecord>& pool,
                                             const Taxonomy& taxonomy, size_t k, uint64_t seed,
                                             const DemoIndex* index = nullptr,
                                             const EmbeddingVector* target_embedding = nullptr,
                                             RandomMode mode = RandomMode::per_target) {
    if (pool.empty()) throw Error("select_demonstrations: empty pool");
    if (k < 1) throw Error("select_demonstrations: k must be >= 1");

    std::vector<const MetadataRecord*> eligible;
    std::unordered_map<std::string, const MetadataRecord*> by_id;
    for (const auto& r : pool) {
        if (r.id == target.id) continue;
        auto stratum = stratum_of(r, taxonomy);
        if (!stratum) continue;  // unlabeled records cannot demonstrate anything
        eligible.push_back(&r);
        by_id[r.id] = &r;
    }

    SelectionResult result;
    if (eligible.empty()) {
        result.pool_exhausted = true;
        return result;
    }

    std::vector<const MetadataRecord*> chosen;
    if (strategy == Strategy::random) {
        detail::DetRng rng(mode == RandomMode::per_target ? detail::derive_seed(seed, target.id)
                                                          : detail::splitmix64(seed));
        chosen = rng.sample(eligible, k);
    } else {
        if (!index || !target_embedding)
            throw ConfigError("relevant strategy requires an embedding index and target embedding");
        DemoIndex filtered;
        filtered.reserve(index->size());
        for (const auto& entry : *index)
            if (by_id.count(entry.first)) filtered.push_back(entry);
        for (const auto& id : top_k_relevant(*target_embedding, filtered, k))
            chosen.push_back(by_id.at(id));
    }

    if (chosen.size() < k) result.pool_exhausted = true;
    for (const auto* r : chosen) result.demos.push_back(make_demonstration(*r, taxonomy));
    return result;
}

}  // namespace annotator
