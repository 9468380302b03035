#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "annotator/detail/hashing.hpp"
#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"
#include "annotator/taxonomy.hpp"

namespace annotator {

// One catalogue entry. Gold codes are 2/4/6-digit strings; taxonomy
// membership is not checked at parse time.
struct MetadataRecord {
    std::string id;
    std::string title;
    std::string description;
    std::vector<std::string> gold_codes;
    std::map<std::string, std::string> extras;

    bool operator==(const MetadataRecord&) const = default;
};

enum class RecordFormat { jsonl, csv };
enum class ParseMode { strict, lenient };

struct ParseStats {
    size_t parsed = 0;
    size_t skipped = 0;
    std::vector<std::string> errors;  // one message per skipped line
};

namespace detail {

inline void validate_record(MetadataRecord& r) {
    if (r.id.empty()) throw ParseError("record has empty id");
    if (r.title.empty() && r.description.empty())
        throw ParseError("record " + r.id + " has neither title nor description");
    for (const auto& code : r.gold_codes)
        if (!all_digits(code) || (code.size() != 2 && code.size() != 4 && code.size() != 6))
            throw ParseError("record " + r.id + " has malformed subject code \"" + code + "\"");
}

inline MetadataRecord record_from_json(const nlohmann::json& j) {
    MetadataRecord r;
    r.id = j.value("id", "");
    r.title = j.value("title", "");
    r.description = j.value("description", "");
    if (j.contains("subjects")) {
        if (!j["subjects"].is_array()) throw ParseError("\"subjects\" must be an array");
        for (const auto& s : j["subjects"]) r.gold_codes.push_back(s.get<std::string>());
    }
    if (j.contains("extras")) {
        if (!j["extras"].is_object()) throw ParseError("\"extras\" must be an object");
        for (auto it = j["extras"].begin(); it != j["extras"].end(); ++it)
            r.extras[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
    }
    validate_record(r);
    return r;
}

inline nlohmann::ordered_json record_to_json(const MetadataRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["title"] = r.title;
    j["description"] = r.description;
    j["subjects"] = r.gold_codes;
    if (!r.extras.empty()) {
        nlohmann::ordered_json e;
        for (const auto& [k, v] : r.extras) e[k] = v;
        j["extras"] = e;
    }
    return j;
}

// RFC 4180 style: fields with commas, quotes or newlines are double-quoted.
inline std::string csv_escape(std::string_view field) {
    bool needs_quote = field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quote) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

// Reads one CSV row; rows may span lines when quoted fields contain newlines.
inline bool csv_read_row(std::istream& in, std::vector<std::string>& fields, size_t& line_no) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get();
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line_no;
                field.push_back(c);
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line_no;
            break;
        } else if (c == '\r') {
            // swallow; \r\n handled by the \n branch
        } else {
            field.push_back(c);
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

}  // namespace detail

// Parses records in input order. Strict mode aborts on the first malformed
// line; lenient mode skips it and counts it in `stats`. Duplicate ids are
// malformed. Records missing both title and description are rejected.
inline std::vector<MetadataRecord> parse_records(std::istream& in, RecordFormat format,
                                                 ParseMode mode = ParseMode::strict,
                                                 ParseStats* stats = nullptr) {
    std::vector<MetadataRecord> records;
    std::unordered_set<std::string> seen_ids;
    ParseStats local;
    ParseStats& st = stats ? *stats : local;

    auto admit = [&](MetadataRecord&& r, size_t line_no) {
        if (seen_ids.count(r.id)) throw ParseError("duplicate record id \"" + r.id + "\"");
        seen_ids.insert(r.id);
        records.push_back(std::move(r));
        ++st.parsed;
        (void)line_no;
    };
    auto reject = [&](size_t line_no, const std::string& what) {
        std::string msg = "line " + std::to_string(line_no) + ": " + what;
        if (mode == ParseMode::strict) throw ParseError(msg);
        ++st.skipped;
        st.errors.push_back(msg);
    };

    if (format == RecordFormat::jsonl) {
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            try {
                admit(detail::record_from_json(nlohmann::json::parse(line)), line_no);
            } catch (const nlohmann::json::exception& e) {
                reject(line_no, std::string("invalid JSON: ") + e.what());
            } catch (const ParseError& e) {
                reject(line_no, e.what());
            }
        }
    } else {
        std::vector<std::string> fields;
        size_t line_no = 1;
        if (!detail::csv_read_row(in, fields, line_no)) return records;
        std::vector<std::string> header = {"id", "title", "description", "subjects", "extras_json"};
        if (fields != header) throw ParseError("CSV header must be id,title,description,subjects,extras_json");
        while (true) {
            size_t row_line = line_no;
            if (!detail::csv_read_row(in, fields, line_no)) break;
            if (fields.size() == 1 && fields[0].empty()) continue;
            try {
                if (fields.size() != 5)
                    throw ParseError("expected 5 fields, got " + std::to_string(fields.size()));
                MetadataRecord r;
                r.id = fields[0];
                r.title = fields[1];
                r.description = fields[2];
                for (std::string_view code : detail::split(fields[3], '|'))
                    if (!code.empty()) r.gold_codes.emplace_back(code);
                if (!detail::trim(fields[4]).empty()) {
                    nlohmann::json e = nlohmann::json::parse(fields[4]);
                    if (!e.is_object()) throw ParseError("extras_json must be a JSON object");
                    for (auto it = e.begin(); it != e.end(); ++it)
                        r.extras[it.key()] = it.value().is_string() ? it.value().get<std::string>()
                                                                    : it.value().dump();
                }
                detail::validate_record(r);
                admit(std::move(r), row_line);
            } catch (const nlohmann::json::exception& e) {
                reject(row_line, std::string("invalid extras JSON: ") + e.what());
            } catch (const ParseError& e) {
                reject(row_line, e.what());
            }
        }
    }
    return records;
}

inline std::string record_to_jsonl_line(const MetadataRecord& r) {
    return detail::record_to_json(r).dump();
}

inline void write_records(std::ostream& out, const std::vector<MetadataRecord>& records,
                          RecordFormat format) {
    if (format == RecordFormat::jsonl) {
        for (const auto& r : records) out << record_to_jsonl_line(r) << '\n';
        return;
    }
    out << "id,title,description,subjects,extras_json\n";
    for (const auto& r : records) {
        std::string subjects;
        for (size_t i = 0; i < r.gold_codes.size(); ++i) {
            if (i) subjects.push_back('|');
            subjects += r.gold_codes[i];
        }
        std::string extras;
        if (!r.extras.empty()) {
            nlohmann::ordered_json e;
            for (const auto& [k, v] : r.extras) e[k] = v;
            extras = e.dump();
        }
        out << detail::csv_escape(r.id) << ',' << detail::csv_escape(r.title) << ','
            << detail::csv_escape(r.description) << ',' << detail::csv_escape(subjects) << ','
            << detail::csv_escape(extras) << '\n';
    }
}

// The record's true division: the division of the first-listed gold code that
// exists in the taxonomy. No usable gold code means no stratum.
inline std::optional<std::string> stratum_of(const MetadataRecord& record, const Taxonomy& taxonomy) {
    for (const auto& code : record.gold_codes) {
        if (!detail::all_digits(code) || (code.size() != 2 && code.size() != 4 && code.size() != 6))
            continue;
        std::string prefix = code.substr(0, 2);
        if (taxonomy.has_division(prefix)) return prefix;
    }
    return std::nullopt;
}

struct StratifiedSplit {
    struct Entry {
        MetadataRecord record;
        std::string stratum;
    };
    std::vector<Entry> demo_pool;
    std::vector<Entry> test_set;
    uint64_t seed = 0;
    int cap_per_division = 0;
    int test_per_division = 0;
};

// Deterministic stratified sampling. Per division (in taxonomy order) the
// division's records are shuffled with a generator seeded from (seed, code);
// the test set is filled first, then the demo pool takes what remains up to
// the cap. Small divisions therefore surface in the test set before the pool.
inline StratifiedSplit build_split(const std::vector<MetadataRecord>& records,
                                   const Taxonomy& taxonomy, int cap, int test_per_division,
                                   uint64_t seed) {
    if (cap < 1) throw Error("cap_per_division must be >= 1");
    if (test_per_division < 1) throw Error("test_per_division must be >= 1");

    std::unordered_map<std::string, std::vector<const MetadataRecord*>> by_division;
    for (const auto& r : records) {
        auto stratum = stratum_of(r, taxonomy);
        if (stratum) by_division[*stratum].push_back(&r);
    }

    StratifiedSplit split;
    split.seed = seed;
    split.cap_per_division = cap;
    split.test_per_division = test_per_division;

    for (const auto& division : taxonomy.divisions()) {
        auto it = by_division.find(division.code);
        if (it == by_division.end()) continue;
        std::vector<const MetadataRecord*> pool = it->second;
        detail::DetRng rng(detail::derive_seed(seed, division.code));
        rng.shuffle(pool);

        size_t n_test = std::min<size_t>(test_per_division, pool.size());
        size_t n_demo = std::min<size_t>(cap, pool.size() - n_test);
        for (size_t i = 0; i < n_test; ++i)
            split.test_set.push_back({*pool[i], division.code});
        for (size_t i = 0; i < n_demo; ++i)
            split.demo_pool.push_back({*pool[n_test + i], division.code});
    }
    return split;
}

// Budget-limited prompt text. Cuts at the last whitespace before the limit
// (hard cut when there is none) and appends an ellipsis marker. The budget is
// in bytes; cuts never split a UTF-8 sequence.
inline std::string truncate_for_prompt(std::string_view text, size_t max_chars) {
    if (max_chars < 1) throw Error("max_chars must be >= 1");
    if (text.size() <= max_chars) return std::string(text);

    size_t cut = max_chars;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;  // UTF-8 boundary
    std::string_view head = text.substr(0, cut);
    if (!detail::is_space(text[cut])) {  // would split a word: back off to last whitespace
        size_t ws = head.find_last_of(" \t\n\r\f\v");
        if (ws != std::string_view::npos && ws > 0) head = head.substr(0, ws);
    }
    while (!head.empty() && detail::is_space(head.back())) head.remove_suffix(1);
    return std::string(head) + "…";
}

}  // namespace annotator
