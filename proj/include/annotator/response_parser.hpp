#pragma once

#include <json.hpp>

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"
#include "annotator/taxonomy.hpp"

namespace annotator {

enum class ReplyShape { slash, numbered, empty };

inline std::string_view to_string(ReplyShape s) {
    switch (s) {
        case ReplyShape::slash: return "slash";
        case ReplyShape::numbered: return "numbered";
        default: return "empty";
    }
}

inline ReplyShape reply_shape_from_string(std::string_view s) {
    if (s == "slash") return ReplyShape::slash;
    if (s == "numbered") return ReplyShape::numbered;
    if (s == "empty") return ReplyShape::empty;
    throw ParseError("unknown reply shape \"" + std::string(s) + "\"");
}

// Ordered division codes recovered from one model reply. `codes` holds 1-3
// division codes in reply order, or the single sentinel `others` when nothing
// matched. Reply tokens that matched no label are kept in `dropped_tokens`
// so vocabulary drift stays visible in reports.
struct Prediction {
    std::vector<std::string> codes;
    std::string raw;
    std::vector<std::string> dropped_tokens;
    ReplyShape shape = ReplyShape::empty;

    bool operator==(const Prediction&) const = default;
};

namespace detail {

// Leading boilerplate: everything through the last `Categories:` marker, then
// any leading line that ends with a colon (the preamble sentence of the
// interactive-interface reply shape).
inline std::string_view strip_boilerplate(std::string_view s) {
    size_t marker = rfind_ci(s, "categories:");
    if (marker != std::string_view::npos) s = s.substr(marker + std::string_view("categories:").size());
    for (;;) {
        size_t start = 0;
        while (start < s.size() && is_space(s[start])) ++start;
        size_t eol = s.find('\n', start);
        std::string_view line = s.substr(start, eol == std::string_view::npos ? std::string_view::npos
                                                                              : eol - start);
        line = trim(line);
        if (line.empty() || line.back() != ':') return s;
        if (eol == std::string_view::npos) return {};
        s = s.substr(eol + 1);
    }
}

// "12. rest-of-line" -> "rest-of-line"; anything else unchanged.
inline std::string_view strip_number_prefix(std::string_view line) {
    size_t i = 0;
    while (i < line.size() && is_space(line[i])) ++i;
    size_t d = i;
    while (d < line.size() && line[d] >= '0' && line[d] <= '9') ++d;
    if (d == i || d >= line.size() || line[d] != '.') return line;
    return line.substr(d + 1);
}

inline bool has_number_prefix(std::string_view line) {
    size_t i = 0;
    while (i < line.size() && is_space(line[i])) ++i;
    size_t d = i;
    while (d < line.size() && line[d] >= '0' && line[d] <= '9') ++d;
    return d > i && d < line.size() && line[d] == '.';
}

}  // namespace detail

// Turns a raw reply into a Prediction. Total: every input yields a valid
// Prediction. Pipeline: strip boilerplate, detect shape (numbered lines as in
// the interactive interface vs. a " / "-separated string as in the API reply),
// normalize and match each token, dedupe, cap at three, default to `others`.
inline Prediction parse_response(std::string_view raw, const Taxonomy& taxonomy) {
    Prediction p;
    p.raw = std::string(raw);

    std::string_view body = detail::strip_boilerplate(raw);

    std::vector<std::string_view> lines;
    for (std::string_view line : detail::split(body, '\n'))
        if (!detail::trim(line).empty()) lines.push_back(line);

    std::vector<std::string> tokens;
    if (lines.empty()) {
        p.shape = ReplyShape::empty;
    } else if (detail::has_number_prefix(lines.front())) {
        p.shape = ReplyShape::numbered;
        for (std::string_view line : lines)
            tokens.emplace_back(detail::strip_number_prefix(line));
    } else {
        p.shape = ReplyShape::slash;
        for (std::string_view part : detail::split(body, '/')) tokens.emplace_back(part);
    }

    for (const auto& token : tokens) {
        std::string norm = normalize_label(token);
        if (norm.empty()) continue;
        auto code = taxonomy.match_label(norm);
        if (!code) {
            p.dropped_tokens.push_back(norm);
            continue;
        }
        if (std::find(p.codes.begin(), p.codes.end(), *code) == p.codes.end())
            p.codes.push_back(*code);
    }
    if (p.codes.size() > 3) p.codes.resize(3);
    if (p.codes.empty()) p.codes.emplace_back(kOthers);
    return p;
}

// First (most relevant) predicted code, the unit of evaluation.
inline const std::string& top1(const Prediction& p) {
    if (p.codes.empty()) throw Error("top1 on an empty prediction");
    return p.codes.front();
}

// One prediction joined to its source record and generation outcome.
struct PredictionRow {
    std::string record_id;
    Prediction prediction;
    std::string finish_reason;

    bool operator==(const PredictionRow&) const = default;
};

inline std::string prediction_to_jsonl_line(const PredictionRow& row) {
    nlohmann::ordered_json j;
    j["record_id"] = row.record_id;
    j["codes"] = row.prediction.codes;
    j["raw"] = row.prediction.raw;
    j["dropped_tokens"] = row.prediction.dropped_tokens;
    j["shape"] = std::string(to_string(row.prediction.shape));
    j["finish_reason"] = row.finish_reason;
    return j.dump();
}

inline PredictionRow prediction_from_jsonl_line(std::string_view line) {
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        PredictionRow row;
        row.record_id = j.at("record_id").get<std::string>();
        row.prediction.codes = j.at("codes").get<std::vector<std::string>>();
        row.prediction.raw = j.at("raw").get<std::string>();
        row.prediction.dropped_tokens = j.at("dropped_tokens").get<std::vector<std::string>>();
        row.prediction.shape = reply_shape_from_string(j.at("shape").get<std::string>());
        row.finish_reason = j.value("finish_reason", "");
        return row;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad prediction line: ") + e.what());
    }
}

}  // namespace annotator
