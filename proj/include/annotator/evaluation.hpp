#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "annotator/corpus.hpp"
#include "annotator/errors.hpp"
#include "annotator/response_parser.hpp"
#include "annotator/taxonomy.hpp"

namespace annotator {

enum class MatchMode { stratum, any_gold };

inline std::string to_string(MatchMode m) {
    return m == MatchMode::stratum ? "stratum" : "any_gold";
}

inline MatchMode match_mode_from_string(std::string_view s) {
    if (s == "stratum") return MatchMode::stratum;
    if (s == "any_gold") return MatchMode::any_gold;
    throw ConfigError("unknown match mode: " + std::string(s));
}

struct LabeledPrediction {
    std::string record_id;
    std::string true_code;       // the record's stratum
    std::string predicted_code;  // top-1; a division code or kOthers
    std::vector<std::string> gold_codes;
};

// Rows are true divisions in taxonomy order; columns are the same divisions
// plus a trailing `others` column for unmatched predictions.
struct ConfusionMatrix {
    std::vector<std::string> divisions;
    std::vector<std::vector<int64_t>> cells;

    static ConfusionMatrix zero(const Taxonomy& tax) {
        ConfusionMatrix m;
        for (const auto& d : tax.divisions()) m.divisions.push_back(d.code);
        m.cells.assign(m.divisions.size(), std::vector<int64_t>(m.divisions.size() + 1, 0));
        return m;
    }

    size_t col_count() const { return divisions.size() + 1; }

    std::optional<size_t> index_of(std::string_view code) const {
        for (size_t i = 0; i < divisions.size(); ++i)
            if (divisions[i] == code) return i;
        return std::nullopt;
    }

    int64_t row_sum(size_t row) const {
        int64_t s = 0;
        for (int64_t v : cells[row]) s += v;
        return s;
    }

    int64_t col_sum(size_t col) const {
        int64_t s = 0;
        for (const auto& row : cells) s += row[col];
        return s;
    }

    int64_t diagonal_sum() const {
        int64_t s = 0;
        for (size_t i = 0; i < divisions.size(); ++i) s += cells[i][i];
        return s;
    }

    int64_t total() const {
        int64_t s = 0;
        for (size_t i = 0; i < cells.size(); ++i) s += row_sum(i);
        return s;
    }

    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(const std::vector<LabeledPrediction>& pairs,
                                        const Taxonomy& tax) {
    ConfusionMatrix m = ConfusionMatrix::zero(tax);
    std::unordered_map<std::string_view, size_t> index;
    for (size_t i = 0; i < m.divisions.size(); ++i) index[m.divisions[i]] = i;
    for (const auto& p : pairs) {
        auto row = index.find(p.true_code);
        if (row == index.end())
            throw EvalError("unknown true code " + p.true_code + " for record " + p.record_id);
        size_t col;
        if (p.predicted_code == kOthers) {
            col = m.divisions.size();
        } else {
            auto it = index.find(p.predicted_code);
            if (it == index.end())
                throw EvalError("unknown predicted code " + p.predicted_code + " for record " +
                                p.record_id);
            col = it->second;
        }
        ++m.cells[row->second][col];
    }
    return m;
}

// Per-class precision: TP / column sum. A class never predicted has no
// defined precision; `others` is a sink column, not a class.
inline std::map<std::string, std::optional<double>> precision_scores(const ConfusionMatrix& m) {
    std::map<std::string, std::optional<double>> out;
    for (size_t j = 0; j < m.divisions.size(); ++j) {
        int64_t predicted = m.col_sum(j);
        if (predicted == 0) out[m.divisions[j]] = std::nullopt;
        else out[m.divisions[j]] = static_cast<double>(m.cells[j][j]) / predicted;
    }
    return out;
}

struct Aggregates {
    double macro = 0.0;
    double std_dev = 0.0;  // sample (n-1) standard deviation
    bool std_dev_degenerate = false;
    std::optional<double> micro;  // needs a confusion matrix
    std::vector<std::string> included;
    std::vector<std::pair<std::string, std::string>> excluded;  // code -> reason
};

// Aggregation over per-class precisions. Classes below min_support or never
// predicted are excluded from every aggregate; the micro average pools TP and
// predicted counts over the included columns only.
inline Aggregates aggregate(const std::map<std::string, std::optional<double>>& precision,
                            const std::map<std::string, int64_t>& support, int min_support = 20,
                            const ConfusionMatrix* matrix = nullptr) {
    Aggregates agg;
    std::map<std::string, int64_t> sup = support;
    for (const auto& [code, p] : precision)
        if (!sup.count(code)) sup[code] = 0;
    std::vector<double> values;
    for (const auto& [code, n] : sup) {
        auto it = precision.find(code);
        bool defined = it != precision.end() && it->second.has_value();
        if (n == 0 && !defined) continue;
        if (n < min_support) {
            agg.excluded.emplace_back(code, "support " + std::to_string(n) + " < " +
                                                std::to_string(min_support));
        } else if (!defined) {
            agg.excluded.emplace_back(code, "never predicted");
        } else {
            agg.included.push_back(code);
            values.push_back(*it->second);
        }
    }
    if (values.empty()) throw EvalError("no classes left to aggregate");

    double sum = 0.0;
    for (double v : values) sum += v;
    agg.macro = sum / values.size();
    if (values.size() == 1) {
        agg.std_dev = 0.0;
        agg.std_dev_degenerate = true;
    } else {
        double ss = 0.0;
        for (double v : values) ss += (v - agg.macro) * (v - agg.macro);
        agg.std_dev = std::sqrt(ss / (values.size() - 1));
    }

    if (matrix) {
        int64_t tp = 0, predicted = 0;
        for (const auto& code : agg.included) {
            auto idx = matrix->index_of(code);
            if (!idx) throw EvalError("aggregate: code " + code + " missing from matrix");
            tp += matrix->cells[*idx][*idx];
            predicted += matrix->col_sum(*idx);
        }
        agg.micro = predicted == 0 ? 0.0 : static_cast<double>(tp) / predicted;
    }
    return agg;
}

struct EvaluationReport {
    MatchMode match_mode = MatchMode::stratum;
    int min_support = 20;
    ConfusionMatrix confusion;
    std::map<std::string, std::string> labels;  // division code -> label
    std::map<std::string, std::optional<double>> per_class_precision;
    std::map<std::string, int64_t> support;          // true-label counts per division
    std::map<std::string, int64_t> predicted_count;  // per division plus kOthers
    std::vector<std::string> included_classes;
    std::vector<std::pair<std::string, std::string>> excluded_classes;
    double macro_precision = 0.0;
    double micro_precision = 0.0;  // pooled over included columns
    // Pooled over everything, `others` included: equals plain accuracy.
    double micro_precision_unfiltered = 0.0;
    double std_dev = 0.0;
    bool std_dev_degenerate = false;

    bool operator==(const EvaluationReport&) const = default;
};

inline EvaluationReport evaluate_run(const std::vector<PredictionRow>& predictions,
                                     const std::vector<MetadataRecord>& records,
                                     const Taxonomy& tax, MatchMode match_mode = MatchMode::stratum,
                                     int min_support = 20) {
    std::unordered_map<std::string_view, const MetadataRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    std::vector<LabeledPrediction> pairs;
    pairs.reserve(predictions.size());
    for (const auto& row : predictions) {
        auto it = by_id.find(row.record_id);
        if (it == by_id.end())
            throw EvalError("prediction for unknown record id: " + row.record_id);
        const MetadataRecord& rec = *it->second;
        auto stratum = stratum_of(rec, tax);
        if (!stratum) throw EvalError("record " + rec.id + " has no stratum in this taxonomy");
        LabeledPrediction lp;
        lp.record_id = rec.id;
        lp.true_code = *stratum;
        lp.predicted_code = row.prediction.codes.empty() ? std::string(kOthers)
                                                        : row.prediction.codes.front();
        for (const auto& gold : rec.gold_codes) {
            std::string div = gold.substr(0, 2);
            if (tax.has_division(div)) lp.gold_codes.push_back(div);
        }
        if (match_mode == MatchMode::any_gold && lp.predicted_code != lp.true_code) {
            for (const auto& g : lp.gold_codes)
                if (g == lp.predicted_code) {
                    lp.predicted_code = lp.true_code;
                    break;
                }
        }
        pairs.push_back(std::move(lp));
    }

    EvaluationReport report;
    report.match_mode = match_mode;
    report.min_support = min_support;
    report.confusion = confusion_matrix(pairs, tax);
    for (const auto& d : tax.divisions()) report.labels[d.code] = d.label;
    report.per_class_precision = precision_scores(report.confusion);
    for (size_t i = 0; i < report.confusion.divisions.size(); ++i) {
        report.support[report.confusion.divisions[i]] = report.confusion.row_sum(i);
        report.predicted_count[report.confusion.divisions[i]] = report.confusion.col_sum(i);
    }
    report.predicted_count[std::string(kOthers)] =
        report.confusion.col_sum(report.confusion.divisions.size());

    Aggregates agg =
        aggregate(report.per_class_precision, report.support, min_support, &report.confusion);
    report.included_classes = std::move(agg.included);
    report.excluded_classes = std::move(agg.excluded);
    report.macro_precision = agg.macro;
    report.micro_precision = agg.micro.value_or(0.0);
    report.std_dev = agg.std_dev;
    report.std_dev_degenerate = agg.std_dev_degenerate;
    int64_t total = report.confusion.total();
    report.micro_precision_unfiltered =
        total == 0 ? 0.0 : static_cast<double>(report.confusion.diagonal_sum()) / total;
    return report;
}

// Builds a report directly from published per-class precisions and supports,
// with an empty confusion matrix. Lets stored score tables be aggregated and
// compared through the same path as live runs.
inline EvaluationReport report_from_scores(
    const std::map<std::string, std::optional<double>>& precision,
    const std::map<std::string, int64_t>& support, const Taxonomy& tax, int min_support = 20) {
    EvaluationReport report;
    report.min_support = min_support;
    report.confusion = ConfusionMatrix::zero(tax);
    for (const auto& d : tax.divisions()) report.labels[d.code] = d.label;
    report.per_class_precision = precision;
    for (const auto& d : tax.divisions())
        if (!report.per_class_precision.count(d.code))
            report.per_class_precision[d.code] = std::nullopt;
    report.support = support;
    // Dense maps across the taxonomy, so a written report reads back equal.
    for (const auto& d : tax.divisions()) {
        report.support.emplace(d.code, 0);
        report.predicted_count[d.code] = 0;
    }
    report.predicted_count[std::string(kOthers)] = 0;
    Aggregates agg = aggregate(report.per_class_precision, report.support, min_support, nullptr);
    report.included_classes = std::move(agg.included);
    report.excluded_classes = std::move(agg.excluded);
    report.macro_precision = agg.macro;
    report.std_dev = agg.std_dev;
    report.std_dev_degenerate = agg.std_dev_degenerate;
    return report;
}

namespace detail {

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
    if (res.ec != std::errc{}) throw Error("number formatting failed");
    return std::string(buf, res.ptr);
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
    nlohmann::ordered_json j;
    j["match_mode"] = to_string(r.match_mode);
    j["min_support"] = r.min_support;
    j["total"] = r.confusion.total();
    auto& classes = j["per_class"] = nlohmann::ordered_json::array();
    for (const auto& [code, prec] : r.per_class_precision) {
        nlohmann::ordered_json c;
        c["code"] = code;
        auto lab = r.labels.find(code);
        c["label"] = lab == r.labels.end() ? "" : lab->second;
        auto sup = r.support.find(code);
        c["support"] = sup == r.support.end() ? 0 : sup->second;
        auto pred = r.predicted_count.find(code);
        c["predicted"] = pred == r.predicted_count.end() ? 0 : pred->second;
        if (prec) c["precision"] = *prec;
        else c["precision"] = nullptr;
        classes.push_back(std::move(c));
    }
    auto others = r.predicted_count.find(std::string(kOthers));
    j["others_predicted"] = others == r.predicted_count.end() ? 0 : others->second;
    j["included_classes"] = r.included_classes;
    auto& excluded = j["excluded_classes"] = nlohmann::ordered_json::array();
    for (const auto& [code, reason] : r.excluded_classes)
        excluded.push_back({{"code", code}, {"reason", reason}});
    j["macro_precision"] = r.macro_precision;
    j["micro_precision"] = r.micro_precision;
    j["micro_precision_unfiltered"] = r.micro_precision_unfiltered;
    j["std_dev"] = r.std_dev;
    j["std_dev_degenerate"] = r.std_dev_degenerate;
    j["confusion"] = {{"divisions", r.confusion.divisions}, {"cells", r.confusion.cells}};
    return j;
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
    try {
        EvaluationReport r;
        r.match_mode = match_mode_from_string(j.at("match_mode").get<std::string>());
        r.min_support = j.at("min_support").get<int>();
        for (const auto& c : j.at("per_class")) {
            std::string code = c.at("code").get<std::string>();
            r.labels[code] = c.at("label").get<std::string>();
            r.support[code] = c.at("support").get<int64_t>();
            r.predicted_count[code] = c.at("predicted").get<int64_t>();
            if (c.at("precision").is_null()) r.per_class_precision[code] = std::nullopt;
            else r.per_class_precision[code] = c.at("precision").get<double>();
        }
        r.predicted_count[std::string(kOthers)] = j.at("others_predicted").get<int64_t>();
        r.included_classes = j.at("included_classes").get<std::vector<std::string>>();
        for (const auto& e : j.at("excluded_classes"))
            r.excluded_classes.emplace_back(e.at("code").get<std::string>(),
                                            e.at("reason").get<std::string>());
        r.macro_precision = j.at("macro_precision").get<double>();
        r.micro_precision = j.at("micro_precision").get<double>();
        r.micro_precision_unfiltered = j.at("micro_precision_unfiltered").get<double>();
        r.std_dev = j.at("std_dev").get<double>();
        r.std_dev_degenerate = j.at("std_dev_degenerate").get<bool>();
        r.confusion.divisions = j.at("confusion").at("divisions").get<std::vector<std::string>>();
        r.confusion.cells =
            j.at("confusion").at("cells").get<std::vector<std::vector<int64_t>>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad report JSON: ") + e.what());
    }
}

enum class ReportFormat { markdown, csv, json };

inline ReportFormat report_format_from_string(std::string_view s) {
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    throw ConfigError("unsupported report format: " + std::string(s));
}

inline std::string render_report(const EvaluationReport& r, ReportFormat format) {
    if (format == ReportFormat::json) return report_to_json(r).dump(2) + "\n";

    if (format == ReportFormat::csv) {
        // Confusion grid: rows are true divisions, columns predicted.
        std::string out = "true\\predicted";
        for (const auto& code : r.confusion.divisions) out += "," + code;
        out += ",";
        out += kOthers;
        out += "\n";
        for (size_t i = 0; i < r.confusion.divisions.size(); ++i) {
            out += r.confusion.divisions[i];
            for (int64_t v : r.confusion.cells[i]) out += "," + std::to_string(v);
            out += "\n";
        }
        return out;
    }

    std::string out = "# Evaluation report\n\n";
    out += "Match mode: " + to_string(r.match_mode) +
           ". Min support: " + std::to_string(r.min_support) +
           ". Records evaluated: " + std::to_string(r.confusion.total()) + ".\n\n";
    out += "| Code | Division | Support | Predicted | Precision | In aggregates |\n";
    out += "|------|----------|---------|-----------|-----------|---------------|\n";
    std::map<std::string, std::string> excluded_reason(r.excluded_classes.begin(),
                                                       r.excluded_classes.end());
    for (const auto& [code, prec] : r.per_class_precision) {
        auto sup = r.support.find(code);
        auto pred = r.predicted_count.find(code);
        int64_t support = sup == r.support.end() ? 0 : sup->second;
        int64_t predicted = pred == r.predicted_count.end() ? 0 : pred->second;
        if (support == 0 && predicted == 0) continue;
        auto lab = r.labels.find(code);
        out += "| " + code + " | " + (lab == r.labels.end() ? "" : lab->second) + " | " +
               std::to_string(support) + " | " + std::to_string(predicted) + " | " +
               (prec ? detail::format_fixed(*prec, 4) : "-") + " | " +
               (excluded_reason.count(code) ? "no" : "yes") + " |\n";
    }
    out += "| - | Macro Average | - | - | " + detail::format_fixed(r.macro_precision, 4) +
           " | - |\n";
    out += "| - | Micro Average | - | - | " + detail::format_fixed(r.micro_precision, 4) +
           " | - |\n";
    out += "| - | Micro Average (all classes) | - | - | " +
           detail::format_fixed(r.micro_precision_unfiltered, 4) + " | - |\n";
    out += "| - | Standard Deviation | - | - | " + detail::format_fixed(r.std_dev, 4) + " | - |\n";
    auto others = r.predicted_count.find(std::string(kOthers));
    int64_t others_predicted = others == r.predicted_count.end() ? 0 : others->second;
    out += "\nPredictions outside the vocabulary (" + std::string(kOthers) +
           "): " + std::to_string(others_predicted) + ".\n";
    if (!r.excluded_classes.empty()) {
        out += "\nExcluded from aggregates:\n";
        for (const auto& [code, reason] : r.excluded_classes)
            out += "- " + code + ": " + reason + "\n";
    }
    if (r.std_dev_degenerate)
        out += "\nStandard deviation is reported as 0: only one class was aggregated.\n";
    return out;
}

}  // namespace annotator
