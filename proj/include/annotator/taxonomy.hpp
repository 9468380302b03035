#pragma once

#include <json.hpp>

#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"

namespace annotator {

// Sentinel assigned by the response parser when no reply token matches a
// division label. Never a member of a Taxonomy.
inline constexpr std::string_view kOthers = "others";

struct Division {
    std::string code;   // two digits, "01".."22" in the shipped scheme
    std::string label;  // lowercase canonical name

    bool operator==(const Division&) const = default;
};

// Lowercases, trims, collapses internal whitespace runs and strips trailing
// sentence punctuation. Internal commas are preserved: division labels such as
// "commerce, management, tourism and services" must match whole.
inline std::string normalize_label(std::string_view text) {
    std::string s = detail::collapse_whitespace(detail::lower_ascii(text));
    for (;;) {
        while (!s.empty() && detail::is_space(s.back())) s.pop_back();
        if (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';' || s.back() == ':')) {
            s.pop_back();
            continue;
        }
        break;
    }
    return s;
}

// The controlled vocabulary: an ordered list of two-digit divisions with
// optional 4/6-digit descendants. Immutable after load; concurrent reads are
// safe from any number of workers.
class Taxonomy {
public:
    static Taxonomy from_stream(std::istream& in) {
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_text(buf.str());
    }

    static Taxonomy from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open taxonomy file: " + path);
        Taxonomy t = from_stream(in);
        if (t.scheme_id_.empty()) t.scheme_id_ = path;
        return t;
    }

    // Accepts the line-based format (`<code>\t<label>`, `#` comments) or the
    // JSON alternative, detected by a leading `{`.
    static Taxonomy from_text(std::string_view text) {
        std::string_view probe = detail::trim(text);
        if (!probe.empty() && probe.front() == '{') return from_json(probe);
        return from_tsv(text);
    }

    const std::string& scheme_id() const { return scheme_id_; }
    const std::string& version() const { return version_; }
    const std::vector<Division>& divisions() const { return divisions_; }
    const std::map<std::string, std::string>& descendants() const { return descendants_; }
    size_t size() const { return divisions_.size(); }

    bool has_division(std::string_view code) const {
        return code_index_.find(std::string(code)) != code_index_.end();
    }

    const std::string& label_of(std::string_view code) const {
        auto it = code_index_.find(std::string(code));
        if (it == code_index_.end()) throw Error("unknown division code: " + std::string(code));
        return divisions_[it->second].label;
    }

    // Exact match on the normalized label; no fuzzy or substring matching.
    std::optional<std::string> match_label(std::string_view text) const {
        auto it = label_index_.find(normalize_label(text));
        if (it == label_index_.end()) return std::nullopt;
        return it->second;
    }

    // First two digits of a 2/4/6-digit code; the prefix must be a division.
    std::string division_of(std::string_view code) const {
        if (!detail::all_digits(code) || (code.size() != 2 && code.size() != 4 && code.size() != 6))
            throw Error("not a 2/4/6-digit code: " + std::string(code));
        std::string prefix(code.substr(0, 2));
        if (!has_division(prefix))
            throw Error("unknown division prefix \"" + prefix + "\" in code " + std::string(code));
        return prefix;
    }

private:
    static Taxonomy from_tsv(std::string_view text) {
        Taxonomy t;
        size_t line_no = 0;
        for (std::string_view line : detail::split(text, '\n')) {
            ++line_no;
            std::string_view stripped = detail::trim(line);
            if (stripped.empty() || stripped.front() == '#') continue;
            size_t tab = stripped.find('\t');
            if (tab == std::string_view::npos)
                throw ParseError("taxonomy line " + std::to_string(line_no) + ": expected <code>\\t<label>");
            std::string code(detail::trim(stripped.substr(0, tab)));
            std::string label(detail::trim(stripped.substr(tab + 1)));
            if (code.size() == 2) {
                t.add_division(code, label, line_no);
            } else if (code.size() == 4 || code.size() == 6) {
                t.add_descendant(code, line_no);
            } else {
                throw ParseError("taxonomy line " + std::to_string(line_no) + ": code \"" + code +
                                 "\" is not 2, 4 or 6 digits");
            }
        }
        t.finalize();
        return t;
    }

    static Taxonomy from_json(std::string_view text) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("taxonomy JSON: ") + e.what());
        }
        Taxonomy t;
        t.scheme_id_ = j.value("scheme_id", "");
        t.version_ = j.value("version", "");
        if (!j.contains("divisions") || !j["divisions"].is_array())
            throw ParseError("taxonomy JSON: missing \"divisions\" array");
        for (const auto& d : j["divisions"])
            t.add_division(d.at("code").get<std::string>(), d.at("label").get<std::string>(), 0);
        if (j.contains("descendants")) {
            for (const auto& d : j["descendants"]) {
                std::string code = d.at("code").get<std::string>();
                if (d.contains("parent") && d["parent"].get<std::string>() != code.substr(0, 2))
                    throw ParseError("taxonomy JSON: descendant " + code +
                                     " declares parent that is not its 2-digit prefix");
                t.add_descendant(code, 0);
            }
        }
        t.finalize();
        return t;
    }

    void add_division(const std::string& code, std::string_view raw_label, size_t line_no) {
        std::string label = normalize_label(raw_label);
        std::string where = line_no ? " (line " + std::to_string(line_no) + ")" : "";
        if (!detail::all_digits(code) || code.size() != 2)
            throw ParseError("division code \"" + code + "\" is not two digits" + where);
        if (label.empty()) throw ParseError("division " + code + " has an empty label" + where);
        if (code_index_.count(code)) throw ParseError("duplicate division code " + code + where);
        if (label_index_.count(label)) throw ParseError("duplicate division label \"" + label + "\"" + where);
        code_index_[code] = divisions_.size();
        label_index_[label] = code;
        divisions_.push_back({code, label});
    }

    void add_descendant(const std::string& code, size_t line_no) {
        std::string where = line_no ? " (line " + std::to_string(line_no) + ")" : "";
        if (!detail::all_digits(code) || (code.size() != 4 && code.size() != 6))
            throw ParseError("descendant code \"" + code + "\" is not 4 or 6 digits" + where);
        if (descendants_.count(code)) throw ParseError("duplicate descendant code " + code + where);
        descendants_[code] = code.substr(0, 2);
    }

    // Parents may appear after their descendants in the file, so membership is
    // checked once the whole source is read.
    void finalize() {
        if (divisions_.empty()) throw ParseError("taxonomy declares no divisions");
        for (const auto& [code, parent] : descendants_)
            if (!has_division(parent))
                throw ParseError("descendant " + code + " has unknown parent division " + parent);
    }

    std::string scheme_id_;
    std::string version_;
    std::vector<Division> divisions_;
    std::map<std::string, std::string> descendants_;
    std::unordered_map<std::string, size_t> code_index_;
    std::unordered_map<std::string, std::string> label_index_;
};

}  // namespace annotator
