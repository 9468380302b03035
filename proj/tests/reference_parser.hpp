#pragma once

// Self-contained reimplementation of the reply parsing contract, written as
// plain index walks with no code shared with the library. Oracle tests demand
// byte-for-byte agreement between this and annotator::parse_response.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace refparse {

inline bool ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char lower(char c) { return c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c; }

inline std::string normalize(const std::string& token) {
    std::string out;
    bool pending = false;
    for (char raw : token) {
        char c = lower(raw);
        if (ws(c)) {
            pending = true;
            continue;
        }
        if (pending && !out.empty()) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    for (;;) {
        while (!out.empty() && out.back() == ' ') out.pop_back();
        if (!out.empty() && (out.back() == '.' || out.back() == ',' || out.back() == ';' ||
                             out.back() == ':')) {
            out.pop_back();
            continue;
        }
        break;
    }
    return out;
}

inline size_t find_last_marker(const std::string& s) {
    const std::string m = "categories:";
    size_t best = std::string::npos;
    if (s.size() < m.size()) return best;
    for (size_t i = 0; i + m.size() <= s.size(); ++i) {
        bool hit = true;
        for (size_t j = 0; j < m.size(); ++j)
            if (lower(s[i + j]) != m[j]) {
                hit = false;
                break;
            }
        if (hit) best = i;
    }
    return best;
}

// Everything through the last marker goes, then any leading line whose
// trimmed text ends in a colon. The survivor keeps its leading whitespace.
inline std::string strip_preamble(const std::string& raw) {
    std::string s = raw;
    size_t marker = find_last_marker(s);
    if (marker != std::string::npos) s = s.substr(marker + 11);
    for (;;) {
        size_t start = 0;
        while (start < s.size() && ws(s[start])) ++start;
        size_t eol = s.find('\n', start);
        size_t b = start;
        size_t e = eol == std::string::npos ? s.size() : eol;
        while (b < e && ws(s[b])) ++b;
        while (e > b && ws(s[e - 1])) --e;
        if (b == e || s[e - 1] != ':') return s;
        if (eol == std::string::npos) return "";
        s = s.substr(eol + 1);
    }
}

struct ReferencePrediction {
    std::vector<std::string> codes;
    std::vector<std::string> dropped;
    std::string shape;  // slash | numbered | empty
};

inline ReferencePrediction reference_parse(const std::string& raw,
                                           const std::map<std::string, std::string>& label_to_code) {
    ReferencePrediction p;
    std::string body = strip_preamble(raw);

    std::vector<std::string> lines;
    {
        std::string cur;
        for (size_t i = 0; i <= body.size(); ++i) {
            if (i == body.size() || body[i] == '\n') {
                bool blank = true;
                for (char c : cur)
                    if (!ws(c)) {
                        blank = false;
                        break;
                    }
                if (!blank) lines.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(body[i]);
            }
        }
    }

    // Index just past "<ws><digits>." when the line starts that way.
    auto prefix_end = [](const std::string& line) -> size_t {
        size_t i = 0;
        while (i < line.size() && ws(line[i])) ++i;
        size_t d = i;
        while (d < line.size() && line[d] >= '0' && line[d] <= '9') ++d;
        if (d == i || d >= line.size() || line[d] != '.') return std::string::npos;
        return d + 1;
    };

    std::vector<std::string> tokens;
    if (lines.empty()) {
        p.shape = "empty";
    } else if (prefix_end(lines.front()) != std::string::npos) {
        p.shape = "numbered";
        for (const auto& line : lines) {
            size_t cut = prefix_end(line);
            tokens.push_back(cut == std::string::npos ? line : line.substr(cut));
        }
    } else {
        p.shape = "slash";
        std::string cur;
        for (size_t i = 0; i <= body.size(); ++i) {
            if (i == body.size() || body[i] == '/') {
                tokens.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(body[i]);
            }
        }
    }

    for (const auto& token : tokens) {
        std::string norm = normalize(token);
        if (norm.empty()) continue;
        auto it = label_to_code.find(norm);
        if (it == label_to_code.end()) {
            p.dropped.push_back(norm);
            continue;
        }
        bool seen = false;
        for (const auto& c : p.codes)
            if (c == it->second) {
                seen = true;
                break;
            }
        if (!seen) p.codes.push_back(it->second);
    }
    if (p.codes.size() > 3) p.codes.resize(3);
    if (p.codes.empty()) p.codes.push_back("others");
    return p;
}

// Randomized reply generator covering both reply shapes, preamble styles,
// stray markers, case and whitespace noise, and off-vocabulary tokens.
inline std::string random_reply(std::mt19937_64& rng, const std::vector<std::string>& labels) {
    auto chance = [&](int pct) { return static_cast<int>(rng() % 100) < pct; };
    auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };

    static const std::vector<std::string> garbage = {
        "Astrology",  "data science", "05",          "42",
        "unknown",    "N/A",          "science",     "earth",
        "the humanities", "music theory", "",        "  ",
        "environmental  science", "deep learning"};

    static const std::vector<std::string> preambles = {
        "",
        "",
        "Based on the provided dataset title and description, the relevant categories from the "
        "Australian and New Zealand Standard Research Classification (ANZSRC) are:\n\n",
        "Sure! The categories are:\n",
        "Here is my answer:\nNote that this is a guess:\n",
        "Categories: ",
        "CATEGORIES:",
        "The dataset falls under Categories:\n",
        "categories:",
    };

    auto decorate = [&](std::string t) {
        if (chance(30)) {
            bool boundary = true;
            for (auto& c : t) {
                if (c == ' ' || c == ',') {
                    boundary = true;
                    continue;
                }
                if (boundary && c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
                boundary = false;
            }
        }
        if (chance(10))
            for (auto& c : t)
                if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
        if (chance(20)) t = "  " + t;
        if (chance(20)) t += " ";
        if (chance(15)) t += ".";
        else if (chance(10)) t += ";";
        if (chance(8)) {
            size_t sp = t.find(' ');
            if (sp != std::string::npos) t.insert(sp, " ");
        }
        return t;
    };

    auto token = [&]() { return decorate(chance(65) ? pick(labels) : pick(garbage)); };

    int kind = static_cast<int>(rng() % 100);
    std::string out = pick(preambles);
    if (kind < 40) {
        int n = 1 + static_cast<int>(rng() % 4);
        for (int i = 0; i < n; ++i) {
            if (i) out += chance(70) ? " / " : "/";
            out += token();
        }
        if (chance(30)) out += ".";
        if (chance(15)) out += " /";
    } else if (kind < 80) {
        if (!out.empty() && out.back() != '\n' && chance(60)) out += "\n";
        int n = 1 + static_cast<int>(rng() % 4);
        for (int i = 0; i < n; ++i) {
            bool prefixed = i == 0 || chance(80);
            if (chance(20)) out += "  ";
            if (prefixed) {
                out += std::to_string(i + 1) + ".";
                if (chance(80)) out += " ";
            }
            out += token();
            out += chance(85) ? "\n" : "\r\n";
        }
    } else if (kind < 88) {
        static const std::vector<std::string> blanks = {"",  " ",  "\n\n", "\t \r\n",
                                                        "Categories:", "The answer is:"};
        out += pick(blanks);
    } else {
        out += token();
        if (chance(40)) out += "\nextra categories: " + token();
        if (chance(30)) out += "\n1908. " + token();
    }
    return out;
}

}  // namespace refparse
