#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "annotator/detail/hashing.hpp"
#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"
#include "annotator/evaluation.hpp"
#include "annotator/gateway.hpp"
#include "annotator/prompting.hpp"

namespace annotator {

// One run = one RunConfig. Every knob that affects output bytes lives here,
// and the run id is derived from the serialized snapshot, so equal configs
// share a run directory and caches.
struct RunConfig {
    std::string taxonomy_path;
    std::string corpus_path;
    std::string template_path;  // empty = built-in template

    Strategy strategy = Strategy::random;
    RandomMode random_mode = RandomMode::per_target;
    int k = 3;
    uint64_t seed = 0;
    int description_budget = 4000;
    bool system_split = false;

    int test_per_division = 100;
    int cap_per_division = 100;

    GenerationParams params;
    std::string backend = "mock";  // http | replay | mock
    std::string base_url;          // http backend; ANNOTATOR_BASE_URL fallback
    std::string replay_path;
    std::string mock_rules_path;
    int parallelism = 1;
    int requests_per_minute = 0;

    std::string embedding_provider = "local";  // local | remote
    std::string embedding_model = "text-embedding-ada-002";

    std::string output_dir = "runs";
    std::string cache_dir;  // empty = <run dir>/cache

    MatchMode match_mode = MatchMode::stratum;
    int min_support = 20;

    bool strict = false;

    // Environment-only secret; never read from files, never serialized.
    std::string api_key;

    void validate() const {
        params.validate();
        if (k < 1) throw ConfigError("k must be >= 1");
        if (test_per_division < 1) throw ConfigError("test_per_division must be >= 1");
        if (cap_per_division < 1) throw ConfigError("cap_per_division must be >= 1");
        if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
        if (description_budget < 1) throw ConfigError("description_budget must be >= 1");
        if (min_support < 0) throw ConfigError("min_support must be >= 0");
        if (backend != "http" && backend != "replay" && backend != "mock")
            throw ConfigError("unknown backend \"" + backend + "\" (expected http|replay|mock)");
        if (backend == "replay" && replay_path.empty())
            throw ConfigError("replay backend requires replay_path");
        if (backend == "mock" && mock_rules_path.empty())
            throw ConfigError("mock backend requires mock_rules_path");
        if (embedding_provider != "local" && embedding_provider != "remote")
            throw ConfigError("unknown embedding_provider \"" + embedding_provider +
                              "\" (expected local|remote)");
    }
};

// Snapshot of everything that shapes the outputs. The api key is deliberately
// absent: it must never reach a manifest or a run id.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["taxonomy_path"] = c.taxonomy_path;
    j["corpus_path"] = c.corpus_path;
    j["template_path"] = c.template_path;
    j["strategy"] = std::string(to_string(c.strategy));
    j["random_mode"] = std::string(to_string(c.random_mode));
    j["k"] = c.k;
    j["seed"] = c.seed;
    j["description_budget"] = c.description_budget;
    j["system_split"] = c.system_split;
    j["test_per_division"] = c.test_per_division;
    j["cap_per_division"] = c.cap_per_division;
    j["model"] = c.params.model_id;
    j["temperature"] = c.params.temperature;
    j["n"] = c.params.n;
    j["max_tokens"] = c.params.max_tokens;
    j["backend"] = c.backend;
    j["base_url"] = c.base_url;
    j["replay_path"] = c.replay_path;
    j["mock_rules_path"] = c.mock_rules_path;
    j["parallelism"] = c.parallelism;
    j["requests_per_minute"] = c.requests_per_minute;
    j["embedding_provider"] = c.embedding_provider;
    j["embedding_model"] = c.embedding_model;
    j["output_dir"] = c.output_dir;
    j["cache_dir"] = c.cache_dir;
    j["match_mode"] = to_string(c.match_mode);
    j["min_support"] = c.min_support;
    return j;
}

// The run id ignores knobs that cannot change output bytes (parallelism,
// rate limiting, strictness), so reruns land in the same directory.
inline std::string run_id_for(const RunConfig& c) {
    nlohmann::ordered_json j = config_to_json(c);
    j.erase("parallelism");
    j.erase("requests_per_minute");
    j.erase("output_dir");
    j.erase("cache_dir");
    return detail::sha256_hex(j.dump()).substr(0, 12);
}

namespace detail {

// key = value lines, # comments, optional double quotes around the value.
inline std::map<std::string, std::string> parse_config_text(std::istream& in,
                                                            const std::string& origin) {
    std::map<std::string, std::string> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = trim(line);
        if (s.empty() || s.front() == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key(trim(s.substr(0, eq)));
        std::string_view value = trim(s.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (out.count(key))
            throw ConfigError(origin + ": duplicate key " + key);
        out[key] = std::string(value);
    }
    return out;
}

inline int to_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: \"" + value + "\"");
    }
}

inline uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an unsigned integer: \"" + value + "\"");
    }
}

inline double to_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: \"" + value + "\"");
    }
}

inline bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key " + key + ": not a boolean: \"" + value + "\"");
}

}  // namespace detail

// Applies key/value pairs onto a config. Unknown keys are errors so typos in
// a config file cannot silently fall back to defaults.
inline void apply_config_pairs(RunConfig& c, const std::map<std::string, std::string>& pairs) {
    for (const auto& [key, value] : pairs) {
        if (key == "api_key" || key == "ANNOTATOR_API_KEY")
            throw ConfigError("api keys must come from the environment, not config files");
        if (key == "taxonomy_path") c.taxonomy_path = value;
        else if (key == "corpus_path") c.corpus_path = value;
        else if (key == "template_path") c.template_path = value;
        else if (key == "strategy") c.strategy = strategy_from_string(value);
        else if (key == "random_mode") c.random_mode = random_mode_from_string(value);
        else if (key == "k") c.k = detail::to_int(key, value);
        else if (key == "seed") c.seed = detail::to_u64(key, value);
        else if (key == "description_budget") c.description_budget = detail::to_int(key, value);
        else if (key == "system_split") c.system_split = detail::to_bool(key, value);
        else if (key == "test_per_division") c.test_per_division = detail::to_int(key, value);
        else if (key == "cap_per_division") c.cap_per_division = detail::to_int(key, value);
        else if (key == "model") c.params.model_id = value;
        else if (key == "temperature") c.params.temperature = detail::to_double(key, value);
        else if (key == "n") c.params.n = detail::to_int(key, value);
        else if (key == "max_tokens") c.params.max_tokens = detail::to_int(key, value);
        else if (key == "backend") c.backend = value;
        else if (key == "base_url") c.base_url = value;
        else if (key == "replay_path") c.replay_path = value;
        else if (key == "mock_rules_path") c.mock_rules_path = value;
        else if (key == "parallelism") c.parallelism = detail::to_int(key, value);
        else if (key == "requests_per_minute") c.requests_per_minute = detail::to_int(key, value);
        else if (key == "embedding_provider") c.embedding_provider = value;
        else if (key == "embedding_model") c.embedding_model = value;
        else if (key == "output_dir") c.output_dir = value;
        else if (key == "cache_dir") c.cache_dir = value;
        else if (key == "match_mode") c.match_mode = match_mode_from_string(value);
        else if (key == "min_support") c.min_support = detail::to_int(key, value);
        else if (key == "strict") c.strict = detail::to_bool(key, value);
        else throw ConfigError("unknown config key: " + key);
    }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    apply_config_pairs(c, detail::parse_config_text(in, path));
}

// ANNOTATOR_API_KEY is the only source for the key. ANNOTATOR_BASE_URL fills
// base_url when neither config file nor flag set one.
inline void apply_environment(RunConfig& c) {
    if (const char* key = std::getenv("ANNOTATOR_API_KEY")) c.api_key = key;
    if (c.base_url.empty())
        if (const char* url = std::getenv("ANNOTATOR_BASE_URL")) c.base_url = url;
}

}  // namespace annotator
