#pragma once

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "annotator/detail/hashing.hpp"
#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"
#include "annotator/prompting.hpp"

namespace annotator {

// Generation parameters sent with every request. The defaults deliberately
// cap completions at 10 tokens; three-label answers can get cut off, which
// surfaces through finish_reason rather than being hidden here.
struct GenerationParams {
    std::string model_id = "gpt-3.5-turbo";
    double temperature = 0.0;
    int n = 1;
    int max_tokens = 10;

    void validate() const {
        if (model_id.empty()) throw ConfigError("model_id must not be empty");
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (n < 1) throw ConfigError("n must be >= 1");
        if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    }

    bool operator==(const GenerationParams&) const = default;
};

struct CompletionResult {
    std::string content;  // first choice's message content, verbatim
    std::string finish_reason;
    std::string backend_id;
    bool from_cache = false;
    int64_t latency_ms = 0;

    bool operator==(const CompletionResult&) const = default;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    // Returns content + finish_reason; the gateway fills in the rest.
    virtual CompletionResult complete(const std::vector<ChatMessage>& messages,
                                      const GenerationParams& params) = 0;
    virtual std::string id() const = 0;
    // Requests actually issued (cache hits never reach the backend).
    virtual size_t calls() const = 0;
};

// Keyword-rule backend for deterministic end-to-end tests. Scans only the
// target block of the prompt (text after the last "Dataset title:"), replies
// with the first matching rule's label as "<Label>.", or "Unknown.".
class RuleMockBackend : public ChatBackend {
public:
    using Rule = std::pair<std::string, std::string>;  // keyword -> division label

    explicit RuleMockBackend(std::vector<Rule> rules) : rules_(std::move(rules)) {
        if (rules_.empty()) throw ConfigError("mock backend needs at least one rule");
    }

    // The atomic counter blocks the implicit move; carry its value across.
    RuleMockBackend(RuleMockBackend&& other) noexcept
        : rules_(std::move(other.rules_)), calls_(other.calls_.load()) {}

    // One `keyword<TAB>label` rule per line, `#` comments; order is precedence.
    static RuleMockBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open mock rules file: " + path);
        std::vector<Rule> rules;
        std::string line;
        while (std::getline(in, line)) {
            std::string_view s = detail::trim(line);
            if (s.empty() || s.front() == '#') continue;
            size_t tab = s.find('\t');
            if (tab == std::string_view::npos)
                throw ParseError("mock rules: expected keyword<TAB>label in \"" + line + "\"");
            rules.emplace_back(std::string(detail::trim(s.substr(0, tab))),
                               std::string(detail::trim(s.substr(tab + 1))));
        }
        return RuleMockBackend(std::move(rules));
    }

    CompletionResult complete(const std::vector<ChatMessage>& messages,
                              const GenerationParams&) override {
        ++calls_;
        std::string text;
        for (const auto& m : messages) text += m.content;
        size_t pos = detail::rfind_ci(text, "Dataset title:");
        std::string_view target = pos == std::string::npos
                                      ? std::string_view(text)
                                      : std::string_view(text).substr(pos);
        for (const auto& [keyword, label] : rules_)
            if (detail::contains_ci(target, keyword)) return {label + ".", "stop"};
        return {"Unknown.", "stop"};
    }

    std::string id() const override { return "mock"; }
    size_t calls() const override { return calls_; }

    const std::vector<Rule>& rules() const { return rules_; }

private:
    std::vector<Rule> rules_;
    std::atomic<size_t> calls_{0};
};

// Serves recorded responses keyed by a hash of the prompt text, for
// regression tests against real replies without network access.
class ReplayBackend : public ChatBackend {
public:
    struct Entry {
        std::string content;
        std::string finish_reason = "stop";
    };

    explicit ReplayBackend(std::unordered_map<std::string, Entry> entries)
        : entries_(std::move(entries)) {}

    ReplayBackend(ReplayBackend&& other) noexcept
        : entries_(std::move(other.entries_)), calls_(other.calls_.load()) {}

    // JSON object: { "<sha256 of prompt text>": {"content": ..., "finish_reason": ...}, ... }
    static ReplayBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open replay fixture: " + path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("replay fixture " + path + ": " + e.what());
        }
        std::unordered_map<std::string, Entry> entries;
        for (auto it = j.begin(); it != j.end(); ++it)
            entries[it.key()] = {it.value().at("content").get<std::string>(),
                                 it.value().value("finish_reason", "stop")};
        return ReplayBackend(std::move(entries));
    }

    // Replay keys hash the concatenated message contents, so a system+user
    // split and the equivalent single message share recordings.
    static std::string prompt_key(const std::vector<ChatMessage>& messages) {
        std::string text;
        for (const auto& m : messages) text += m.content;
        return detail::sha256_hex(text);
    }

    CompletionResult complete(const std::vector<ChatMessage>& messages,
                              const GenerationParams&) override {
        ++calls_;
        std::string key = prompt_key(messages);
        auto it = entries_.find(key);
        if (it == entries_.end())
            throw BackendError(BackendError::Kind::other,
                               "replay fixture has no entry for prompt hash " + key);
        return {it->second.content, it->second.finish_reason};
    }

    std::string id() const override { return "replay"; }
    size_t calls() const override { return calls_; }

private:
    std::unordered_map<std::string, Entry> entries_;
    std::atomic<size_t> calls_{0};
};

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 1000;  // delay for attempt i is base * 2^i, +/- jitter
    double jitter_frac = 0.2;
    std::function<void(int)> sleep_ms;  // injectable for tests

    void wait(int attempt, detail::DetRng& rng) const {
        double jitter = 1.0 + jitter_frac * (2.0 * (rng.next() >> 11) * 0x1.0p-53 - 1.0);
        int delay = static_cast<int>(base_delay_ms * (1 << attempt) * jitter);
        if (sleep_ms) sleep_ms(delay);
        else std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
};

// Minimum-interval limiter: at most `rpm` request starts per minute across
// all workers. 0 disables it.
class RateLimiter {
public:
    explicit RateLimiter(int rpm = 0) : interval_ms_(rpm > 0 ? 60000 / rpm : 0) {}

    void acquire() {
        if (interval_ms_ == 0) return;
        std::unique_lock<std::mutex> lock(mu_);
        auto now = std::chrono::steady_clock::now();
        if (now < next_) {
            auto wait = next_ - now;
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
            now = std::chrono::steady_clock::now();
        }
        next_ = std::max(now, next_) + std::chrono::milliseconds(interval_ms_);
    }

private:
    int interval_ms_;
    std::mutex mu_;
    std::chrono::steady_clock::time_point next_{};
};

// Chat-completions wire protocol over HTTP. Retries rate-limit and timeout
// classes with exponential backoff; auth failures and malformed replies are
// surfaced immediately with the raw payload attached.
class HttpChatBackend : public ChatBackend {
public:
    HttpChatBackend(std::string base_url, std::string api_key, RetryPolicy retry = {},
                    int requests_per_minute = 0, int timeout_sec = 60)
        : base_url_(std::move(base_url)), api_key_(std::move(api_key)), retry_(std::move(retry)),
          limiter_(requests_per_minute), timeout_sec_(timeout_sec),
          jitter_rng_(detail::fnv1a64(base_url_)) {
        if (base_url_.empty()) throw ConfigError("http backend requires a base URL");
    }

    CompletionResult complete(const std::vector<ChatMessage>& messages,
                              const GenerationParams& params) override {
        nlohmann::json body;
        body["model"] = params.model_id;
        auto& msgs = body["messages"] = nlohmann::json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        body["temperature"] = params.temperature;
        body["n"] = params.n;
        body["max_tokens"] = params.max_tokens;
        std::string payload = body.dump();

        for (int attempt = 0;; ++attempt) {
            try {
                return attempt_once(payload);
            } catch (const BackendError& e) {
                if (!e.retryable() || attempt + 1 >= retry_.max_attempts) throw;
                std::lock_guard<std::mutex> lock(rng_mu_);
                retry_.wait(attempt, jitter_rng_);
            }
        }
    }

    std::string id() const override { return "http:" + base_url_; }
    size_t calls() const override { return calls_; }

private:
    CompletionResult attempt_once(const std::string& payload) {
        limiter_.acquire();
        ++calls_;
        httplib::Client cli(base_url_);
        cli.set_connection_timeout(timeout_sec_, 0);
        cli.set_read_timeout(timeout_sec_, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = cli.Post("/v1/chat/completions", headers, payload, "application/json");
        if (!res)
            throw BackendError(BackendError::Kind::timeout, "backend unreachable: " + base_url_);
        if (res->status == 401 || res->status == 403)
            throw BackendError(BackendError::Kind::auth,
                               "auth failure (HTTP " + std::to_string(res->status) + ")", res->body);
        if (res->status == 429)
            throw BackendError(BackendError::Kind::rate_limit, "rate limited (HTTP 429)", res->body);
        if (res->status == 408)
            throw BackendError(BackendError::Kind::timeout, "request timeout (HTTP 408)", res->body);
        if (res->status != 200)
            throw BackendError(BackendError::Kind::other,
                               "backend error (HTTP " + std::to_string(res->status) + ")", res->body);
        try {
            nlohmann::json j = nlohmann::json::parse(res->body);
            const auto& choices = j.at("choices");
            if (!choices.is_array() || choices.empty())
                throw BackendError(BackendError::Kind::malformed, "reply has no choices", res->body);
            const auto& first = choices.at(0);
            return {first.at("message").at("content").get<std::string>(),
                    first.value("finish_reason", "")};
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(BackendError::Kind::malformed,
                               std::string("malformed backend reply: ") + e.what(), res->body);
        }
    }

    std::string base_url_;
    std::string api_key_;
    RetryPolicy retry_;
    RateLimiter limiter_;
    int timeout_sec_;
    std::atomic<size_t> calls_{0};
    std::mutex rng_mu_;
    detail::DetRng jitter_rng_;
};

// Persistent completion store: one JSON file per entry under a directory,
// keyed by a hash of (backend, model, params, full message list).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string key_for(std::string_view backend_id, const GenerationParams& params,
                               const std::vector<ChatMessage>& messages) {
        nlohmann::json j;
        j["backend"] = std::string(backend_id);
        j["model"] = params.model_id;
        j["temperature"] = params.temperature;
        j["n"] = params.n;
        j["max_tokens"] = params.max_tokens;
        auto& msgs = j["messages"] = nlohmann::json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        return detail::sha256_hex(j.dump());
    }

    std::optional<CompletionResult> get(const std::string& key) {
        std::lock_guard<std::mutex> lock(mu_);
        std::filesystem::path file = dir_ / (key + ".json");
        std::ifstream in(file);
        if (!in) return std::nullopt;
        try {
            nlohmann::json j = nlohmann::json::parse(in);
            const auto& r = j.at("result");
            CompletionResult result;
            result.content = r.at("content").get<std::string>();
            result.finish_reason = r.at("finish_reason").get<std::string>();
            result.backend_id = r.at("backend_id").get<std::string>();
            result.latency_ms = r.value("latency_ms", int64_t{0});
            result.from_cache = true;
            return result;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corrupt response cache entry " + file.string() + ": " + e.what());
        }
    }

    void put(const std::string& key, const CompletionResult& result) {
        std::lock_guard<std::mutex> lock(mu_);
        nlohmann::json j;
        j["key"] = key;
        j["result"] = {{"content", result.content},
                       {"finish_reason", result.finish_reason},
                       {"backend_id", result.backend_id},
                       {"latency_ms", result.latency_ms}};
        j["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
        std::filesystem::path file = dir_ / (key + ".json");
        std::filesystem::path tmp = dir_ / (key + ".tmp");
        {
            std::ofstream out(tmp);
            if (!out) throw IoError("cannot write response cache entry " + tmp.string());
            out << j.dump() << '\n';
        }
        std::filesystem::rename(tmp, file);
    }

private:
    std::filesystem::path dir_;
    std::mutex mu_;
};

// Cache-through completion. Returned content is never post-processed here;
// parsing belongs to the response parser.
inline CompletionResult complete(const std::vector<ChatMessage>& messages,
                                 const GenerationParams& params, ChatBackend& backend,
                                 ResponseCache* cache = nullptr) {
    if (messages.empty()) throw Error("complete: message list is empty");
    params.validate();
    std::string key;
    if (cache) {
        key = ResponseCache::key_for(backend.id(), params, messages);
        if (auto hit = cache->get(key)) return *hit;
    }
    auto start = std::chrono::steady_clock::now();
    CompletionResult result = backend.complete(messages, params);
    result.backend_id = backend.id();
    result.from_cache = false;
    result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (cache) cache->put(key, result);
    return result;
}

struct BatchJob {
    std::string record_id;
    std::vector<ChatMessage> messages;
};

struct BatchOutcome {
    std::string record_id;
    std::optional<CompletionResult> result;
    std::string error;  // empty on success

    bool ok() const { return result.has_value(); }
};

// Runs jobs across `parallelism` workers. Results come back in input order
// whatever the completion order; a failing job becomes an error entry instead
// of aborting the run. Throws only when every job failed.
inline std::vector<BatchOutcome> batch_complete(const std::vector<BatchJob>& jobs,
                                                const GenerationParams& params,
                                                ChatBackend& backend, ResponseCache* cache = nullptr,
                                                int parallelism = 1) {
    if (parallelism < 1) throw Error("batch_complete: parallelism must be >= 1");
    std::vector<BatchOutcome> outcomes(jobs.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            outcomes[i].record_id = jobs[i].record_id;
            try {
                outcomes[i].result = complete(jobs[i].messages, params, backend, cache);
            } catch (const std::exception& e) {
                outcomes[i].error = e.what();
            }
        }
    };
    size_t n_workers = std::min<size_t>(parallelism, std::max<size_t>(jobs.size(), 1));
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    if (!jobs.empty()) {
        bool any_ok = false;
        for (const auto& o : outcomes) any_ok |= o.ok();
        if (!any_ok)
            throw Error("batch failed: all " + std::to_string(jobs.size()) +
                        " jobs failed; first error: " + outcomes.front().error);
    }
    return outcomes;
}

}  // namespace annotator
