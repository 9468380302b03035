#pragma once

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "annotator/corpus.hpp"
#include "annotator/detail/hashing.hpp"
#include "annotator/detail/strings.hpp"
#include "annotator/errors.hpp"

namespace annotator {

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_id;
    std::string model_id;

    size_t dim() const { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

// dot(a,b) / (|a||b|), clamped into [-1,1] against rounding overshoot.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw Error("cosine: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::min(1.0, std::max(-1.0, c));
}

// Ids of the k most similar pool entries, descending similarity, ties broken
// by ascending record id. Exact full-pool scan; pool sizes here are small
// enough that nothing approximate is warranted.
inline std::vector<std::string> top_k_relevant(
    const EmbeddingVector& query, const std::vector<std::pair<std::string, EmbeddingVector>>& pool,
    size_t k) {
    if (k < 1) throw Error("top_k_relevant: k must be >= 1");
    if (pool.empty()) return {};
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(pool.size());
    for (const auto& [id, vec] : pool) scored.emplace_back(cosine(query, vec), &id);
    std::sort(scored.begin(), scored.end(), [](const auto& lhs, const auto& rhs) {
        if (lhs.first != rhs.first) return lhs.first > rhs.first;
        return *lhs.second < *rhs.second;
    });
    std::vector<std::string> ids;
    ids.reserve(std::min(k, scored.size()));
    for (size_t i = 0; i < scored.size() && i < k; ++i) ids.push_back(*scored[i].second);
    return ids;
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(std::string_view text) = 0;
    virtual std::string provider_id() const = 0;
    virtual std::string model_id() const = 0;
    // Number of actual embedding computations (cache hits excluded).
    virtual size_t calls() const = 0;
};

// Deterministic offline provider: feature hashing of lowercased character
// 3-5-grams into 256 dimensions, L2-normalized. Equal texts map to equal
// vectors; no semantic claims beyond that.
class LocalHashingProvider : public EmbeddingProvider {
public:
    static constexpr size_t kDim = 256;

    EmbeddingVector embed(std::string_view text) override {
        if (detail::trim(text).empty()) throw Error("embed: empty text");
        ++calls_;
        std::string s = detail::lower_ascii(text);
        std::vector<double> acc(kDim, 0.0);
        auto add = [&](std::string_view gram) {
            uint64_t h = detail::fnv1a64(gram);
            double sign = ((h >> 8) & 1) ? 1.0 : -1.0;
            acc[h % kDim] += sign;
        };
        if (s.size() < 3) {
            add(s);
        } else {
            for (size_t n = 3; n <= 5; ++n)
                for (size_t i = 0; i + n <= s.size(); ++i) add(std::string_view(s).substr(i, n));
        }
        double norm2 = 0.0;
        for (double v : acc) norm2 += v * v;
        if (norm2 == 0.0) {  // all contributions cancelled; fall back to one bucket
            acc[detail::fnv1a64(s) % kDim] = 1.0;
            norm2 = 1.0;
        }
        double inv = 1.0 / std::sqrt(norm2);
        for (double& v : acc) v *= inv;
        return {std::move(acc), provider_id(), model_id()};
    }

    std::string provider_id() const override { return "local-hash"; }
    std::string model_id() const override { return "ngram345-256"; }
    size_t calls() const override { return calls_; }

private:
    std::atomic<size_t> calls_{0};
};

// OpenAI-compatible embeddings endpoint (POST {base_url}/v1/embeddings).
// The base URL is an origin like "https://api.example.com"; the API key goes
// into the Authorization header.
class RemoteEmbeddingProvider : public EmbeddingProvider {
public:
    RemoteEmbeddingProvider(std::string base_url, std::string model, std::string api_key,
                            int timeout_sec = 30)
        : base_url_(std::move(base_url)), model_(std::move(model)), api_key_(std::move(api_key)),
          timeout_sec_(timeout_sec) {}

    EmbeddingVector embed(std::string_view text) override {
        if (detail::trim(text).empty()) throw Error("embed: empty text");
        ++calls_;
        httplib::Client cli(base_url_);
        cli.set_connection_timeout(timeout_sec_, 0);
        cli.set_read_timeout(timeout_sec_, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        nlohmann::json body = {{"model", model_}, {"input", std::string(text)}};
        auto res = cli.Post("/v1/embeddings", headers, body.dump(), "application/json");
        if (!res)
            throw BackendError(BackendError::Kind::timeout,
                               "embedding provider unreachable: " + base_url_);
        if (res->status == 401 || res->status == 403)
            throw BackendError(BackendError::Kind::auth, "embedding auth failure", res->body);
        if (res->status == 429)
            throw BackendError(BackendError::Kind::rate_limit, "embedding rate limited", res->body);
        if (res->status != 200)
            throw BackendError(BackendError::Kind::other,
                               "embedding provider rejected input (HTTP " +
                                   std::to_string(res->status) + ")",
                               res->body);
        try {
            nlohmann::json j = nlohmann::json::parse(res->body);
            EmbeddingVector v;
            v.values = j.at("data").at(0).at("embedding").get<std::vector<double>>();
            v.provider_id = provider_id();
            v.model_id = model_;
            for (double x : v.values)
                if (!std::isfinite(x)) throw ParseError("non-finite embedding entry");
            if (expected_dim_ == 0) expected_dim_ = v.dim();
            if (v.dim() != expected_dim_)
                throw BackendError(BackendError::Kind::malformed, "embedding dimension changed",
                                   res->body);
            return v;
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(BackendError::Kind::malformed,
                               std::string("malformed embedding reply: ") + e.what(), res->body);
        }
    }

    std::string provider_id() const override { return "openai-compatible"; }
    std::string model_id() const override { return model_; }
    size_t calls() const override { return calls_; }

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
    int timeout_sec_;
    std::atomic<size_t> calls_{0};
    std::atomic<size_t> expected_dim_{0};
};

// Append-safe on-disk vector store, one JSON file per entry, keyed by a
// content hash of (provider, model, trimmed text). Writes go through a temp
// file + rename; concurrent duplicate misses may both compute but store
// identical values, so last-writer-wins is harmless.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string key_for(std::string_view provider_id, std::string_view model_id,
                               std::string_view text) {
        std::string material;
        material.append(provider_id).push_back('\n');
        material.append(model_id).push_back('\n');
        material.append(detail::trim(text));
        return detail::sha256_hex(material);
    }

    std::optional<EmbeddingVector> get(const std::string& key) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = mem_.find(key);
        if (it != mem_.end()) return it->second;
        std::filesystem::path file = dir_ / (key + ".json");
        std::ifstream in(file);
        if (!in) return std::nullopt;
        try {
            nlohmann::json j = nlohmann::json::parse(in);
            EmbeddingVector v;
            v.values = j.at("values").get<std::vector<double>>();
            v.provider_id = j.at("provider_id").get<std::string>();
            v.model_id = j.at("model_id").get<std::string>();
            mem_[key] = v;
            return v;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corrupt embedding cache entry " + file.string() + ": " + e.what());
        }
    }

    void put(const std::string& key, const EmbeddingVector& v) {
        std::lock_guard<std::mutex> lock(mu_);
        mem_[key] = v;
        nlohmann::json j = {{"key", key},
                            {"provider_id", v.provider_id},
                            {"model_id", v.model_id},
                            {"dim", v.dim()},
                            {"values", v.values},
                            {"created_at", now_epoch_seconds()}};
        std::filesystem::path file = dir_ / (key + ".json");
        std::filesystem::path tmp = dir_ / (key + ".tmp");
        {
            std::ofstream out(tmp);
            if (!out) throw IoError("cannot write embedding cache entry " + tmp.string());
            out << j.dump() << '\n';
        }
        std::filesystem::rename(tmp, file);
    }

private:
    static int64_t now_epoch_seconds() {
        return std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    std::filesystem::path dir_;
    std::mutex mu_;
    std::unordered_map<std::string, EmbeddingVector> mem_;
};

// Fronts any provider with the cache; the cache is consulted before the
// provider is called, so identical texts always yield identical vectors.
class CachingProvider : public EmbeddingProvider {
public:
    CachingProvider(std::shared_ptr<EmbeddingProvider> inner, std::shared_ptr<EmbeddingCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    EmbeddingVector embed(std::string_view text) override {
        if (detail::trim(text).empty()) throw Error("embed: empty text");
        std::string key = EmbeddingCache::key_for(inner_->provider_id(), inner_->model_id(), text);
        if (auto hit = cache_->get(key)) return *hit;
        EmbeddingVector v = inner_->embed(text);
        cache_->put(key, v);
        return v;
    }

    std::string provider_id() const override { return inner_->provider_id(); }
    std::string model_id() const override { return inner_->model_id(); }
    size_t calls() const override { return inner_->calls(); }

private:
    std::shared_ptr<EmbeddingProvider> inner_;
    std::shared_ptr<EmbeddingCache> cache_;
};

// Which record fields feed the prompt and the embedding text.
struct FieldPolicy {
    size_t description_budget = 4000;

    std::string prompt_text(const MetadataRecord& r) const {
        std::string desc = truncate_for_prompt(r.description, description_budget);
        if (r.title.empty()) return desc;
        if (desc.empty()) return r.title;
        return r.title + "\n" + desc;
    }
};

using DemoIndex = std::vector<std::pair<std::string, EmbeddingVector>>;

// Embeds each pool record's prompt-facing text; index order follows pool order.
inline DemoIndex build_demo_index(const std::vector<MetadataRecord>& pool,
                                  EmbeddingProvider& provider, const FieldPolicy& policy = {}) {
    if (pool.empty()) throw Error("build_demo_index: empty pool");
    DemoIndex index;
    index.reserve(pool.size());
    for (const auto& r : pool) {
        try {
            index.emplace_back(r.id, provider.embed(policy.prompt_text(r)));
        } catch (const std::exception& e) {
            throw Error("embedding failed for record \"" + r.id + "\": " + e.what());
        }
    }
    return index;
}

}  // namespace annotator
