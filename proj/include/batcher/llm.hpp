#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "batcher/core.hpp"
#include "batcher/costeval.hpp"
#include "batcher/serialize.hpp"

namespace batcher {

struct PromptBundle {
    std::string text;
    std::vector<std::string> question_order;  // question ids, prompt order
    std::size_t token_count = 0;
    int batch_id = 0;
};

struct CompletionConfig {
    std::string model_name = "gpt-3.5-turbo-0301";
    double temperature = 0.01;
    int max_output_tokens = 512;
    int retries = 3;
    double backoff_initial_s = 0.5;   // doubles per attempt
    bool price_output_tokens = false;
};

enum class Answer { Matching, NonMatching, Unparsable };

struct BatchAnswer {
    std::vector<Answer> answers;  // aligned with question_order
    std::string raw;
};

struct LabeledDemo {
    EntityPair pair;
    MatchLabel label;
};

struct QuestionRef {
    std::string id;
    const EntityPair* pair = nullptr;
};

// Default task description; runs may override it per dataset.
extern const char* const kDefaultTaskDescription;

// Layout: description, demonstrations each followed by an answer line, then
// numbered questions and the answer-format instruction.
PromptBundle build_batch_prompt(const std::string& desc, std::span<const LabeledDemo> demos,
                                std::span<const QuestionRef> questions, int batch_id);

// Completion backends. complete() may throw TransientError for retryable
// failures; anything else is final.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg) = 0;
    virtual std::string name() const = 0;
};

// Answers from gold labels, flipping each with probability flip_prob.
// Deterministic: the noise stream is derived from (seed, batch_id).
class MockOracleBackend : public CompletionBackend {
public:
    MockOracleBackend(std::map<std::string, MatchLabel> gold, double flip_prob = 0.0,
                      std::uint64_t seed = 0);
    std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg) override;
    std::string name() const override { return "mock"; }

private:
    std::map<std::string, MatchLabel> gold_;
    double flip_prob_;
    std::uint64_t seed_;
};

// Hex SHA-256 of the (model, prompt) pair; the replay cache key.
std::string prompt_digest(const std::string& model, const std::string& prompt);

// Line-delimited JSON cache of {prompt_digest, model, completion}.
class ReplayCache {
public:
    ReplayCache() = default;
    // Missing file -> empty cache.
    static std::shared_ptr<ReplayCache> load(const std::string& path);

    std::optional<std::string> lookup(const std::string& digest) const;
    void append(const std::string& path, const std::string& digest, const std::string& model,
                const std::string& completion);
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, std::string> entries_;
    mutable std::mutex mutex_;
};

// Serves completions from a replay cache; a miss is an error naming the
// digest.
class ReplayBackend : public CompletionBackend {
public:
    explicit ReplayBackend(std::shared_ptr<ReplayCache> cache);
    std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg) override;
    std::string name() const override { return "replay"; }

private:
    std::shared_ptr<ReplayCache> cache_;
};

// Wraps another backend and records every completion into the cache file.
class RecordingBackend : public CompletionBackend {
public:
    RecordingBackend(std::unique_ptr<CompletionBackend> inner, std::shared_ptr<ReplayCache> cache,
                     std::string cache_path);
    std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg) override;
    std::string name() const override;

private:
    std::unique_ptr<CompletionBackend> inner_;
    std::shared_ptr<ReplayCache> cache_;
    std::string cache_path_;
};

// OpenAI-compatible chat-completion client. base_url carries scheme, host,
// port and an optional path prefix (default /v1).
class HttpBackend : public CompletionBackend {
public:
    HttpBackend(std::string base_url, std::string api_key);
    std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg) override;
    std::string name() const override { return "http"; }

private:
    std::string origin_;
    std::string path_prefix_;
    std::string api_key_;
};

// Sends a bundle with retry/backoff, deposits prompt tokens into the ledger
// on success (plus output tokens when cfg.price_output_tokens is set).
std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg,
                     CompletionBackend& backend, CostLedger& ledger);

// Tolerant scan for "A<i>"-style answer lines; anything unmatched becomes
// Answer::Unparsable. Never throws on malformed completions.
BatchAnswer parse_batch_answers(const std::string& raw,
                                const std::vector<std::string>& question_order);

}  // namespace batcher
