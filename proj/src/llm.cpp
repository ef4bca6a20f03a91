#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "batcher/llm.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "batcher/rng.hpp"

namespace batcher {

using nlohmann::json;

const char* const kDefaultTaskDescription =
    "You are given pairs of entity records. For each numbered question, decide whether the "
    "two records refer to the same real-world entity. Attribute values may differ in "
    "formatting, abbreviations, or missing fields. Answer Yes if they match and No if they "
    "do not.";

PromptBundle build_batch_prompt(const std::string& desc, std::span<const LabeledDemo> demos,
                                std::span<const QuestionRef> questions, int batch_id) {
    if (questions.empty()) throw Error("build_batch_prompt: batch has no questions");

    std::string text = desc;
    text += "\n";
    for (std::size_t i = 0; i < demos.size(); ++i) {
        text += "\nExample " + std::to_string(i + 1) + ": " + serialize_pair(demos[i].pair);
        text += "\nAnswer: ";
        text += demos[i].label == MatchLabel::Matching ? "Yes" : "No";
    }
    text += "\n";

    PromptBundle bundle;
    bundle.batch_id = batch_id;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        text += "\nQ" + std::to_string(i + 1) + ": " + serialize_pair(*questions[i].pair);
        bundle.question_order.push_back(questions[i].id);
    }
    text += "\n\nAnswer each question on its own line, in the form \"A" +
            std::string("1: Yes\" or \"A1: No\".\n");

    bundle.token_count = count_tokens(text);
    bundle.text = std::move(text);
    return bundle;
}

MockOracleBackend::MockOracleBackend(std::map<std::string, MatchLabel> gold, double flip_prob,
                                     std::uint64_t seed)
    : gold_(std::move(gold)), flip_prob_(flip_prob), seed_(seed) {}

std::string MockOracleBackend::complete(const PromptBundle& bundle, const CompletionConfig&) {
    Rng rng = Rng(seed_).fork(static_cast<std::uint64_t>(bundle.batch_id));
    std::string out;
    for (std::size_t i = 0; i < bundle.question_order.size(); ++i) {
        const auto it = gold_.find(bundle.question_order[i]);
        if (it == gold_.end()) {
            throw Error("mock oracle has no gold label for question \"" +
                        bundle.question_order[i] + "\"");
        }
        bool matching = it->second == MatchLabel::Matching;
        if (flip_prob_ > 0.0 && rng.uniform() < flip_prob_) matching = !matching;
        out += "A" + std::to_string(i + 1) + ": " + (matching ? "Yes" : "No") + "\n";
    }
    return out;
}

std::string prompt_digest(const std::string& model, const std::string& prompt) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw Error("prompt_digest: EVP_MD_CTX_new failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, model.data(), model.size());
    EVP_DigestUpdate(ctx, "\n", 1);
    EVP_DigestUpdate(ctx, prompt.data(), prompt.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::shared_ptr<ReplayCache> ReplayCache::load(const std::string& path) {
    auto cache = std::make_shared<ReplayCache>();
    std::ifstream in(path);
    if (!in) return cache;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json entry = json::parse(line, nullptr, false);
        if (entry.is_discarded() || !entry.contains("prompt_digest") ||
            !entry.contains("completion")) {
            throw Error(path + ":" + std::to_string(line_no) + ": malformed replay cache entry");
        }
        cache->entries_[entry["prompt_digest"].get<std::string>()] =
            entry["completion"].get<std::string>();
    }
    return cache;
}

std::optional<std::string> ReplayCache::lookup(const std::string& digest) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(digest);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ReplayCache::append(const std::string& path, const std::string& digest,
                         const std::string& model, const std::string& completion) {
    std::lock_guard lock(mutex_);
    entries_[digest] = completion;
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot append to replay cache " + path);
    out << json{{"prompt_digest", digest}, {"model", model}, {"completion", completion}}.dump()
        << "\n";
}

ReplayBackend::ReplayBackend(std::shared_ptr<ReplayCache> cache) : cache_(std::move(cache)) {}

std::string ReplayBackend::complete(const PromptBundle& bundle, const CompletionConfig& cfg) {
    const std::string digest = prompt_digest(cfg.model_name, bundle.text);
    auto hit = cache_->lookup(digest);
    if (!hit) throw Error("replay cache miss for prompt digest " + digest);
    return *hit;
}

RecordingBackend::RecordingBackend(std::unique_ptr<CompletionBackend> inner,
                                   std::shared_ptr<ReplayCache> cache, std::string cache_path)
    : inner_(std::move(inner)), cache_(std::move(cache)), cache_path_(std::move(cache_path)) {}

std::string RecordingBackend::complete(const PromptBundle& bundle, const CompletionConfig& cfg) {
    const std::string digest = prompt_digest(cfg.model_name, bundle.text);
    if (auto hit = cache_->lookup(digest)) return *hit;
    std::string completion = inner_->complete(bundle, cfg);
    cache_->append(cache_path_, digest, cfg.model_name, completion);
    return completion;
}

std::string RecordingBackend::name() const { return inner_->name() + "+record"; }

namespace {

// Splits "scheme://host[:port][/prefix]" into origin and path prefix.
std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error("base URL must include a scheme: " + base_url);
    }
    const auto path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {base_url, "/v1"};
    std::string origin = base_url.substr(0, path_start);
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    if (prefix.empty()) prefix = "/v1";
    return {std::move(origin), std::move(prefix)};
}

}  // namespace

HttpBackend::HttpBackend(std::string base_url, std::string api_key) : api_key_(std::move(api_key)) {
    auto [origin, prefix] = split_base_url(base_url);
    origin_ = std::move(origin);
    path_prefix_ = std::move(prefix);
}

std::string HttpBackend::complete(const PromptBundle& bundle, const CompletionConfig& cfg) {
    httplib::Client client(origin_);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const json body{
        {"model", cfg.model_name},
        {"temperature", cfg.temperature},
        {"max_tokens", cfg.max_output_tokens},
        {"messages", json::array({json{{"role", "user"}, {"content", bundle.text}}})},
    };

    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                           "application/json");
    if (!res) {
        throw TransientError("chat completion request failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransientError("chat completion HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw Error("chat completion HTTP " + std::to_string(res->status) + ": " +
                    res->body.substr(0, 200));
    }
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
        !reply["choices"][0].contains("message")) {
        throw Error("chat completion response is not in the expected shape");
    }
    return reply["choices"][0]["message"]["content"].get<std::string>();
}

std::string complete(const PromptBundle& bundle, const CompletionConfig& cfg,
                     CompletionBackend& backend, CostLedger& ledger) {
    if (cfg.temperature < 0.0) throw Error("completion temperature must be >= 0");
    if (cfg.retries < 0) throw Error("retry count must be >= 0");
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        if (attempt > 0) {
            const double sleep_s =
                cfg.backoff_initial_s * std::pow(2.0, static_cast<double>(attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
        }
        try {
            std::string completion = backend.complete(bundle, cfg);
            ledger.add_api_tokens(static_cast<std::int64_t>(bundle.token_count));
            if (cfg.price_output_tokens) {
                ledger.add_api_tokens(static_cast<std::int64_t>(count_tokens(completion)));
            }
            return completion;
        } catch (const TransientError& e) {
            last_error = e.what();
        }
    }
    throw Error("batch " + std::to_string(bundle.batch_id) + ": retries exhausted: " + last_error);
}

BatchAnswer parse_batch_answers(const std::string& raw,
                                const std::vector<std::string>& question_order) {
    static const std::regex answer_line(R"(^[\s>*\-]*(?:answer|ans|a)[\s#:.\-]*([0-9]+))",
                                        std::regex::icase);
    static const std::regex yes_no(R"(\b(yes|no)\b)", std::regex::icase);

    BatchAnswer result;
    result.raw = raw;
    result.answers.assign(question_order.size(), Answer::Unparsable);

    std::istringstream lines(raw);
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (!std::regex_search(line, m, answer_line)) continue;
        std::size_t index = 0;
        try {
            index = std::stoul(m[1].str());
        } catch (const std::exception&) {
            continue;
        }
        if (index < 1 || index > result.answers.size()) continue;
        if (result.answers[index - 1] != Answer::Unparsable) continue;  // first match wins
        const std::string rest = m.suffix().str();
        std::smatch verdict;
        if (!std::regex_search(rest, verdict, yes_no)) continue;
        const char c = static_cast<char>(std::tolower(verdict[1].str()[0]));
        result.answers[index - 1] = c == 'y' ? Answer::Matching : Answer::NonMatching;
    }
    return result;
}

}  // namespace batcher
