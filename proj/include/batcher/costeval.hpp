#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "batcher/core.hpp"

namespace batcher {

// Money is kept in integer nanodollars so ledgers are exact and reruns are
// byte-identical. 1 microdollar per 1K tokens == 1 nanodollar per token.
std::int64_t dollars_to_nano(double dollars);
double nano_to_dollars(std::int64_t nano);
std::string format_dollars(std::int64_t nano);  // two decimals, for display

// tokens * price_per_1k / 1000, in dollars. Rejects negative token counts.
double api_cost(std::int64_t tokens, double price_per_1k_dollars);

// $0.008 per labeled pair (one tenth of a ten-pair crowdsourcing task).
double labeling_cost(std::int64_t n_pairs);
inline constexpr std::int64_t kLabelNanoPerPair = 8'000'000;

struct CostLedgerSnapshot {
    std::int64_t api_tokens = 0;
    std::int64_t labeled_pairs = 0;
    double price_per_1k = 0.0;
    std::int64_t api_nano = 0;
    std::int64_t label_nano = 0;
    double api_dollars = 0.0;
    double label_dollars = 0.0;
};

// Accumulates API token spend and labeling spend. Deposits may come from
// concurrent workers; totals are serialized under a mutex.
class CostLedger {
public:
    explicit CostLedger(double price_per_1k_dollars = 0.01);

    void add_api_tokens(std::int64_t tokens);
    void add_labeled_pairs(std::int64_t pairs);
    CostLedgerSnapshot snapshot() const;

private:
    mutable std::mutex mutex_;
    std::int64_t api_tokens_ = 0;
    std::int64_t labeled_pairs_ = 0;
    std::int64_t price_nano_per_token_ = 0;
    double price_per_1k_ = 0.0;
};

struct MetricsReport {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = true;
    bool recall_defined = true;
    std::int64_t unparsable_count = 0;
};

// Standard confusion counts with Matching as the positive class. Undefined
// precision/recall report as 0 with the corresponding flag cleared.
MetricsReport evaluate(const std::vector<MatchLabel>& preds, const std::vector<MatchLabel>& gold);

}  // namespace batcher
