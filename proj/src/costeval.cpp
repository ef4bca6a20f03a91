#include "batcher/costeval.hpp"

#include <cmath>

namespace batcher {

std::int64_t dollars_to_nano(double dollars) {
    return static_cast<std::int64_t>(std::llround(dollars * 1e9));
}

double nano_to_dollars(std::int64_t nano) {
    return static_cast<double>(nano) * 1e-9;
}

std::string format_dollars(std::int64_t nano) {
    const bool negative = nano < 0;
    if (negative) nano = -nano;
    const std::int64_t cents = (nano + 5'000'000) / 10'000'000;
    std::string out = negative ? "-$" : "$";
    out += std::to_string(cents / 100);
    out += '.';
    const std::int64_t rest = cents % 100;
    if (rest < 10) out += '0';
    out += std::to_string(rest);
    return out;
}

double api_cost(std::int64_t tokens, double price_per_1k_dollars) {
    if (tokens < 0) throw Error("api_cost: token count must be nonnegative");
    const std::int64_t nano_per_token = dollars_to_nano(price_per_1k_dollars) / 1000;
    return nano_to_dollars(tokens * nano_per_token);
}

double labeling_cost(std::int64_t n_pairs) {
    if (n_pairs < 0) throw Error("labeling_cost: pair count must be nonnegative");
    return nano_to_dollars(n_pairs * kLabelNanoPerPair);
}

CostLedger::CostLedger(double price_per_1k_dollars)
    : price_nano_per_token_(dollars_to_nano(price_per_1k_dollars) / 1000),
      price_per_1k_(price_per_1k_dollars) {}

void CostLedger::add_api_tokens(std::int64_t tokens) {
    if (tokens < 0) throw Error("CostLedger: token deposit must be nonnegative");
    std::lock_guard lock(mutex_);
    api_tokens_ += tokens;
}

void CostLedger::add_labeled_pairs(std::int64_t pairs) {
    if (pairs < 0) throw Error("CostLedger: labeled-pair deposit must be nonnegative");
    std::lock_guard lock(mutex_);
    labeled_pairs_ += pairs;
}

CostLedgerSnapshot CostLedger::snapshot() const {
    std::lock_guard lock(mutex_);
    CostLedgerSnapshot snap;
    snap.api_tokens = api_tokens_;
    snap.labeled_pairs = labeled_pairs_;
    snap.price_per_1k = price_per_1k_;
    snap.api_nano = api_tokens_ * price_nano_per_token_;
    snap.label_nano = labeled_pairs_ * kLabelNanoPerPair;
    snap.api_dollars = nano_to_dollars(snap.api_nano);
    snap.label_dollars = nano_to_dollars(snap.label_nano);
    return snap;
}

MetricsReport evaluate(const std::vector<MatchLabel>& preds, const std::vector<MatchLabel>& gold) {
    if (preds.size() != gold.size()) {
        throw Error("evaluate: preds and gold must have equal length (" +
                    std::to_string(preds.size()) + " vs " + std::to_string(gold.size()) + ")");
    }
    MetricsReport report;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool pred_pos = preds[i] == MatchLabel::Matching;
        const bool gold_pos = gold[i] == MatchLabel::Matching;
        if (pred_pos && gold_pos) ++report.tp;
        else if (pred_pos && !gold_pos) ++report.fp;
        else if (!pred_pos && gold_pos) ++report.fn;
        else ++report.tn;
    }
    if (report.tp + report.fp > 0) {
        report.precision = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp);
    } else {
        report.precision_defined = false;
    }
    if (report.tp + report.fn > 0) {
        report.recall = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn);
    } else {
        report.recall_defined = false;
    }
    if (report.precision + report.recall > 0.0) {
        report.f1 = 2.0 * report.precision * report.recall / (report.precision + report.recall);
    }
    return report;
}

}  // namespace batcher
