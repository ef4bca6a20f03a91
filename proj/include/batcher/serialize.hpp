#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "batcher/core.hpp"

namespace batcher {

// Token counting is approximate: a fixed bytes/4 estimate rather than a
// provider BPE vocabulary. Reports carry this flag so costs read as
// estimates, not invoices.
inline constexpr bool kApproximateTokens = true;

struct SerializedText {
    std::string text;
    std::size_t token_count = 0;
};

// "attr_1: val_1, attr_2: val_2, ..." in the record's attribute order.
std::string serialize_entity(const EntityRecord& e);

// serialize_entity(left) + " [SEP] " + serialize_entity(right).
std::string serialize_pair(const EntityPair& p);

// Deterministic byte-based token estimate: ceil(bytes / 4), 0 for "".
// Monotone under concatenation.
std::size_t count_tokens(std::string_view text);

SerializedText make_serialized(std::string text);

}  // namespace batcher
