#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "batcher/error.hpp"

namespace batcher {

enum class MatchLabel { Matching, NonMatching };

std::string to_string(MatchLabel label);
std::optional<MatchLabel> match_label_from_string(const std::string& text);

// One tuple of a relational table: an ordered list of (attribute, value).
// Attribute order is fixed per table and shared by every record in it.
struct EntityRecord {
    std::string id;
    std::vector<std::pair<std::string, std::string>> attrs;
};

// A candidate pair to be classified. Both sides must share the same
// attribute-name sequence.
struct EntityPair {
    EntityRecord left;
    EntityRecord right;
    std::optional<MatchLabel> gold;
};

// True when left and right carry the identical attribute-name sequence.
bool schema_consistent(const EntityPair& pair);

struct Dataset {
    std::string name;
    std::vector<std::string> schema;
    std::vector<EntityPair> pairs;

    std::size_t match_count() const;
};

struct SplitSpec {
    std::array<double, 3> ratios{0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
};

struct SplitResult {
    Dataset train;
    Dataset valid;
    Dataset test;
};

// Loads a Magellan-style benchmark: two record tables plus a labeled pairs
// file (left_id, right_id, label). CSV, UTF-8, header row mandatory, label
// column in {0,1}. Missing values become empty strings. Errors carry file
// and line.
Dataset load_dataset(const std::string& table_a_path,
                     const std::string& table_b_path,
                     const std::string& pairs_path);

// Seeded shuffle followed by largest-remainder sizing. The three parts
// always partition the input.
SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec);

// Largest-remainder apportionment of n items across the given ratios, ties
// broken toward the lower index.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

}  // namespace batcher
