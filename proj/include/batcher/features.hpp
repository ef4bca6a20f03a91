#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "batcher/core.hpp"

namespace batcher {

enum class FeatureKind { StructureLR, StructureJAC, Semantic };

// Fixed-length real vector describing one entity pair. Structure-aware
// vectors hold one per-attribute similarity in [0,1]; semantic vectors hold
// an embedding.
struct FeatureVector {
    std::vector<double> values;
    FeatureKind kind = FeatureKind::StructureLR;
};

// A pluggable text embedder. `embed` must be deterministic and always
// return `dim` components.
struct EmbedderHandle {
    std::string name;
    std::size_t dim = 0;
    std::function<std::vector<double>(std::string_view)> embed;
};

enum class StructureSim { LR, JAC };

// Token-set Jaccard over lowercased alphanumeric tokens. Both sides empty
// -> 1.0, exactly one empty -> 0.0.
double jaccard_sim(std::string_view a, std::string_view b);

// 1 - LED(a,b) / (|a|+|b|), on raw bytes without case folding. Both empty
// -> 1.0.
double levenshtein_ratio(std::string_view a, std::string_view b);

// Per-attribute similarity vector: component i is sim(val_i_left, val_i_right).
FeatureVector extract_structure_features(const EntityPair& p, StructureSim sim);

// Embeds serialize_pair(p); errors from the embedder are rethrown with the
// pair ids attached.
FeatureVector extract_semantic_features(const EntityPair& p, const EmbedderHandle& e);

// Offline stand-in for a real sentence encoder: signed feature hashing of
// the serialized pair's tokens, L2-normalized. Deterministic.
EmbedderHandle hashing_embedder(std::size_t dim = 64);

double euclidean_distance(const FeatureVector& u, const FeatureVector& v);

// Tokenization shared by jaccard_sim and the hashing embedder: lowercase,
// split on anything that is not a letter or digit.
std::vector<std::string> similarity_tokens(std::string_view text);

}  // namespace batcher
