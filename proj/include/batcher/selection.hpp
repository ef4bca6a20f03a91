#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "batcher/batching.hpp"
#include "batcher/core.hpp"
#include "batcher/features.hpp"

namespace batcher {

// Unlabeled demonstration pool with feature vectors aligned to demos.
struct DemonstrationPool {
    std::vector<EntityPair> demos;
    std::vector<FeatureVector> vectors;

    std::size_t size() const { return demos.size(); }
};

// Demonstrations allocated to one batch. Labels are filled by annotation
// before any prompt is built from this assignment.
struct DemonstrationAssignment {
    int batch_id = 0;
    std::vector<std::size_t> demo_indices;
    std::vector<std::optional<MatchLabel>> labels;
};

struct CoverThreshold {
    double t = 0.0;
    double percentile = 8.0;
};

// A weighted set-cover instance: candidate_sets[d] lists the universe ids
// demo d covers. The union of the sets may be a strict subset of the
// universe.
struct CoverInstance {
    std::vector<std::size_t> universe;
    std::vector<std::vector<std::size_t>> candidate_sets;
    std::vector<double> weights;
};

struct GreedyCoverResult {
    std::vector<std::size_t> selected;   // in selection order
    std::vector<std::size_t> uncovered;  // universe ids no candidate covers
};

// K distinct pool indices drawn uniformly without replacement; attached
// unchanged to every batch.
std::vector<std::size_t> select_fixed(const DemonstrationPool& pool, std::size_t k,
                                      std::uint64_t seed);

// min over the batch's questions of dist(question, demo).
double batch_demo_distance(const Batch& batch, std::size_t demo,
                           const std::vector<FeatureVector>& question_vectors,
                           const std::vector<FeatureVector>& demo_vectors);

// The k pool demos closest to the batch (distance above), ties toward the
// lower pool index.
std::vector<std::size_t> select_topk_batch(const Batch& batch, const DemonstrationPool& pool,
                                           const std::vector<FeatureVector>& question_vectors,
                                           std::size_t k);

// Union of per-question k nearest demos, duplicates collapsed, returned in
// ascending pool index.
std::vector<std::size_t> select_topk_question(const Batch& batch, const DemonstrationPool& pool,
                                              const std::vector<FeatureVector>& question_vectors,
                                              std::size_t k);

// Nearest-rank percentile of all pairwise question distances.
CoverThreshold compute_cover_threshold(const std::vector<FeatureVector>& question_vectors,
                                       double percentile = 8.0);

// Greedy weighted set cover: repeatedly pick the candidate maximizing
// (newly covered)/weight, ties toward the lower index, until adding more
// candidates cannot cover anything new.
GreedyCoverResult greedy_weighted_set_cover(const CoverInstance& inst);

struct DemoSetResult {
    std::vector<std::size_t> demo_indices;          // pool indices, selection order
    std::vector<std::size_t> uncovered_questions;   // question indices nothing covers
};

// Unit-weight cover of the whole question set: a demo covers a question
// when dist(question, demo) < t (strictly).
DemoSetResult generate_demo_set(const std::vector<FeatureVector>& question_vectors,
                                const DemonstrationPool& pool, double t);

// Weighted cover of one batch restricted to the generated demo set;
// weights are the demos' token counts.
DemonstrationAssignment cover_batch(const Batch& batch, std::span<const std::size_t> demo_set,
                                    double t,
                                    const std::vector<FeatureVector>& question_vectors,
                                    const std::vector<FeatureVector>& demo_vectors,
                                    std::span<const double> pool_weights);

}  // namespace batcher
