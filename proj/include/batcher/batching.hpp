#pragma once

#include <cstdint>
#include <vector>

#include "batcher/features.hpp"

namespace batcher {

struct ClusterParams {
    double eps = 0.0;
    int min_pts = 3;
};

// Per-question cluster ids, contiguous from 0. DBSCAN noise points are
// promoted to singleton clusters so that batching always sees a partition.
struct ClusterAssignment {
    std::vector<int> labels;
    ClusterParams params;
    int cluster_count = 0;
};

struct Batch {
    int id = 0;
    std::vector<std::size_t> questions;  // indices into the question list
};

// DBSCAN under euclidean_distance. Deterministic given input order: points
// are visited in index order and neighbor lists are ascending.
ClusterAssignment cluster_questions(const std::vector<FeatureVector>& vectors,
                                    const ClusterParams& params);

// Default eps heuristic: the given percentile (nearest-rank) of pairwise
// distances, sampled when the input is large.
double default_eps(const std::vector<FeatureVector>& vectors, double percentile = 10.0);

// Seeded partition into batches of size b (last one may be short).
std::vector<Batch> batch_random(std::size_t question_count, std::size_t b, std::uint64_t seed);

// Cluster-pure batches while a cluster still holds >= b questions, then a
// leftover phase: take the largest remaining cluster C_max, pair it with a
// cluster of size exactly b - |C_max| when one exists, otherwise with the
// next largest.
std::vector<Batch> batch_similar(const ClusterAssignment& clusters, std::size_t b,
                                 std::uint64_t seed);

// One question from each of b distinct clusters while possible, then
// round-robin over the survivors, largest first.
std::vector<Batch> batch_diverse(const ClusterAssignment& clusters, std::size_t b,
                                 std::uint64_t seed);

}  // namespace batcher
