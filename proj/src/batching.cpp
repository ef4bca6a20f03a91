#include "batcher/batching.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "batcher/rng.hpp"

namespace batcher {

namespace {

std::vector<std::size_t> region_query(const std::vector<FeatureVector>& vectors,
                                      std::size_t center, double eps) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < vectors.size(); ++j) {
        if (euclidean_distance(vectors[center], vectors[j]) <= eps) out.push_back(j);
    }
    return out;
}

constexpr int kUndefined = -2;
constexpr int kNoise = -1;

}  // namespace

ClusterAssignment cluster_questions(const std::vector<FeatureVector>& vectors,
                                    const ClusterParams& params) {
    if (vectors.empty()) throw Error("cluster_questions needs at least one vector");
    if (params.eps <= 0.0) throw Error("DBSCAN eps must be positive");
    if (params.min_pts < 1) throw Error("DBSCAN min_pts must be >= 1");

    const std::size_t n = vectors.size();
    std::vector<int> label(n, kUndefined);
    int next_cluster = 0;

    for (std::size_t p = 0; p < n; ++p) {
        if (label[p] != kUndefined) continue;
        auto neighbors = region_query(vectors, p, params.eps);
        if (neighbors.size() < static_cast<std::size_t>(params.min_pts)) {
            label[p] = kNoise;
            continue;
        }
        const int cluster = next_cluster++;
        label[p] = cluster;
        std::deque<std::size_t> seeds(neighbors.begin(), neighbors.end());
        while (!seeds.empty()) {
            const std::size_t q = seeds.front();
            seeds.pop_front();
            if (label[q] == kNoise) label[q] = cluster;  // border point
            if (label[q] != kUndefined) continue;
            label[q] = cluster;
            auto q_neighbors = region_query(vectors, q, params.eps);
            if (q_neighbors.size() >= static_cast<std::size_t>(params.min_pts)) {
                seeds.insert(seeds.end(), q_neighbors.begin(), q_neighbors.end());
            }
        }
    }

    // Promote noise to singleton clusters, keeping ids contiguous.
    for (std::size_t p = 0; p < n; ++p) {
        if (label[p] == kNoise) label[p] = next_cluster++;
    }

    ClusterAssignment assignment;
    assignment.labels = std::move(label);
    assignment.params = params;
    assignment.cluster_count = next_cluster;
    return assignment;
}

double default_eps(const std::vector<FeatureVector>& vectors, double percentile) {
    if (vectors.size() < 2) throw Error("default_eps needs at least two vectors");
    if (percentile <= 0.0 || percentile > 100.0) throw Error("percentile must be in (0, 100]");

    // Evenly strided sample keeps this deterministic and O(sample^2).
    constexpr std::size_t kMaxSample = 512;
    std::vector<std::size_t> idx;
    const std::size_t stride = vectors.size() > kMaxSample ? vectors.size() / kMaxSample : 1;
    for (std::size_t i = 0; i < vectors.size(); i += stride) idx.push_back(i);

    std::vector<double> dists;
    dists.reserve(idx.size() * (idx.size() - 1) / 2);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = i + 1; j < idx.size(); ++j) {
            dists.push_back(euclidean_distance(vectors[idx[i]], vectors[idx[j]]));
        }
    }
    std::sort(dists.begin(), dists.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(dists.size())));
    const double eps = dists[std::max<std::size_t>(rank, 1) - 1];
    // All-identical samples would give eps 0; fall back to something usable.
    if (eps <= 0.0) {
        for (const double d : dists) {
            if (d > 0.0) return d;
        }
        return 1e-9;
    }
    return eps;
}

std::vector<Batch> batch_random(std::size_t question_count, std::size_t b, std::uint64_t seed) {
    if (b < 1) throw Error("batch size must be >= 1");
    std::vector<std::size_t> idx(question_count);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < idx.size(); start += b) {
        Batch batch;
        batch.id = static_cast<int>(batches.size());
        const std::size_t end = std::min(start + b, idx.size());
        batch.questions.assign(idx.begin() + start, idx.begin() + end);
        batches.push_back(std::move(batch));
    }
    return batches;
}

namespace {

// Cluster membership lists with a seeded draw order inside each cluster.
std::vector<std::vector<std::size_t>> cluster_members(const ClusterAssignment& clusters,
                                                      std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> members(clusters.cluster_count);
    for (std::size_t q = 0; q < clusters.labels.size(); ++q) {
        members[clusters.labels[q]].push_back(q);
    }
    Rng rng(seed);
    for (std::size_t c = 0; c < members.size(); ++c) {
        Rng local = rng.fork(c);
        local.shuffle(members[c]);
    }
    return members;
}

// Largest cluster id by remaining size, ties toward the lower id. Returns
// cluster_count when everything is empty.
std::size_t largest_cluster(const std::vector<std::vector<std::size_t>>& members,
                            std::size_t skip = SIZE_MAX) {
    std::size_t best = members.size();
    std::size_t best_size = 0;
    for (std::size_t c = 0; c < members.size(); ++c) {
        if (c == skip) continue;
        if (members[c].size() > best_size) {
            best = c;
            best_size = members[c].size();
        }
    }
    return best;
}

// Pops up to n items from the front of a cluster's member list.
std::vector<std::size_t> take(std::vector<std::size_t>& from, std::size_t n) {
    const std::size_t count = std::min(n, from.size());
    std::vector<std::size_t> out(from.begin(), from.begin() + count);
    from.erase(from.begin(), from.begin() + count);
    return out;
}

}  // namespace

std::vector<Batch> batch_similar(const ClusterAssignment& clusters, std::size_t b,
                                 std::uint64_t seed) {
    if (b < 1) throw Error("batch size must be >= 1");
    auto members = cluster_members(clusters, seed);
    std::vector<Batch> batches;

    auto emit = [&](std::vector<std::size_t> questions) {
        Batch batch;
        batch.id = static_cast<int>(batches.size());
        batch.questions = std::move(questions);
        batches.push_back(std::move(batch));
    };

    // Pure phase: drain whole batches from the largest cluster that still
    // has at least b members.
    while (true) {
        const std::size_t c = largest_cluster(members);
        if (c == members.size() || members[c].size() < b) break;
        emit(take(members[c], b));
    }

    // Leftover phase: C_max plus one partner cluster per batch.
    while (true) {
        const std::size_t cmax = largest_cluster(members);
        if (cmax == members.size()) break;
        auto questions = take(members[cmax], members[cmax].size());
        const std::size_t need = b - questions.size();
        if (need > 0) {
            std::size_t partner = members.size();
            for (std::size_t c = 0; c < members.size(); ++c) {
                if (c != cmax && members[c].size() == need) {
                    partner = c;
                    break;
                }
            }
            if (partner == members.size()) partner = largest_cluster(members, cmax);
            if (partner != members.size() && !members[partner].empty()) {
                auto extra = take(members[partner], need);
                questions.insert(questions.end(), extra.begin(), extra.end());
            }
        }
        emit(std::move(questions));
    }
    return batches;
}

std::vector<Batch> batch_diverse(const ClusterAssignment& clusters, std::size_t b,
                                 std::uint64_t seed) {
    if (b < 1) throw Error("batch size must be >= 1");
    auto members = cluster_members(clusters, seed);
    std::vector<Batch> batches;

    auto nonempty = [&]() {
        std::vector<std::size_t> ids;
        for (std::size_t c = 0; c < members.size(); ++c) {
            if (!members[c].empty()) ids.push_back(c);
        }
        std::stable_sort(ids.begin(), ids.end(), [&](std::size_t l, std::size_t r) {
            return members[l].size() > members[r].size();
        });
        return ids;
    };

    // Diverse phase: one question from each of the b largest clusters.
    while (true) {
        auto ids = nonempty();
        if (ids.size() < b) break;
        Batch batch;
        batch.id = static_cast<int>(batches.size());
        for (std::size_t i = 0; i < b; ++i) {
            batch.questions.push_back(take(members[ids[i]], 1)[0]);
        }
        batches.push_back(std::move(batch));
    }

    // Tail phase: round-robin over the survivors, order fixed largest-first
    // at the start of the phase.
    const auto order = nonempty();
    Batch batch;
    std::size_t exhausted = 0;
    while (exhausted < order.size()) {
        exhausted = 0;
        for (const std::size_t c : order) {
            if (members[c].empty()) {
                ++exhausted;
                continue;
            }
            batch.questions.push_back(take(members[c], 1)[0]);
            if (batch.questions.size() == b) {
                batch.id = static_cast<int>(batches.size());
                batches.push_back(std::move(batch));
                batch = Batch{};
            }
        }
    }
    if (!batch.questions.empty()) {
        batch.id = static_cast<int>(batches.size());
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace batcher
