#include "batcher/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "batcher/rng.hpp"

namespace batcher {

std::vector<std::size_t> select_fixed(const DemonstrationPool& pool, std::size_t k,
                                      std::uint64_t seed) {
    if (k > pool.size()) {
        throw Error("select_fixed: k=" + std::to_string(k) + " exceeds pool size " +
                    std::to_string(pool.size()));
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(k);
    return idx;
}

double batch_demo_distance(const Batch& batch, std::size_t demo,
                           const std::vector<FeatureVector>& question_vectors,
                           const std::vector<FeatureVector>& demo_vectors) {
    if (batch.questions.empty()) throw Error("batch_demo_distance: empty batch");
    double best = std::numeric_limits<double>::infinity();
    for (const std::size_t q : batch.questions) {
        best = std::min(best, euclidean_distance(question_vectors[q], demo_vectors[demo]));
    }
    return best;
}

namespace {

// Pool indices sorted by (distance, index); the first k are the kNN result.
std::vector<std::size_t> knn_by(const std::vector<double>& dist, std::size_t k) {
    std::vector<std::size_t> idx(dist.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t l, std::size_t r) { return dist[l] < dist[r]; });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

}  // namespace

std::vector<std::size_t> select_topk_batch(const Batch& batch, const DemonstrationPool& pool,
                                           const std::vector<FeatureVector>& question_vectors,
                                           std::size_t k) {
    if (k > pool.size()) {
        throw Error("select_topk_batch: k=" + std::to_string(k) + " exceeds pool size " +
                    std::to_string(pool.size()));
    }
    std::vector<double> dist(pool.size());
    for (std::size_t d = 0; d < pool.size(); ++d) {
        dist[d] = batch_demo_distance(batch, d, question_vectors, pool.vectors);
    }
    return knn_by(dist, k);
}

std::vector<std::size_t> select_topk_question(const Batch& batch, const DemonstrationPool& pool,
                                              const std::vector<FeatureVector>& question_vectors,
                                              std::size_t k) {
    if (k > pool.size()) {
        throw Error("select_topk_question: k=" + std::to_string(k) + " exceeds pool size " +
                    std::to_string(pool.size()));
    }
    std::set<std::size_t> chosen;
    std::vector<double> dist(pool.size());
    for (const std::size_t q : batch.questions) {
        for (std::size_t d = 0; d < pool.size(); ++d) {
            dist[d] = euclidean_distance(question_vectors[q], pool.vectors[d]);
        }
        for (const std::size_t d : knn_by(dist, k)) chosen.insert(d);
    }
    return {chosen.begin(), chosen.end()};
}

CoverThreshold compute_cover_threshold(const std::vector<FeatureVector>& question_vectors,
                                       double percentile) {
    if (question_vectors.size() < 2) {
        throw Error("compute_cover_threshold needs at least two questions");
    }
    if (percentile <= 0.0 || percentile > 100.0) throw Error("percentile must be in (0, 100]");

    std::vector<double> dists;
    dists.reserve(question_vectors.size() * (question_vectors.size() - 1) / 2);
    for (std::size_t i = 0; i < question_vectors.size(); ++i) {
        for (std::size_t j = i + 1; j < question_vectors.size(); ++j) {
            dists.push_back(euclidean_distance(question_vectors[i], question_vectors[j]));
        }
    }
    std::sort(dists.begin(), dists.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(dists.size())));
    CoverThreshold th;
    th.percentile = percentile;
    th.t = dists[std::max<std::size_t>(rank, 1) - 1];
    return th;
}

GreedyCoverResult greedy_weighted_set_cover(const CoverInstance& inst) {
    if (inst.candidate_sets.size() != inst.weights.size()) {
        throw Error("cover instance: candidate_sets and weights must align");
    }
    for (const double w : inst.weights) {
        if (!(w > 0.0)) throw Error("cover instance: weights must be positive");
    }

    // Map universe ids to dense positions.
    std::unordered_map<std::size_t, std::size_t> position;
    position.reserve(inst.universe.size());
    for (std::size_t i = 0; i < inst.universe.size(); ++i) position.emplace(inst.universe[i], i);

    std::vector<std::vector<std::size_t>> sets(inst.candidate_sets.size());
    for (std::size_t d = 0; d < inst.candidate_sets.size(); ++d) {
        for (const std::size_t id : inst.candidate_sets[d]) {
            const auto it = position.find(id);
            if (it == position.end()) {
                throw Error("cover instance: candidate set mentions id outside the universe");
            }
            sets[d].push_back(it->second);
        }
    }

    std::vector<char> coverable(inst.universe.size(), 0);
    for (const auto& s : sets) {
        for (const std::size_t pos : s) coverable[pos] = 1;
    }
    const std::size_t target =
        static_cast<std::size_t>(std::count(coverable.begin(), coverable.end(), 1));

    GreedyCoverResult result;
    std::vector<char> covered(inst.universe.size(), 0);
    std::size_t covered_count = 0;
    std::vector<char> used(sets.size(), 0);

    while (covered_count < target) {
        std::size_t best = sets.size();
        std::size_t best_gain = 0;
        for (std::size_t d = 0; d < sets.size(); ++d) {
            if (used[d]) continue;
            std::size_t gain = 0;
            for (const std::size_t pos : sets[d]) {
                if (!covered[pos]) ++gain;
            }
            if (gain == 0) continue;
            // gain/weight comparison via cross-multiplication; ties keep
            // the lower index.
            if (best == sets.size() ||
                static_cast<double>(gain) * inst.weights[best] >
                    static_cast<double>(best_gain) * inst.weights[d]) {
                best = d;
                best_gain = gain;
            }
        }
        if (best == sets.size()) break;  // nothing adds coverage
        used[best] = 1;
        result.selected.push_back(best);
        for (const std::size_t pos : sets[best]) {
            if (!covered[pos]) {
                covered[pos] = 1;
                ++covered_count;
            }
        }
    }

    for (std::size_t i = 0; i < inst.universe.size(); ++i) {
        if (!covered[i]) result.uncovered.push_back(inst.universe[i]);
    }
    return result;
}

DemoSetResult generate_demo_set(const std::vector<FeatureVector>& question_vectors,
                                const DemonstrationPool& pool, double t) {
    CoverInstance inst;
    inst.universe.resize(question_vectors.size());
    std::iota(inst.universe.begin(), inst.universe.end(), 0);
    inst.candidate_sets.resize(pool.size());
    inst.weights.assign(pool.size(), 1.0);
    for (std::size_t d = 0; d < pool.size(); ++d) {
        for (std::size_t q = 0; q < question_vectors.size(); ++q) {
            if (euclidean_distance(question_vectors[q], pool.vectors[d]) < t) {
                inst.candidate_sets[d].push_back(q);
            }
        }
    }
    auto greedy = greedy_weighted_set_cover(inst);
    return DemoSetResult{std::move(greedy.selected), std::move(greedy.uncovered)};
}

DemonstrationAssignment cover_batch(const Batch& batch, std::span<const std::size_t> demo_set,
                                    double t,
                                    const std::vector<FeatureVector>& question_vectors,
                                    const std::vector<FeatureVector>& demo_vectors,
                                    std::span<const double> pool_weights) {
    CoverInstance inst;
    inst.universe = batch.questions;
    inst.candidate_sets.resize(demo_set.size());
    inst.weights.resize(demo_set.size());
    for (std::size_t i = 0; i < demo_set.size(); ++i) {
        const std::size_t d = demo_set[i];
        inst.weights[i] = pool_weights[d];
        for (const std::size_t q : batch.questions) {
            if (euclidean_distance(question_vectors[q], demo_vectors[d]) < t) {
                inst.candidate_sets[i].push_back(q);
            }
        }
    }
    const auto greedy = greedy_weighted_set_cover(inst);

    DemonstrationAssignment assignment;
    assignment.batch_id = batch.id;
    for (const std::size_t i : greedy.selected) assignment.demo_indices.push_back(demo_set[i]);
    assignment.labels.assign(assignment.demo_indices.size(), std::nullopt);
    return assignment;
}

}  // namespace batcher
