#include "batcher/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "batcher/serialize.hpp"

namespace batcher {

std::vector<std::string> similarity_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || uc >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

double jaccard_sim(std::string_view a, std::string_view b) {
    const auto ta = similarity_tokens(a);
    const auto tb = similarity_tokens(b);
    const std::unordered_set<std::string> sa(ta.begin(), ta.end());
    const std::unordered_set<std::string> sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    if (sa.empty() || sb.empty()) return 0.0;
    std::size_t intersection = 0;
    for (const auto& t : sa) {
        if (sb.count(t)) ++intersection;
    }
    const std::size_t unions = sa.size() + sb.size() - intersection;
    return static_cast<double>(intersection) / static_cast<double>(unions);
}

namespace {

// Two-row DP edit distance (insert/delete/substitute, unit costs).
std::size_t edit_distance(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            const std::size_t subst = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, subst});
            diag = up;
        }
    }
    return row[b.size()];
}

}  // namespace

double levenshtein_ratio(std::string_view a, std::string_view b) {
    const std::size_t total = a.size() + b.size();
    if (total == 0) return 1.0;
    return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(total);
}

FeatureVector extract_structure_features(const EntityPair& p, StructureSim sim) {
    if (!schema_consistent(p)) {
        throw Error("entity pair (" + p.left.id + ", " + p.right.id + ") has mismatched schemas");
    }
    FeatureVector fv;
    fv.kind = sim == StructureSim::LR ? FeatureKind::StructureLR : FeatureKind::StructureJAC;
    fv.values.reserve(p.left.attrs.size());
    for (std::size_t i = 0; i < p.left.attrs.size(); ++i) {
        const auto& va = p.left.attrs[i].second;
        const auto& vb = p.right.attrs[i].second;
        fv.values.push_back(sim == StructureSim::LR ? levenshtein_ratio(va, vb)
                                                    : jaccard_sim(va, vb));
    }
    return fv;
}

FeatureVector extract_semantic_features(const EntityPair& p, const EmbedderHandle& e) {
    FeatureVector fv;
    fv.kind = FeatureKind::Semantic;
    try {
        fv.values = e.embed(serialize_pair(p));
    } catch (const std::exception& ex) {
        throw Error("embedder \"" + e.name + "\" failed on pair (" + p.left.id + ", " +
                    p.right.id + "): " + ex.what());
    }
    if (fv.values.size() != e.dim) {
        throw Error("embedder \"" + e.name + "\" returned " + std::to_string(fv.values.size()) +
                    " components, expected " + std::to_string(e.dim));
    }
    return fv;
}

EmbedderHandle hashing_embedder(std::size_t dim) {
    EmbedderHandle handle;
    handle.name = "hashing-" + std::to_string(dim);
    handle.dim = dim;
    handle.embed = [dim](std::string_view text) {
        std::vector<double> v(dim, 0.0);
        for (const auto& token : similarity_tokens(text)) {
            // FNV-1a, 64-bit.
            std::uint64_t h = 0xcbf29ce484222325ULL;
            for (const char c : token) {
                h ^= static_cast<unsigned char>(c);
                h *= 0x100000001b3ULL;
            }
            const std::size_t bucket = static_cast<std::size_t>(h % dim);
            const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[bucket] += sign;
        }
        double norm = 0.0;
        for (const double x : v) norm += x * x;
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
        }
        return v;
    };
    return handle;
}

double euclidean_distance(const FeatureVector& u, const FeatureVector& v) {
    if (u.values.size() != v.values.size()) {
        throw Error("feature vector length mismatch: " + std::to_string(u.values.size()) +
                    " vs " + std::to_string(v.values.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double d = u.values[i] - v.values[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

}  // namespace batcher
