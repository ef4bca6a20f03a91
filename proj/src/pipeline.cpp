#include "batcher/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include "batcher/rng.hpp"
#include "batcher/serialize.hpp"

namespace fs = std::filesystem;

namespace batcher {

using nlohmann::json;

std::string to_string(ExtractorKind k) {
    switch (k) {
        case ExtractorKind::StructureLR: return "structure_lr";
        case ExtractorKind::StructureJAC: return "structure_jac";
        case ExtractorKind::Semantic: return "semantic";
    }
    return "structure_lr";
}

std::string to_string(BatchingStrategy s) {
    switch (s) {
        case BatchingStrategy::Random: return "random";
        case BatchingStrategy::Similar: return "similar";
        case BatchingStrategy::Diverse: return "diverse";
    }
    return "random";
}

std::string to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::Fixed: return "fixed";
        case SelectionStrategy::TopkBatch: return "topk_batch";
        case SelectionStrategy::TopkQuestion: return "topk_question";
        case SelectionStrategy::Cover: return "cover";
    }
    return "fixed";
}

std::string to_string(BackendKind b) {
    switch (b) {
        case BackendKind::Mock: return "mock";
        case BackendKind::Replay: return "replay";
        case BackendKind::Http: return "http";
    }
    return "mock";
}

ExtractorKind extractor_from_string(const std::string& s) {
    if (s == "structure_lr") return ExtractorKind::StructureLR;
    if (s == "structure_jac") return ExtractorKind::StructureJAC;
    if (s == "semantic") return ExtractorKind::Semantic;
    throw Error("unknown extractor \"" + s + "\" (structure_lr, structure_jac, semantic)");
}

BatchingStrategy batching_from_string(const std::string& s) {
    if (s == "random") return BatchingStrategy::Random;
    if (s == "similar") return BatchingStrategy::Similar;
    if (s == "diverse") return BatchingStrategy::Diverse;
    throw Error("unknown batching strategy \"" + s + "\" (random, similar, diverse)");
}

SelectionStrategy selection_from_string(const std::string& s) {
    if (s == "fixed") return SelectionStrategy::Fixed;
    if (s == "topk_batch") return SelectionStrategy::TopkBatch;
    if (s == "topk_question") return SelectionStrategy::TopkQuestion;
    if (s == "cover") return SelectionStrategy::Cover;
    throw Error("unknown selection strategy \"" + s +
                "\" (fixed, topk_batch, topk_question, cover)");
}

BackendKind backend_from_string(const std::string& s) {
    if (s == "mock") return BackendKind::Mock;
    if (s == "replay") return BackendKind::Replay;
    if (s == "http") return BackendKind::Http;
    throw Error("unknown backend \"" + s + "\" (mock, replay, http)");
}

void to_json(json& j, const RunConfig& cfg) {
    j = json{
        {"dataset",
         {{"table_a", cfg.table_a},
          {"table_b", cfg.table_b},
          {"pairs", cfg.pairs_file},
          {"name", cfg.dataset_name},
          {"split_ratios", cfg.split_ratios}}},
        {"extractor", to_string(cfg.extractor)},
        {"embedding_dim", cfg.embedding_dim},
        {"batching",
         {{"strategy", to_string(cfg.batching)},
          {"batch_size", cfg.batch_size},
          {"eps_percentile", cfg.eps_percentile},
          {"min_pts", cfg.min_pts}}},
        {"selection",
         {{"strategy", to_string(cfg.selection)},
          {"k", cfg.k},
          {"cover_percentile", cfg.cover_percentile}}},
        {"llm",
         {{"backend", to_string(cfg.backend)},
          {"mock_flip_prob", cfg.mock_flip_prob},
          {"replay_cache", cfg.replay_cache_path},
          {"record", cfg.record},
          {"base_url", cfg.base_url},
          {"api_key_env", cfg.api_key_env},
          {"model", cfg.completion.model_name},
          {"temperature", cfg.completion.temperature},
          {"max_output_tokens", cfg.completion.max_output_tokens},
          {"retries", cfg.completion.retries},
          {"price_output_tokens", cfg.completion.price_output_tokens},
          {"price_per_1k", cfg.price_per_1k},
          {"max_in_flight", cfg.max_in_flight}}},
        {"seed", cfg.seed},
        {"out_dir", cfg.out_dir},
        {"task_description", cfg.task_description},
        {"worklist", cfg.worklist_path},
    };
    if (cfg.dbscan_eps) j["batching"]["eps"] = *cfg.dbscan_eps;
}

void from_json(const json& j, RunConfig& cfg) {
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        cfg.table_a = d.value("table_a", cfg.table_a);
        cfg.table_b = d.value("table_b", cfg.table_b);
        cfg.pairs_file = d.value("pairs", cfg.pairs_file);
        cfg.dataset_name = d.value("name", cfg.dataset_name);
        if (d.contains("split_ratios")) d.at("split_ratios").get_to(cfg.split_ratios);
    }
    if (j.contains("extractor")) cfg.extractor = extractor_from_string(j.at("extractor"));
    cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
    if (j.contains("batching")) {
        const auto& b = j.at("batching");
        if (b.contains("strategy")) cfg.batching = batching_from_string(b.at("strategy"));
        cfg.batch_size = b.value("batch_size", cfg.batch_size);
        if (b.contains("eps")) cfg.dbscan_eps = b.at("eps").get<double>();
        cfg.eps_percentile = b.value("eps_percentile", cfg.eps_percentile);
        cfg.min_pts = b.value("min_pts", cfg.min_pts);
    }
    if (j.contains("selection")) {
        const auto& s = j.at("selection");
        if (s.contains("strategy")) cfg.selection = selection_from_string(s.at("strategy"));
        cfg.k = s.value("k", cfg.k);
        cfg.cover_percentile = s.value("cover_percentile", cfg.cover_percentile);
    }
    if (j.contains("llm")) {
        const auto& l = j.at("llm");
        if (l.contains("backend")) cfg.backend = backend_from_string(l.at("backend"));
        cfg.mock_flip_prob = l.value("mock_flip_prob", cfg.mock_flip_prob);
        cfg.replay_cache_path = l.value("replay_cache", cfg.replay_cache_path);
        cfg.record = l.value("record", cfg.record);
        cfg.base_url = l.value("base_url", cfg.base_url);
        cfg.api_key_env = l.value("api_key_env", cfg.api_key_env);
        cfg.completion.model_name = l.value("model", cfg.completion.model_name);
        cfg.completion.temperature = l.value("temperature", cfg.completion.temperature);
        cfg.completion.max_output_tokens =
            l.value("max_output_tokens", cfg.completion.max_output_tokens);
        cfg.completion.retries = l.value("retries", cfg.completion.retries);
        cfg.completion.price_output_tokens =
            l.value("price_output_tokens", cfg.completion.price_output_tokens);
        cfg.price_per_1k = l.value("price_per_1k", cfg.price_per_1k);
        cfg.max_in_flight = l.value("max_in_flight", cfg.max_in_flight);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.task_description = j.value("task_description", cfg.task_description);
    cfg.worklist_path = j.value("worklist", cfg.worklist_path);
}

// --- worklist ---

namespace {

std::string escape_field(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape_field(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out.push_back(s[i]);
            continue;
        }
        switch (s[++i]) {
            case '\\': out.push_back('\\'); break;
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            default: out.push_back(s[i]);
        }
    }
    return out;
}

}  // namespace

// Record layout: pool index, serialized pair (escaped), label slot.
std::vector<WorklistItem> read_worklist(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open worklist " + path);
    std::vector<WorklistItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = line.rfind('\t');
        if (tab1 == std::string::npos || tab2 == tab1) {
            throw Error(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
        }
        WorklistItem item;
        try {
            item.pool_index = std::stoul(line.substr(0, tab1));
        } catch (const std::exception&) {
            throw Error(path + ":" + std::to_string(line_no) + ": bad pool index");
        }
        item.serialized = unescape_field(line.substr(tab1 + 1, tab2 - tab1 - 1));
        const std::string label_text = line.substr(tab2 + 1);
        if (!label_text.empty()) {
            item.label = match_label_from_string(label_text);
            if (!item.label) {
                throw Error(path + ":" + std::to_string(line_no) + ": bad label \"" + label_text +
                            "\"");
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

void write_worklist(const std::string& path, const std::vector<WorklistItem>& items) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot write worklist " + tmp);
        for (const auto& item : items) {
            out << item.pool_index << '\t' << escape_field(item.serialized) << '\t'
                << (item.label ? to_string(*item.label) : "") << '\n';
        }
    }
    fs::rename(tmp, path);
}

std::size_t label_interactive(const std::string& worklist_path, std::istream& in,
                              std::ostream& out) {
    auto items = read_worklist(worklist_path);
    const auto remaining = [&items]() {
        std::size_t n = 0;
        for (const auto& item : items) {
            if (!item.label) ++n;
        }
        return n;
    };

    const std::size_t unlabeled = remaining();
    std::size_t shown = 0;
    for (auto& item : items) {
        if (item.label) continue;
        out << "[" << (++shown) << "/" << unlabeled << "] pool #" << item.pool_index << "\n"
            << item.serialized << "\n";
        bool answered = false;
        while (!answered) {
            out << "matching? [y/n/s(kip)] " << std::flush;
            std::string reply;
            if (!std::getline(in, reply)) {
                out << "\n";
                return remaining();  // input exhausted; resume later
            }
            if (reply == "y" || reply == "yes") {
                item.label = MatchLabel::Matching;
                answered = true;
            } else if (reply == "n" || reply == "no") {
                item.label = MatchLabel::NonMatching;
                answered = true;
            } else if (reply == "s" || reply == "skip") {
                answered = true;
            } else {
                out << "please answer y, n or s\n";
            }
        }
        if (item.label) write_worklist(worklist_path, items);  // persist after every answer
    }
    return remaining();
}

// --- synthetic fixture ---

Dataset make_clustered_dataset(const SyntheticSpec& spec) {
    // Five per-attribute similarity patterns; 1 -> high similarity, 0 -> low.
    static constexpr int kCodes[5][4] = {
        {0, 0, 0, 0}, {0, 0, 1, 1}, {0, 1, 0, 1}, {0, 1, 1, 0}, {1, 1, 1, 1}};
    static constexpr bool kMatching[5] = {false, true, false, false, true};
    static const char* kAttrs[4] = {"title", "artist", "album", "genre"};

    if (spec.cluster_count < 1 || spec.cluster_count > 5) {
        throw Error("make_clustered_dataset supports 1..5 clusters");
    }

    Dataset ds;
    ds.name = "synthetic-" + std::to_string(spec.seed);
    ds.schema.assign(kAttrs, kAttrs + 4);

    Rng rng(spec.seed);

    auto base_string = [&](std::string& out, std::size_t len) {
        out.clear();
        for (std::size_t i = 0; i < len; ++i) {
            // Space every sixth position keeps the values word-like.
            out.push_back(i % 6 == 5 ? ' ' : static_cast<char>('a' + rng.below(13)));
        }
    };

    std::string base;
    for (std::size_t i = 0; i < spec.pair_count; ++i) {
        const int cluster = static_cast<int>(i % static_cast<std::size_t>(spec.cluster_count));
        EntityPair pair;
        pair.left.id = "A" + std::to_string(i);
        pair.right.id = "B" + std::to_string(i);
        pair.gold = kMatching[cluster] ? MatchLabel::Matching : MatchLabel::NonMatching;
        for (int a = 0; a < 4; ++a) {
            const double target = kCodes[cluster][a] ? 0.92 : 0.58;
            // Gaussian spread on the first two attributes only; the rest sit
            // exactly on the cluster pattern. Keeping the within-cluster
            // scatter two-dimensional (and the value lengths varied, so
            // similarities do not all land on one lattice) keeps every
            // question within the cover threshold of a same-cluster demo.
            double jitter = 0.0;
            if (a < 2) {
                jitter = rng.normal() * spec.jitter;
                jitter = std::clamp(jitter, -1.6 * spec.jitter, 1.6 * spec.jitter);
            }
            const double sim = std::clamp(target + jitter, 0.5, 1.0);

            const std::size_t len = spec.value_length + rng.below(13);
            // Replacing the last r characters with a disjoint alphabet makes
            // the pair's Levenshtein ratio exactly 1 - r/(2*len).
            const auto r = static_cast<std::size_t>(std::clamp<long long>(
                std::llround(2.0 * static_cast<double>(len) * (1.0 - sim)), 0,
                static_cast<long long>(len)));
            base_string(base, len);
            std::string variant = base;
            for (std::size_t p = len - r; p < len; ++p) {
                variant[p] = static_cast<char>('n' + rng.below(13));
            }
            pair.left.attrs.emplace_back(kAttrs[a], base);
            pair.right.attrs.emplace_back(kAttrs[a], variant);
        }
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

// --- pipeline ---

namespace {

std::vector<FeatureVector> extract_all(const std::vector<EntityPair>& pairs,
                                       ExtractorKind kind, const EmbedderHandle& embedder) {
    std::vector<FeatureVector> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        switch (kind) {
            case ExtractorKind::StructureLR:
                out.push_back(extract_structure_features(p, StructureSim::LR));
                break;
            case ExtractorKind::StructureJAC:
                out.push_back(extract_structure_features(p, StructureSim::JAC));
                break;
            case ExtractorKind::Semantic:
                out.push_back(extract_semantic_features(p, embedder));
                break;
        }
    }
    return out;
}

std::string question_id(std::size_t index, const EntityPair& pair) {
    return std::to_string(index) + "|" + pair.left.id + "|" + pair.right.id;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg) {
    if (cfg.table_a.empty() || cfg.table_b.empty() || cfg.pairs_file.empty()) {
        throw Error("run needs --table-a, --table-b and --pairs");
    }
    Dataset ds = load_dataset(cfg.table_a, cfg.table_b, cfg.pairs_file);
    if (!cfg.dataset_name.empty()) ds.name = cfg.dataset_name;
    return run_pipeline(cfg, ds);
}

RunResult run_pipeline(const RunConfig& cfg, const Dataset& ds) {
    if (cfg.batch_size < 1) throw Error("batch size must be >= 1");

    const SplitResult split = split_dataset(ds, SplitSpec{cfg.split_ratios, cfg.seed});
    const std::vector<EntityPair>& questions = split.test.pairs;
    if (questions.empty()) throw Error("test split is empty; nothing to classify");
    if (split.train.pairs.empty()) throw Error("train split is empty; no demonstration pool");

    const EmbedderHandle embedder = hashing_embedder(cfg.embedding_dim);
    std::vector<FeatureVector> question_vectors = extract_all(questions, cfg.extractor, embedder);

    DemonstrationPool pool;
    pool.demos = split.train.pairs;
    pool.vectors = extract_all(pool.demos, cfg.extractor, embedder);

    std::vector<std::string> ids(questions.size());
    std::vector<MatchLabel> gold(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) {
        ids[i] = question_id(i, questions[i]);
        if (!questions[i].gold) {
            throw Error("question " + ids[i] + " has no gold label; evaluation needs labeled pairs");
        }
        gold[i] = *questions[i].gold;
    }

    Rng master(cfg.seed);
    const std::uint64_t seed_batch = master.fork(1).next();
    const std::uint64_t seed_select = master.fork(2).next();
    const std::uint64_t seed_mock = master.fork(3).next();

    // Question batching.
    std::vector<Batch> batches;
    double eps = 0.0;
    if (cfg.batching == BatchingStrategy::Random || questions.size() < 2) {
        batches = batch_random(questions.size(), cfg.batch_size, seed_batch);
    } else {
        eps = cfg.dbscan_eps ? *cfg.dbscan_eps : default_eps(question_vectors, cfg.eps_percentile);
        const ClusterAssignment clusters =
            cluster_questions(question_vectors, ClusterParams{eps, cfg.min_pts});
        batches = cfg.batching == BatchingStrategy::Similar
                      ? batch_similar(clusters, cfg.batch_size, seed_batch)
                      : batch_diverse(clusters, cfg.batch_size, seed_batch);
    }

    // Demonstration selection.
    std::vector<DemonstrationAssignment> assignments;
    assignments.reserve(batches.size());
    RunResult result;
    std::vector<std::size_t> uncovered_questions;
    switch (cfg.selection) {
        case SelectionStrategy::Fixed: {
            const auto shared = select_fixed(pool, cfg.k, seed_select);
            for (const auto& batch : batches) {
                DemonstrationAssignment a;
                a.batch_id = batch.id;
                a.demo_indices = shared;
                a.labels.assign(shared.size(), std::nullopt);
                assignments.push_back(std::move(a));
            }
            break;
        }
        case SelectionStrategy::TopkBatch: {
            for (const auto& batch : batches) {
                DemonstrationAssignment a;
                a.batch_id = batch.id;
                a.demo_indices = select_topk_batch(batch, pool, question_vectors, cfg.k);
                a.labels.assign(a.demo_indices.size(), std::nullopt);
                assignments.push_back(std::move(a));
            }
            break;
        }
        case SelectionStrategy::TopkQuestion: {
            for (const auto& batch : batches) {
                DemonstrationAssignment a;
                a.batch_id = batch.id;
                a.demo_indices = select_topk_question(batch, pool, question_vectors, cfg.k);
                a.labels.assign(a.demo_indices.size(), std::nullopt);
                assignments.push_back(std::move(a));
            }
            break;
        }
        case SelectionStrategy::Cover: {
            result.threshold_t =
                compute_cover_threshold(question_vectors, cfg.cover_percentile).t;
            const DemoSetResult demo_set =
                generate_demo_set(question_vectors, pool, result.threshold_t);
            uncovered_questions = demo_set.uncovered_questions;
            std::vector<double> weights(pool.size(), 1.0);
            for (std::size_t d = 0; d < pool.size(); ++d) {
                weights[d] = static_cast<double>(
                    std::max<std::size_t>(1, count_tokens(serialize_pair(pool.demos[d]))));
            }
            for (const auto& batch : batches) {
                assignments.push_back(cover_batch(batch, demo_set.demo_indices,
                                                  result.threshold_t, question_vectors,
                                                  pool.vectors, weights));
            }
            break;
        }
    }

    for (const std::size_t q : uncovered_questions) result.uncovered.push_back(ids[q]);

    // Unique demonstrations across all batches; each is labeled (and
    // charged) once.
    std::set<std::size_t> unique_demos;
    for (const auto& a : assignments) unique_demos.insert(a.demo_indices.begin(), a.demo_indices.end());

    const std::string worklist_path =
        !cfg.worklist_path.empty()
            ? cfg.worklist_path
            : (cfg.out_dir.empty() ? std::string{} : (fs::path(cfg.out_dir) / "worklist.tsv").string());

    std::map<std::size_t, MatchLabel> known_labels;
    if (!worklist_path.empty() && fs::exists(worklist_path)) {
        for (const auto& item : read_worklist(worklist_path)) {
            if (item.label) known_labels[item.pool_index] = *item.label;
        }
    }
    const bool may_auto_label = cfg.backend != BackendKind::Http;
    std::vector<WorklistItem> worklist;
    std::size_t missing = 0;
    for (const std::size_t d : unique_demos) {
        WorklistItem item;
        item.pool_index = d;
        item.serialized = serialize_pair(pool.demos[d]);
        if (const auto it = known_labels.find(d); it != known_labels.end()) {
            item.label = it->second;
        } else if (may_auto_label && pool.demos[d].gold) {
            item.label = *pool.demos[d].gold;
        } else {
            ++missing;
        }
        worklist.push_back(std::move(item));
    }
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    if (!worklist_path.empty()) write_worklist(worklist_path, worklist);
    if (missing > 0) {
        throw LabelsMissingError(
            std::to_string(missing) + " selected demonstrations have no labels; run `batcher "
            "label --worklist " + (worklist_path.empty() ? "<path>" : worklist_path) +
            "` and rerun");
    }

    std::map<std::size_t, MatchLabel> label_of;
    for (const auto& item : worklist) label_of[item.pool_index] = *item.label;
    for (auto& a : assignments) {
        for (std::size_t i = 0; i < a.demo_indices.size(); ++i) {
            a.labels[i] = label_of.at(a.demo_indices[i]);
        }
    }

    CostLedger ledger(cfg.price_per_1k);
    ledger.add_labeled_pairs(static_cast<std::int64_t>(unique_demos.size()));

    // Prompts.
    const std::string desc =
        cfg.task_description.empty() ? kDefaultTaskDescription : cfg.task_description;
    std::vector<PromptBundle> bundles;
    bundles.reserve(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        std::vector<LabeledDemo> demos;
        demos.reserve(assignments[b].demo_indices.size());
        for (std::size_t i = 0; i < assignments[b].demo_indices.size(); ++i) {
            demos.push_back(LabeledDemo{pool.demos[assignments[b].demo_indices[i]],
                                        *assignments[b].labels[i]});
        }
        std::vector<QuestionRef> refs;
        refs.reserve(batches[b].questions.size());
        for (const std::size_t q : batches[b].questions) {
            refs.push_back(QuestionRef{ids[q], &questions[q]});
        }
        bundles.push_back(build_batch_prompt(desc, demos, refs, batches[b].id));
    }

    // Backend.
    std::unique_ptr<CompletionBackend> backend;
    std::shared_ptr<ReplayCache> cache;
    switch (cfg.backend) {
        case BackendKind::Mock: {
            std::map<std::string, MatchLabel> oracle_gold;
            for (std::size_t i = 0; i < questions.size(); ++i) oracle_gold[ids[i]] = gold[i];
            backend = std::make_unique<MockOracleBackend>(std::move(oracle_gold),
                                                          cfg.mock_flip_prob, seed_mock);
            break;
        }
        case BackendKind::Replay: {
            if (cfg.replay_cache_path.empty()) throw Error("replay backend needs a cache path");
            cache = ReplayCache::load(cfg.replay_cache_path);
            backend = std::make_unique<ReplayBackend>(cache);
            break;
        }
        case BackendKind::Http: {
            if (cfg.base_url.empty()) throw Error("http backend needs a base URL");
            const char* key = std::getenv(cfg.api_key_env.c_str());
            backend = std::make_unique<HttpBackend>(cfg.base_url, key ? key : "");
            break;
        }
    }
    if (cfg.record && cfg.backend != BackendKind::Replay) {
        if (cfg.replay_cache_path.empty()) throw Error("recording needs a replay cache path");
        cache = ReplayCache::load(cfg.replay_cache_path);
        backend = std::make_unique<RecordingBackend>(std::move(backend), cache,
                                                     cfg.replay_cache_path);
    }

    // Dispatch, up to max_in_flight batches concurrently.
    std::vector<BatchAnswer> parsed(batches.size());
    {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= bundles.size()) return;
                try {
                    const std::string raw =
                        complete(bundles[i], cfg.completion, *backend, ledger);
                    parsed[i] = parse_batch_answers(raw, bundles[i].question_order);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        };
        const std::size_t n_threads =
            std::max<std::size_t>(1, std::min(cfg.max_in_flight, bundles.size()));
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    // Aggregate predictions; unparsable answers count as non-matching.
    std::map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < ids.size(); ++i) index_of[ids[i]] = i;
    std::vector<MatchLabel> preds(questions.size(), MatchLabel::NonMatching);
    std::int64_t unparsable = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (std::size_t i = 0; i < bundles[b].question_order.size(); ++i) {
            const std::size_t q = index_of.at(bundles[b].question_order[i]);
            switch (parsed[b].answers[i]) {
                case Answer::Matching: preds[q] = MatchLabel::Matching; break;
                case Answer::NonMatching: preds[q] = MatchLabel::NonMatching; break;
                case Answer::Unparsable:
                    preds[q] = MatchLabel::NonMatching;
                    ++unparsable;
                    break;
            }
        }
    }

    result.metrics = evaluate(preds, gold);
    result.metrics.unparsable_count = unparsable;
    result.ledger = ledger.snapshot();
    result.question_count = questions.size();
    result.batch_count = batches.size();
    result.unique_demos = unique_demos.size();

    // Reports.
    if (!cfg.out_dir.empty()) {
        const fs::path out_dir(cfg.out_dir);

        json snapshot = cfg;
        write_text_file((out_dir / "config.snapshot").string(), snapshot.dump(2) + "\n");

        json report{
            {"dataset", ds.name},
            {"questions", result.question_count},
            {"batches", result.batch_count},
            {"strategies",
             {{"extractor", to_string(cfg.extractor)},
              {"batching", to_string(cfg.batching)},
              {"selection", to_string(cfg.selection)}}},
            {"f1", result.metrics.f1},
            {"precision", result.metrics.precision},
            {"recall", result.metrics.recall},
            {"precision_defined", result.metrics.precision_defined},
            {"recall_defined", result.metrics.recall_defined},
            {"tp", result.metrics.tp},
            {"fp", result.metrics.fp},
            {"fn", result.metrics.fn},
            {"tn", result.metrics.tn},
            {"unparsable_count", result.metrics.unparsable_count},
            {"api_tokens", result.ledger.api_tokens},
            {"api_dollars", result.ledger.api_dollars},
            {"label_dollars", result.ledger.label_dollars},
            {"labeled_pairs", result.ledger.labeled_pairs},
            {"price_per_1k", result.ledger.price_per_1k},
            {"price_output_tokens", cfg.completion.price_output_tokens},
            {"approximate_tokens", kApproximateTokens},
            {"unique_demos", result.unique_demos},
            {"uncovered", result.uncovered},
            {"uncovered_count", result.uncovered.size()},
            {"seed", cfg.seed},
        };
        if (cfg.selection == SelectionStrategy::Cover) report["threshold_t"] = result.threshold_t;
        if (cfg.batching != BatchingStrategy::Random) report["dbscan_eps"] = eps;
        result.report_path = (out_dir / "report.json").string();
        write_text_file(result.report_path, report.dump(2) + "\n");

        json ledger_json{
            {"api_tokens", result.ledger.api_tokens},
            {"api_dollars", result.ledger.api_dollars},
            {"api_display", format_dollars(result.ledger.api_nano)},
            {"labeled_pairs", result.ledger.labeled_pairs},
            {"label_dollars", result.ledger.label_dollars},
            {"label_display", format_dollars(result.ledger.label_nano)},
            {"price_per_1k", result.ledger.price_per_1k},
            {"approximate_tokens", kApproximateTokens},
        };
        write_text_file((out_dir / "ledger.json").string(), ledger_json.dump(2) + "\n");

        std::string trace;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            json answers = json::array();
            json parse_log = json::array();
            for (std::size_t i = 0; i < parsed[b].answers.size(); ++i) {
                switch (parsed[b].answers[i]) {
                    case Answer::Matching: answers.push_back("matching"); break;
                    case Answer::NonMatching: answers.push_back("non-matching"); break;
                    case Answer::Unparsable:
                        answers.push_back("unparsable");
                        parse_log.push_back(bundles[b].question_order[i]);
                        break;
                }
            }
            json line{
                {"batch_id", batches[b].id},
                {"question_ids", bundles[b].question_order},
                {"demo_pool_indices", assignments[b].demo_indices},
                {"prompt_tokens", bundles[b].token_count},
                {"prompt_digest", prompt_digest(cfg.completion.model_name, bundles[b].text)},
                {"answers", answers},
                {"unparsable_as_nonmatching", parse_log},
            };
            trace += line.dump() + "\n";
        }
        write_text_file((out_dir / "batches.trace.jsonl").string(), trace);
    }
    return result;
}

std::vector<RunResult> run_design_space(const RunConfig& base, const Dataset& ds) {
    static constexpr BatchingStrategy kBatchings[] = {
        BatchingStrategy::Random, BatchingStrategy::Similar, BatchingStrategy::Diverse};
    static constexpr SelectionStrategy kSelections[] = {
        SelectionStrategy::Fixed, SelectionStrategy::TopkBatch, SelectionStrategy::TopkQuestion,
        SelectionStrategy::Cover};

    std::vector<RunResult> results;
    for (const auto batching : kBatchings) {
        for (const auto selection : kSelections) {
            RunConfig cfg = base;
            cfg.batching = batching;
            cfg.selection = selection;
            if (!base.out_dir.empty()) {
                cfg.out_dir = (fs::path(base.out_dir) /
                               (to_string(batching) + "_" + to_string(selection)))
                                  .string();
                cfg.worklist_path.clear();  // every combination gets its own
            }
            results.push_back(run_pipeline(cfg, ds));
        }
    }
    return results;
}

}  // namespace batcher
