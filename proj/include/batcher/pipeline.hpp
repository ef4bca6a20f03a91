#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batcher/batching.hpp"
#include "batcher/core.hpp"
#include "batcher/costeval.hpp"
#include "batcher/llm.hpp"
#include "batcher/selection.hpp"

namespace batcher {

enum class ExtractorKind { StructureLR, StructureJAC, Semantic };
enum class BatchingStrategy { Random, Similar, Diverse };
enum class SelectionStrategy { Fixed, TopkBatch, TopkQuestion, Cover };
enum class BackendKind { Mock, Replay, Http };

std::string to_string(ExtractorKind k);
std::string to_string(BatchingStrategy s);
std::string to_string(SelectionStrategy s);
std::string to_string(BackendKind b);
ExtractorKind extractor_from_string(const std::string& s);
BatchingStrategy batching_from_string(const std::string& s);
SelectionStrategy selection_from_string(const std::string& s);
BackendKind backend_from_string(const std::string& s);

// Everything one run needs. Defaults follow the evaluated sweet spot:
// batch size 8, 8 demonstrations, 8th-percentile cover threshold,
// structure-aware LR features, diverse batching with covering selection.
struct RunConfig {
    // dataset
    std::string table_a;
    std::string table_b;
    std::string pairs_file;
    std::string dataset_name = "dataset";
    std::array<double, 3> split_ratios{0.6, 0.2, 0.2};

    // features
    ExtractorKind extractor = ExtractorKind::StructureLR;
    std::size_t embedding_dim = 64;

    // batching
    BatchingStrategy batching = BatchingStrategy::Diverse;
    std::size_t batch_size = 8;
    std::optional<double> dbscan_eps;  // unset -> percentile heuristic
    double eps_percentile = 10.0;
    int min_pts = 3;

    // selection
    SelectionStrategy selection = SelectionStrategy::Cover;
    std::size_t k = 8;
    double cover_percentile = 8.0;

    // llm
    BackendKind backend = BackendKind::Mock;
    double mock_flip_prob = 0.0;
    std::string replay_cache_path;
    bool record = false;
    std::string base_url;
    std::string api_key_env = "BATCHER_API_KEY";
    CompletionConfig completion;
    double price_per_1k = 0.01;
    std::size_t max_in_flight = 4;

    // run
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string task_description;  // empty -> kDefaultTaskDescription
    std::string worklist_path;     // empty -> out_dir/worklist.tsv
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

struct RunResult {
    MetricsReport metrics;
    CostLedgerSnapshot ledger;
    std::size_t question_count = 0;
    std::size_t batch_count = 0;
    std::size_t unique_demos = 0;
    double threshold_t = 0.0;  // cover strategy only
    std::vector<std::string> uncovered;  // question ids no pool demo covers
    std::string report_path;
};

// Full run: split, extract, cluster, batch, select, label, prompt,
// complete, parse, evaluate. Writes config.snapshot, report.json,
// ledger.json, batches.trace.jsonl and worklist.tsv under cfg.out_dir.
// Throws LabelsMissingError when selected demonstrations lack labels and
// the backend cannot auto-fill them.
RunResult run_pipeline(const RunConfig& cfg);

// Same, with a dataset that is already in memory (synthetic runs, sweeps).
RunResult run_pipeline(const RunConfig& cfg, const Dataset& ds);

// The 3x4 design-space sweep over one dataset; each combination writes to
// out_dir/<batching>_<selection>/.
std::vector<RunResult> run_design_space(const RunConfig& base, const Dataset& ds);

// --- demonstration labeling worklist ---

struct WorklistItem {
    std::size_t pool_index = 0;
    std::optional<MatchLabel> label;
    std::string serialized;
};

std::vector<WorklistItem> read_worklist(const std::string& path);
void write_worklist(const std::string& path, const std::vector<WorklistItem>& items);

// Prompts for each unlabeled item on `out`, reading y/n/s answers from
// `in`; the file is rewritten after every answer so an interrupted session
// resumes where it stopped. Returns the number of items still unlabeled.
std::size_t label_interactive(const std::string& worklist_path, std::istream& in,
                              std::ostream& out);

// --- synthetic fixtures ---

// A gold-labeled dataset whose structure-feature vectors form well
// separated Gaussian clusters; used by `simulate` and the test suites.
struct SyntheticSpec {
    std::size_t pair_count = 500;
    int cluster_count = 5;
    std::uint64_t seed = 1;
    double jitter = 0.03;
    std::size_t value_length = 40;
};

Dataset make_clustered_dataset(const SyntheticSpec& spec);

}  // namespace batcher
