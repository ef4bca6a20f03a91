// Command-line front end: ingest, run, label, simulate, report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "batcher/pipeline.hpp"

namespace fs = std::filesystem;
using batcher::RunConfig;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kLabelsMissing = 3;

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw batcher::Error("cannot open " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw batcher::Error(path + ": invalid JSON");
    return j;
}

void print_run_summary(std::ostream& out, const RunConfig& cfg, const batcher::RunResult& r) {
    out << "dataset        " << cfg.dataset_name << "\n"
        << "strategies     " << to_string(cfg.batching) << " + " << to_string(cfg.selection)
        << " (" << to_string(cfg.extractor) << ")\n"
        << "questions      " << r.question_count << "   batches " << r.batch_count << "\n"
        << "F1             " << r.metrics.f1 << "  (P " << r.metrics.precision << ", R "
        << r.metrics.recall << ")\n"
        << "tp/fp/fn/tn    " << r.metrics.tp << "/" << r.metrics.fp << "/" << r.metrics.fn << "/"
        << r.metrics.tn << "\n"
        << "API tokens     " << r.ledger.api_tokens << "  ("
        << batcher::format_dollars(r.ledger.api_nano)
        << (batcher::kApproximateTokens ? ", approximate tokens" : "") << ")\n"
        << "labeled pairs  " << r.ledger.labeled_pairs << "  ("
        << batcher::format_dollars(r.ledger.label_nano) << ")\n"
        << "unparsable     " << r.metrics.unparsable_count << "\n"
        << "uncovered      " << r.uncovered.size() << "\n";
}

struct RunFlags {
    std::optional<std::string> table_a, table_b, pairs, name, out_dir, worklist;
    std::optional<std::string> extractor, batching, selection, backend;
    std::optional<std::string> replay_cache, base_url, model, task_description;
    std::optional<std::size_t> batch_size, k, max_in_flight;
    std::optional<double> percentile, eps, eps_percentile, flip_prob, temperature, price;
    std::optional<int> min_pts, retries;
    std::optional<std::uint64_t> seed;
    std::optional<bool> record;
    std::optional<std::string> config_path;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file; flags override it");
    cmd->add_option("--table-a", f.table_a, "CSV of the left table");
    cmd->add_option("--table-b", f.table_b, "CSV of the right table");
    cmd->add_option("--pairs", f.pairs, "CSV of labeled candidate pairs");
    cmd->add_option("--name", f.name, "dataset name used in reports");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--worklist", f.worklist, "labeling worklist path");
    cmd->add_option("--extractor", f.extractor, "structure_lr | structure_jac | semantic");
    cmd->add_option("--batching", f.batching, "random | similar | diverse");
    cmd->add_option("--selection", f.selection, "fixed | topk_batch | topk_question | cover");
    cmd->add_option("--backend", f.backend, "mock | replay | http");
    cmd->add_option("--replay-cache", f.replay_cache, "replay cache (jsonl)");
    cmd->add_flag("--record", f.record, "record completions into the replay cache");
    cmd->add_option("--base-url", f.base_url, "chat-completion endpoint base URL");
    cmd->add_option("--model", f.model, "model name");
    cmd->add_option("--task-description", f.task_description, "override the prompt preamble");
    cmd->add_option("-b,--batch-size", f.batch_size, "questions per batch");
    cmd->add_option("-k", f.k, "demonstrations per batch (fixed/topk)");
    cmd->add_option("--percentile", f.percentile, "cover threshold percentile");
    cmd->add_option("--eps", f.eps, "DBSCAN eps (default: percentile heuristic)");
    cmd->add_option("--eps-percentile", f.eps_percentile, "DBSCAN eps percentile");
    cmd->add_option("--min-pts", f.min_pts, "DBSCAN min_pts");
    cmd->add_option("--flip-prob", f.flip_prob, "mock oracle flip probability");
    cmd->add_option("--temperature", f.temperature, "completion temperature");
    cmd->add_option("--retries", f.retries, "transient-failure retries");
    cmd->add_option("--price-per-1k", f.price, "input token price in dollars per 1k");
    cmd->add_option("--max-in-flight", f.max_in_flight, "concurrent batch requests");
    cmd->add_option("--seed", f.seed, "run seed (mandatory)");
}

// Config file first, then every flag the user actually passed.
RunConfig resolve_config(const RunFlags& f) {
    RunConfig cfg;
    if (f.config_path) {
        from_json(load_json_file(*f.config_path), cfg);
    }
    if (f.table_a) cfg.table_a = *f.table_a;
    if (f.table_b) cfg.table_b = *f.table_b;
    if (f.pairs) cfg.pairs_file = *f.pairs;
    if (f.name) cfg.dataset_name = *f.name;
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    if (f.worklist) cfg.worklist_path = *f.worklist;
    if (f.extractor) cfg.extractor = batcher::extractor_from_string(*f.extractor);
    if (f.batching) cfg.batching = batcher::batching_from_string(*f.batching);
    if (f.selection) cfg.selection = batcher::selection_from_string(*f.selection);
    if (f.backend) cfg.backend = batcher::backend_from_string(*f.backend);
    if (f.replay_cache) cfg.replay_cache_path = *f.replay_cache;
    if (f.record) cfg.record = *f.record;
    if (f.base_url) cfg.base_url = *f.base_url;
    if (f.model) cfg.completion.model_name = *f.model;
    if (f.task_description) cfg.task_description = *f.task_description;
    if (f.batch_size) cfg.batch_size = *f.batch_size;
    if (f.k) cfg.k = *f.k;
    if (f.percentile) cfg.cover_percentile = *f.percentile;
    if (f.eps) cfg.dbscan_eps = *f.eps;
    if (f.eps_percentile) cfg.eps_percentile = *f.eps_percentile;
    if (f.min_pts) cfg.min_pts = *f.min_pts;
    if (f.flip_prob) cfg.mock_flip_prob = *f.flip_prob;
    if (f.temperature) cfg.completion.temperature = *f.temperature;
    if (f.retries) cfg.completion.retries = *f.retries;
    if (f.price) cfg.price_per_1k = *f.price;
    if (f.max_in_flight) cfg.max_in_flight = *f.max_in_flight;
    if (f.seed) cfg.seed = *f.seed;

    const bool seed_given = f.seed.has_value() ||
                            (f.config_path && load_json_file(*f.config_path).contains("seed"));
    if (!seed_given) throw batcher::Error("a seed is mandatory; pass --seed or set it in the config");
    return cfg;
}

int cmd_ingest(const std::string& table_a, const std::string& table_b, const std::string& pairs,
               const std::string& summary_path) {
    const batcher::Dataset ds = batcher::load_dataset(table_a, table_b, pairs);
    std::cout << "dataset    " << ds.name << "\n"
              << "attributes " << ds.schema.size() << "\n"
              << "pairs      " << ds.pairs.size() << "\n"
              << "matches    " << ds.match_count() << "\n";
    if (!summary_path.empty()) {
        json summary{{"name", ds.name},
                     {"attributes", ds.schema.size()},
                     {"schema", ds.schema},
                     {"pairs", ds.pairs.size()},
                     {"matches", ds.match_count()}};
        std::ofstream out(summary_path);
        if (!out) throw batcher::Error("cannot write " + summary_path);
        out << summary.dump(2) << "\n";
    }
    return kOk;
}

int cmd_report(const std::string& dir) {
    const json report = load_json_file((fs::path(dir) / "report.json").string());
    const json ledger = load_json_file((fs::path(dir) / "ledger.json").string());
    std::cout << "dataset        " << report.value("dataset", std::string{}) << "\n"
              << "strategies     " << report["strategies"].value("batching", std::string{})
              << " + " << report["strategies"].value("selection", std::string{}) << " ("
              << report["strategies"].value("extractor", std::string{}) << ")\n"
              << "questions      " << report.value("questions", 0) << "   batches "
              << report.value("batches", 0) << "\n"
              << "F1             " << report.value("f1", 0.0) << "  (P "
              << report.value("precision", 0.0) << ", R " << report.value("recall", 0.0) << ")\n"
              << "tp/fp/fn/tn    " << report.value("tp", 0) << "/" << report.value("fp", 0) << "/"
              << report.value("fn", 0) << "/" << report.value("tn", 0) << "\n"
              << "API tokens     " << ledger.value("api_tokens", 0) << "  ("
              << ledger.value("api_display", std::string{})
              << (ledger.value("approximate_tokens", false) ? ", approximate tokens" : "") << ")\n"
              << "labeled pairs  " << ledger.value("labeled_pairs", 0) << "  ("
              << ledger.value("label_display", std::string{}) << ")\n"
              << "unparsable     " << report.value("unparsable_count", 0) << "\n"
              << "uncovered      " << report.value("uncovered_count", 0) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cost-aware batch prompting for entity resolution"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a dataset and print its statistics");
    std::string in_table_a, in_table_b, in_pairs, in_summary;
    ingest->add_option("--table-a", in_table_a)->required();
    ingest->add_option("--table-b", in_table_b)->required();
    ingest->add_option("--pairs", in_pairs)->required();
    ingest->add_option("--summary", in_summary, "also write a JSON summary");

    // run
    auto* run = app.add_subcommand("run", "run the full pipeline on a dataset");
    RunFlags run_flags;
    add_run_flags(run, run_flags);

    // label
    auto* label = app.add_subcommand("label", "label a demonstration worklist interactively");
    std::string label_worklist;
    label->add_option("--worklist", label_worklist)->required();

    // simulate
    auto* simulate =
        app.add_subcommand("simulate", "design-space sweep on a synthetic clustered dataset");
    RunFlags sim_flags;
    add_run_flags(simulate, sim_flags);
    std::size_t sim_pairs = 500;
    int sim_clusters = 5;
    simulate->add_option("--pair-count", sim_pairs, "synthetic dataset size");
    simulate->add_option("--clusters", sim_clusters, "number of synthetic clusters (1..5)");

    // report
    auto* report = app.add_subcommand("report", "re-render a stored run report");
    std::string report_dir;
    report->add_option("--dir", report_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*ingest) return cmd_ingest(in_table_a, in_table_b, in_pairs, in_summary);

        if (*label) {
            const std::size_t remaining =
                batcher::label_interactive(label_worklist, std::cin, std::cout);
            std::cout << (remaining == 0 ? "worklist fully labeled\n"
                                         : std::to_string(remaining) + " items still unlabeled\n");
            return kOk;
        }

        if (*report) return cmd_report(report_dir);

        if (*run) {
            RunConfig cfg;
            try {
                cfg = resolve_config(run_flags);
            } catch (const batcher::Error& e) {
                std::cerr << "config error: " << e.what() << "\n";
                return kConfigError;
            }
            const auto result = batcher::run_pipeline(cfg);
            print_run_summary(std::cout, cfg, result);
            if (!cfg.out_dir.empty()) std::cout << "report         " << result.report_path << "\n";
            return kOk;
        }

        if (*simulate) {
            RunConfig base;
            try {
                base = resolve_config(sim_flags);
                if (base.out_dir.empty()) throw batcher::Error("simulate needs --out");
            } catch (const batcher::Error& e) {
                std::cerr << "config error: " << e.what() << "\n";
                return kConfigError;
            }
            base.backend = batcher::BackendKind::Mock;
            batcher::SyntheticSpec spec;
            spec.pair_count = sim_pairs;
            spec.cluster_count = sim_clusters;
            spec.seed = base.seed;
            const batcher::Dataset ds = batcher::make_clustered_dataset(spec);
            base.dataset_name = ds.name;
            const auto results = run_design_space(base, ds);

            std::cout << "batching   selection      F1      API$    label$  labeled\n";
            std::size_t i = 0;
            for (const auto batching : {batcher::BatchingStrategy::Random,
                                        batcher::BatchingStrategy::Similar,
                                        batcher::BatchingStrategy::Diverse}) {
                for (const auto selection :
                     {batcher::SelectionStrategy::Fixed, batcher::SelectionStrategy::TopkBatch,
                      batcher::SelectionStrategy::TopkQuestion,
                      batcher::SelectionStrategy::Cover}) {
                    const auto& r = results[i++];
                    std::cout << to_string(batching) << "\t" << to_string(selection) << "\t"
                              << r.metrics.f1 << "\t"
                              << batcher::format_dollars(r.ledger.api_nano) << "\t"
                              << batcher::format_dollars(r.ledger.label_nano) << "\t"
                              << r.ledger.labeled_pairs << "\n";
                }
            }
            return kOk;
        }
    } catch (const batcher::LabelsMissingError& e) {
        std::cerr << "labels missing: " << e.what() << "\n";
        return kLabelsMissing;
    } catch (const batcher::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
