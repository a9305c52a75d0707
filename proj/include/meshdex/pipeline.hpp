#pragma once

#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meshdex/config.hpp"
#include "meshdex/metrics.hpp"

namespace meshdex {

enum class Command {
    prep,
    index,
    retrieve,
    pretrain,
    finetune,
    thresholds_fit,
    thresholds_apply,
    predict,
    evaluate,
    efficiency_curve,
    all,
};

Command parse_command(std::string_view name);
std::string_view command_name(Command c);

struct RunOptions {
    bool force = false;  // ignore up-to-date manifests
    bool quiet = false;
    // evaluate on explicit files instead of the run's own artifacts
    std::optional<std::filesystem::path> gold;
    std::optional<std::filesystem::path> pred;
    std::optional<std::filesystem::path> ontology;
};

// Artifact names inside the output directory.
namespace artifact {
inline constexpr const char* vocab = "vocab.tsv";
inline constexpr const char* index = "index.bin";
inline constexpr const char* index_ids = "index_ids.tsv";
inline constexpr const char* candidates_train = "candidates_train.tsv";
inline constexpr const char* candidates_train_eval = "candidates_train_eval.tsv";
inline constexpr const char* candidates_test = "candidates_test.tsv";
inline constexpr const char* candidates_ssl = "candidates_ssl.tsv";
inline constexpr const char* retrieval_report = "retrieval_report.txt";
inline constexpr const char* pretrained = "pretrained.ckpt";
inline constexpr const char* model = "model.ckpt";
inline constexpr const char* scores_train = "scores_train.tsv";
inline constexpr const char* thresholds = "thresholds.tsv";
inline constexpr const char* threshold_trace = "threshold_trace.txt";
inline constexpr const char* scores_test = "scores_test.tsv";
inline constexpr const char* predictions_test = "predictions_test.tsv";
inline constexpr const char* gold_test = "gold_test.tsv";
inline constexpr const char* metrics_table = "metrics_test.txt";
inline constexpr const char* metrics_kv = "metrics_test.kv";
inline constexpr const char* metrics_major_kv = "metrics_test_major.kv";
inline constexpr const char* efficiency_tsv = "efficiency_curve.tsv";
inline constexpr const char* efficiency_dat = "efficiency_curve.dat";
}  // namespace artifact

/// Runs one stage (or the whole chain for `all`), writing artifacts and a
/// `manifest_<stage>.txt` into cfg.out_dir. Throws meshdex::Error subclasses.
void run_command(Command command, const PipelineConfig& cfg, const RunOptions& options = {});

/// 1 usage/config, 2 data, 3 numeric.
int exit_code_for(const std::exception& e);

/// Reads `key=value` lines.
std::map<std::string, std::string> read_keyvalues(const std::filesystem::path& path);

struct EfficiencyPoint {
    double fraction = 0.0;
    std::size_t train_docs = 0;
    MetricsReport metrics;
};

/// Chronological prefixes of the training corpus; each point re-fits the
/// index, fine-tunes, fits thresholds and evaluates on the test corpus.
std::vector<EfficiencyPoint> efficiency_curve(const PipelineConfig& cfg, const RunOptions& options = {});

}  // namespace meshdex
