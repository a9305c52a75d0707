#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meshdex/model.hpp"

namespace meshdex {

struct TrainConfig {
    double learning_rate = 5e-4;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 30;
    std::size_t patience = 3;
    double mask_rate = 0.15;
    std::uint64_t seed = 7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;
    double validation_fraction = 0.1;
    // Gradient accumulators per batch; fixed so results do not depend on the
    // number of threads.
    std::size_t lanes = 4;

    /// Throws UsageError when a field is out of range.
    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_mif = 0.0;  // finetune only

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
    std::string objective;  // "mlm" or "bce"
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 0: the initialization was kept
    std::size_t stopped_epoch = 0;
    std::size_t train_examples = 0;
    std::size_t validation_examples = 0;
    double wall_seconds = 0.0;
};

/// Log lines `epoch=.. train_loss=..` plus a key=value summary. Wall-clock
/// time is left out of both so reruns compare byte for byte; it goes to the
/// optional timing file.
void write_report(const std::filesystem::path& log, const std::filesystem::path& summary,
                  const TrainReport& report);
void write_timing(const std::filesystem::path& path, const TrainReport& report);

struct MaskedSequence {
    TokenSequence masked;
    std::vector<MaskTarget> targets;  // ascending position
};

/// ceil(rate * |D|) positions (at least one) drawn without replacement;
/// each is replaced by MASK (80%), a random non-reserved token (10%) or left
/// as is (10%).
MaskedSequence mask_tokens(const TokenSequence& seq, double mask_rate, std::uint64_t seed,
                           std::size_t vocab_size);

/// Candidate rows for documents with no retrieval context: m distinct rows
/// from [0, label_count), ascending.
std::vector<std::size_t> random_candidate_rows(std::size_t label_count, std::size_t m, std::uint64_t seed);

/// Global L2 norm over every gradient tensor; rescales in place when it
/// exceeds max_norm. Returns the norm before clipping.
double clip_gradients(ModelParams& grads, double max_norm);

class Adam {
public:
    Adam(const ModelParams& shape, const TrainConfig& config);
    void step(ModelParams& params, const ModelParams& grads);
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    ModelParams m_, v_;
};

struct PretrainExample {
    TokenSequence doc;
    std::vector<std::size_t> candidate_rows;
};

struct FinetuneExample {
    TokenSequence doc;
    std::vector<std::size_t> candidate_rows;
    std::vector<double> labels;    // one per candidate row
    std::size_t missed_gold = 0;   // gold labels absent from the candidates
};

struct TrainResult {
    ModelParams params;
    TrainReport report;
};

/// Examples must be in chronological order; the last validation_fraction of
/// them are held out for early stopping on MLM loss.
TrainResult pretrain(ModelParams init, const std::vector<PretrainExample>& examples, const TrainConfig& config);

/// Same hold-out rule; early stopping on validation micro-F at threshold 0.5.
/// `validation` overrides the hold-out when non-empty.
TrainResult finetune(ModelParams init, const std::vector<FinetuneExample>& examples, const TrainConfig& config,
                     const std::vector<FinetuneExample>& validation = {});

/// Number of leading examples used for training.
std::size_t training_prefix(std::size_t n, double validation_fraction);

/// Central differences (f(x + eps) - f(x - eps)) / 2eps for every scalar.
std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           std::vector<double> theta, double epsilon);
ModelParams finite_difference_grad(const std::function<double(const ModelParams&)>& f, ModelParams params,
                                   double epsilon);

/// ||a - b|| / max(||a||, ||b||); 0 when both norms are below 1e-7, where a
/// central difference is only rounding noise.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace meshdex
