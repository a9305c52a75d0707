#include "meshdex/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <fmt/os.h>

#include "meshdex/error.hpp"
#include "meshdex/kernels.hpp"
#include "meshdex/losses.hpp"
#include "meshdex/rng.hpp"

namespace meshdex {

void TrainConfig::validate() const
{
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw UsageError(fmt::format("learning_rate must be a finite non-negative number, got {}", learning_rate));
    }
    if (batch_size == 0) {
        throw UsageError("batch_size must be positive");
    }
    if (patience == 0) {
        throw UsageError("patience must be at least 1");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw UsageError(fmt::format("mask_rate must lie in (0, 1), got {}", mask_rate));
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw UsageError("adam parameters out of range");
    }
    if (!(clip_norm > 0.0)) {
        throw UsageError("clip_norm must be positive");
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw UsageError(fmt::format("validation_fraction must lie in [0, 1), got {}", validation_fraction));
    }
    if (lanes == 0) {
        throw UsageError("lanes must be positive");
    }
}

void write_report(const std::filesystem::path& log, const std::filesystem::path& summary,
                  const TrainReport& report)
{
    {
        auto out = fmt::output_file(log.string());
        for (const auto& e : report.epochs) {
            out.print("epoch={} train_loss={} validation_loss={} validation_mif={}\n", e.epoch, e.train_loss,
                      e.validation_loss, e.validation_mif);
        }
    }
    auto out = fmt::output_file(summary.string());
    out.print("objective={}\nseed={}\nepochs={}\nbest_epoch={}\nstopped_epoch={}\ntrain_examples={}\n"
              "validation_examples={}\n",
              report.objective, report.seed, report.epochs.size(), report.best_epoch, report.stopped_epoch,
              report.train_examples, report.validation_examples);
    if (report.best_epoch > 0) {
        const auto& b = report.epochs[report.best_epoch - 1];
        out.print("best_validation_loss={}\nbest_validation_mif={}\n", b.validation_loss, b.validation_mif);
    }
}

void write_timing(const std::filesystem::path& path, const TrainReport& report)
{
    auto out = fmt::output_file(path.string());
    out.print("wall_seconds={:.3f}\n", report.wall_seconds);
}

MaskedSequence mask_tokens(const TokenSequence& seq, double mask_rate, std::uint64_t seed, std::size_t vocab_size)
{
    if (!(mask_rate > 0.0)) {
        throw UsageError(fmt::format("mask_rate must be positive, got {}", mask_rate));
    }
    if (seq.empty()) {
        throw UsageError(fmt::format("cannot mask empty document '{}'", seq.doc_id));
    }
    if (vocab_size <= kReservedTokens) {
        throw UsageError("vocabulary has no ordinary tokens");
    }
    const std::size_t n = seq.size();
    // The small slack keeps products such as 0.15 * 20 from rounding up.
    auto count = static_cast<std::size_t>(std::ceil(mask_rate * static_cast<double>(n) - 1e-9));
    count = std::clamp<std::size_t>(count, 1, n);

    Rng rng(derive_seed(seed, 0x3A5C));
    std::vector<std::size_t> slots(n);
    std::iota(slots.begin(), slots.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(slots[i], slots[i + rng.uniform_index(n - i)]);
    }
    std::vector<std::size_t> chosen(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());

    MaskedSequence out{seq, {}};
    out.targets.reserve(count);
    for (const std::size_t pos : chosen) {
        out.targets.push_back({pos, seq.tokens[pos]});
        const double u = rng.uniform01();
        const auto random_token = static_cast<TokenId>(kReservedTokens + rng.uniform_index(vocab_size - kReservedTokens));
        if (u < 0.8) {
            out.masked.tokens[pos] = kMaskId;
        } else if (u < 0.9) {
            out.masked.tokens[pos] = random_token;
        }
    }
    return out;
}

std::vector<std::size_t> random_candidate_rows(std::size_t label_count, std::size_t m, std::uint64_t seed)
{
    m = std::min(m, label_count);
    Rng rng(derive_seed(seed, 0xCA4D));
    std::vector<std::size_t> all(label_count);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        std::swap(all[i], all[i + rng.uniform_index(label_count - i)]);
    }
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
}

double clip_gradients(ModelParams& grads, double max_norm)
{
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.tensor_count(); ++i) {
        for (const double g : grads.tensor(i).values()) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (std::size_t i = 0; i < grads.tensor_count(); ++i) {
            for (double& g : grads.tensor(i).values()) {
                g *= s;
            }
        }
    }
    return norm;
}

Adam::Adam(const ModelParams& shape, const TrainConfig& config)
    : lr_(config.learning_rate), b1_(config.beta1), b2_(config.beta2), eps_(config.epsilon),
      m_(shape.zeros_like()), v_(shape.zeros_like())
{
}

void Adam::step(ModelParams& params, const ModelParams& grads)
{
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        auto& p = params.tensor(i).values();
        const auto& g = grads.tensor(i).values();
        auto& m = m_.tensor(i).values();
        auto& v = v_.tensor(i).values();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
            v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
            p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

std::size_t training_prefix(std::size_t n, double validation_fraction)
{
    if (n < 2 || validation_fraction <= 0.0) {
        return n;
    }
    const auto held = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n) + 1e-9)));
    return n - held;
}

namespace {

using Clock = std::chrono::steady_clock;

// Shared epoch loop. `example_loss(params, i, grads, dropout)` evaluates training
// example i; `evaluate()` scores the current params on held-out data and
// returns (loss, mif). `better(candidate, best)` decides snapshots.
struct LoopHooks {
    std::function<double(const ModelParams&, std::size_t, ModelParams*, DropoutSpec)> example_loss;
    std::function<std::string(std::size_t)> example_name;
    std::function<EpochRecord(const ModelParams&)> evaluate;
    std::function<bool(const EpochRecord&, const EpochRecord&)> better;
};

TrainResult run_epochs(ModelParams params, std::size_t n_train, const TrainConfig& config, const LoopHooks& hooks,
                       TrainReport report)
{
    const auto start = Clock::now();
    const double dropout_rate = params.config().dropout;
    const std::size_t lanes = std::min(config.lanes, std::max<std::size_t>(1, config.batch_size));
    std::vector<ModelParams> lane_grads(lanes, params.zeros_like());
    std::vector<double> lane_loss(lanes);
    ModelParams total = params.zeros_like();
    Adam adam(params, config);
    ModelParams best = params;
    EpochRecord best_record;
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs && n_train > 0; ++epoch) {
        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(config.seed, 0x5F1E, epoch));
        for (std::size_t i = n_train; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
        }
        double epoch_loss = 0.0;
        for (std::size_t begin = 0, batch = 0; begin < n_train; begin += config.batch_size, ++batch) {
            const std::size_t size = std::min(config.batch_size, n_train - begin);
            for (auto& g : lane_grads) {
                g.set_zero();
            }
            std::fill(lane_loss.begin(), lane_loss.end(), 0.0);
            kernels::for_each_in_lanes(size, lanes, [&](std::size_t lane, std::size_t k) {
                const std::size_t ex = order[begin + k];
                const DropoutSpec drop{dropout_rate, derive_seed(config.seed, epoch, ex)};
                lane_loss[lane] += hooks.example_loss(params, ex, &lane_grads[lane], drop);
            });
            double batch_loss = 0.0;
            for (const double l : lane_loss) {
                batch_loss += l;
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericError(fmt::format("non-finite loss in epoch {} batch {} (first document '{}')", epoch,
                                               batch, hooks.example_name(order[begin])));
            }
            epoch_loss += batch_loss;
            const double inv = 1.0 / static_cast<double>(size);
            for (std::size_t t = 0; t < total.tensor_count(); ++t) {
                auto& dst = total.tensor(t).values();
                std::fill(dst.begin(), dst.end(), 0.0);
                for (const auto& g : lane_grads) {
                    const auto& src = g.tensor(t).values();
                    for (std::size_t k = 0; k < dst.size(); ++k) {
                        dst[k] += src[k];
                    }
                }
                for (double& x : dst) {
                    x *= inv;
                }
            }
            const double norm = clip_gradients(total, config.clip_norm);
            if (!std::isfinite(norm)) {
                throw NumericError(fmt::format("non-finite gradient in epoch {} batch {} (first document '{}')",
                                               epoch, batch, hooks.example_name(order[begin])));
            }
            adam.step(params, total);
        }
        EpochRecord rec = hooks.evaluate(params);
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(n_train);
        if (report.validation_examples == 0) {
            rec.validation_loss = rec.train_loss;
        }
        report.epochs.push_back(rec);
        report.stopped_epoch = epoch;
        if (report.best_epoch == 0 || hooks.better(rec, best_record)) {
            best = params;
            best_record = rec;
            report.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (report.best_epoch == 0) {
        best = std::move(params);
    }
    return {std::move(best), std::move(report)};
}

}  // namespace

TrainResult pretrain(ModelParams init, const std::vector<PretrainExample>& examples, const TrainConfig& config)
{
    config.validate();
    const std::size_t vocab = init.config().vocab_size;
    const std::size_t n_train = training_prefix(examples.size(), config.validation_fraction);

    // Held-out masks are drawn once so validation loss is comparable across
    // epochs.
    std::vector<MaskedSequence> held;
    for (std::size_t i = n_train; i < examples.size(); ++i) {
        held.push_back(mask_tokens(examples[i].doc, config.mask_rate, derive_seed(config.seed, 0x7A11, i), vocab));
    }

    TrainReport report;
    report.objective = "mlm";
    report.seed = config.seed;
    report.train_examples = n_train;
    report.validation_examples = held.size();

    LoopHooks hooks;
    hooks.example_name = [&](std::size_t i) { return examples[i].doc.doc_id; };
    hooks.example_loss = [&](const ModelParams& p, std::size_t i, ModelParams* grads, DropoutSpec drop) {
        // Fresh masks every epoch; the dropout seed already carries the epoch.
        const MaskedSequence ms = mask_tokens(examples[i].doc, config.mask_rate, derive_seed(drop.seed, 0x3A5), vocab);
        return mlm_loss(ms.masked, ms.targets, examples[i].candidate_rows, p, grads, drop);
    };
    hooks.evaluate = [&](const ModelParams& p) {
        EpochRecord rec;
        if (held.empty()) {
            return rec;
        }
        std::vector<double> losses(held.size());
        kernels::parallel_for(held.size(), [&](std::size_t k) {
            losses[k] = mlm_loss(held[k].masked, held[k].targets, examples[n_train + k].candidate_rows, p, nullptr);
        });
        rec.validation_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
        return rec;
    };
    hooks.better = [](const EpochRecord& a, const EpochRecord& b) { return a.validation_loss < b.validation_loss; };
    return run_epochs(std::move(init), n_train, config, hooks, std::move(report));
}

TrainResult finetune(ModelParams init, const std::vector<FinetuneExample>& examples, const TrainConfig& config,
                     const std::vector<FinetuneExample>& validation)
{
    config.validate();
    const std::size_t n_train =
        validation.empty() ? training_prefix(examples.size(), config.validation_fraction) : examples.size();
    std::vector<const FinetuneExample*> held;
    if (validation.empty()) {
        for (std::size_t i = n_train; i < examples.size(); ++i) {
            held.push_back(&examples[i]);
        }
    } else {
        for (const auto& ex : validation) {
            held.push_back(&ex);
        }
    }

    TrainReport report;
    report.objective = "bce";
    report.seed = config.seed;
    report.train_examples = n_train;
    report.validation_examples = held.size();

    LoopHooks hooks;
    hooks.example_name = [&](std::size_t i) { return examples[i].doc.doc_id; };
    hooks.example_loss = [&](const ModelParams& p, std::size_t i, ModelParams* grads, DropoutSpec drop) {
        const auto& ex = examples[i];
        return index_loss(ex.doc, ex.candidate_rows, ex.labels, p, grads, drop);
    };
    hooks.evaluate = [&](const ModelParams& p) {
        EpochRecord rec;
        if (held.empty()) {
            return rec;
        }
        std::vector<double> losses(held.size());
        std::vector<std::array<std::size_t, 3>> counts(held.size());
        kernels::parallel_for(held.size(), [&](std::size_t k) {
            const auto& ex = *held[k];
            const std::vector<double> s = forward_index(ex.doc, ex.candidate_rows, p);
            losses[k] = bce_loss(s, ex.labels);
            std::array<std::size_t, 3> c{0, 0, ex.missed_gold};
            for (std::size_t j = 0; j < s.size(); ++j) {
                const bool pred = s[j] > 0.5;
                const bool gold = ex.labels[j] > 0.5;
                c[0] += pred && gold;
                c[1] += pred && !gold;
                c[2] += !pred && gold;
            }
            counts[k] = c;
        });
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& c : counts) {
            tp += c[0];
            fp += c[1];
            fn += c[2];
        }
        rec.validation_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
        const double denom = static_cast<double>(2 * tp + fp + fn);
        rec.validation_mif = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
        return rec;
    };
    const bool has_validation = !held.empty();
    hooks.better = [has_validation](const EpochRecord& a, const EpochRecord& b) {
        if (has_validation && a.validation_mif != b.validation_mif) {
            return a.validation_mif > b.validation_mif;
        }
        return a.validation_loss < b.validation_loss;
    };
    return run_epochs(std::move(init), n_train, config, hooks, std::move(report));
}

std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           std::vector<double> theta, double epsilon)
{
    if (!(epsilon > 0.0)) {
        throw UsageError("finite difference step must be positive");
    }
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double x = theta[i];
        theta[i] = x + epsilon;
        const double up = f(theta);
        theta[i] = x - epsilon;
        const double down = f(theta);
        theta[i] = x;
        g[i] = (up - down) / (2.0 * epsilon);
    }
    return g;
}

ModelParams finite_difference_grad(const std::function<double(const ModelParams&)>& f, ModelParams params,
                                   double epsilon)
{
    if (!(epsilon > 0.0)) {
        throw UsageError("finite difference step must be positive");
    }
    ModelParams g = params.zeros_like();
    for (std::size_t t = 0; t < params.tensor_count(); ++t) {
        auto& values = params.tensor(t).values();
        auto& out = g.tensor(t).values();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double x = values[k];
            values[k] = x + epsilon;
            const double up = f(params);
            values[k] = x - epsilon;
            const double down = f(params);
            values[k] = x;
            out[k] = (up - down) / (2.0 * epsilon);
        }
    }
    return g;
}

double relative_error(const Matrix& a, const Matrix& b)
{
    if (!a.same_shape(b)) {
        throw UsageError("relative_error: shape mismatch");
    }
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    if (scale < 1e-7) {
        return 0.0;
    }
    return std::sqrt(diff) / scale;
}

}  // namespace meshdex
