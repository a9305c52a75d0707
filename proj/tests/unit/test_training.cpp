#include <doctest.h>

#include <cmath>
#include <set>

#include "meshdex/error.hpp"
#include "meshdex/losses.hpp"
#include "meshdex/synthetic.hpp"
#include "meshdex/training.hpp"
#include "support/fixtures.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;

namespace {

std::vector<FinetuneExample> tiny_finetune_set(std::size_t n)
{
    Rng rng(21);
    std::vector<FinetuneExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        FinetuneExample ex;
        ex.doc.doc_id = fmt::format("f{}", i);
        for (int t = 0; t < 6; ++t) {
            ex.doc.tokens.push_back(static_cast<TokenId>(kReservedTokens + rng.uniform_index(11)));
        }
        ex.candidate_rows = random_candidate_rows(7, 3, i);
        for (const std::size_t r : ex.candidate_rows) {
            // label depends on whether the row's token appears in the doc
            const auto tok = static_cast<TokenId>(kReservedTokens + r);
            ex.labels.push_back(std::count(ex.doc.tokens.begin(), ex.doc.tokens.end(), tok) > 0 ? 1.0 : 0.0);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

TrainConfig quick(std::size_t epochs)
{
    TrainConfig c;
    c.learning_rate = 0.01;
    c.batch_size = 4;
    c.max_epochs = epochs;
    c.patience = 100;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("bce examples")
{
    const std::vector<double> half{0.5}, one{1.0};
    CHECK(bce_loss(half, one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const std::vector<double> s{0.9, 0.2}, y{1.0, 0.0};
    CHECK(bce_loss(s, y) == doctest::Approx(0.5 * (-std::log(0.9) - std::log(0.8))).epsilon(1e-12));
    CHECK(bce_loss(s, y) == doctest::Approx(0.1643).epsilon(1e-3));
    const std::vector<double> perfect{1.0, 0.0};
    CHECK(bce_loss(perfect, y) < 1e-5);
    CHECK(std::isfinite(bce_loss(std::vector<double>{0.0}, one)));
    CHECK_THROWS_AS(bce_loss(s, one), UsageError);
}

TEST_CASE("mask_tokens picks ceil(rate * n) distinct positions and replays")
{
    TokenSequence seq{"m", {}};
    for (TokenId t = 3; t < 23; ++t) {
        seq.tokens.push_back(t);
    }
    const auto a = mask_tokens(seq, 0.15, 9, 30);
    CHECK(a.targets.size() == 3);
    std::set<std::size_t> pos;
    for (const auto& t : a.targets) {
        pos.insert(t.position);
        CHECK(t.original == seq.tokens[t.position]);
    }
    CHECK(pos.size() == 3);
    CHECK(std::is_sorted(a.targets.begin(), a.targets.end(),
                         [](const MaskTarget& x, const MaskTarget& y) { return x.position < y.position; }));
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!pos.contains(i)) {
            CHECK(a.masked.tokens[i] == seq.tokens[i]);
        }
    }
    const auto b = mask_tokens(seq, 0.15, 9, 30);
    CHECK(a.masked.tokens == b.masked.tokens);
    CHECK(a.targets == b.targets);
    // short sequences still get one target
    CHECK(mask_tokens(TokenSequence{"s", {5, 6}}, 0.15, 1, 30).targets.size() == 1);
}

TEST_CASE("mask replacement mix is roughly 80/10/10")
{
    TokenSequence seq{"m", std::vector<TokenId>(40, 7)};
    std::size_t mask = 0, same = 0, other = 0;
    for (std::uint64_t s = 0; s < 2000; ++s) {
        const auto m = mask_tokens(seq, 0.15, s, 50);
        for (const auto& t : m.targets) {
            const TokenId got = m.masked.tokens[t.position];
            if (got == kMaskId) {
                ++mask;
            } else if (got == 7) {
                ++same;
            } else {
                CHECK(got >= kReservedTokens);
                CHECK(got < 50);
                ++other;
            }
        }
    }
    const double n = static_cast<double>(mask + same + other);
    CHECK(mask / n == doctest::Approx(0.8).epsilon(0.05));
    // a random replacement can also hit the original token
    CHECK(other / n == doctest::Approx(0.1).epsilon(0.25));
    CHECK(same / n == doctest::Approx(0.1).epsilon(0.25));
}

TEST_CASE("random candidate rows")
{
    const auto r = random_candidate_rows(10, 4, 5);
    CHECK(r.size() == 4);
    CHECK(std::is_sorted(r.begin(), r.end()));
    CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == 4);
    CHECK(r == random_candidate_rows(10, 4, 5));
    CHECK(random_candidate_rows(3, 10, 5) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("finite differences on a quadratic")
{
    const auto g = finite_difference_grad([](const std::vector<double>& x) { return x[0] * x[0]; }, {3.0}, 1e-4);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-8));
    const Matrix a(1, 2, std::vector<double>{1.0, 0.0});
    const Matrix b(1, 2, std::vector<double>{1.0, 1e-3});
    CHECK(relative_error(a, a) == 0.0);
    CHECK(relative_error(a, b) == doctest::Approx(1e-3 / std::sqrt(1.0 + 1e-6)));
    CHECK(relative_error(Matrix(1, 1, std::vector<double>{1e-9}), Matrix(1, 1)) == 0.0);
}

TEST_CASE("gradient clipping rescales to the limit")
{
    ModelParams g = tiny_params().zeros_like();
    g.tensor(0).values()[0] = 3.0;
    g.tensor(1).values()[0] = 4.0;
    CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0));
    CHECK(g.tensor(0).values()[0] == doctest::Approx(0.6));
    CHECK(g.tensor(1).values()[0] == doctest::Approx(0.8));
    CHECK(clip_gradients(g, 1.0) == doctest::Approx(1.0));
    CHECK(g.tensor(1).values()[0] == doctest::Approx(0.8));
}

TEST_CASE("adam first step moves each weight by about lr")
{
    ModelParams p = tiny_params();
    const ModelParams before = p;
    ModelParams g = p.zeros_like();
    g.tensor(0).values()[0] = 0.5;
    g.tensor(0).values()[1] = -2.0;
    TrainConfig c;
    c.learning_rate = 0.01;
    Adam adam(p, c);
    adam.step(p, g);
    CHECK(adam.steps() == 1);
    CHECK(p.tensor(0).values()[0] == doctest::Approx(before.tensor(0).values()[0] - 0.01).epsilon(1e-6));
    CHECK(p.tensor(0).values()[1] == doctest::Approx(before.tensor(0).values()[1] + 0.01).epsilon(1e-6));
    CHECK(p.tensor(0).values()[2] == before.tensor(0).values()[2]);
}

TEST_CASE("training prefix and validation")
{
    CHECK(training_prefix(200, 0.1) == 180);
    CHECK(training_prefix(10, 0.1) == 9);
    CHECK(training_prefix(1, 0.1) == 1);
    TrainConfig c;
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("zero epochs keeps the initialization")
{
    const ModelParams init = tiny_params();
    const auto r = finetune(init, tiny_finetune_set(12), quick(0));
    CHECK(r.params == init);
    CHECK(r.report.best_epoch == 0);
    CHECK(r.report.epochs.empty());
}

TEST_CASE("learning rate zero freezes the weights")
{
    const ModelParams init = tiny_params();
    TrainConfig c = quick(3);
    c.learning_rate = 0.0;
    const auto r = finetune(init, tiny_finetune_set(12), c);
    CHECK(r.params == init);
    CHECK(r.report.epochs.size() == 3);
}

TEST_CASE("finetune lowers the loss, is deterministic and keeps the best epoch")
{
    const ModelParams init = tiny_params();
    const auto set = tiny_finetune_set(40);
    const auto a = finetune(init, set, quick(15));
    const auto b = finetune(init, set, quick(15));
    CHECK(a.params == b.params);
    CHECK(a.report.epochs == b.report.epochs);
    CHECK(a.report.epochs.back().train_loss < a.report.epochs.front().train_loss);
    CHECK(a.report.train_examples == 36);
    CHECK(a.report.validation_examples == 4);
    REQUIRE(a.report.best_epoch >= 1);
    // the kept params reproduce the best epoch's validation loss
    const auto& best = a.report.epochs[a.report.best_epoch - 1];
    double loss = 0.0;
    for (std::size_t i = 36; i < set.size(); ++i) {
        const auto s = forward_index(set[i].doc, set[i].candidate_rows, a.params);
        loss += bce_loss(s, set[i].labels);
    }
    CHECK(loss / 4.0 == doctest::Approx(best.validation_loss).epsilon(1e-9));
}

TEST_CASE("early stopping honours patience")
{
    TrainConfig c = quick(50);
    c.patience = 2;
    c.learning_rate = 0.2;  // overshoots quickly
    const auto r = finetune(tiny_params(), tiny_finetune_set(20), c);
    CHECK(r.report.stopped_epoch <= 50);
    if (r.report.stopped_epoch < 50) {
        CHECK(r.report.stopped_epoch - r.report.best_epoch == 2);
    }
}

TEST_CASE("mlm pretraining learns the synthetic corpus")
{
    SyntheticSpec spec;
    spec.ssl_docs = 200;
    spec.seed = 7;
    const SyntheticBenchmark bench = make_synthetic(spec);
    const CorpusStore corpus(bench.ssl, StopwordSet::builtin());
    const Vocabulary vocab = build_vocabulary(corpus, 100);
    REQUIRE(vocab.size() > 90);
    const auto seqs = preprocess_corpus(corpus, vocab);
    std::vector<PretrainExample> examples;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        examples.push_back({seqs[i], random_candidate_rows(bench.ontology.size(), 10, i)});
    }
    ModelConfig mc;
    mc.d_model = 32;
    mc.n_layers = 1;
    mc.d_ff = 64;
    mc.n_heads = 4;
    mc.max_sequence_length = 64;
    mc.dropout = 0.0;
    mc.vocab_size = vocab.size();
    mc.label_count = bench.ontology.size();
    TrainConfig tc;
    tc.learning_rate = 0.001;
    tc.batch_size = 2;
    tc.max_epochs = 30;
    tc.patience = 30;
    tc.seed = 7;
    const auto r = pretrain(initialize_params(mc, 7), examples, tc);
    REQUIRE(r.report.epochs.size() == 30);
    const double first = r.report.epochs.front().train_loss;
    const double last = r.report.epochs.back().train_loss;
    MESSAGE("mlm train loss " << first << " -> " << last);
    CHECK(first < std::log(100.0) * 1.05);
    CHECK(last < 0.5 * std::log(100.0));
}
