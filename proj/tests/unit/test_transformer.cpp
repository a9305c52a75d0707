#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meshdex/error.hpp"
#include "meshdex/model.hpp"
#include "meshdex/training.hpp"
#include "support/fixtures.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kFdEpsilon = 1e-6;

std::vector<std::size_t> reversed(std::vector<std::size_t> v)
{
    std::reverse(v.begin(), v.end());
    return v;
}

void check_gradients(const std::function<double(const ModelParams&, ModelParams*)>& loss, const ModelParams& params)
{
    ModelParams analytic = params.zeros_like();
    loss(params, &analytic);
    const ModelParams numeric =
        finite_difference_grad([&](const ModelParams& p) { return loss(p, nullptr); }, params, kFdEpsilon);
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const double err = relative_error(analytic.tensor(i), numeric.tensor(i));
        INFO(params.names()[i], " rel err ", err);
        CHECK(err < kGradTolerance);
    }
}

}  // namespace

TEST_CASE("positional encoding is the sinusoid")
{
    const Matrix pe = positional_encoding(3, 4);
    CHECK(pe(0, 0) == 0.0);
    CHECK(pe(0, 1) == 1.0);
    CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(pe(1, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(pe(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)));
    CHECK(pe(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("parameter table has the documented shapes")
{
    const ModelConfig c = tiny_config(1);
    const ModelParams p(c);
    CHECK(p.at("tok_emb").rows() == c.vocab_size);
    CHECK(p.at("idx_emb").rows() == c.label_count);
    CHECK(p.at("doc.0.w1").cols() == c.d_ff);
    CHECK(p.at("idx.0.w2").rows() == c.d_ff);
    CHECK(p.at("proj.bias").rows() == c.label_count);
    CHECK(p.at("mlm.mix_w").rows() == 2 * c.d_model);
    CHECK(p.at("mlm.out_w").cols() == c.vocab_size);
    CHECK_THROWS_AS(p.at("nope"), DataError);
}

TEST_CASE("config validation")
{
    ModelConfig c = tiny_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config();
    c.d_model = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("cross-attention rows are convex combinations of document encodings")
{
    const ModelParams p = tiny_params();
    const auto enc = encode_streams(tiny_doc().tokens, tiny_rows(), p);
    const Matrix w = cross_attention_weights(enc.index, enc.doc);
    const Matrix o = cross_attention(enc.index, enc.doc);
    REQUIRE(w.rows() == tiny_rows().size());
    REQUIRE(w.cols() == tiny_doc().size());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            CHECK(w(i, j) >= 0.0);
            sum += w(i, j);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-6);
        for (std::size_t c = 0; c < o.cols(); ++c) {
            double lo = 1e300, hi = -1e300, mix = 0.0;
            for (std::size_t j = 0; j < enc.doc.rows(); ++j) {
                lo = std::min(lo, enc.doc(j, c));
                hi = std::max(hi, enc.doc(j, c));
                mix += w(i, j) * enc.doc(j, c);
            }
            CHECK(o(i, c) >= lo - 1e-12);
            CHECK(o(i, c) <= hi + 1e-12);
            CHECK(o(i, c) == doctest::Approx(mix).epsilon(1e-12));
        }
    }
}

TEST_CASE("scores are bitwise equivariant under candidate permutation")
{
    const ModelParams p = tiny_params();
    const auto rows = tiny_rows();
    const auto a = forward_index(tiny_doc(), rows, p);
    const auto b = forward_index(tiny_doc(), reversed(rows), p);
    REQUIRE(a.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(a[i] == b[rows.size() - 1 - i]);
        CHECK(a[i] > 0.0);
        CHECK(a[i] < 1.0);
    }
}

TEST_CASE("index stream has no positions, document stream does")
{
    const ModelParams p = tiny_params();
    const auto rows = tiny_rows();
    const auto a = encode_streams(tiny_doc().tokens, rows, p);
    const auto b = encode_streams(tiny_doc().tokens, reversed(rows), p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < a.index.cols(); ++c) {
            CHECK(a.index(i, c) == b.index(rows.size() - 1 - i, c));
        }
    }
    auto shuffled = tiny_doc().tokens;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto r = encode_streams(shuffled, rows, p);
    double diff = 0.0;
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        for (std::size_t c = 0; c < r.doc.cols(); ++c) {
            diff += std::abs(r.doc(shuffled.size() - 1 - i, c) - a.doc(i, c));
        }
    }
    CHECK(diff > 1e-3);
}

TEST_CASE("project_scores matches forward_index")
{
    const ModelParams p = tiny_params();
    const auto rows = tiny_rows();
    const auto enc = encode_streams(tiny_doc().tokens, rows, p);
    const auto s = project_scores(cross_attention(enc.index, enc.doc), enc.index, rows, p);
    const auto f = forward_index(tiny_doc(), rows, p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(s[i] == doctest::Approx(f[i]).epsilon(1e-12));
    }
}

TEST_CASE("bad inputs are rejected")
{
    const ModelParams p = tiny_params();
    CHECK_THROWS_AS(forward_index({"e", {}}, tiny_rows(), p), UsageError);
    CHECK_THROWS_AS(forward_index(tiny_doc(), {}, p), UsageError);
    CHECK_THROWS_AS(forward_index(tiny_doc(), std::vector<std::size_t>{1, 1}, p), UsageError);
    CHECK_THROWS_AS(forward_index(tiny_doc(), std::vector<std::size_t>{99}, p), UsageError);
    CHECK_THROWS_AS(forward_index({"v", {3, 99}}, tiny_rows(), p), UsageError);
    CHECK_THROWS_AS(forward_index({"l", std::vector<TokenId>(17, 3)}, tiny_rows(), p), UsageError);
    CHECK_THROWS_AS(forward_mlm(tiny_doc(), tiny_rows(), p), UsageError);
}

TEST_CASE("mlm output shapes and word-side attention")
{
    const ModelParams p = tiny_params();
    TokenSequence masked = tiny_doc();
    masked.tokens[2] = kMaskId;
    const auto out = forward_mlm(masked, tiny_rows(), p);
    CHECK(out.logits.rows() == masked.size());
    CHECK(out.logits.cols() == tiny_config().vocab_size);
    REQUIRE(out.word_attention.rows() == masked.size());
    REQUIRE(out.word_attention.cols() == tiny_rows().size());
    for (std::size_t i = 0; i < masked.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < tiny_rows().size(); ++j) {
            s += out.word_attention(i, j);
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("index loss gradients match finite differences")
{
    const auto rows = tiny_rows();
    const auto labels = tiny_labels();
    check_gradients(
        [&](const ModelParams& p, ModelParams* g) { return index_loss(tiny_doc(), rows, labels, p, g); },
        tiny_params());
}

TEST_CASE("key biases get no gradient")
{
    // Adding a constant to every key shifts each softmax row uniformly.
    ModelParams g = tiny_params().zeros_like();
    index_loss(tiny_doc(), tiny_rows(), tiny_labels(), tiny_params(), &g);
    for (const char* name : {"doc.0.bk", "idx.1.bk"}) {
        for (const double x : g.at(name).values()) {
            CHECK(std::abs(x) < 1e-14);
        }
    }
    CHECK(g.at("doc.0.bq").values() != std::vector<double>(8, 0.0));
}

TEST_CASE("mlm loss gradients match finite differences")
{
    TokenSequence masked = tiny_doc();
    masked.tokens[1] = kMaskId;
    masked.tokens[4] = kMaskId;
    const std::vector<MaskTarget> targets{{1, 9}, {4, 7}};
    const auto rows = tiny_rows();
    check_gradients([&](const ModelParams& p, ModelParams* g) { return mlm_loss(masked, targets, rows, p, g); },
                    tiny_params());
}

TEST_CASE("dropout changes the loss only when enabled and is seeded")
{
    const ModelParams p = tiny_params();
    const auto rows = tiny_rows();
    const auto labels = tiny_labels();
    const double plain = index_loss(tiny_doc(), rows, labels, p, nullptr);
    CHECK(index_loss(tiny_doc(), rows, labels, p, nullptr, {0.0, 9}) == plain);
    const double a = index_loss(tiny_doc(), rows, labels, p, nullptr, {0.3, 9});
    const double b = index_loss(tiny_doc(), rows, labels, p, nullptr, {0.3, 9});
    CHECK(a == b);
    CHECK(a != plain);
}

TEST_CASE("untrained mlm loss is near ln|V|")
{
    ModelConfig c = tiny_config(1);
    c.d_model = 32;
    c.n_heads = 4;
    c.d_ff = 64;
    c.vocab_size = 100;
    c.label_count = 20;
    c.max_sequence_length = 64;
    const ModelParams p = initialize_params(c, 7);
    Rng rng(3);
    double total = 0.0;
    constexpr int docs = 40;
    for (int d = 0; d < docs; ++d) {
        TokenSequence seq{"u", {}};
        for (int i = 0; i < 20; ++i) {
            seq.tokens.push_back(static_cast<TokenId>(3 + rng.uniform_index(97)));
        }
        const auto m = mask_tokens(seq, 0.15, derive_seed(11, d), c.vocab_size);
        total += mlm_loss(m.masked, m.targets, random_candidate_rows(c.label_count, 5, d), p, nullptr);
    }
    const double mean = total / docs;
    CHECK(std::abs(mean - std::log(100.0)) < 0.05 * std::log(100.0));
}

TEST_CASE("checkpoints round-trip bitwise")
{
    TempDir dir("ckpt");
    const ModelParams p = tiny_params();
    save_checkpoint(dir / "m.ckpt", p);
    const ModelParams q = load_checkpoint(dir / "m.ckpt");
    CHECK(q == p);
    CHECK(q.config() == p.config());
    save_checkpoint(dir / "n.ckpt", q);
    CHECK(slurp(dir / "m.ckpt") == slurp(dir / "n.ckpt"));
}

TEST_CASE("initialization is seeded and uses word vectors")
{
    const ModelConfig c = tiny_config(1);
    CHECK(initialize_params(c, 1) == initialize_params(c, 1));
    CHECK_FALSE(initialize_params(c, 1) == initialize_params(c, 2));
    const ModelParams p = initialize_params(c, 1);
    for (const double g : p.at("doc.0.ln1_g").values()) {
        CHECK(g == 1.0);
    }
    for (const double b : p.at("idx.0.b1").values()) {
        CHECK(b == 0.0);
    }
}
