#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "meshdex/corpus.hpp"
#include "meshdex/error.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/rng.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;

namespace {

Document doc(std::string id, std::string text, LabelSet majors = {})
{
    Document d;
    d.id = std::move(id);
    d.title = std::move(text);
    d.date = parse_date("2020-01-01");
    d.mesh_major = std::move(majors);
    return d;
}

}  // namespace

TEST_CASE("idf and term weights by hand")
{
    TermWeighting w;
    w.doc_count = 9;
    w.mean_length = 4.0;
    w.document_frequency = {0, 0, 0, 4, 0};
    CHECK(w.idf(3) == doctest::Approx(std::log(10.0 / 5.0) + 1.0));
    CHECK(w.idf(4) == doctest::Approx(std::log(10.0) + 1.0));
    w.scheme = WeightingScheme::tfidf;
    CHECK(term_weight(3, 2, 8, w) == doctest::Approx(2.0 * w.idf(3)));
    w.scheme = WeightingScheme::bm25;
    // |d| = 8 = 2 avglen: norm = 0.25 + 0.75 * 2 = 1.75
    CHECK(term_weight(3, 2, 8, w) == doctest::Approx(w.idf(3) * 2.0 * 2.2 / (2.0 + 1.2 * 1.75)));
    CHECK(term_weight(3, 0, 8, w) == 0.0);
    w.k1 = 0.0;
    CHECK_THROWS_AS(w.validate(), UsageError);
    CHECK(parse_weighting_scheme("tfidf") == WeightingScheme::tfidf);
    CHECK(weighting_scheme_name(WeightingScheme::bm25) == "bm25");
    CHECK_THROWS(parse_weighting_scheme("okapi"));
}

TEST_CASE("query vector is the weight-normalized sum over distinct embedded terms")
{
    TermWeighting w;
    w.scheme = WeightingScheme::tfidf;
    w.doc_count = 3;
    w.mean_length = 3.0;
    w.document_frequency = {0, 0, 0, 1, 2, 0};
    TokenEmbeddings emb;
    emb.vectors = Matrix(6, 2, std::vector<double>{0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 5, 5});
    emb.present = {0, 0, 0, 1, 1, 0};
    const TokenSequence seq{"q", {3, 4, 4, kUnkId, 5}};
    const double w3 = 1.0 * w.idf(3), w4 = 2.0 * w.idf(4);
    const auto v = doc_query_vector(seq, emb, w);
    CHECK(v[0] == doctest::Approx(w3 / (w3 + w4)));
    CHECK(v[1] == doctest::Approx(w4 / (w3 + w4)));
    CHECK_THROWS_AS(doc_query_vector({"empty", {kUnkId, 5}}, emb, w), DataError);
    CHECK(idf_mass(seq, w) == doctest::Approx((w.idf(3) + 2 * w.idf(4) + w.idf(5)) / 4.0));
}

TEST_CASE("nearest neighbors equal an exhaustive cosine scan")
{
    const DocIndex idx = random_doc_index(1000, 64, 17);
    Rng rng(23);
    for (const std::size_t k : {1u, 10u, 100u}) {
        for (int trial = 0; trial < 3; ++trial) {
            std::vector<double> q(64);
            for (auto& x : q) {
                x = rng.uniform(-1.0, 1.0);
            }
            const auto got = nearest_neighbors(q, idx, k);
            const auto ref = nearest_neighbors_reference(q, idx, k);
            const auto want = brute_force_neighbors(q, idx, k);
            REQUIRE(got.size() == k);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(got[i].id == want[i]);
                CHECK(ref[i].id == got[i].id);
                CHECK(ref[i].cosine == got[i].cosine);
            }
        }
    }
}

TEST_CASE("neighbors: ties by id, exclusion, zero rows")
{
    DocIndex idx;
    idx.ids = {"c", "a", "b", "z"};
    idx.vectors = Matrix(4, 2, std::vector<double>{1, 0, 2, 0, 0, 1, 0, 0});
    idx.labels.assign(4, {});
    idx.idf_mass.assign(4, 1.0);
    idx.finalize();
    const std::vector<double> q{1, 0};
    const auto n = nearest_neighbors(q, idx, 10);
    REQUIRE(n.size() == 4);
    CHECK(n[0].id == "a");
    CHECK(n[1].id == "c");
    CHECK(n[2].cosine == 0.0);
    const auto ex = nearest_neighbors(q, idx, 1, "a");
    CHECK(ex[0].id == "c");
    CHECK(*idx.position("b") == 2);
    CHECK_FALSE(idx.position("q"));
}

TEST_CASE("candidate scoring sums neighbor idf mass per heading")
{
    DocIndex idx;
    idx.ids = {"n1", "n2", "n3"};
    idx.vectors = Matrix(3, 1, 1.0);
    idx.labels = {{"A", "B"}, {"B"}, {"C", "A"}};
    idx.idf_mass = {1.0, 2.0, 0.5};
    idx.finalize();
    std::vector<Neighbor> nb;
    for (std::size_t i = 0; i < 3; ++i) {
        nb.push_back({i, idx.ids[i], 1.0});
    }
    const auto all = select_candidates("q", nb, idx, 10);
    REQUIRE(all.size() == 3);
    CHECK(all.entries[0] == Candidate{"B", 3.0});
    CHECK(all.entries[1] == Candidate{"A", 1.5});
    CHECK(all.entries[2] == Candidate{"C", 0.5});

    const LabelSet gold{"C", "Z"};
    const auto top = select_candidates("q", nb, idx, 1, &gold);
    REQUIRE(top.size() == 3);
    CHECK(top.entries[0].id == "B");
    CHECK(top.entries[1] == Candidate{"C", kGoldSentinelScore});
    CHECK(top.entries[2] == Candidate{"Z", kGoldSentinelScore});
    CHECK(top.ids() == std::vector<std::string>{"B", "C", "Z"});

    // equal scores fall back to id order
    idx.idf_mass = {1.0, 1.0, 1.0};
    const auto tie = select_candidates("q", std::span(nb).subspan(0, 1), idx, 2);
    CHECK(tie.ids() == std::vector<std::string>{"A", "B"});
}

TEST_CASE("corpus-level retrieval, recall and persistence")
{
    const CorpusStore train({doc("t1", "virus virus cell", {"V"}), doc("t2", "cell membrane", {"C"}),
                             doc("t3", "virus membrane", {"V", "M"})});
    const CorpusStore test({doc("q1", "virus"), doc("q2", "unknownword")});
    const Vocabulary vocab = build_vocabulary(train, 100);
    const auto weighting = TermWeighting::from_corpus(train, vocab);
    CHECK(weighting.doc_count == 3);
    std::vector<std::string> words;
    for (TokenId i = kReservedTokens; i < vocab.size(); ++i) {
        words.push_back(vocab.token(i));
    }
    const TokenEmbeddings emb = align_embeddings(random_embeddings(words, 8, 1), vocab);
    CHECK_FALSE(emb.present[kMaskId]);
    const auto train_seq = preprocess_corpus(train, vocab);
    const DocIndex idx = build_index(train, train_seq, emb, weighting);
    REQUIRE(idx.size() == 3);
    CHECK(idx.labels[2] == std::vector<std::string>{"M", "V"});

    const RetrievalSettings s{2, 5};
    const auto tr = retrieve_candidates(train, train_seq, idx, emb, weighting, s, RetrievalMode::training);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        for (const auto& g : train[i].mesh_major) {
            const auto ids = tr[i].ids();
            CHECK(std::find(ids.begin(), ids.end(), g) != ids.end());
        }
    }
    std::vector<LabelSet> golds;
    for (const auto& d : train.documents()) {
        golds.push_back(d.mesh_major);
    }
    CHECK(candidate_recall(tr, golds) == 1.0);

    std::vector<TokenSequence> test_seq;
    for (const auto& d : test.documents()) {
        test_seq.push_back(preprocess_document(d, vocab, StopwordSet::builtin()));
    }
    const auto te = retrieve_candidates(test, test_seq, idx, emb, weighting, s, RetrievalMode::evaluation);
    REQUIRE(te.size() == 2);
    CHECK(te[0].size() > 0);
    CHECK(te[1].size() == 0);

    TempDir dir("ret");
    save_candidates(dir / "c.tsv", tr);
    CHECK(load_candidates(dir / "c.tsv") == tr);
    save_retrieval_index(dir / "index.bin", idx, weighting, emb);
    const auto back = load_retrieval_index(dir / "index.bin");
    CHECK(back.index.ids == idx.ids);
    CHECK(back.index.vectors == idx.vectors);
    CHECK(back.index.labels == idx.labels);
    CHECK(back.weighting.document_frequency == weighting.document_frequency);
    CHECK(back.embeddings.vectors == emb.vectors);
}
