#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshdex/corpus.hpp"
#include "meshdex/matrix.hpp"
#include "meshdex/textprep.hpp"

namespace meshdex {

enum class WeightingScheme { tfidf, bm25 };

WeightingScheme parse_weighting_scheme(std::string_view name);
std::string_view weighting_scheme_name(WeightingScheme scheme);

/// Term weighting with statistics fitted on one (training) corpus.
struct TermWeighting {
    WeightingScheme scheme = WeightingScheme::bm25;
    double k1 = 1.2;
    double b = 0.75;
    std::size_t doc_count = 0;
    double mean_length = 0.0;
    std::vector<std::size_t> document_frequency;  // by token id

    /// Smoothed idf: ln((N + 1) / (df + 1)) + 1.
    double idf(TokenId term) const;
    void validate() const;

    static TermWeighting from_corpus(const CorpusStore& corpus, const Vocabulary& vocab,
                                     WeightingScheme scheme = WeightingScheme::bm25,
                                     double k1 = 1.2, double b = 0.75);
};

/// tfidf: tf * idf. bm25: idf * tf (k1 + 1) / (tf + k1 (1 - b + b |d| / avglen)).
double term_weight(TokenId term, std::size_t tf, std::size_t doc_length, const TermWeighting& w);
double term_weight(TokenId term, const TokenSequence& doc, const TermWeighting& w);

/// Word vectors aligned with vocabulary ids. Rows without a vector are zero
/// and flagged absent; reserved ids are always absent.
struct TokenEmbeddings {
    Matrix vectors;
    std::vector<unsigned char> present;

    std::size_t dimension() const noexcept { return vectors.cols(); }
};

TokenEmbeddings align_embeddings(const EmbeddingTable& table, const Vocabulary& vocab);

/// Weight-normalized sum of token embeddings over the distinct terms of the
/// document. UNK and embedding-less tokens are skipped. Throws DataError when
/// nothing carries weight.
std::vector<double> doc_query_vector(const TokenSequence& doc, const TokenEmbeddings& emb,
                                     const TermWeighting& weighting);

/// Mean idf over the document's scoreable tokens (its "idf mass").
double idf_mass(const TokenSequence& doc, const TermWeighting& weighting);

/// Annotated documents searched during candidate retrieval.
struct DocIndex {
    std::vector<std::string> ids;
    Matrix vectors;
    std::vector<double> norms;
    std::vector<std::vector<std::string>> labels;  // gold major headings, sorted
    std::vector<double> idf_mass;

    std::size_t size() const noexcept { return ids.size(); }
    std::optional<std::size_t> position(std::string_view id) const;
    /// Rebuilds norms and the id lookup after fields are assigned directly.
    void finalize();

private:
    std::unordered_map<std::string, std::size_t> by_id_;
};

DocIndex build_index(const CorpusStore& corpus, std::span<const TokenSequence> sequences,
                     const TokenEmbeddings& emb, const TermWeighting& weighting);

struct Neighbor {
    std::size_t position = 0;
    std::string id;
    double cosine = 0.0;
};

/// Top-k by cosine, descending, ties by id ascending. `exclude_id` drops a
/// document from the results (self-match removal).
std::vector<Neighbor> nearest_neighbors(std::span<const double> query, const DocIndex& index,
                                        std::size_t k, std::string_view exclude_id = {});
/// Same selection over the serial scoring kernel.
std::vector<Neighbor> nearest_neighbors_reference(std::span<const double> query,
                                                  const DocIndex& index, std::size_t k,
                                                  std::string_view exclude_id = {});

struct Candidate {
    std::string id;
    double score = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

inline constexpr double kGoldSentinelScore = -std::numeric_limits<double>::infinity();

struct CandidateSet {
    std::string doc_id;
    std::vector<Candidate> entries;

    std::size_t size() const noexcept { return entries.size(); }
    std::vector<std::string> ids() const;

    friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

/// Scores every heading carried by a neighbor with the sum of the idf masses
/// of the neighbors carrying it, keeps the top m (ties by id), and in training
/// mode appends missing gold headings with the sentinel score.
CandidateSet select_candidates(std::string doc_id, std::span<const Neighbor> neighbors,
                               const DocIndex& index, std::size_t m,
                               const LabelSet* gold = nullptr);

enum class RetrievalMode {
    training,    // self excluded, gold unioned
    evaluation,  // self excluded, no gold
};

struct RetrievalSettings {
    std::size_t k = 5000;
    std::size_t m = 1024;
};

/// Candidate sets for every query document, in corpus order. A query with no
/// scoreable token gets an empty set.
std::vector<CandidateSet> retrieve_candidates(const CorpusStore& queries,
                                              std::span<const TokenSequence> sequences,
                                              const DocIndex& index, const TokenEmbeddings& emb,
                                              const TermWeighting& weighting,
                                              const RetrievalSettings& settings, RetrievalMode mode);

/// Fraction of gold labels present among the candidates, pooled over documents.
double candidate_recall(std::span<const CandidateSet> candidates, std::span<const LabelSet> golds);

void save_candidates(const std::filesystem::path& path, std::span<const CandidateSet> sets);
std::vector<CandidateSet> load_candidates(const std::filesystem::path& path);

/// index archive + `<stem>_ids.tsv` sidecar.
void save_retrieval_index(const std::filesystem::path& archive, const DocIndex& index,
                          const TermWeighting& weighting, const TokenEmbeddings& emb);
struct RetrievalIndex {
    DocIndex index;
    TermWeighting weighting;
    TokenEmbeddings embeddings;
};
RetrievalIndex load_retrieval_index(const std::filesystem::path& archive);

}  // namespace meshdex
