#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshdex/document.hpp"
#include "meshdex/matrix.hpp"
#include "meshdex/textprep.hpp"

namespace meshdex {

enum class NodeKind { major, supplementary };
enum class EdgeKind { hierarchy, mapping };

struct OntologyNode {
    std::string id;
    NodeKind kind = NodeKind::major;
    std::string name;
};

struct OntologyEdge {
    std::string child;
    std::string parent;
    EdgeKind kind = EdgeKind::hierarchy;
};

/// DAG of index nodes. Hierarchy edges link majors to majors, mapping edges
/// link a supplementary concept to a major heading. Nodes are kept sorted by
/// id; `position()` is the dense row used by the model's index embeddings.
class MeshOntology {
public:
    MeshOntology() = default;

    /// Validates and builds the graph. Throws DataError on cycles, unknown
    /// endpoints, duplicate nodes, or edges whose kinds do not match.
    MeshOntology(std::vector<OntologyNode> nodes, std::vector<OntologyEdge> edges);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool contains(std::string_view id) const;
    std::size_t position(std::string_view id) const;
    std::optional<std::size_t> find(std::string_view id) const;

    const OntologyNode& node(std::size_t pos) const { return nodes_[pos]; }
    const std::vector<OntologyNode>& nodes() const noexcept { return nodes_; }
    const std::vector<OntologyEdge>& edges() const noexcept { return edges_; }

    /// Parent positions (hierarchy and mapping alike), ascending.
    std::span<const std::size_t> parents(std::size_t pos) const { return parents_[pos]; }
    std::span<const std::size_t> children(std::size_t pos) const { return children_[pos]; }

    std::vector<std::size_t> roots() const;
    std::vector<std::size_t> topological_order() const;

    std::vector<std::string> ids_of_kind(NodeKind kind) const;

private:
    std::vector<OntologyNode> nodes_;
    std::vector<OntologyEdge> edges_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::vector<std::vector<std::size_t>> parents_;
    std::vector<std::vector<std::size_t>> children_;
};

MeshOntology load_ontology(const std::filesystem::path& path);
void save_ontology(const MeshOntology& onto, const std::filesystem::path& path);

/// Word vectors keyed by lowercased word, in file order.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dimension = 0) : dimension_(dimension) {}

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return words_.size(); }

    void add(std::string word, std::vector<double> vec);
    const std::vector<double>* find(std::string_view word) const;

    const std::vector<std::string>& words() const noexcept { return words_; }

private:
    std::size_t dimension_;
    std::vector<std::string> words_;
    std::vector<std::vector<double>> vectors_;
    std::unordered_map<std::string, std::size_t> by_word_;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path);

/// Uniform(-0.5, 0.5)/sqrt(dim) random vectors for the given words.
EmbeddingTable random_embeddings(std::span<const std::string> words, std::size_t dimension,
                                 std::uint64_t seed);

/// Corpus-wide term statistics over the analyzed (tokenized, stopword-free,
/// stemmed) text of every document.
struct TermStatistics {
    std::size_t doc_count = 0;
    double mean_length = 0.0;
    std::map<std::string, std::size_t> document_frequency;
    std::map<std::string, std::size_t> collection_frequency;

    friend bool operator==(const TermStatistics&, const TermStatistics&) = default;
};

TermStatistics compute_statistics(std::span<const Document> docs, const StopwordSet& stopwords);

/// Ordered, immutable collection of documents with an id lookup and cached
/// term statistics.
class CorpusStore {
public:
    CorpusStore() = default;
    /// Throws DataError on empty or duplicate ids and overlapping label sets.
    explicit CorpusStore(std::vector<Document> docs,
                         const StopwordSet& stopwords = StopwordSet::builtin());

    std::size_t size() const noexcept { return docs_.size(); }
    bool empty() const noexcept { return docs_.empty(); }
    const std::vector<Document>& documents() const noexcept { return docs_; }
    const Document& operator[](std::size_t i) const { return docs_[i]; }
    const Document* find(std::string_view id) const;
    const TermStatistics& statistics() const noexcept { return stats_; }
    const StopwordSet& stopwords() const noexcept { return stopwords_; }

    friend bool operator==(const CorpusStore& a, const CorpusStore& b)
    {
        return a.docs_ == b.docs_ && a.stats_ == b.stats_;
    }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
    TermStatistics stats_;
    StopwordSet stopwords_;
};

/// Reads one JSON record per line. When an ontology is given, every label
/// must resolve in it.
CorpusStore load_corpus(const std::filesystem::path& path, const MeshOntology* ontology = nullptr,
                        const StopwordSet& stopwords = StopwordSet::builtin());
CorpusStore parse_corpus(std::string_view text, const MeshOntology* ontology = nullptr,
                         const StopwordSet& stopwords = StopwordSet::builtin());
void save_corpus(const CorpusStore& corpus, const std::filesystem::path& path);
std::string serialize_document(const Document& doc);

/// Sorts by (date, id) and returns the prefix of size floor(f * N) for each
/// fraction. Fractions must be ascending and inside [0, 1].
std::vector<CorpusStore> chronological_split(const CorpusStore& corpus,
                                             std::span<const double> fractions);

/// Documents in (date, id) order.
std::vector<Document> chronological_order(const CorpusStore& corpus);

}  // namespace meshdex
