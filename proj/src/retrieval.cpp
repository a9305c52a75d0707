#include "meshdex/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "meshdex/archive.hpp"
#include "meshdex/error.hpp"
#include "meshdex/kernels.hpp"

namespace meshdex {

WeightingScheme parse_weighting_scheme(std::string_view name)
{
    if (name == "tfidf") {
        return WeightingScheme::tfidf;
    }
    if (name == "bm25") {
        return WeightingScheme::bm25;
    }
    throw UsageError(fmt::format("unknown weighting scheme '{}' (expected tfidf or bm25)", name));
}

std::string_view weighting_scheme_name(WeightingScheme scheme)
{
    return scheme == WeightingScheme::tfidf ? "tfidf" : "bm25";
}

double TermWeighting::idf(TokenId term) const
{
    const std::size_t df = term < document_frequency.size() ? document_frequency[term] : 0;
    return std::log((static_cast<double>(doc_count) + 1.0) / (static_cast<double>(df) + 1.0)) + 1.0;
}

void TermWeighting::validate() const
{
    if (!(k1 > 0.0)) {
        throw UsageError(fmt::format("bm25 k1 must be positive, got {}", k1));
    }
    if (!(b >= 0.0 && b <= 1.0)) {
        throw UsageError(fmt::format("bm25 b must lie in [0, 1], got {}", b));
    }
}

TermWeighting TermWeighting::from_corpus(const CorpusStore& corpus, const Vocabulary& vocab,
                                         WeightingScheme scheme, double k1, double b)
{
    TermWeighting w;
    w.scheme = scheme;
    w.k1 = k1;
    w.b = b;
    w.validate();
    const auto& stats = corpus.statistics();
    w.doc_count = stats.doc_count;
    w.mean_length = stats.mean_length;
    w.document_frequency.assign(vocab.size(), 0);
    for (TokenId id = kReservedTokens; id < vocab.size(); ++id) {
        const auto it = stats.document_frequency.find(vocab.token(id));
        if (it != stats.document_frequency.end()) {
            w.document_frequency[id] = it->second;
        }
    }
    return w;
}

double term_weight(TokenId term, std::size_t tf, std::size_t doc_length, const TermWeighting& w)
{
    if (tf == 0) {
        return 0.0;
    }
    const double f = static_cast<double>(tf);
    const double idf = w.idf(term);
    if (w.scheme == WeightingScheme::tfidf) {
        return f * idf;
    }
    const double avglen = w.mean_length > 0.0 ? w.mean_length : static_cast<double>(doc_length);
    const double norm = 1.0 - w.b + w.b * static_cast<double>(doc_length) / avglen;
    return idf * f * (w.k1 + 1.0) / (f + w.k1 * norm);
}

double term_weight(TokenId term, const TokenSequence& doc, const TermWeighting& w)
{
    const auto tf = static_cast<std::size_t>(std::count(doc.tokens.begin(), doc.tokens.end(), term));
    return term_weight(term, tf, doc.size(), w);
}

TokenEmbeddings align_embeddings(const EmbeddingTable& table, const Vocabulary& vocab)
{
    TokenEmbeddings out;
    out.vectors = Matrix(vocab.size(), table.dimension());
    out.present.assign(vocab.size(), 0);
    for (TokenId id = kReservedTokens; id < vocab.size(); ++id) {
        if (const auto* v = table.find(vocab.token(id))) {
            std::copy(v->begin(), v->end(), out.vectors.row(id).begin());
            out.present[id] = 1;
        }
    }
    return out;
}

namespace {

std::map<TokenId, std::size_t> term_counts(const TokenSequence& doc)
{
    std::map<TokenId, std::size_t> tf;
    for (const TokenId t : doc.tokens) {
        ++tf[t];
    }
    return tf;
}

}  // namespace

std::vector<double> doc_query_vector(const TokenSequence& doc, const TokenEmbeddings& emb,
                                     const TermWeighting& weighting)
{
    std::vector<double> out(emb.dimension(), 0.0);
    double total = 0.0;
    for (const auto& [term, tf] : term_counts(doc)) {
        if (term < kReservedTokens || term >= emb.present.size() || !emb.present[term]) {
            continue;
        }
        const double w = term_weight(term, tf, doc.size(), weighting);
        if (w == 0.0) {
            continue;
        }
        const auto v = emb.vectors.row(term);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += w * v[i];
        }
        total += w;
    }
    if (total == 0.0) {
        throw DataError(fmt::format("document '{}' yields a degenerate query (no weighted, embedded token)",
                                    doc.doc_id));
    }
    for (auto& x : out) {
        x /= total;
    }
    return out;
}

double idf_mass(const TokenSequence& doc, const TermWeighting& weighting)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const TokenId t : doc.tokens) {
        if (t < kReservedTokens) {
            continue;
        }
        sum += weighting.idf(t);
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::optional<std::size_t> DocIndex::position(std::string_view id) const
{
    const auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void DocIndex::finalize()
{
    by_id_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!by_id_.emplace(ids[i], i).second) {
            throw DataError(fmt::format("duplicate document '{}' in index", ids[i]));
        }
    }
    norms.assign(vectors.rows(), 0.0);
    kernels::row_norms(vectors, norms);
    if (labels.size() != ids.size() || idf_mass.size() != ids.size() || vectors.rows() != ids.size()) {
        throw DataError("inconsistent document index");
    }
}

DocIndex build_index(const CorpusStore& corpus, std::span<const TokenSequence> sequences,
                     const TokenEmbeddings& emb, const TermWeighting& weighting)
{
    if (sequences.size() != corpus.size()) {
        throw DataError("index build needs one token sequence per document");
    }
    DocIndex index;
    const std::size_t n = corpus.size();
    index.ids.resize(n);
    index.labels.resize(n);
    index.idf_mass.resize(n);
    index.vectors = Matrix(n, emb.dimension());
    kernels::parallel_for(n, [&](std::size_t i) {
        const auto& doc = corpus[i];
        index.ids[i] = doc.id;
        index.labels[i].assign(doc.mesh_major.begin(), doc.mesh_major.end());
        index.idf_mass[i] = idf_mass(sequences[i], weighting);
        const auto v = doc_query_vector(sequences[i], emb, weighting);
        std::copy(v.begin(), v.end(), index.vectors.row(i).begin());
    });
    index.finalize();
    return index;
}

namespace {

std::vector<Neighbor> select_top(const std::vector<double>& scores, const DocIndex& index,
                                 std::size_t k, std::string_view exclude_id)
{
    std::vector<std::size_t> order;
    order.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!exclude_id.empty() && index.ids[i] == exclude_id) {
            continue;
        }
        order.push_back(i);
    }
    const std::size_t keep = std::min(k, order.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return index.ids[a] < index.ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
    std::vector<Neighbor> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        out.push_back({order[i], index.ids[order[i]], scores[order[i]]});
    }
    return out;
}

void check_query(std::span<const double> query, const DocIndex& index)
{
    if (index.size() > 0 && query.size() != index.vectors.cols()) {
        throw DataError(fmt::format("query dimension {} does not match index dimension {}",
                                    query.size(), index.vectors.cols()));
    }
    double sq = 0.0;
    for (const double x : query) {
        if (!std::isfinite(x)) {
            throw NumericError("query vector has a non-finite component");
        }
        sq += x * x;
    }
    if (sq == 0.0) {
        throw DataError("zero-norm query vector");
    }
}

}  // namespace

std::vector<Neighbor> nearest_neighbors(std::span<const double> query, const DocIndex& index,
                                        std::size_t k, std::string_view exclude_id)
{
    check_query(query, index);
    std::vector<double> scores(index.size());
    kernels::cosine_scores(query, index.vectors, index.norms, scores);
    return select_top(scores, index, k, exclude_id);
}

std::vector<Neighbor> nearest_neighbors_reference(std::span<const double> query,
                                                  const DocIndex& index, std::size_t k,
                                                  std::string_view exclude_id)
{
    check_query(query, index);
    std::vector<double> scores(index.size());
    kernels::cosine_scores_reference(query, index.vectors, index.norms, scores);
    return select_top(scores, index, k, exclude_id);
}

std::vector<std::string> CandidateSet::ids() const
{
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& c : entries) {
        out.push_back(c.id);
    }
    return out;
}

CandidateSet select_candidates(std::string doc_id, std::span<const Neighbor> neighbors,
                               const DocIndex& index, std::size_t m, const LabelSet* gold)
{
    std::map<std::string, double> scores;
    for (const auto& nb : neighbors) {
        for (const auto& label : index.labels.at(nb.position)) {
            scores[label] += index.idf_mass[nb.position];
        }
    }
    std::vector<Candidate> ranked;
    ranked.reserve(scores.size());
    for (auto& [id, s] : scores) {
        ranked.push_back({id, s});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (ranked.size() > m) {
        ranked.resize(m);
    }
    if (gold) {
        std::set<std::string> present;
        for (const auto& c : ranked) {
            present.insert(c.id);
        }
        for (const auto& g : *gold) {
            if (!present.contains(g)) {
                ranked.push_back({g, kGoldSentinelScore});
            }
        }
    }
    return CandidateSet{std::move(doc_id), std::move(ranked)};
}

std::vector<CandidateSet> retrieve_candidates(const CorpusStore& queries,
                                              std::span<const TokenSequence> sequences,
                                              const DocIndex& index, const TokenEmbeddings& emb,
                                              const TermWeighting& weighting,
                                              const RetrievalSettings& settings, RetrievalMode mode)
{
    std::vector<CandidateSet> out(queries.size());
    kernels::parallel_for(queries.size(), [&](std::size_t i) {
        const auto& doc = queries[i];
        out[i].doc_id = doc.id;
        if (index.size() == 0) {
            if (mode == RetrievalMode::training) {
                out[i] = select_candidates(doc.id, {}, index, settings.m, &doc.mesh_major);
            }
            return;
        }
        std::vector<double> q;
        try {
            q = doc_query_vector(sequences[i], emb, weighting);
        } catch (const DataError&) {
            if (mode == RetrievalMode::training) {
                out[i] = select_candidates(doc.id, {}, index, settings.m, &doc.mesh_major);
            }
            return;
        }
        std::vector<double> scores(index.size());
        kernels::cosine_scores_reference(q, index.vectors, index.norms, scores);
        const auto nbs = select_top(scores, index, settings.k, doc.id);
        out[i] = select_candidates(doc.id, nbs, index, settings.m,
                                   mode == RetrievalMode::training ? &doc.mesh_major : nullptr);
    });
    return out;
}

double candidate_recall(std::span<const CandidateSet> candidates, std::span<const LabelSet> golds)
{
    std::size_t hit = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::set<std::string> ids;
        for (const auto& c : candidates[i].entries) {
            ids.insert(c.id);
        }
        for (const auto& g : golds[i]) {
            hit += ids.contains(g) ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

void save_candidates(const std::filesystem::path& path, std::span<const CandidateSet> sets)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError(fmt::format("cannot write candidates '{}'", path.string()));
    }
    for (const auto& set : sets) {
        out << set.doc_id << '\t';
        for (std::size_t i = 0; i < set.entries.size(); ++i) {
            out << (i ? "," : "") << set.entries[i].id << ':' << fmt::format("{}", set.entries[i].score);
        }
        out << '\n';
    }
}

std::vector<CandidateSet> load_candidates(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read candidates '{}'", path.string()));
    }
    std::vector<CandidateSet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(fmt::format("{}:{}: expected doc_id<TAB>entries", path.string(), lineno));
        }
        CandidateSet set;
        set.doc_id = line.substr(0, tab);
        std::string rest = line.substr(tab + 1);
        std::size_t start = 0;
        while (start < rest.size()) {
            auto comma = rest.find(',', start);
            if (comma == std::string::npos) {
                comma = rest.size();
            }
            const std::string item = rest.substr(start, comma - start);
            const auto colon = item.rfind(':');
            if (colon == std::string::npos) {
                throw DataError(fmt::format("{}:{}: expected id:score", path.string(), lineno));
            }
            double score = 0.0;
            const char* first = item.data() + colon + 1;
            const char* last = item.data() + item.size();
            const auto [ptr, ec] = std::from_chars(first, last, score);
            if (ec != std::errc() || ptr != last) {
                throw DataError(fmt::format("{}:{}: bad score in '{}'", path.string(), lineno, item));
            }
            set.entries.push_back({item.substr(0, colon), score});
            start = comma + 1;
        }
        out.push_back(std::move(set));
    }
    return out;
}

void save_retrieval_index(const std::filesystem::path& archive, const DocIndex& index,
                          const TermWeighting& weighting, const TokenEmbeddings& emb)
{
    std::vector<NamedTensor> tensors;
    tensors.push_back(tensor_from_matrix("index.vectors", index.vectors));
    tensors.push_back({"index.idf_mass", {index.idf_mass.size()}, ElementType::float64, index.idf_mass});
    std::vector<double> df(weighting.document_frequency.begin(), weighting.document_frequency.end());
    tensors.push_back({"weighting.df", {df.size()}, ElementType::float64, df});
    tensors.push_back({"weighting.params",
                       {5},
                       ElementType::float64,
                       {weighting.scheme == WeightingScheme::tfidf ? 0.0 : 1.0, weighting.k1, weighting.b,
                        static_cast<double>(weighting.doc_count), weighting.mean_length}});
    tensors.push_back(tensor_from_matrix("embeddings.vectors", emb.vectors));
    std::vector<double> present(emb.present.begin(), emb.present.end());
    tensors.push_back({"embeddings.present", {present.size()}, ElementType::float64, present});
    write_archive(archive, tensors);

    auto sidecar = archive;
    sidecar.replace_filename(archive.stem().string() + "_ids.tsv");
    std::ofstream out(sidecar, std::ios::binary);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", sidecar.string()));
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
        out << index.ids[i] << '\t';
        for (std::size_t j = 0; j < index.labels[i].size(); ++j) {
            out << (j ? "," : "") << index.labels[i][j];
        }
        out << '\n';
    }
}

RetrievalIndex load_retrieval_index(const std::filesystem::path& archive)
{
    const auto tensors = read_archive(archive);
    RetrievalIndex r;
    r.index.vectors = matrix_from_tensor(find_tensor(tensors, "index.vectors"));
    r.index.idf_mass = find_tensor(tensors, "index.idf_mass").values;
    const auto& df = find_tensor(tensors, "weighting.df").values;
    r.weighting.document_frequency.assign(df.begin(), df.end());
    const auto& p = find_tensor(tensors, "weighting.params").values;
    if (p.size() != 5) {
        throw DataError("bad weighting.params tensor");
    }
    r.weighting.scheme = p[0] == 0.0 ? WeightingScheme::tfidf : WeightingScheme::bm25;
    r.weighting.k1 = p[1];
    r.weighting.b = p[2];
    r.weighting.doc_count = static_cast<std::size_t>(p[3]);
    r.weighting.mean_length = p[4];
    r.embeddings.vectors = matrix_from_tensor(find_tensor(tensors, "embeddings.vectors"));
    const auto& present = find_tensor(tensors, "embeddings.present").values;
    r.embeddings.present.assign(present.begin(), present.end());

    auto sidecar = archive;
    sidecar.replace_filename(archive.stem().string() + "_ids.tsv");
    std::ifstream in(sidecar, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read index sidecar '{}'", sidecar.string()));
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        r.index.ids.push_back(line.substr(0, tab));
        std::vector<std::string> labels;
        if (tab != std::string::npos) {
            std::istringstream ls(line.substr(tab + 1));
            for (std::string l; std::getline(ls, l, ',');) {
                if (!l.empty()) {
                    labels.push_back(l);
                }
            }
        }
        r.index.labels.push_back(std::move(labels));
    }
    if (r.index.vectors.rows() == 0 && r.index.ids.empty()) {
        r.index.vectors = Matrix(0, r.embeddings.dimension());
    }
    r.index.finalize();
    return r;
}

}  // namespace meshdex
