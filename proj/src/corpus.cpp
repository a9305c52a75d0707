#include "meshdex/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "meshdex/error.hpp"
#include "meshdex/rng.hpp"

namespace meshdex {

Date parse_date(std::string_view text)
{
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    const bool shape_ok = text.size() == 10 && text[4] == '-' && text[7] == '-';
    auto parse = [&](std::size_t pos, std::size_t len, auto& out) {
        const char* first = text.data() + pos;
        const auto [ptr, ec] = std::from_chars(first, first + len, out);
        return ec == std::errc() && ptr == first + len;
    };
    if (!shape_ok || !parse(0, 4, y) || !parse(5, 2, m) || !parse(8, 2, d)) {
        throw DataError(fmt::format("invalid date '{}', expected YYYY-MM-DD", text));
    }
    const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) {
        throw DataError(fmt::format("invalid calendar date '{}'", text));
    }
    return date;
}

std::string format_date(const Date& date)
{
    return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(date.year()),
                       static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
}

// --- MeshOntology ------------------------------------------------------------

namespace {

const char* kind_name(NodeKind k)
{
    return k == NodeKind::major ? "major" : "supplementary";
}

const char* kind_name(EdgeKind k)
{
    return k == EdgeKind::hierarchy ? "hierarchy" : "mapping";
}

}  // namespace

MeshOntology::MeshOntology(std::vector<OntologyNode> nodes, std::vector<OntologyEdge> edges)
{
    std::sort(nodes.begin(), nodes.end(),
              [](const OntologyNode& a, const OntologyNode& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id.empty()) {
            throw DataError("ontology node with empty id");
        }
        if (!by_id_.emplace(nodes[i].id, i).second) {
            throw DataError(fmt::format("duplicate ontology node '{}'", nodes[i].id));
        }
    }
    nodes_ = std::move(nodes);
    parents_.resize(nodes_.size());
    children_.resize(nodes_.size());

    std::sort(edges.begin(), edges.end(), [](const OntologyEdge& a, const OntologyEdge& b) {
        return std::tie(a.child, a.parent) < std::tie(b.child, b.parent);
    });
    edges.erase(std::unique(edges.begin(), edges.end(),
                            [](const OntologyEdge& a, const OntologyEdge& b) {
                                return a.child == b.child && a.parent == b.parent;
                            }),
                edges.end());

    for (const auto& e : edges) {
        const auto c = find(e.child);
        const auto p = find(e.parent);
        if (!c || !p) {
            throw DataError(fmt::format("edge {} -> {} references an undeclared node", e.child, e.parent));
        }
        const NodeKind ck = nodes_[*c].kind;
        const NodeKind pk = nodes_[*p].kind;
        if (e.kind == EdgeKind::hierarchy && (ck != NodeKind::major || pk != NodeKind::major)) {
            throw DataError(fmt::format("hierarchy edge {} -> {} must connect two major nodes",
                                        e.child, e.parent));
        }
        if (e.kind == EdgeKind::mapping &&
            (ck != NodeKind::supplementary || pk != NodeKind::major)) {
            throw DataError(fmt::format(
                "mapping edge {} -> {} must lead from a supplementary concept to a major node",
                e.child, e.parent));
        }
        if (*c == *p) {
            throw DataError(fmt::format("cycle detected: {} -> {}", e.child, e.parent));
        }
        parents_[*c].push_back(*p);
        children_[*p].push_back(*c);
    }
    for (auto& v : parents_) {
        std::sort(v.begin(), v.end());
    }
    for (auto& v : children_) {
        std::sort(v.begin(), v.end());
    }
    edges_ = std::move(edges);

    // Iterative DFS along parent edges; a grey node on the stack closes a cycle.
    enum : unsigned char { white, grey, black };
    std::vector<unsigned char> color(nodes_.size(), white);
    for (std::size_t start = 0; start < nodes_.size(); ++start) {
        if (color[start] != white) {
            continue;
        }
        std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
        color[start] = grey;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < parents_[node].size()) {
                const std::size_t p = parents_[node][next++];
                if (color[p] == grey) {
                    std::string path;
                    bool on = false;
                    for (const auto& frame : stack) {
                        on = on || frame.first == p;
                        if (on) {
                            path += nodes_[frame.first].id + "→";
                        }
                    }
                    path += nodes_[p].id;
                    throw DataError(fmt::format("cycle detected: {}", path));
                }
                if (color[p] == white) {
                    color[p] = grey;
                    stack.emplace_back(p, 0);
                }
            } else {
                color[node] = black;
                stack.pop_back();
            }
        }
    }
}

bool MeshOntology::contains(std::string_view id) const
{
    return by_id_.contains(std::string(id));
}

std::optional<std::size_t> MeshOntology::find(std::string_view id) const
{
    const auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t MeshOntology::position(std::string_view id) const
{
    const auto pos = find(id);
    if (!pos) {
        throw DataError(fmt::format("unknown index id '{}'", id));
    }
    return *pos;
}

std::vector<std::size_t> MeshOntology::roots() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (parents_[i].empty()) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> MeshOntology::topological_order() const
{
    // Kahn's algorithm, parents before children, smallest position first.
    std::vector<std::size_t> indegree(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        indegree[i] = parents_[i].size();
    }
    std::vector<std::size_t> ready;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (indegree[i] == 0) {
            ready.push_back(i);
        }
    }
    std::vector<std::size_t> order;
    order.reserve(nodes_.size());
    while (!ready.empty()) {
        std::pop_heap(ready.begin(), ready.end(), std::greater<>());
        const std::size_t n = ready.back();
        ready.pop_back();
        order.push_back(n);
        for (const std::size_t c : children_[n]) {
            if (--indegree[c] == 0) {
                ready.push_back(c);
                std::push_heap(ready.begin(), ready.end(), std::greater<>());
            }
        }
    }
    if (order.size() != nodes_.size()) {
        throw DataError("ontology is not acyclic");
    }
    return order;
}

std::vector<std::string> MeshOntology::ids_of_kind(NodeKind kind) const
{
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
        if (n.kind == kind) {
            out.push_back(n.id);
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) {
            break;
        }
        start = tab + 1;
    }
    return out;
}

std::string read_file(const std::filesystem::path& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read {} '{}'", what, path.string()));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

MeshOntology load_ontology(const std::filesystem::path& path)
{
    std::istringstream in(read_file(path, "ontology"));
    std::vector<OntologyNode> nodes;
    std::vector<OntologyEdge> edges;
    enum class Section { none, nodes, edges } section = Section::none;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line == "#nodes") {
            section = Section::nodes;
            continue;
        }
        if (line == "#edges") {
            section = Section::edges;
            continue;
        }
        if (line[0] == '#') {
            continue;
        }
        const auto fields = split_tabs(line);
        const auto where = fmt::format("{}:{}", path.string(), lineno);
        if (section == Section::nodes) {
            if (fields.size() < 2 || fields.size() > 3) {
                throw DataError(where + ": expected id<TAB>kind<TAB>name");
            }
            OntologyNode n{fields[0], NodeKind::major, fields.size() == 3 ? fields[2] : ""};
            if (fields[1] == "supplementary") {
                n.kind = NodeKind::supplementary;
            } else if (fields[1] != "major") {
                throw DataError(fmt::format("{}: unknown node kind '{}'", where, fields[1]));
            }
            nodes.push_back(std::move(n));
        } else if (section == Section::edges) {
            if (fields.size() != 3) {
                throw DataError(where + ": expected child<TAB>parent<TAB>kind");
            }
            OntologyEdge e{fields[0], fields[1], EdgeKind::hierarchy};
            if (fields[2] == "mapping") {
                e.kind = EdgeKind::mapping;
            } else if (fields[2] != "hierarchy") {
                throw DataError(fmt::format("{}: unknown edge kind '{}'", where, fields[2]));
            }
            edges.push_back(std::move(e));
        } else {
            throw DataError(where + ": content before '#nodes' header");
        }
    }
    return MeshOntology(std::move(nodes), std::move(edges));
}

void save_ontology(const MeshOntology& onto, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write ontology '{}'", path.string()));
    }
    out << "#nodes\n";
    for (const auto& n : onto.nodes()) {
        out << n.id << '\t' << kind_name(n.kind) << '\t' << n.name << '\n';
    }
    out << "#edges\n";
    for (const auto& e : onto.edges()) {
        out << e.child << '\t' << e.parent << '\t' << kind_name(e.kind) << '\n';
    }
}

// --- EmbeddingTable ----------------------------------------------------------

void EmbeddingTable::add(std::string word, std::vector<double> vec)
{
    if (vec.size() != dimension_) {
        throw DataError(fmt::format("embedding for '{}' has dimension {}, expected {}", word,
                                    vec.size(), dimension_));
    }
    if (by_word_.contains(word)) {
        throw DataError(fmt::format("duplicate embedding word '{}'", word));
    }
    by_word_.emplace(word, words_.size());
    words_.push_back(std::move(word));
    vectors_.push_back(std::move(vec));
}

const std::vector<double>* EmbeddingTable::find(std::string_view word) const
{
    const auto it = by_word_.find(std::string(word));
    return it == by_word_.end() ? nullptr : &vectors_[it->second];
}

EmbeddingTable load_embeddings(const std::filesystem::path& path)
{
    std::istringstream in(read_file(path, "embedding file"));
    std::string line;
    std::size_t lineno = 0;
    std::optional<EmbeddingTable> table;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::vector<std::string> parts;
        for (std::string f; fields >> f;) {
            parts.push_back(std::move(f));
        }
        if (parts.empty()) {
            continue;
        }
        if (lineno == 1 && parts.size() == 2 &&
            std::all_of(parts.begin(), parts.end(), [](const std::string& s) {
                return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
            })) {
            const std::size_t dim = std::stoul(parts[1]);
            if (dim == 0) {
                throw DataError(fmt::format("{}:1: embedding dimension must be positive", path.string()));
            }
            table.emplace(dim);
            continue;
        }
        const std::size_t dim = parts.size() - 1;
        if (!table) {
            if (dim == 0) {
                throw DataError(fmt::format("{}:{}: word without vector", path.string(), lineno));
            }
            table.emplace(dim);
        }
        if (dim != table->dimension()) {
            throw DataError(fmt::format("{}:{}: dimension mismatch, got {} values, expected {}",
                                        path.string(), lineno, dim, table->dimension()));
        }
        std::vector<double> vec(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const std::string& s = parts[i + 1];
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), vec[i]);
            if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(vec[i])) {
                throw DataError(fmt::format("{}:{}: non-numeric component '{}'", path.string(), lineno, s));
            }
        }
        std::string word = parts[0];
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        try {
            table->add(std::move(word), std::move(vec));
        } catch (const DataError& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    if (!table) {
        throw DataError(fmt::format("{}: empty embedding file", path.string()));
    }
    return std::move(*table);
}

EmbeddingTable random_embeddings(std::span<const std::string> words, std::size_t dimension,
                                 std::uint64_t seed)
{
    EmbeddingTable table(dimension);
    Rng rng(derive_seed(seed, 0xE1B));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dimension));
    for (const auto& w : words) {
        std::vector<double> v(dimension);
        for (auto& x : v) {
            x = rng.uniform(-0.5, 0.5) * scale;
        }
        table.add(w, std::move(v));
    }
    return table;
}

// --- CorpusStore -------------------------------------------------------------

TermStatistics compute_statistics(std::span<const Document> docs, const StopwordSet& stopwords)
{
    TermStatistics stats;
    stats.doc_count = docs.size();
    std::size_t total = 0;
    for (const auto& doc : docs) {
        const auto terms = analyze(document_text(doc), stopwords);
        total += terms.size();
        std::set<std::string_view> seen;
        for (const auto& t : terms) {
            ++stats.collection_frequency[t];
            if (seen.insert(t).second) {
                ++stats.document_frequency[t];
            }
        }
    }
    stats.mean_length = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
    return stats;
}

CorpusStore::CorpusStore(std::vector<Document> docs, const StopwordSet& stopwords)
    : docs_(std::move(docs)), stopwords_(stopwords)
{
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const auto& d = docs_[i];
        if (d.id.empty()) {
            throw DataError(fmt::format("record {} has an empty id", i + 1));
        }
        if (!by_id_.emplace(d.id, i).second) {
            throw DataError(fmt::format("duplicate document id '{}' at record {}", d.id, i + 1));
        }
        for (const auto& l : d.supplementary) {
            if (d.mesh_major.contains(l)) {
                throw DataError(fmt::format("document '{}' lists '{}' as both major and supplementary",
                                            d.id, l));
            }
        }
    }
    stats_ = compute_statistics(docs_, stopwords_);
}

const Document* CorpusStore::find(std::string_view id) const
{
    const auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

namespace {

LabelSet read_labels(const nlohmann::json& j, const char* key)
{
    LabelSet out;
    if (!j.contains(key)) {
        return out;
    }
    for (const auto& v : j.at(key)) {
        out.insert(v.get<std::string>());
    }
    return out;
}

Document parse_record(const std::string& line)
{
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) {
        throw DataError("record is not an object");
    }
    static const std::set<std::string> known{"id", "title", "abstract", "journal",
                                             "date", "mesh_major", "supplementary"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw DataError(fmt::format("unknown field '{}'", key));
        }
    }
    Document doc;
    doc.id = j.at("id").get<std::string>();
    doc.title = j.value("title", "");
    doc.abstract = j.value("abstract", "");
    if (j.contains("journal") && !j.at("journal").is_null()) {
        doc.journal = j.at("journal").get<std::string>();
    }
    doc.date = parse_date(j.at("date").get<std::string>());
    doc.mesh_major = read_labels(j, "mesh_major");
    doc.supplementary = read_labels(j, "supplementary");
    if (doc.title.empty() && doc.abstract.empty()) {
        throw DataError(fmt::format("document '{}' has empty title and abstract", doc.id));
    }
    return doc;
}

}  // namespace

CorpusStore parse_corpus(std::string_view text, const MeshOntology* ontology,
                         const StopwordSet& stopwords)
{
    std::vector<Document> docs;
    std::unordered_map<std::string, std::size_t> first_line;
    std::vector<std::string> unknown;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Document doc;
        try {
            doc = parse_record(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(fmt::format("line {}: malformed record: {}", lineno, e.what()));
        } catch (const DataError& e) {
            throw DataError(fmt::format("line {}: {}", lineno, e.what()));
        }
        if (const auto [it, fresh] = first_line.emplace(doc.id, lineno); !fresh) {
            throw DataError(fmt::format("line {}: duplicate document id '{}' (first seen on line {})",
                                        lineno, doc.id, it->second));
        }
        if (ontology) {
            for (const auto* set : {&doc.mesh_major, &doc.supplementary}) {
                for (const auto& l : *set) {
                    if (!ontology->contains(l)) {
                        unknown.push_back(fmt::format("{} (line {}, document '{}')", l, lineno, doc.id));
                    }
                }
            }
        }
        docs.push_back(std::move(doc));
    }
    if (!unknown.empty()) {
        std::string msg = "labels not present in the ontology:";
        for (const auto& u : unknown) {
            msg += "\n  " + u;
        }
        throw DataError(msg);
    }
    return CorpusStore(std::move(docs), stopwords);
}

CorpusStore load_corpus(const std::filesystem::path& path, const MeshOntology* ontology,
                        const StopwordSet& stopwords)
{
    const std::string text = read_file(path, "corpus");
    try {
        return parse_corpus(text, ontology, stopwords);
    } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string serialize_document(const Document& doc)
{
    nlohmann::ordered_json j;
    j["id"] = doc.id;
    j["title"] = doc.title;
    j["abstract"] = doc.abstract;
    if (doc.journal) {
        j["journal"] = *doc.journal;
    }
    j["date"] = format_date(doc.date);
    j["mesh_major"] = std::vector<std::string>(doc.mesh_major.begin(), doc.mesh_major.end());
    j["supplementary"] = std::vector<std::string>(doc.supplementary.begin(), doc.supplementary.end());
    return j.dump();
}

void save_corpus(const CorpusStore& corpus, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError(fmt::format("cannot write corpus '{}'", path.string()));
    }
    for (const auto& doc : corpus.documents()) {
        out << serialize_document(doc) << '\n';
    }
}

std::vector<Document> chronological_order(const CorpusStore& corpus)
{
    std::vector<Document> docs = corpus.documents();
    std::stable_sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) {
        if (a.date != b.date) {
            return a.date < b.date;
        }
        return a.id < b.id;
    });
    return docs;
}

std::vector<CorpusStore> chronological_split(const CorpusStore& corpus, std::span<const double> fractions)
{
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) {
            throw UsageError(fmt::format("fraction {} is outside [0, 1]", fractions[i]));
        }
        if (i > 0 && fractions[i] < fractions[i - 1]) {
            throw UsageError("fractions must be sorted ascending");
        }
    }
    const auto ordered = chronological_order(corpus);
    const auto n = static_cast<double>(ordered.size());
    std::vector<CorpusStore> out;
    out.reserve(fractions.size());
    for (const double f : fractions) {
        // The epsilon absorbs representation error such as 0.1 * 10210 = 1020.9999...
        const auto count = std::min(ordered.size(), static_cast<std::size_t>(std::floor(f * n + 1e-9)));
        out.emplace_back(std::vector<Document>(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(count)),
                         corpus.stopwords());
    }
    return out;
}

}  // namespace meshdex
