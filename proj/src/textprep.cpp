#include "meshdex/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "meshdex/corpus.hpp"
#include "meshdex/error.hpp"

namespace meshdex {

namespace detail {
extern const std::string_view builtin_stopwords_text;
}

std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> out;
    std::string current;
    for (const char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 128 && std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        out.push_back(std::move(current));
    }
    return out;
}

const StopwordSet& StopwordSet::builtin()
{
    static const StopwordSet set = parse(detail::builtin_stopwords_text);
    return set;
}

StopwordSet StopwordSet::parse(std::string_view text)
{
    StopwordSet set;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto last = line.find_last_not_of(" \t\r");
        std::string word = line.substr(first, last - first + 1);
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        set.words_.insert(std::move(word));
    }
    return set;
}

StopwordSet StopwordSet::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot read stopword file '{}'", path.string()));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::vector<std::string> analyze(std::string_view text, const StopwordSet& stopwords)
{
    std::vector<std::string> out;
    for (auto& token : tokenize(text)) {
        if (stopwords.contains(token)) {
            continue;
        }
        std::string s = stem(token);
        if (!s.empty()) {
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::string document_text(const Document& doc)
{
    return doc.title + " " + doc.abstract;
}

// --- Vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary()
{
    tokens_ = {"[PAD]", "[UNK]", "[MASK]"};
    for (TokenId i = 0; i < tokens_.size(); ++i) {
        ids_.emplace(tokens_[i], i);
    }
}

TokenId Vocabulary::add(std::string token)
{
    const auto id = static_cast<TokenId>(tokens_.size());
    if (!ids_.emplace(token, id).second) {
        throw DataError(fmt::format("duplicate vocabulary token '{}'", token));
    }
    tokens_.push_back(std::move(token));
    return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const
{
    const auto it = ids_.find(std::string(token));
    if (it == ids_.end() || it->second < kReservedTokens) {
        return std::nullopt;
    }
    return it->second;
}

TokenId Vocabulary::id(std::string_view token) const
{
    return find(token).value_or(kUnkId);
}

void Vocabulary::save(const std::filesystem::path& path) const
{
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write vocabulary '{}'", path.string()));
    }
    for (TokenId i = 0; i < tokens_.size(); ++i) {
        out << tokens_[i] << '\t' << i << '\n';
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot read vocabulary '{}'", path.string()));
    }
    Vocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(fmt::format("{}:{}: expected token<TAB>id", path.string(), lineno));
        }
        const std::string token = line.substr(0, tab);
        std::size_t id = 0;
        try {
            id = std::stoul(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw DataError(fmt::format("{}:{}: bad token id", path.string(), lineno));
        }
        if (id < kReservedTokens) {
            if (vocab.tokens_[id] != token) {
                throw DataError(fmt::format("{}:{}: reserved id {} must be '{}'", path.string(),
                                            lineno, id, vocab.tokens_[id]));
            }
            continue;
        }
        if (id != vocab.size()) {
            throw DataError(fmt::format("{}:{}: ids must be dense and ascending", path.string(), lineno));
        }
        vocab.add(token);
    }
    return vocab;
}

Vocabulary build_vocabulary(const CorpusStore& corpus, std::size_t max_size)
{
    if (max_size <= kReservedTokens) {
        throw UsageError(fmt::format("vocabulary size must exceed {}", kReservedTokens));
    }
    const auto& freq = corpus.statistics().collection_frequency;
    std::vector<std::pair<std::string, std::size_t>> terms(freq.begin(), freq.end());
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    const std::size_t keep = std::min(terms.size(), max_size - kReservedTokens);
    Vocabulary vocab;
    for (std::size_t i = 0; i < keep; ++i) {
        vocab.add(terms[i].first);
    }
    return vocab;
}

TokenSequence preprocess_document(const Document& doc, const Vocabulary& vocab,
                                  const StopwordSet& stopwords, std::size_t max_sequence_length)
{
    TokenSequence seq;
    seq.doc_id = doc.id;
    for (const auto& term : analyze(document_text(doc), stopwords)) {
        if (seq.tokens.size() >= max_sequence_length) {
            break;
        }
        seq.tokens.push_back(vocab.id(term));
    }
    if (seq.tokens.empty()) {
        throw DataError(fmt::format("document '{}' has no usable content after preprocessing", doc.id));
    }
    return seq;
}

std::vector<TokenSequence> preprocess_corpus(const CorpusStore& corpus, const Vocabulary& vocab,
                                             std::size_t max_sequence_length)
{
    std::vector<TokenSequence> out(corpus.size());
    const auto n = static_cast<std::ptrdiff_t>(corpus.size());
    std::vector<std::string> errors(corpus.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            out[i] = preprocess_document(corpus[i], vocab, corpus.stopwords(), max_sequence_length);
        } catch (const DataError& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) {
            throw DataError(e);
        }
    }
    return out;
}

}  // namespace meshdex
