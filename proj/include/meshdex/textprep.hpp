#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "meshdex/document.hpp"

namespace meshdex {

class CorpusStore;

using TokenId = std::uint32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kMaskId = 2;
inline constexpr std::size_t kReservedTokens = 3;
inline constexpr std::size_t kDefaultMaxSequenceLength = 256;
inline constexpr std::size_t kDefaultVocabularySize = 90000;

/// Lowercases and splits on every non-alphanumeric byte.
std::vector<std::string> tokenize(std::string_view text);

/// Porter (1980) suffix stripping. Input is expected to be lowercase.
std::string stem(std::string_view token);

class StopwordSet {
public:
    StopwordSet() = default;

    /// The shipped English list (data/stopwords.txt).
    static const StopwordSet& builtin();
    static StopwordSet load(const std::filesystem::path& path);
    /// One token per line; blank lines and '#' comments are skipped.
    static StopwordSet parse(std::string_view text);

    bool contains(std::string_view token) const { return words_.contains(std::string(token)); }
    std::size_t size() const noexcept { return words_.size(); }

private:
    std::unordered_set<std::string> words_;
};

/// tokenize -> drop stopwords -> stem. The stopword test sees the raw token.
std::vector<std::string> analyze(std::string_view text, const StopwordSet& stopwords);

/// Title and abstract joined by a single space.
std::string document_text(const Document& doc);

class Vocabulary {
public:
    Vocabulary();

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const noexcept { return tokens_.size(); }
    /// Returns UNK for unknown tokens.
    TokenId id(std::string_view token) const;
    std::optional<TokenId> find(std::string_view token) const;
    const std::string& token(TokenId id) const { return tokens_.at(id); }

    /// Appends a new non-reserved token. Throws on duplicates.
    TokenId add(std::string token);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

/// The (max_size - 3) most frequent analyzed terms, ties broken
/// lexicographically, after the three reserved entries.
Vocabulary build_vocabulary(const CorpusStore& corpus, std::size_t max_size);

struct TokenSequence {
    std::string doc_id;
    std::vector<TokenId> tokens;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Throws DataError when nothing survives stopword removal.
TokenSequence preprocess_document(const Document& doc, const Vocabulary& vocab,
                                  const StopwordSet& stopwords,
                                  std::size_t max_sequence_length = kDefaultMaxSequenceLength);

std::vector<TokenSequence> preprocess_corpus(const CorpusStore& corpus, const Vocabulary& vocab,
                                             std::size_t max_sequence_length = kDefaultMaxSequenceLength);

}  // namespace meshdex
