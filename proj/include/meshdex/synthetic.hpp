#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meshdex/corpus.hpp"
#include "meshdex/document.hpp"

namespace meshdex {

// Seeded toy benchmark: latent topics become major headings (4 roots with 4
// children each for 20 topics), a few supplementary concepts hang off child
// headings, and documents are shuffled topic phrases separated by filler words.
struct SyntheticSpec {
    std::size_t topics = 20;
    std::size_t supplementary = 3;
    std::size_t train_docs = 200;
    std::size_t test_docs = 50;
    std::size_t ssl_docs = 400;
    std::uint64_t seed = 7;
};

struct SyntheticBenchmark {
    MeshOntology ontology;
    std::vector<Document> train;
    std::vector<Document> test;
    std::vector<Document> ssl;  // unlabeled
    std::vector<std::string> words;
};

/// 97 distinct pseudo-words that survive stopword removal and stemming
/// unchanged, so a full vocabulary is 100 entries.
std::vector<std::string> synthetic_words();

SyntheticBenchmark make_synthetic(const SyntheticSpec& spec);

/// Writes train.jsonl, test.jsonl, ssl.jsonl, ontology.tsv and a small
/// meshdex.conf pointing at them.
void write_synthetic(const SyntheticBenchmark& bench, const std::filesystem::path& dir, std::uint64_t seed);

/// Config text tuned for the toy benchmark (tiny model, short training).
std::string synthetic_config_text(std::uint64_t seed);

}  // namespace meshdex
