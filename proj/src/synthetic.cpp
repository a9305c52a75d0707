#include "meshdex/synthetic.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/os.h>

#include "meshdex/error.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/textprep.hpp"

namespace meshdex {

namespace {

constexpr std::size_t kWordCount = 97;
constexpr std::size_t kKeywordsPerTopic = 2;
constexpr std::size_t kKeywordsPerSupplementary = 2;
constexpr std::size_t kRoots = 4;

std::string major_id(std::size_t t)
{
    return fmt::format("M{:02}", t);
}

std::string supplementary_id(std::size_t s)
{
    return fmt::format("S{:02}", s);
}

// Parent topic of a child heading; roots are 0..kRoots-1.
std::size_t parent_of(std::size_t t)
{
    return (t - kRoots) / kRoots;
}

// Supplementary concept s maps onto a child heading.
std::size_t mapped_major(std::size_t s, std::size_t topics)
{
    return kRoots + (5 * s) % (topics - kRoots);
}

}  // namespace

std::vector<std::string> synthetic_words()
{
    static const std::vector<std::string> words = [] {
        const std::string onsets = "bdfgklmnprtvz";
        const std::string vowels = "aiou";
        const std::string codas = "bdgkp";
        const StopwordSet& stop = StopwordSet::builtin();
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (std::size_t i = 0; out.size() < kWordCount; ++i) {
            // Walk the syllable grid with strides that spread neighbours apart.
            std::string w;
            w += onsets[i % onsets.size()];
            w += vowels[(i / 3) % vowels.size()];
            w += onsets[(i * 7 + 3) % onsets.size()];
            w += vowels[(i / 2 + i) % vowels.size()];
            w += codas[(i / 5) % codas.size()];
            if (stop.contains(w) || stem(w) != w || !seen.insert(w).second) {
                continue;
            }
            out.push_back(w);
        }
        return out;
    }();
    return words;
}

SyntheticBenchmark make_synthetic(const SyntheticSpec& spec)
{
    if (spec.topics <= kRoots || (spec.topics - kRoots) % kRoots != 0) {
        throw UsageError(fmt::format("synthetic topic count must be {} plus a multiple of {}", kRoots, kRoots));
    }
    const std::vector<std::string> words = synthetic_words();
    const std::size_t keyword_total = spec.topics * kKeywordsPerTopic + spec.supplementary * kKeywordsPerSupplementary;
    if (keyword_total >= words.size()) {
        throw UsageError("too many synthetic topics for the word list");
    }
    auto topic_word = [&](std::size_t t, std::size_t k) { return words[t * kKeywordsPerTopic + k]; };
    auto supp_word = [&](std::size_t s, std::size_t k) {
        return words[spec.topics * kKeywordsPerTopic + s * kKeywordsPerSupplementary + k];
    };
    const std::size_t background_begin = keyword_total;
    const std::size_t background_count = words.size() - keyword_total;

    std::vector<OntologyNode> nodes;
    std::vector<OntologyEdge> edges;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        nodes.push_back({major_id(t), NodeKind::major, fmt::format("Topic {}", t)});
        if (t >= kRoots) {
            edges.push_back({major_id(t), major_id(parent_of(t)), EdgeKind::hierarchy});
        }
    }
    for (std::size_t s = 0; s < spec.supplementary; ++s) {
        nodes.push_back({supplementary_id(s), NodeKind::supplementary, fmt::format("Concept {}", s)});
        edges.push_back({supplementary_id(s), major_id(mapped_major(s, spec.topics)), EdgeKind::mapping});
    }

    SyntheticBenchmark bench{MeshOntology(std::move(nodes), std::move(edges)), {}, {}, {}, words};
    const Date start{std::chrono::year{2020}, std::chrono::month{1}, std::chrono::day{1}};

    // A mention of a topic is its keywords in random order.
    auto phrase = [&](std::size_t t, Rng& rng) {
        std::array<std::size_t, kKeywordsPerTopic> order{};
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t k = order.size(); k > 1; --k) {
            std::swap(order[k - 1], order[rng.uniform_index(k)]);
        }
        std::vector<std::string> p;
        for (const std::size_t k : order) {
            p.push_back(topic_word(t, k));
        }
        return p;
    };

    auto make_doc = [&](const std::string& prefix, std::size_t i, std::size_t day_offset, std::uint64_t stream) {
        Rng rng(derive_seed(spec.seed, stream, i));
        Document d;
        d.id = fmt::format("{}{:04}", prefix, i);
        d.date = std::chrono::sys_days{start} + std::chrono::days{static_cast<int>(day_offset + i)};
        std::vector<std::vector<std::string>> chunks;

        const std::size_t primary = rng.uniform_index(spec.topics);
        std::set<std::size_t> topics{primary};
        if (primary >= kRoots && rng.uniform01() < 0.4) {
            topics.insert(parent_of(primary));
        }
        if (rng.uniform01() < 0.25) {
            topics.insert(rng.uniform_index(spec.topics));
        }
        for (const std::size_t t : topics) {
            d.mesh_major.insert(major_id(t));
            const std::size_t repeats = 2 + rng.uniform_index(3);
            for (std::size_t r = 0; r < repeats; ++r) {
                chunks.push_back(phrase(t, rng));
            }
        }
        for (std::size_t s = 0; s < spec.supplementary; ++s) {
            if (topics.contains(mapped_major(s, spec.topics)) && rng.uniform01() < 0.5) {
                d.supplementary.insert(supplementary_id(s));
                chunks.push_back({supp_word(s, 0), supp_word(s, 1)});
            }
        }
        // A stray keyword from an unrelated topic keeps the task from being
        // a pure lookup.
        if (rng.uniform01() < 0.3) {
            chunks.push_back({topic_word(rng.uniform_index(spec.topics), rng.uniform_index(kKeywordsPerTopic))});
        }
        // Filler is mostly one background word tied to the primary topic.
        const std::size_t filler = 4 + rng.uniform_index(5);
        for (std::size_t k = 0; k < filler; ++k) {
            const std::size_t w = rng.uniform01() < 0.9 ? primary % background_count
                                                        : rng.uniform_index(background_count);
            chunks.push_back({words[background_begin + w]});
        }
        for (std::size_t k = chunks.size(); k > 1; --k) {
            std::swap(chunks[k - 1], chunks[rng.uniform_index(k)]);
        }
        std::vector<std::string> tokens;
        for (const auto& c : chunks) {
            tokens.insert(tokens.end(), c.begin(), c.end());
        }
        const auto split = std::min<std::size_t>(5, tokens.size());
        d.title = fmt::format("{}", fmt::join(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(split), " "));
        d.abstract = fmt::format("{}", fmt::join(tokens.begin() + static_cast<std::ptrdiff_t>(split), tokens.end(), " "));
        return d;
    };

    for (std::size_t i = 0; i < spec.train_docs; ++i) {
        bench.train.push_back(make_doc("tr", i, 0, 1));
    }
    for (std::size_t i = 0; i < spec.test_docs; ++i) {
        bench.test.push_back(make_doc("te", i, spec.train_docs, 2));
    }
    for (std::size_t i = 0; i < spec.ssl_docs; ++i) {
        Document d = make_doc("ss", i, 0, 3);
        d.mesh_major.clear();
        d.supplementary.clear();
        bench.ssl.push_back(std::move(d));
    }
    return bench;
}

std::string synthetic_config_text(std::uint64_t seed)
{
    return fmt::format(R"(# toy benchmark settings
profile = "base"
seed = {}

[paths]
train = "train.jsonl"
test = "test.jsonl"
ssl = "ssl.jsonl"
ontology = "ontology.tsv"
out = "out"

[data]
embedding_init = "random"
vocab_size = 100

[retrieval]
weighting = "bm25"
k = 20
m = 10

[model]
d_model = 32
n_layers = 1
d_ff = 64
n_heads = 4
max_sequence_length = 64
dropout = 0.0

[pretrain]
learning_rate = 0.001
batch_size = 2
max_epochs = 30
patience = 5

[finetune]
learning_rate = 0.003
batch_size = 16
max_epochs = 40
patience = 6
init = "pretrained"
)",
                       seed);
}

void write_synthetic(const SyntheticBenchmark& bench, const std::filesystem::path& dir, std::uint64_t seed)
{
    std::filesystem::create_directories(dir);
    const StopwordSet& stop = StopwordSet::builtin();
    save_corpus(CorpusStore(bench.train, stop), dir / "train.jsonl");
    save_corpus(CorpusStore(bench.test, stop), dir / "test.jsonl");
    save_corpus(CorpusStore(bench.ssl, stop), dir / "ssl.jsonl");
    save_ontology(bench.ontology, dir / "ontology.tsv");
    auto out = fmt::output_file((dir / "meshdex.conf").string());
    out.print("{}", synthetic_config_text(seed));
}

}  // namespace meshdex
