#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meshdex/model.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/training.hpp"

namespace meshdex {

enum class Profile { base, large };

Profile parse_profile(std::string_view name);
std::string_view profile_name(Profile p);

inline const std::vector<double> kEfficiencyFractions{0.0, 0.05, 0.1, 0.2, 0.5, 1.0};

struct PipelineConfig {
    // Inputs. Empty means "not configured".
    std::filesystem::path train_corpus;
    std::filesystem::path test_corpus;
    std::filesystem::path ssl_corpus;
    std::filesystem::path ontology;
    std::filesystem::path embeddings;
    std::filesystem::path stopwords;  // empty: built-in list
    std::filesystem::path out_dir = "meshdex_out";

    std::string embedding_init = "file";  // "file" or "random"
    std::size_t embedding_dim = 0;        // random init only; 0 follows d_model
    std::size_t vocab_size = kDefaultVocabularySize;

    WeightingScheme weighting = WeightingScheme::bm25;
    double k1 = 1.2;
    double b = 0.75;
    RetrievalSettings retrieval;

    Profile profile = Profile::base;
    ModelConfig model;        // vocab_size and label_count are filled per run
    TrainConfig pretrain;
    TrainConfig finetune;
    bool finetune_from_pretrained = true;

    bool joint_supplementary = false;
    std::vector<double> fractions = kEfficiencyFractions;
    std::uint64_t seed = 7;

    /// Throws UsageError when a value is out of range.
    void validate() const;
};

/// Applies base or large sizes and learning rates.
void apply_profile(PipelineConfig& cfg, Profile p);

using Override = std::pair<std::string, std::string>;

/// Flat `key = value` text with `[section]` headers, `#` comments, quoted
/// strings, bare numbers, true/false and `[a, b]` lists. Keys are addressed
/// as `section.key` (top-level keys have no prefix). Defaults, then the
/// profile preset, then file keys, then overrides. Relative paths in the file
/// resolve against its directory.
PipelineConfig parse_config_text(std::string_view text, const std::vector<Override>& overrides = {},
                                 const std::filesystem::path& base_dir = {});
PipelineConfig parse_config(const std::optional<std::filesystem::path>& path,
                            const std::vector<Override>& overrides = {});

/// Every key in canonical order, in the file format; parses back to an
/// equivalent config.
std::string config_snapshot(const PipelineConfig& cfg);

/// Known keys, e.g. "retrieval.m".
std::vector<std::string> config_keys();

}  // namespace meshdex
