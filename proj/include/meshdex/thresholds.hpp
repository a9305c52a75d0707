#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meshdex/document.hpp"
#include "meshdex/metrics.hpp"
#include "meshdex/retrieval.hpp"

namespace meshdex {

inline constexpr double kDefaultThreshold = 0.5;

struct ThresholdTable {
    std::map<std::string, double, std::less<>> thresholds;
    double default_threshold = kDefaultThreshold;

    double at(std::string_view id) const;

    friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

struct ThresholdFit {
    ThresholdTable table;
    std::vector<double> trace;  // micro-F at the start and after each accepted move
    std::size_t sweeps = 0;
};

/// Micro-F of thresholded scores against golds. Golds missing from the
/// candidate lists count as false negatives.
double thresholded_micro_f(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds,
                           const ThresholdTable& table);

/// Coordinate ascent from 0.5 everywhere. Per index the candidate cut points
/// are its distinct observed scores, 0.5, and half its smallest score (so
/// "predict every occurrence" is reachable). Best micro-F wins, ties go to
/// the larger threshold; at most 5 sweeps.
ThresholdFit fit_thresholds(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds);

/// Predicted iff score > threshold.
std::vector<PredictionSet> apply_thresholds(const std::vector<CandidateSet>& scores, const ThresholdTable& table);

/// `id<TAB>threshold` lines; a `*` id carries the default.
void save_thresholds(const std::filesystem::path& path, const ThresholdTable& table);
ThresholdTable load_thresholds(const std::filesystem::path& path);

}  // namespace meshdex
