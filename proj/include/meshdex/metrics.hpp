#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meshdex/corpus.hpp"
#include "meshdex/document.hpp"

namespace meshdex {

struct PredictionSet {
    std::string doc_id;
    LabelSet labels;

    friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

/// `doc_id<TAB>id,id,...` per line; an empty set leaves the field empty.
std::vector<PredictionSet> load_label_file(const std::filesystem::path& path);
void save_label_file(const std::filesystem::path& path, const std::vector<PredictionSet>& sets);

struct IndexCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    friend bool operator==(const IndexCounts&, const IndexCounts&) = default;
};

struct MetricsReport {
    std::size_t documents = 0;
    double mip = 0, mir = 0, mif = 0;
    double map = 0, mar = 0, maf = 0;
    double accuracy = 0;         // mean Jaccard
    double subset_accuracy = 0;  // exact set match
    bool has_lca = false;
    double lca_p = 0, lca_r = 0, lca_f = 0;
    std::map<std::string, IndexCounts> per_index;
};

/// Harmonic mean; 0 when p + r == 0.
double f_measure(double p, double r);

/// Pairs documents by id. Throws UsageError when the id sets differ.
MetricsReport flat_metrics(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds);

/// a ∪ the nodes on a shortest path from each a to its closest b through
/// their lowest common ancestor. Mapping edges count as hierarchy.
LabelSet lca_augment(const LabelSet& a, const LabelSet& b, const MeshOntology& onto);

struct LcaScores {
    double p = 0, r = 0, f = 0;
};

LcaScores lca_scores(const LabelSet& pred, const LabelSet& gold, const MeshOntology& onto);
/// Document-averaged LCA precision, recall and F.
LcaScores lca_f(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds,
                const MeshOntology& onto);

MetricsReport evaluate(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds,
                       const MeshOntology* onto);

std::string format_table(const MetricsReport& report);
/// `key=value` lines.
std::string format_keyvalues(const MetricsReport& report);

}  // namespace meshdex
