#pragma once

// Slow, independent re-implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "meshdex/corpus.hpp"
#include "meshdex/metrics.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/thresholds.hpp"

#include <fmt/format.h>

namespace meshdex::testing {

struct FlatOracle {
    double mip = 0, mir = 0, mif = 0, map = 0, mar = 0, maf = 0, accuracy = 0, subset = 0;
};

inline double harmonic(double p, double r)
{
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Assumes preds[i] and golds[i] describe the same document.
inline FlatOracle flat_oracle(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds)
{
    std::set<std::string> indexes;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        indexes.insert(preds[i].begin(), preds[i].end());
        indexes.insert(golds[i].begin(), golds[i].end());
    }
    FlatOracle o;
    double tp = 0, fp = 0, fn = 0;
    for (const auto& id : indexes) {
        double t = 0, f = 0, n = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool p = preds[i].contains(id), g = golds[i].contains(id);
            t += p && g;
            f += p && !g;
            n += !p && g;
        }
        tp += t;
        fp += f;
        fn += n;
        const double pi = t + f == 0 ? 0.0 : t / (t + f);
        const double ri = t + n == 0 ? 0.0 : t / (t + n);
        o.map += pi;
        o.mar += ri;
        o.maf += harmonic(pi, ri);
    }
    if (!indexes.empty()) {
        o.map /= static_cast<double>(indexes.size());
        o.mar /= static_cast<double>(indexes.size());
        o.maf /= static_cast<double>(indexes.size());
    }
    o.mip = tp + fp == 0 ? 0.0 : tp / (tp + fp);
    o.mir = tp + fn == 0 ? 0.0 : tp / (tp + fn);
    o.mif = harmonic(o.mip, o.mir);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::size_t inter = 0;
        for (const auto& p : preds[i]) {
            inter += golds[i].contains(p);
        }
        const std::size_t uni = preds[i].size() + golds[i].size() - inter;
        o.accuracy += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        o.subset += preds[i] == golds[i];
    }
    if (!preds.empty()) {
        o.accuracy /= static_cast<double>(preds.size());
        o.subset /= static_cast<double>(preds.size());
    }
    return o;
}

// Best micro-F over every threshold for a single index, trying each midpoint
// between sorted distinct scores plus both ends. Returns the best F.
inline double exhaustive_single_index_f(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds)
{
    std::vector<double> s;
    for (const auto& c : scores) {
        for (const auto& e : c.entries) {
            s.push_back(e.score);
        }
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    std::vector<double> cuts{-1.0, 2.0};
    for (std::size_t i = 0; i < s.size(); ++i) {
        cuts.push_back(s[i]);
        if (i + 1 < s.size()) {
            cuts.push_back(0.5 * (s[i] + s[i + 1]));
        }
    }
    double best = 0.0;
    for (const double cut : cuts) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t d = 0; d < scores.size(); ++d) {
            std::set<std::string> seen;
            for (const auto& e : scores[d].entries) {
                seen.insert(e.id);
                const bool g = golds[d].contains(e.id);
                if (e.score > cut) {
                    (g ? tp : fp) += 1;
                } else if (g) {
                    fn += 1;
                }
            }
            for (const auto& g : golds[d]) {
                fn += !seen.contains(g);
            }
        }
        const double p = tp + fp == 0 ? 0.0 : tp / (tp + fp);
        const double r = tp + fn == 0 ? 0.0 : tp / (tp + fn);
        best = std::max(best, harmonic(p, r));
    }
    return best;
}

// Root A; B, C under A; D under B; E isolated; X -> Y chain under R.
inline MeshOntology lca_fixture()
{
    std::vector<OntologyNode> nodes;
    for (const char* id : {"A", "B", "C", "D", "E", "R", "X", "Y"}) {
        nodes.push_back({id, NodeKind::major, id});
    }
    std::vector<OntologyEdge> edges{{"B", "A", EdgeKind::hierarchy},
                                    {"C", "A", EdgeKind::hierarchy},
                                    {"D", "B", EdgeKind::hierarchy},
                                    {"X", "R", EdgeKind::hierarchy},
                                    {"Y", "X", EdgeKind::hierarchy}};
    return MeshOntology(std::move(nodes), std::move(edges));
}

inline DocIndex random_doc_index(std::size_t n, std::size_t dim, std::uint64_t seed)
{
    Rng rng(seed);
    DocIndex idx;
    idx.vectors = Matrix(n, dim);
    for (auto& x : idx.vectors.values()) {
        x = rng.uniform(-1.0, 1.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        idx.ids.push_back(fmt::format("d{:05}", (i * 7919) % n));
        idx.labels.push_back({});
        idx.idf_mass.push_back(1.0);
    }
    idx.finalize();
    return idx;
}

// Exhaustive scan written from scratch: cosine of every row, then sort.
inline std::vector<std::string> brute_force_neighbors(std::span<const double> q, const DocIndex& idx, std::size_t k)
{
    std::vector<std::pair<double, std::string>> all;
    double qn = 0.0;
    for (const double x : q) {
        qn += x * x;
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
        double dot = 0.0, rn = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) {
            dot += q[c] * idx.vectors(i, c);
            rn += idx.vectors(i, c) * idx.vectors(i, c);
        }
        all.emplace_back(dot / std::sqrt(qn * rn), idx.ids[i]);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
        out.push_back(all[i].second);
    }
    return out;
}

struct ThresholdFixture {
    std::vector<CandidateSet> scores;
    std::vector<LabelSet> golds;
};

// One index "X" scored on every document; gold with probability tied to the score.
inline ThresholdFixture single_index_fixture(std::uint64_t seed, std::size_t docs)
{
    Rng rng(seed);
    ThresholdFixture f;
    for (std::size_t d = 0; d < docs; ++d) {
        const double s = std::round(rng.uniform01() * 40.0) / 40.0;
        f.scores.push_back({fmt::format("d{}", d), {{"X", s}}});
        LabelSet g;
        if (rng.uniform01() < 0.2 + 0.6 * s) {
            g.insert("X");
        }
        if (rng.uniform01() < 0.1) {
            g.insert("MISSING");
        }
        f.golds.push_back(g);
    }
    return f;
}

inline ThresholdFixture several_indexes_fixture(std::uint64_t seed, std::size_t docs)
{
    Rng rng(seed);
    ThresholdFixture f;
    const std::vector<std::string> ids{"A", "B", "C", "D"};
    for (std::size_t d = 0; d < docs; ++d) {
        CandidateSet c{fmt::format("d{}", d), {}};
        LabelSet g;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (rng.uniform01() < 0.7) {
                const double s = rng.uniform01();
                c.entries.push_back({ids[k], s});
                // each index is calibrated differently
                if (rng.uniform01() < std::pow(s, 0.5 + static_cast<double>(k))) {
                    g.insert(ids[k]);
                }
            }
        }
        f.scores.push_back(c);
        f.golds.push_back(g);
    }
    return f;
}

}  // namespace meshdex::testing
