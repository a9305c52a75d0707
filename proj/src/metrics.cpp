#include "meshdex/metrics.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/os.h>

#include "meshdex/error.hpp"

namespace meshdex {

std::vector<PredictionSet> load_label_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read label file '{}'", path.string()));
    }
    std::vector<PredictionSet> out;
    std::set<std::string> seen;
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
        const auto tab = line.find('\t');
        PredictionSet set;
        set.doc_id = line.substr(0, tab);
        if (set.doc_id.empty()) {
            throw DataError(fmt::format("{}:{}: empty document id", path.string(), lineno));
        }
        if (!seen.insert(set.doc_id).second) {
            throw DataError(fmt::format("{}:{}: duplicate document id '{}'", path.string(), lineno, set.doc_id));
        }
        if (tab != std::string::npos) {
            const std::string rest = line.substr(tab + 1);
            std::size_t start = 0;
            while (start < rest.size()) {
                auto comma = rest.find(',', start);
                if (comma == std::string::npos) {
                    comma = rest.size();
                }
                if (comma > start) {
                    set.labels.insert(rest.substr(start, comma - start));
                }
                start = comma + 1;
            }
        }
        out.push_back(std::move(set));
    }
    return out;
}

void save_label_file(const std::filesystem::path& path, const std::vector<PredictionSet>& sets)
{
    auto out = fmt::output_file(path.string());
    for (const auto& s : sets) {
        out.print("{}\t{}\n", s.doc_id, fmt::join(s.labels, ","));
    }
}

double f_measure(double p, double r)
{
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

namespace {

double ratio(std::size_t num, std::size_t den)
{
    return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

// Gold sets in prediction order.
std::vector<const LabelSet*> pair_golds(const std::vector<PredictionSet>& preds,
                                        const std::vector<PredictionSet>& golds)
{
    std::unordered_map<std::string_view, const LabelSet*> by_id;
    for (const auto& g : golds) {
        by_id.emplace(g.doc_id, &g.labels);
    }
    if (by_id.size() != golds.size()) {
        throw UsageError("gold file repeats a document id");
    }
    std::vector<const LabelSet*> out;
    out.reserve(preds.size());
    std::set<std::string_view> pred_ids;
    for (const auto& p : preds) {
        const auto it = by_id.find(p.doc_id);
        if (it == by_id.end()) {
            throw UsageError(fmt::format("document '{}' has a prediction but no gold labels", p.doc_id));
        }
        if (!pred_ids.insert(p.doc_id).second) {
            throw UsageError(fmt::format("document '{}' is predicted twice", p.doc_id));
        }
        out.push_back(it->second);
    }
    if (preds.size() != golds.size()) {
        for (const auto& g : golds) {
            if (!pred_ids.contains(g.doc_id)) {
                throw UsageError(fmt::format("document '{}' has gold labels but no prediction", g.doc_id));
            }
        }
    }
    return out;
}

}  // namespace

MetricsReport flat_metrics(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds)
{
    const auto paired = pair_golds(preds, golds);
    MetricsReport r;
    r.documents = preds.size();
    double jaccard = 0.0;
    std::size_t exact = 0;
    for (std::size_t d = 0; d < preds.size(); ++d) {
        const LabelSet& p = preds[d].labels;
        const LabelSet& g = *paired[d];
        std::size_t inter = 0;
        for (const auto& id : p) {
            if (g.contains(id)) {
                ++inter;
                ++r.per_index[id].tp;
            } else {
                ++r.per_index[id].fp;
            }
        }
        for (const auto& id : g) {
            if (!p.contains(id)) {
                ++r.per_index[id].fn;
            }
        }
        const std::size_t uni = p.size() + g.size() - inter;
        jaccard += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        exact += p == g;
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    double sum_p = 0, sum_r = 0, sum_f = 0;
    for (const auto& [id, c] : r.per_index) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
        const double p = ratio(c.tp, c.tp + c.fp);
        const double rc = ratio(c.tp, c.tp + c.fn);
        sum_p += p;
        sum_r += rc;
        sum_f += f_measure(p, rc);
    }
    r.mip = ratio(tp, tp + fp);
    r.mir = ratio(tp, tp + fn);
    r.mif = f_measure(r.mip, r.mir);
    if (!r.per_index.empty()) {
        const auto n = static_cast<double>(r.per_index.size());
        r.map = sum_p / n;
        r.mar = sum_r / n;
        r.maf = sum_f / n;
    }
    if (r.documents > 0) {
        r.accuracy = jaccard / static_cast<double>(r.documents);
        r.subset_accuracy = static_cast<double>(exact) / static_cast<double>(r.documents);
    }
    return r;
}

namespace {

// Shortest upward distances from one node, with the predecessor on one
// shortest path (parents visited in ascending id order).
struct UpwardTree {
    std::unordered_map<std::size_t, std::size_t> dist;
    std::unordered_map<std::size_t, std::size_t> prev;
};

UpwardTree climb(std::size_t from, const MeshOntology& onto)
{
    UpwardTree t;
    t.dist.emplace(from, 0);
    std::deque<std::size_t> queue{from};
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (const std::size_t p : onto.parents(u)) {
            if (t.dist.emplace(p, t.dist[u] + 1).second) {
                t.prev.emplace(p, u);
                queue.push_back(p);
            }
        }
    }
    return t;
}

bool is_ancestor_of(std::size_t anc, const UpwardTree& below)
{
    return below.dist.contains(anc);
}

}  // namespace

LabelSet lca_augment(const LabelSet& a, const LabelSet& b, const MeshOntology& onto)
{
    std::map<std::size_t, UpwardTree> trees;
    auto tree = [&](std::size_t pos) -> const UpwardTree& {
        auto it = trees.find(pos);
        if (it == trees.end()) {
            it = trees.emplace(pos, climb(pos, onto)).first;
        }
        return it->second;
    };
    auto resolve = [&](const std::string& id) {
        const auto pos = onto.find(id);
        if (!pos) {
            throw DataError(fmt::format("label '{}' is not in the ontology", id));
        }
        return *pos;
    };

    LabelSet out = a;
    std::vector<std::size_t> bs;
    for (const auto& id : b) {
        bs.push_back(resolve(id));
    }
    // Node positions follow id order, so comparing positions breaks ties by id.
    std::sort(bs.begin(), bs.end());
    for (const auto& id : a) {
        const std::size_t ap = resolve(id);
        const UpwardTree& ta = tree(ap);
        std::size_t best_dist = std::numeric_limits<std::size_t>::max();
        std::size_t best_b = 0, best_lca = 0;
        for (const std::size_t bp : bs) {
            const UpwardTree& tb = tree(bp);
            std::vector<std::size_t> common;
            for (const auto& [node, _] : ta.dist) {
                if (tb.dist.contains(node)) {
                    common.push_back(node);
                }
            }
            std::sort(common.begin(), common.end());
            for (const std::size_t c : common) {
                // Lowest: no other common ancestor lies below c.
                bool lowest = true;
                for (const std::size_t other : common) {
                    if (other != c && is_ancestor_of(c, tree(other))) {
                        lowest = false;
                        break;
                    }
                }
                if (!lowest) {
                    continue;
                }
                const std::size_t d = ta.dist.at(c) + tb.dist.at(c);
                if (d < best_dist) {
                    best_dist = d;
                    best_b = bp;
                    best_lca = c;
                }
            }
        }
        if (best_dist == std::numeric_limits<std::size_t>::max()) {
            continue;
        }
        for (const std::size_t start : {ap, best_b}) {
            const UpwardTree& t = tree(start);
            std::size_t node = best_lca;
            out.insert(onto.node(node).id);
            while (node != start) {
                node = t.prev.at(node);
                out.insert(onto.node(node).id);
            }
        }
    }
    return out;
}

LcaScores lca_scores(const LabelSet& pred, const LabelSet& gold, const MeshOntology& onto)
{
    if (pred.empty() && gold.empty()) {
        return {1.0, 1.0, 1.0};
    }
    if (pred.empty() || gold.empty()) {
        return {};
    }
    const LabelSet p = lca_augment(pred, gold, onto);
    const LabelSet g = lca_augment(gold, pred, onto);
    std::size_t inter = 0;
    for (const auto& id : p) {
        inter += g.contains(id);
    }
    LcaScores s;
    s.p = ratio(inter, p.size());
    s.r = ratio(inter, g.size());
    s.f = f_measure(s.p, s.r);
    return s;
}

LcaScores lca_f(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds,
                const MeshOntology& onto)
{
    const auto paired = pair_golds(preds, golds);
    LcaScores total;
    if (preds.empty()) {
        return total;
    }
    for (std::size_t d = 0; d < preds.size(); ++d) {
        const LcaScores s = lca_scores(preds[d].labels, *paired[d], onto);
        total.p += s.p;
        total.r += s.r;
        total.f += s.f;
    }
    const auto n = static_cast<double>(preds.size());
    total.p /= n;
    total.r /= n;
    total.f /= n;
    return total;
}

MetricsReport evaluate(const std::vector<PredictionSet>& preds, const std::vector<PredictionSet>& golds,
                       const MeshOntology* onto)
{
    MetricsReport r = flat_metrics(preds, golds);
    if (onto) {
        const LcaScores s = lca_f(preds, golds, *onto);
        r.has_lca = true;
        r.lca_p = s.p;
        r.lca_r = s.r;
        r.lca_f = s.f;
    }
    return r;
}

std::string format_table(const MetricsReport& r)
{
    std::string out = fmt::format("{:<10} {:>9} {:>9} {:>9}\n", "", "P", "R", "F");
    out += fmt::format("{:<10} {:>9.4f} {:>9.4f} {:>9.4f}\n", "micro", r.mip, r.mir, r.mif);
    out += fmt::format("{:<10} {:>9.4f} {:>9.4f} {:>9.4f}\n", "macro", r.map, r.mar, r.maf);
    if (r.has_lca) {
        out += fmt::format("{:<10} {:>9.4f} {:>9.4f} {:>9.4f}\n", "lca", r.lca_p, r.lca_r, r.lca_f);
    }
    out += fmt::format("accuracy {:.4f}  subset-accuracy {:.4f}  documents {}\n", r.accuracy, r.subset_accuracy,
                       r.documents);
    return out;
}

std::string format_keyvalues(const MetricsReport& r)
{
    std::string out = fmt::format("documents={}\nMiP={}\nMiR={}\nMiF={}\nMaP={}\nMaR={}\nMaF={}\naccuracy={}\n"
                                  "subset_accuracy={}\n",
                                  r.documents, r.mip, r.mir, r.mif, r.map, r.mar, r.maf, r.accuracy,
                                  r.subset_accuracy);
    if (r.has_lca) {
        out += fmt::format("LCA-P={}\nLCA-R={}\nLCA-F={}\n", r.lca_p, r.lca_r, r.lca_f);
    }
    for (const auto& [id, c] : r.per_index) {
        out += fmt::format("index.{}={},{},{}\n", id, c.tp, c.fp, c.fn);
    }
    return out;
}

}  // namespace meshdex
