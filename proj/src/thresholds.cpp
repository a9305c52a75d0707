#include "meshdex/thresholds.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "meshdex/error.hpp"

namespace meshdex {

double ThresholdTable::at(std::string_view id) const
{
    const auto it = thresholds.find(id);
    return it == thresholds.end() ? default_threshold : it->second;
}

namespace {

struct Occurrence {
    double score;
    bool gold;
};

double micro_f(std::size_t tp, std::size_t fp, std::size_t gold_total)
{
    const std::size_t den = tp + fp + gold_total;
    return den > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(den) : 0.0;
}

void check_inputs(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds)
{
    if (scores.empty()) {
        throw UsageError("threshold fitting needs at least one document");
    }
    if (scores.size() != golds.size()) {
        throw UsageError(fmt::format("{} score lists but {} gold sets", scores.size(), golds.size()));
    }
}

std::size_t gold_count(const std::vector<LabelSet>& golds)
{
    std::size_t n = 0;
    for (const auto& g : golds) {
        n += g.size();
    }
    return n;
}

}  // namespace

double thresholded_micro_f(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds,
                           const ThresholdTable& table)
{
    check_inputs(scores, golds);
    std::size_t tp = 0, fp = 0;
    for (std::size_t d = 0; d < scores.size(); ++d) {
        for (const auto& c : scores[d].entries) {
            if (c.score > table.at(c.id)) {
                (golds[d].contains(c.id) ? tp : fp) += 1;
            }
        }
    }
    return micro_f(tp, fp, gold_count(golds));
}

ThresholdFit fit_thresholds(const std::vector<CandidateSet>& scores, const std::vector<LabelSet>& golds)
{
    check_inputs(scores, golds);
    std::map<std::string, std::vector<Occurrence>, std::less<>> by_index;
    for (std::size_t d = 0; d < scores.size(); ++d) {
        for (const auto& c : scores[d].entries) {
            if (!std::isfinite(c.score)) {
                throw UsageError(fmt::format("document '{}' has a non-finite score for '{}'", scores[d].doc_id, c.id));
            }
            by_index[c.id].push_back({c.score, golds[d].contains(c.id)});
        }
    }
    const std::size_t gold_total = gold_count(golds);

    ThresholdFit fit;
    // Per index: occurrences sorted by descending score and the ascending cut
    // points to try.
    struct Coordinate {
        std::string id;
        std::vector<Occurrence> occ;
        std::vector<double> cuts;
        std::size_t tp = 0, fp = 0;  // at the current threshold
    };
    std::vector<Coordinate> coords;
    std::size_t tp = 0, fp = 0;
    for (auto& [id, occ] : by_index) {
        std::sort(occ.begin(), occ.end(), [](const Occurrence& a, const Occurrence& b) { return a.score > b.score; });
        Coordinate c{id, std::move(occ), {}, 0, 0};
        for (const auto& o : c.occ) {
            c.cuts.push_back(o.score);
        }
        c.cuts.push_back(kDefaultThreshold);
        c.cuts.push_back(c.occ.back().score / 2.0);
        std::sort(c.cuts.begin(), c.cuts.end());
        c.cuts.erase(std::unique(c.cuts.begin(), c.cuts.end()), c.cuts.end());
        for (const auto& o : c.occ) {
            if (o.score > kDefaultThreshold) {
                (o.gold ? c.tp : c.fp) += 1;
            }
        }
        tp += c.tp;
        fp += c.fp;
        fit.table.thresholds.emplace(c.id, kDefaultThreshold);
        coords.push_back(std::move(c));
    }

    double current = micro_f(tp, fp, gold_total);
    fit.trace.push_back(current);
    constexpr std::size_t kMaxSweeps = 5;
    for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
        ++fit.sweeps;
        bool improved = false;
        for (auto& c : coords) {
            const std::size_t tp_rest = tp - c.tp;
            const std::size_t fp_rest = fp - c.fp;
            // Walk cut points from high to low; occurrences above the cut
            // accumulate as the cut drops.
            double best_f = -1.0, best_cut = 0.0;
            std::size_t best_tp = 0, best_fp = 0;
            std::size_t k = 0, ctp = 0, cfp = 0;
            for (auto it = c.cuts.rbegin(); it != c.cuts.rend(); ++it) {
                while (k < c.occ.size() && c.occ[k].score > *it) {
                    (c.occ[k].gold ? ctp : cfp) += 1;
                    ++k;
                }
                const double f = micro_f(tp_rest + ctp, fp_rest + cfp, gold_total);
                if (f > best_f) {  // strict: the larger cut wins ties
                    best_f = f;
                    best_cut = *it;
                    best_tp = ctp;
                    best_fp = cfp;
                }
            }
            double& slot = fit.table.thresholds.find(c.id)->second;
            if (best_cut != slot) {
                slot = best_cut;
                tp = tp_rest + best_tp;
                fp = fp_rest + best_fp;
                c.tp = best_tp;
                c.fp = best_fp;
                if (best_f > current) {
                    improved = true;
                }
                current = best_f;
                fit.trace.push_back(current);
            }
        }
        if (!improved) {
            break;
        }
    }
    return fit;
}

std::vector<PredictionSet> apply_thresholds(const std::vector<CandidateSet>& scores, const ThresholdTable& table)
{
    std::vector<PredictionSet> out;
    out.reserve(scores.size());
    for (const auto& s : scores) {
        PredictionSet p{s.doc_id, {}};
        for (const auto& c : s.entries) {
            if (c.score > table.at(c.id)) {
                p.labels.insert(c.id);
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

void save_thresholds(const std::filesystem::path& path, const ThresholdTable& table)
{
    auto out = fmt::output_file(path.string());
    out.print("*\t{}\n", table.default_threshold);
    for (const auto& [id, t] : table.thresholds) {
        out.print("{}\t{}\n", id, t);
    }
}

ThresholdTable load_thresholds(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read thresholds '{}'", path.string()));
    }
    ThresholdTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(fmt::format("{}:{}: expected id<TAB>threshold", path.string(), lineno));
        }
        double value = 0.0;
        const char* first = line.data() + tab + 1;
        const char* last = line.data() + line.size();
        const auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || ptr != last || !(value >= 0.0 && value < 1.0)) {
            throw DataError(fmt::format("{}:{}: threshold must be a number in [0, 1)", path.string(), lineno));
        }
        const std::string id = line.substr(0, tab);
        if (id == "*") {
            table.default_threshold = value;
        } else if (!table.thresholds.emplace(id, value).second) {
            throw DataError(fmt::format("{}:{}: duplicate index '{}'", path.string(), lineno, id));
        }
    }
    return table;
}

}  // namespace meshdex
