#include <doctest.h>

#include <cmath>

#include "meshdex/error.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/thresholds.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;


TEST_CASE("single index fit matches exhaustive search")
{
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const ThresholdFixture f = single_index_fixture(seed, 60);
        const ThresholdFit fit = fit_thresholds(f.scores, f.golds);
        const double best = exhaustive_single_index_f(f.scores, f.golds);
        CHECK(fit.trace.back() == doctest::Approx(best).epsilon(1e-12));
        CHECK(thresholded_micro_f(f.scores, f.golds, fit.table) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("trace never decreases and starts at the default")
{
    const ThresholdFixture f = several_indexes_fixture(3, 200);
    const ThresholdFit fit = fit_thresholds(f.scores, f.golds);
    REQUIRE_FALSE(fit.trace.empty());
    CHECK(fit.trace.front() == doctest::Approx(thresholded_micro_f(f.scores, f.golds, ThresholdTable{})));
    for (std::size_t i = 1; i < fit.trace.size(); ++i) {
        CHECK(fit.trace[i] >= fit.trace[i - 1]);
    }
    CHECK(fit.sweeps >= 1);
    CHECK(fit.sweeps <= 5);
    CHECK(thresholded_micro_f(f.scores, f.golds, fit.table) == doctest::Approx(fit.trace.back()));
}

TEST_CASE("every threshold is a local optimum after fitting")
{
    const ThresholdFixture f = several_indexes_fixture(8, 150);
    const ThresholdFit fit = fit_thresholds(f.scores, f.golds);
    const double at_fit = thresholded_micro_f(f.scores, f.golds, fit.table);
    for (const auto& [id, t] : fit.table.thresholds) {
        for (const auto& c : f.scores) {
            for (const auto& e : c.entries) {
                if (e.id != id) {
                    continue;
                }
                ThresholdTable moved = fit.table;
                moved.thresholds[id] = e.score;
                CHECK(thresholded_micro_f(f.scores, f.golds, moved) <= at_fit + 1e-12);
            }
        }
    }
}

TEST_CASE("apply uses a strict comparison")
{
    ThresholdTable t;
    t.thresholds["A"] = 0.3;
    const std::vector<CandidateSet> s{{"d0", {{"A", 0.3}, {"B", 0.5}, {"C", 0.51}}},
                                      {"d1", {{"A", 0.30001}, {"B", kGoldSentinelScore}}}};
    const auto p = apply_thresholds(s, t);
    REQUIRE(p.size() == 2);
    CHECK(p[0].doc_id == "d0");
    CHECK(p[0].labels == LabelSet{"C"});
    CHECK(p[1].labels == LabelSet{"A"});
    CHECK(t.at("A") == 0.3);
    CHECK(t.at("zzz") == kDefaultThreshold);
}

TEST_CASE("threshold file round trip")
{
    TempDir dir("thr");
    ThresholdTable t;
    t.default_threshold = 0.5;
    t.thresholds["M01"] = 0.1234567890123456;
    t.thresholds["S02"] = 1.0 / 3.0;
    save_thresholds(dir / "t.tsv", t);
    CHECK(load_thresholds(dir / "t.tsv") == t);
    CHECK_THROWS_AS(load_thresholds(dir.write("bad.tsv", "A\tnope\n")), DataError);
    CHECK_THROWS(load_thresholds(dir / "absent.tsv"));
}
