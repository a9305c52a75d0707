#include <doctest.h>

#include <atomic>
#include <cmath>

#include "meshdex/kernels.hpp"
#include "meshdex/rng.hpp"

using namespace meshdex;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng)
{
    Matrix m(r, c);
    for (auto& x : m.values()) {
        x = rng.uniform(-1.0, 1.0);
    }
    return m;
}

// Textbook triple loop.
Matrix naive_product(const Matrix& a, bool ta, const Matrix& b, bool tb)
{
    const std::size_t n = ta ? a.cols() : a.rows();
    const std::size_t k = ta ? a.rows() : a.cols();
    const std::size_t m = tb ? b.rows() : b.cols();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += (ta ? a(p, i) : a(i, p)) * (tb ? b(j, p) : b(p, j));
            }
            c(i, j) = s;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("dot and norm")
{
    const std::vector<double> a{3, 4}, b{1, 2};
    CHECK(kernels::dot(a, b) == 11.0);
    CHECK(kernels::norm(a) == 5.0);
}

TEST_CASE("cosine kernel agrees with its reference bitwise")
{
    Rng rng(2);
    Matrix rows = random_matrix(513, 17, rng);
    for (auto& x : rows.row(7)) {
        x = 0.0;
    }
    std::vector<double> norms(rows.rows());
    kernels::row_norms(rows, norms);
    const Matrix q = random_matrix(1, 17, rng);
    std::vector<double> a(rows.rows()), b(rows.rows());
    kernels::cosine_scores(q.row(0), rows, norms, a);
    kernels::cosine_scores_reference(q.row(0), rows, norms, b);
    CHECK(a == b);
    CHECK(a[7] == 0.0);
    const double expect = kernels::dot(q.row(0), rows.row(3)) / (kernels::norm(q.row(0)) * norms[3]);
    CHECK(a[3] == doctest::Approx(expect).epsilon(1e-14));
    for (const double x : a) {
        CHECK(std::abs(x) <= 1.0 + 1e-12);
    }
}

TEST_CASE("gemm matches the triple loop in every transpose mode")
{
    Rng rng(4);
    for (const bool ta : {false, true}) {
        for (const bool tb : {false, true}) {
            const Matrix a = ta ? random_matrix(5, 7, rng) : random_matrix(7, 5, rng);
            const Matrix b = tb ? random_matrix(3, 5, rng) : random_matrix(5, 3, rng);
            const Matrix want = naive_product(a, ta, b, tb);
            Matrix c(7, 3), p(7, 3);
            const auto A = ta ? kernels::Trans::yes : kernels::Trans::no;
            const auto B = tb ? kernels::Trans::yes : kernels::Trans::no;
            kernels::gemm(a, A, b, B, c);
            kernels::gemm_parallel(a, A, b, B, p);
            CHECK(c == p);
            for (std::size_t i = 0; i < c.size(); ++i) {
                CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("gemm beta accumulates")
{
    const Matrix a(2, 2, std::vector<double>{1, 2, 3, 4});
    const Matrix i(2, 2, std::vector<double>{1, 0, 0, 1});
    Matrix c(2, 2, 1.0);
    kernels::gemm(a, kernels::Trans::no, i, kernels::Trans::no, c, 2.0);
    CHECK(c == Matrix(2, 2, std::vector<double>{3, 4, 5, 6}));
}

TEST_CASE("lanes see their items in order regardless of threading")
{
    constexpr std::size_t n = 103, lanes = 4;
    std::vector<std::vector<std::size_t>> seen(lanes), seen_ref(lanes);
    kernels::for_each_in_lanes(n, lanes, [&](std::size_t lane, std::size_t i) { seen[lane].push_back(i); });
    kernels::for_each_in_lanes_reference(n, lanes,
                                         [&](std::size_t lane, std::size_t i) { seen_ref[lane].push_back(i); });
    CHECK(seen == seen_ref);
    for (std::size_t l = 0; l < lanes; ++l) {
        for (std::size_t k = 0; k < seen[l].size(); ++k) {
            CHECK(seen[l][k] == l + k * lanes);
        }
    }
}

TEST_CASE("parallel_for touches every item once")
{
    std::vector<std::atomic<int>> hits(257);
    kernels::parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) {
        CHECK(h.load() == 1);
    }
}
