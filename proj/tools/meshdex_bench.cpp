// Times each OpenMP kernel against its serial reference and checks that the
// two agree bitwise.
#include <chrono>
#include <cstdio>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <omp.h>

#include "meshdex/kernels.hpp"
#include "meshdex/model.hpp"
#include "meshdex/retrieval.hpp"
#include "meshdex/rng.hpp"
#include "meshdex/training.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
double best_of(int reps, F&& f)
{
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    return best;
}

meshdex::Matrix random_matrix(std::size_t r, std::size_t c, meshdex::Rng& rng)
{
    meshdex::Matrix m(r, c);
    for (auto& x : m.values()) {
        x = rng.uniform(-1.0, 1.0);
    }
    return m;
}

bool report(const char* name, double serial, double parallel, bool same)
{
    fmt::print("{:<22} serial {:>9.3f} ms  parallel {:>9.3f} ms  speedup {:>5.2f}x  {}\n", name, serial, parallel,
               serial / parallel, same ? "identical" : "MISMATCH");
    return same;
}

}  // namespace

// --quick shrinks every case so the binary can run as a smoke test.
int main(int argc, char** argv)
{
    using namespace meshdex;
    const bool quick = argc > 1 && std::string_view(argv[1]) == "--quick";
    const std::size_t n_docs = quick ? 2000 : 20000;
    const std::size_t dim = quick ? 64 : 256;
    const int doc_count = quick ? 8 : 64;
    fmt::print("threads: {}\n", omp_get_max_threads());
    Rng rng(11);
    bool ok = true;

    {
        const Matrix docs = random_matrix(n_docs, 64, rng);
        std::vector<double> norms(docs.rows());
        kernels::row_norms(docs, norms);
        const Matrix q = random_matrix(1, 64, rng);
        std::vector<double> a(docs.rows()), b(docs.rows());
        const double s = best_of(5, [&] { kernels::cosine_scores_reference(q.row(0), docs, norms, a); });
        const double p = best_of(5, [&] { kernels::cosine_scores(q.row(0), docs, norms, b); });
        ok &= report(quick ? "cosine 2000x64" : "cosine 20000x64", s, p, a == b);
    }
    {
        const Matrix x = random_matrix(dim, dim, rng);
        const Matrix y = random_matrix(dim, dim, rng);
        Matrix a(dim, dim), b(dim, dim);
        const double s = best_of(3, [&] { kernels::gemm(x, kernels::Trans::no, y, kernels::Trans::yes, a); });
        const double p = best_of(3, [&] { kernels::gemm_parallel(x, kernels::Trans::no, y, kernels::Trans::yes, b); });
        ok &= report(fmt::format("gemm {}^3", dim).c_str(), s, p, a == b);
    }
    {
        ModelConfig mc;
        mc.d_model = 32;
        mc.n_layers = 1;
        mc.d_ff = 64;
        mc.n_heads = 4;
        mc.max_sequence_length = 64;
        mc.dropout = 0.0;
        mc.vocab_size = 100;
        mc.label_count = 23;
        const ModelParams params = initialize_params(mc, 3);
        std::vector<TokenSequence> docs;
        for (int i = 0; i < doc_count; ++i) {
            TokenSequence d{fmt::format("d{}", i), {}};
            for (int t = 0; t < 30; ++t) {
                d.tokens.push_back(static_cast<TokenId>(3 + rng.uniform_index(97)));
            }
            docs.push_back(std::move(d));
        }
        const std::vector<std::size_t> rows{1, 4, 7, 9, 12, 15, 18, 20, 21, 22};
        const std::vector<double> labels{1, 0, 0, 1, 0, 0, 0, 1, 0, 0};
        constexpr std::size_t lanes = 4;
        auto run = [&](auto&& loop, std::vector<ModelParams>& grads) {
            for (auto& g : grads) {
                g.set_zero();
            }
            loop(docs.size(), lanes, [&](std::size_t lane, std::size_t i) {
                index_loss(docs[i], rows, labels, params, &grads[lane]);
            });
        };
        std::vector<ModelParams> ga(lanes, params.zeros_like()), gb(lanes, params.zeros_like());
        const double s = best_of(3, [&] { run(kernels::for_each_in_lanes_reference, ga); });
        const double p = best_of(3, [&] { run(kernels::for_each_in_lanes, gb); });
        ok &= report(fmt::format("lane backprop {} docs", doc_count).c_str(), s, p, ga == gb);
    }
    return ok ? 0 : 1;
}
