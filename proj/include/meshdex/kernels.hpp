#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "meshdex/matrix.hpp"

// Data-parallel inner loops. Every OpenMP kernel has a serial `_reference`
// twin computing each output element with the same arithmetic in the same
// order, so the two agree bitwise; tests and the benchmark compare them.
namespace meshdex::kernels {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Euclidean norm of every row.
void row_norms(const Matrix& rows, std::span<double> out);

/// out[i] = cos(query, rows[i]); rows with zero norm score 0.
void cosine_scores(std::span<const double> query, const Matrix& rows,
                   std::span<const double> norms, std::span<double> out);
void cosine_scores_reference(std::span<const double> query, const Matrix& rows,
                             std::span<const double> norms, std::span<double> out);

enum class Trans { no, yes };

/// C = op(A) * op(B) + beta * C.
void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, double beta = 0.0);
void gemm_parallel(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c,
                   double beta = 0.0);

/// Runs work(lane, item) for items 0..n-1. Item i goes to lane i % lanes and
/// each lane walks its items in ascending order, so any per-lane accumulation
/// is independent of the thread count. Lanes run in parallel.
void for_each_in_lanes(std::size_t n, std::size_t lanes,
                       const std::function<void(std::size_t lane, std::size_t item)>& work);
void for_each_in_lanes_reference(std::size_t n, std::size_t lanes,
                                 const std::function<void(std::size_t lane, std::size_t item)>& work);

/// Runs work(i) for independent items in parallel.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& work);

}  // namespace meshdex::kernels
