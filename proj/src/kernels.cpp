#include "meshdex/kernels.hpp"

#include <cmath>
#include <exception>
#include <mutex>

namespace meshdex::kernels {

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm(std::span<const double> a)
{
    return std::sqrt(dot(a, a));
}

void row_norms(const Matrix& rows, std::span<double> out)
{
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        out[i] = norm(rows.row(i));
    }
}

namespace {

inline double cosine_one(std::span<const double> q, double qn, const Matrix& rows,
                         std::span<const double> norms, std::size_t i)
{
    const double rn = norms[i];
    if (rn == 0.0 || qn == 0.0) {
        return 0.0;
    }
    return dot(q, rows.row(i)) / (qn * rn);
}

}  // namespace

void cosine_scores(std::span<const double> query, const Matrix& rows, std::span<const double> norms,
                   std::span<double> out)
{
    const double qn = norm(query);
    const auto n = static_cast<std::ptrdiff_t>(rows.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[i] = cosine_one(query, qn, rows, norms, static_cast<std::size_t>(i));
    }
}

void cosine_scores_reference(std::span<const double> query, const Matrix& rows,
                             std::span<const double> norms, std::span<double> out)
{
    const double qn = norm(query);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        out[i] = cosine_one(query, qn, rows, norms, i);
    }
}

namespace {

inline double at(const Matrix& m, Trans t, std::size_t r, std::size_t c)
{
    return t == Trans::no ? m(r, c) : m(c, r);
}

inline void gemm_row(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, double beta,
                     std::size_t i)
{
    const std::size_t inner = ta == Trans::no ? a.cols() : a.rows();
    const std::size_t n = c.cols();
    double* crow = c.data() + i * n;
    if (beta == 0.0) {
        std::fill(crow, crow + n, 0.0);
    } else if (beta != 1.0) {
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] *= beta;
        }
    }
    if (tb == Trans::no) {
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = at(a, ta, i, k);
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.data() + k * b.cols();
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    } else {
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * b.cols();
            double s = 0.0;
            for (std::size_t k = 0; k < inner; ++k) {
                s += at(a, ta, i, k) * brow[k];
            }
            crow[j] += s;
        }
    }
}

}  // namespace

void gemm(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, double beta)
{
    for (std::size_t i = 0; i < c.rows(); ++i) {
        gemm_row(a, ta, b, tb, c, beta, i);
    }
}

void gemm_parallel(const Matrix& a, Trans ta, const Matrix& b, Trans tb, Matrix& c, double beta)
{
    const auto rows = static_cast<std::ptrdiff_t>(c.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        gemm_row(a, ta, b, tb, c, beta, static_cast<std::size_t>(i));
    }
}

void for_each_in_lanes(std::size_t n, std::size_t lanes,
                       const std::function<void(std::size_t, std::size_t)>& work)
{
    if (lanes == 0) {
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto lane_count = static_cast<std::ptrdiff_t>(lanes);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t lane = 0; lane < lane_count; ++lane) {
        try {
            for (std::size_t item = static_cast<std::size_t>(lane); item < n; item += lanes) {
                work(static_cast<std::size_t>(lane), item);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

void for_each_in_lanes_reference(std::size_t n, std::size_t lanes,
                                 const std::function<void(std::size_t, std::size_t)>& work)
{
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        for (std::size_t item = lane; item < n; item += lanes) {
            work(lane, item);
        }
    }
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& work)
{
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            work(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace meshdex::kernels
