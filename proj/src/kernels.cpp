#include "psra/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace psra::kernels {

namespace {
bool g_parallel = true;
// Fixed block size for scalar reductions: partial sums per block, combined
// in block order. Identical result for any thread count.
constexpr std::size_t kReduceBlock = 4096;
}  // namespace

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel;
#else
    return false;
#endif
}

void set_parallel_enabled(bool on) { g_parallel = on; }

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------- serial --

namespace serial {

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        std::fill(orow, orow + n, 0.0);
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x + r * cols;
        double* oi = out + r * cols;
        double mx = xi[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < cols; ++j) oi[j] *= inv;
    }
}

void layernorm_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                    double eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x + r * cols;
        double* oi = out + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += xi[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = xi[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) oi[j] = (xi[j] - mu) * inv;
    }
}

void pairwise_sqdist(const double* p, std::size_t np, const double* q, std::size_t nq,
                     std::size_t dim, double* d2) {
    for (std::size_t i = 0; i < np; ++i) {
        const double* pi = p + i * dim;
        double* row = d2 + i * nq;
        for (std::size_t j = 0; j < nq; ++j) {
            const double* qj = q + j * dim;
            double s = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double d = pi[c] - qj[c];
                s += d * d;
            }
            row[j] = s;
        }
    }
}

double sum(const double* x, std::size_t n) {
    // same blocked order as the parallel path
    const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    double total = 0.0;
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::size_t lo = b * kReduceBlock;
        const std::size_t hi = std::min(n, lo + kReduceBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += x[i];
        total += s;
    }
    return total;
}

}  // namespace serial

// -------------------------------------------------------------- parallel --

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
    if (parallel_enabled() && m * k * n >= 32768 && m > 1) {
        const std::ptrdiff_t pm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < pm; ++i)
            serial::matmul(a + static_cast<std::size_t>(i) * k, b,
                           out + static_cast<std::size_t>(i) * n, 1, k, n);
        return;
    }
#endif
    serial::matmul(a, b, out, m, k, n);
}

void softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
    if (parallel_enabled() && rows * cols >= 16384 && rows > 1) {
        const std::ptrdiff_t pr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < pr; ++r)
            serial::softmax_rows(x + static_cast<std::size_t>(r) * cols,
                                 out + static_cast<std::size_t>(r) * cols, 1, cols);
        return;
    }
#endif
    serial::softmax_rows(x, out, rows, cols);
}

void layernorm_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                    double eps) {
#ifdef _OPENMP
    if (parallel_enabled() && rows * cols >= 16384 && rows > 1) {
        const std::ptrdiff_t pr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < pr; ++r)
            serial::layernorm_rows(x + static_cast<std::size_t>(r) * cols,
                                   out + static_cast<std::size_t>(r) * cols, 1, cols, eps);
        return;
    }
#endif
    serial::layernorm_rows(x, out, rows, cols, eps);
}

void pairwise_sqdist(const double* p, std::size_t np, const double* q, std::size_t nq,
                     std::size_t dim, double* d2) {
#ifdef _OPENMP
    if (parallel_enabled() && np * nq * dim >= 32768 && np > 1) {
        const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(np);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < pn; ++i)
            serial::pairwise_sqdist(p + static_cast<std::size_t>(i) * dim, 1, q, nq, dim,
                                    d2 + static_cast<std::size_t>(i) * nq);
        return;
    }
#endif
    serial::pairwise_sqdist(p, np, q, nq, dim, d2);
}

double sum(const double* x, std::size_t n) {
#ifdef _OPENMP
    if (parallel_enabled() && n >= 4 * kReduceBlock) {
        const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
        std::vector<double> partial(nblocks, 0.0);
        const std::ptrdiff_t pb = static_cast<std::ptrdiff_t>(nblocks);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t b = 0; b < pb; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * kReduceBlock;
            const std::size_t hi = std::min(n, lo + kReduceBlock);
            double s = 0.0;
            for (std::size_t i = lo; i < hi; ++i) s += x[i];
            partial[static_cast<std::size_t>(b)] = s;
        }
        double total = 0.0;
        for (double s : partial) total += s;
        return total;
    }
#endif
    return serial::sum(x, n);
}

}  // namespace psra::kernels
