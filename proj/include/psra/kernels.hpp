#pragma once

#include <cstddef>
#include <span>

namespace psra::kernels {

// Runtime switch for the OpenMP paths. On by default when compiled with
// OpenMP. Every parallel kernel is bit-identical to its serial reference:
// work is split over independent output elements, and scalar reductions use
// a fixed block order, so the flag (and the thread count) never changes
// results — only wall time.
bool parallel_enabled();
void set_parallel_enabled(bool on);
int thread_count();

// Serial reference implementations. Kept exactly as readable loops; the
// parallel front doors below must match them bit for bit.
namespace serial {

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols);
void layernorm_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                    double eps);
// d2[i*nq + j] = squared Euclidean distance between p[i] (dim-length rows)
// and q[j]
void pairwise_sqdist(const double* p, std::size_t np, const double* q, std::size_t nq,
                     std::size_t dim, double* d2);
double sum(const double* x, std::size_t n);

}  // namespace serial

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols);
void layernorm_rows(const double* x, double* out, std::size_t rows, std::size_t cols,
                    double eps);
void pairwise_sqdist(const double* p, std::size_t np, const double* q, std::size_t nq,
                     std::size_t dim, double* d2);
double sum(const double* x, std::size_t n);

// Elementwise map over n elements, parallel when large. F must be a pure
// function of the element values.
template <class F>
void parallel_map(std::size_t n, F&& f);

}  // namespace psra::kernels

// ---------------------------------------------------------------------------

#ifdef _OPENMP
#include <omp.h>
#endif

namespace psra::kernels {

template <class F>
void parallel_map(std::size_t n, F&& f) {
#ifdef _OPENMP
    if (parallel_enabled() && n >= 4096) {
        const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < pn; ++i) f(static_cast<std::size_t>(i));
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) f(i);
}

}  // namespace psra::kernels
