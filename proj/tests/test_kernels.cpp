#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "psra/kernels.hpp"
#include "psra/rng.hpp"

using namespace psra;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

// The parallel kernels must be bit-identical to the serial references: same
// per-element arithmetic, fixed-block reductions. These checks run the sizes
// that actually take the OpenMP path.
TEST_CASE("matmul parallel == serial, bitwise") {
    Rng rng(1);
    const std::size_t m = 64, k = 48, n = 56;
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    std::vector<double> out_s(m * n), out_p(m * n);
    kernels::serial::matmul(a.data(), b.data(), out_s.data(), m, k, n);
    kernels::set_parallel_enabled(true);
    kernels::matmul(a.data(), b.data(), out_p.data(), m, k, n);
    CHECK(bits_equal(out_s, out_p));
}

TEST_CASE("softmax/layernorm rows parallel == serial, bitwise") {
    Rng rng(2);
    const std::size_t rows = 300, cols = 64;
    auto x = random_vec(rows * cols, rng);
    std::vector<double> s1(x.size()), s2(x.size());
    kernels::serial::softmax_rows(x.data(), s1.data(), rows, cols);
    kernels::softmax_rows(x.data(), s2.data(), rows, cols);
    CHECK(bits_equal(s1, s2));

    kernels::serial::layernorm_rows(x.data(), s1.data(), rows, cols, 1e-5);
    kernels::layernorm_rows(x.data(), s2.data(), rows, cols, 1e-5);
    CHECK(bits_equal(s1, s2));
}

TEST_CASE("pairwise sqdist parallel == serial, bitwise") {
    Rng rng(3);
    const std::size_t np = 128, nq = 96;
    auto p = random_vec(np * 3, rng);
    auto q = random_vec(nq * 3, rng);
    std::vector<double> d1(np * nq), d2(np * nq);
    kernels::serial::pairwise_sqdist(p.data(), np, q.data(), nq, 3, d1.data());
    kernels::pairwise_sqdist(p.data(), np, q.data(), nq, 3, d2.data());
    CHECK(bits_equal(d1, d2));
}

TEST_CASE("blocked sum is thread-count independent") {
    Rng rng(4);
    auto x = random_vec(1 << 16, rng);
    const double s_serial = kernels::serial::sum(x.data(), x.size());
    kernels::set_parallel_enabled(true);
    const double s_par = kernels::sum(x.data(), x.size());
    kernels::set_parallel_enabled(false);
    const double s_off = kernels::sum(x.data(), x.size());
    kernels::set_parallel_enabled(true);
    CHECK(s_serial == s_par);
    CHECK(s_serial == s_off);
}
