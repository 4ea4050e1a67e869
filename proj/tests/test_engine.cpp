#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "psra/ops.hpp"
#include "psra/rng.hpp"
#include "psra/tape.hpp"
#include "test_util.hpp"

using namespace psra;
using testutil::fd_directional;
using testutil::fd_gradient;
using testutil::max_rel_err;
using testutil::random_array;

TEST_CASE("array invariants") {
    Array a{Shape{2, 3}};
    CHECK(a.numel() == 6);
    CHECK(Array::scalar(4.0).item() == 4.0);
    CHECK_THROWS_AS(Array(Shape{2, 2}, std::vector<double>{1.0}), EngineError);
    CHECK_THROWS_AS(a.item(), EngineError);
}

TEST_CASE("softmax symmetry and matmul identity") {
    TracedValue x{Array::vec({0.0, 0.0})};
    Array s = softmax_last(x).val;
    CHECK(s.data[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.data[1] == doctest::Approx(0.5).epsilon(1e-12));

    // layernorm of a constant vector: zero variance handled by epsilon
    TracedValue c{Array::vec({3.0, 3.0, 3.0, 3.0})};
    Array ln = layer_norm_last(c).val;
    for (double v : ln.data) CHECK(std::fabs(v) < 1e-12);

    Array eye{Shape{3, 3}, 0.0};
    for (int i = 0; i < 3; ++i) eye.data[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    Rng rng(1);
    Array m = random_array(Shape{3, 4}, rng);
    Array out = matmul(TracedValue{eye}, TracedValue{m}).val;
    CHECK(bit_equal(out, m));
}

TEST_CASE("shape mismatch reports both shapes") {
    TracedValue a{Array{Shape{2, 3}, 1.0}};
    TracedValue b{Array{Shape{4, 5}, 1.0}};
    try {
        add(a, b);
        FAIL("expected throw");
    } catch (const EngineError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, b), EngineError);
    CHECK_THROWS_AS(log(TracedValue{Array::vec({-1.0})}), EngineError);
    CHECK_THROWS_AS(sqrt(TracedValue{Array::vec({-1.0})}), EngineError);
}

TEST_CASE("backward basics") {
    SUBCASE("d/dx x*x at 3 is 6") {
        Tape tape;
        TracedValue x = tape.leaf(Array::scalar(3.0));
        TracedValue y = mul(x, x);
        auto g = tape.gradients(y);
        CHECK(g[static_cast<std::size_t>(x.node)].item() == doctest::Approx(6.0).epsilon(1e-14));
    }
    SUBCASE("stop-gradient blocks one branch: d/dx sg(x)*x = 3") {
        Tape tape;
        TracedValue x = tape.leaf(Array::scalar(3.0));
        TracedValue y = mul(stop_gradient(x), x);
        CHECK(y.item() == doctest::Approx(9.0));
        auto g = tape.gradients(y);
        CHECK(g[static_cast<std::size_t>(x.node)].item() == doctest::Approx(3.0).epsilon(1e-14));
    }
    SUBCASE("non-scalar loss rejected") {
        Tape tape;
        TracedValue x = tape.leaf(Array::vec({1.0, 2.0}));
        TracedValue y = mul(x, x);
        CHECK_THROWS_AS(tape.gradients(y), EngineError);
    }
    SUBCASE("parameters reached only through sg get zero gradient") {
        Tape tape;
        TracedValue w = tape.leaf(Array::vec({1.5, -0.5}));
        TracedValue x = tape.leaf(Array::vec({2.0, 1.0}));
        TracedValue y = sum_all(add(mul(stop_gradient(w), x), x));
        auto g = tape.gradients(y);
        const Array& gw = g[static_cast<std::size_t>(w.node)];
        CHECK(gw.data[0] == 0.0);
        CHECK(gw.data[1] == 0.0);
    }
    SUBCASE("shared subexpression visited once, gradient doubled") {
        Tape tape;
        TracedValue x = tape.leaf(Array::scalar(2.0));
        TracedValue y = tape.leaf(Array::scalar(5.0));
        TracedValue p = mul(x, y);
        TracedValue loss = add(p, p);
        auto g = tape.gradients(loss);
        CHECK(g[static_cast<std::size_t>(x.node)].item() == doctest::Approx(10.0));
        // every node on the tape is touched by exactly one reverse visit
        CHECK(tape.last_backward_visits() == tape.size());
    }
}

namespace {

// two-layer MLP: mean(W2 * gelu(W1 * x + b1)) with everything trainable
double mlp_loss(const Array& w1, const Array& b1, const Array& w2, const Array& x) {
    TracedValue h = gelu(add(matmul(TracedValue{x}, TracedValue{w1}), TracedValue{b1}));
    TracedValue o = matmul(h, TracedValue{w2});
    return mean_all(o).item();
}

}  // namespace

TEST_CASE("2-layer MLP gradient vs central finite differences") {
    Rng rng(7);
    Array w1 = random_array(Shape{4, 8}, rng, -0.8, 0.8);
    Array b1 = random_array(Shape{8}, rng, -0.5, 0.5);
    Array w2 = random_array(Shape{8, 3}, rng, -0.8, 0.8);
    Array x = random_array(Shape{5, 4}, rng);

    Tape tape;
    TracedValue tw1 = tape.leaf(w1), tb1 = tape.leaf(b1), tw2 = tape.leaf(w2);
    TracedValue h = gelu(add(matmul(TracedValue{x}, tw1), tb1));
    TracedValue loss = mean_all(matmul(h, tw2));
    auto g = tape.gradients(loss);

    Array fd_w1 = fd_gradient([&](const Array& w) { return mlp_loss(w, b1, w2, x); }, w1);
    Array fd_b1 = fd_gradient([&](const Array& b) { return mlp_loss(w1, b, w2, x); }, b1);
    Array fd_w2 = fd_gradient([&](const Array& w) { return mlp_loss(w1, b1, w, x); }, w2);

    CHECK(max_rel_err(g[static_cast<std::size_t>(tw1.node)], fd_w1) < 1e-4);
    CHECK(max_rel_err(g[static_cast<std::size_t>(tb1.node)], fd_b1) < 1e-4);
    CHECK(max_rel_err(g[static_cast<std::size_t>(tw2.node)], fd_w2) < 1e-4);
}

namespace {

using Builder = std::function<TracedValue(const TracedValue&)>;

void check_primitive_grad(const char* name, const Builder& build, const Array& x,
                          const Array& probe) {
    // loss = <probe, op(x)>; reverse grad vs per-element central differences
    auto lossf = [&](const Array& xv) {
        TracedValue out = build(TracedValue{xv});
        double s = 0.0;
        for (std::size_t i = 0; i < out.val.data.size(); ++i)
            s += probe.data[i] * out.val.data[i];
        return s;
    };
    Tape tape;
    TracedValue tx = tape.leaf(x);
    TracedValue out = build(tx);
    TracedValue loss = sum_all(mul(out, TracedValue{probe}));
    auto g = tape.gradients(loss);
    Array fd = fd_gradient(lossf, x);
    INFO(name);
    CHECK(max_rel_err(g[static_cast<std::size_t>(tx.node)], fd) < 1e-4);

    // matching forward-mode check along a random direction
    Rng rng(123);
    Array dir = random_array(x.shape, rng, -1.0, 1.0);
    Array tangent = tape.forward_tangent({{tx.node, dir}}, loss.node);
    const double fdd = fd_directional(lossf, x, dir);
    INFO(name << " jvp");
    CHECK(testutil::rel_err(tangent.item(), fdd) < 1e-4);
}

}  // namespace

TEST_CASE("every primitive matches finite differences (reverse and forward)") {
    Rng rng(11);
    const Array x23 = random_array(Shape{2, 3}, rng);
    const Array pos = random_array(Shape{2, 3}, rng, 0.3, 2.0);
    const Array p23 = random_array(Shape{2, 3}, rng, -1.0, 1.0);
    const Array p13 = random_array(Shape{3}, rng, -1.0, 1.0);
    const Array p22 = random_array(Shape{2, 2}, rng, -1.0, 1.0);
    const Array p2 = random_array(Shape{2}, rng, -1.0, 1.0);
    const Array p43 = random_array(Shape{4, 3}, rng, -1.0, 1.0);
    const Array p32 = random_array(Shape{3, 2}, rng, -1.0, 1.0);
    const Array c23 = random_array(Shape{2, 3}, rng);
    const Array c3 = random_array(Shape{3}, rng);

    check_primitive_grad("exp", [](const TracedValue& v) { return exp(v); }, x23, p23);
    check_primitive_grad("log", [](const TracedValue& v) { return log(v); }, pos, p23);
    check_primitive_grad("sqrt", [](const TracedValue& v) { return sqrt(v); }, pos, p23);
    check_primitive_grad("pow2.0", [](const TracedValue& v) { return pow(v, 2.0); }, x23, p23);
    check_primitive_grad("pow1.7", [](const TracedValue& v) { return pow(v, 1.7); }, pos, p23);
    check_primitive_grad("pow-0.5", [](const TracedValue& v) { return pow(v, -0.5); }, pos, p23);
    check_primitive_grad("sigmoid", [](const TracedValue& v) { return sigmoid(v); }, x23, p23);
    check_primitive_grad("gelu", [](const TracedValue& v) { return gelu(v); }, x23, p23);
    check_primitive_grad("sin", [](const TracedValue& v) { return sin(v); }, x23, p23);
    check_primitive_grad("cos", [](const TracedValue& v) { return cos(v); }, x23, p23);
    check_primitive_grad("huber", [](const TracedValue& v) { return huber(v); }, x23, p23);
    check_primitive_grad("neg", [](const TracedValue& v) { return neg(v); }, x23, p23);
    check_primitive_grad("softmax", [](const TracedValue& v) { return softmax_last(v); }, x23,
                         p23);
    check_primitive_grad("layernorm",
                         [](const TracedValue& v) { return layer_norm_last(v); }, x23, p23);
    check_primitive_grad("l2norm", [](const TracedValue& v) { return l2norm_last(v); }, x23, p2);
    check_primitive_grad("transpose", [](const TracedValue& v) { return transpose(v); }, x23,
                         p32);
    check_primitive_grad("reshape",
                         [](const TracedValue& v) { return reshape(v, Shape{3, 2}); }, x23, p32);
    check_primitive_grad("sum_axis0", [](const TracedValue& v) { return sum_axis(v, 0); }, x23,
                         p13);
    check_primitive_grad("mean_axis1", [](const TracedValue& v) { return mean_axis(v, 1); },
                         x23, p2);
    check_primitive_grad("max_axis0", [](const TracedValue& v) { return max_axis(v, 0); }, x23,
                         p13);
    check_primitive_grad("sum_all", [](const TracedValue& v) { return sum_all(v); }, x23,
                         Array::scalar(1.3));
    check_primitive_grad("mean_all", [](const TracedValue& v) { return mean_all(v); }, x23,
                         Array::scalar(-0.7));
    check_primitive_grad("slice",
                         [](const TracedValue& v) { return slice(v, 1, 1, 2); }, x23, p22);
    check_primitive_grad("take_rows",
                         [](const TracedValue& v) {
                             return take_rows(v, {1, 0, 1, 1});
                         },
                         x23, p43);
    check_primitive_grad("add_bcast",
                         [&](const TracedValue& v) { return add(v, TracedValue{c3}); }, x23,
                         p23);
    check_primitive_grad("sub_bcast",
                         [&](const TracedValue& v) { return sub(TracedValue{c3}, v); }, x23,
                         p23);
    check_primitive_grad("mul_const",
                         [&](const TracedValue& v) { return mul(v, TracedValue{c23}); }, x23,
                         p23);
    check_primitive_grad("div", [&](const TracedValue& v) { return div(TracedValue{c23}, v); },
                         pos, p23);
    check_primitive_grad("matmul_lhs",
                         [&](const TracedValue& v) { return matmul(v, TracedValue{p32}); }, x23,
                         p22);
    check_primitive_grad("concat",
                         [&](const TracedValue& v) {
                             return concat({v, TracedValue{c23}}, 0);
                         },
                         x23, random_array(Shape{4, 3}, rng, -1.0, 1.0));
}

TEST_CASE("binary broadcast gradients (both operands traced)") {
    Rng rng(5);
    Array a = random_array(Shape{4, 3}, rng);
    Array b = random_array(Shape{3}, rng, 0.4, 1.6);

    Tape tape;
    TracedValue ta = tape.leaf(a), tb = tape.leaf(b);
    TracedValue loss = sum_all(mul(div(ta, tb), ta));
    auto g = tape.gradients(loss);

    auto lossf_a = [&](const Array& av) {
        double s = 0.0;
        for (std::size_t i = 0; i < av.data.size(); ++i)
            s += av.data[i] * av.data[i] / b.data[i % 3];
        return s;
    };
    auto lossf_b = [&](const Array& bv) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i)
            s += a.data[i] * a.data[i] / bv.data[i % 3];
        return s;
    };
    CHECK(max_rel_err(g[static_cast<std::size_t>(ta.node)], fd_gradient(lossf_a, a)) < 1e-4);
    CHECK(max_rel_err(g[static_cast<std::size_t>(tb.node)], fd_gradient(lossf_b, b)) < 1e-4);
}

TEST_CASE("jvp worked examples") {
    SUBCASE("f(z,t) = z*z") {
        auto f = [](const TracedValue& z, const TracedValue&) { return mul(z, z); };
        auto [value, tangent] = jvp(f, Array::vec({1.0, 2.0}), 0.0, Array::vec({1.0, 1.0}), 0.0);
        CHECK(value.data[0] == doctest::Approx(1.0));
        CHECK(value.data[1] == doctest::Approx(4.0));
        CHECK(tangent.data[0] == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(tangent.data[1] == doctest::Approx(4.0).epsilon(1e-14));
    }
    SUBCASE("f(z,t) = t*z, tangent_t = 1") {
        auto f = [](const TracedValue& z, const TracedValue& t) { return mul(t, z); };
        auto [value, tangent] = jvp(f, Array::vec({3.0}), 2.0, Array::vec({0.0}), 1.0);
        CHECK(value.data[0] == doctest::Approx(6.0));
        CHECK(tangent.data[0] == doctest::Approx(3.0).epsilon(1e-14));
    }
}

TEST_CASE("jvp of a random 3-layer network matches finite differences") {
    Rng rng(31);
    Array w1 = random_array(Shape{3, 16}, rng, -0.6, 0.6);
    Array w2 = random_array(Shape{16, 16}, rng, -0.4, 0.4);
    Array w3 = random_array(Shape{16, 2}, rng, -0.6, 0.6);
    Array z = random_array(Shape{5, 3}, rng);
    Array dz = random_array(Shape{5, 3}, rng, -1.0, 1.0);
    const double t0 = 0.37, dt = 0.83;

    auto f = [&](const TracedValue& zv, const TracedValue& tv) {
        TracedValue h = gelu(matmul(zv, TracedValue{w1}));
        h = add(h, mul(tv, TracedValue{Array{Shape{5, 16}, 1.0}}));
        h = gelu(matmul(layer_norm_last(h), TracedValue{w2}));
        return matmul(h, TracedValue{w3});
    };
    auto [value, tangent] = jvp(f, z, t0, dz, dt);

    // central differences along the joint direction (dz, dt)
    auto eval = [&](double eps) {
        Array zp = z;
        for (std::size_t i = 0; i < zp.data.size(); ++i) zp.data[i] += eps * dz.data[i];
        Tape tape;
        TracedValue out = f(tape.leaf(zp), tape.leaf(Array::scalar(t0 + eps * dt)));
        return out.val;
    };
    const double h = 1e-5;
    Array fp = eval(h), fm = eval(-h);
    Array fd{fp.shape};
    for (std::size_t i = 0; i < fd.data.size(); ++i)
        fd.data[i] = (fp.data[i] - fm.data[i]) / (2.0 * h);
    CHECK(max_rel_err(tangent, fd) < 1e-4);
    CHECK(value.shape == Shape{5, 2});
}

TEST_CASE("jvp linearity in the tangent") {
    Rng rng(13);
    Array w = random_array(Shape{4, 4}, rng, -0.7, 0.7);
    Array z = random_array(Shape{2, 4}, rng);
    Array u = random_array(Shape{2, 4}, rng, -1.0, 1.0);
    Array v = random_array(Shape{2, 4}, rng, -1.0, 1.0);
    const double a = 1.7, b = -0.4;

    auto f = [&](const TracedValue& zv, const TracedValue& tv) {
        return sigmoid(add(matmul(zv, TracedValue{w}), tv));
    };
    Array combo{u.shape};
    for (std::size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = a * u.data[i] + b * v.data[i];

    auto ju = jvp(f, z, 0.3, u, 1.0);
    auto jv_ = jvp(f, z, 0.3, v, -2.0);
    auto jc = jvp(f, z, 0.3, combo, a * 1.0 + b * -2.0);
    for (std::size_t i = 0; i < jc.tangent.data.size(); ++i)
        CHECK(std::fabs(jc.tangent.data[i] -
                        (a * ju.tangent.data[i] + b * jv_.tangent.data[i])) < 1e-10);
}

TEST_CASE("stop-gradient semantics") {
    TracedValue x{Array::vec({1.0, -2.0})};
    TracedValue s1 = stop_gradient(x);
    TracedValue s2 = stop_gradient(s1);
    CHECK(bit_equal(s1.val, x.val));
    CHECK(bit_equal(s2.val, s1.val));
    CHECK_FALSE(s1.traced());
    CHECK_FALSE(s2.traced());
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Array w = random_array(Shape{8, 8}, rng, -0.5, 0.5);
        Array x = random_array(Shape{4, 8}, rng);
        Tape tape;
        TracedValue tw = tape.leaf(w);
        TracedValue loss = mean_all(softmax_last(matmul(TracedValue{x}, tw)));
        auto g = tape.gradients(loss);
        return std::make_pair(loss.item(), g[static_cast<std::size_t>(tw.node)]);
    };
    auto [l1, g1] = run(99);
    auto [l2, g2] = run(99);
    CHECK(l1 == l2);
    CHECK(bit_equal(g1, g2));
}

TEST_CASE("finiteness guard raises instead of leaking NaN/Inf") {
    TracedValue big{Array::vec({1e308})};
    CHECK_THROWS_AS(exp(mul(big, big)), EngineError);
    CHECK_THROWS_AS(div(TracedValue{Array::vec({1.0})}, TracedValue{Array::vec({0.0})}),
                    EngineError);
}
