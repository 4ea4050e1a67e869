#include "psra/ops.hpp"

#include <algorithm>
#include <cmath>

#include "psra/kernels.hpp"

namespace psra {

namespace {

constexpr double kSqrt1_2 = 0.70710678118654752440;

Tape* common_tape(std::initializer_list<const TracedValue*> xs) {
    Tape* t = nullptr;
    for (const TracedValue* x : xs) {
        if (!x->traced()) continue;
        if (t == nullptr) t = x->tape;
        else if (t != x->tape) throw EngineError("operands recorded on different tapes");
    }
    return t;
}

int ensure_node(Tape* t, const TracedValue& x) {
    return x.traced() ? x.node : t->constant_node(x.val);
}

TracedValue emit(Tape* t, Node n) {
    if (t == nullptr) return TracedValue(std::move(n.val));
    Array v = n.val;
    int id = t->record(std::move(n));
    return TracedValue(std::move(v), t, id);
}

TracedValue unary(const TracedValue& x, Op op, Array val, double a = 0.0) {
    require_finite(val, "unary op");
    Tape* t = common_tape({&x});
    Node n;
    n.op = op;
    n.val = std::move(val);
    n.a = a;
    if (t) n.in = {ensure_node(t, x)};
    return emit(t, std::move(n));
}

// Broadcast plan for elementwise binary ops. Output takes the larger shape;
// the smaller operand repeats with flat index (i % small_numel), which is
// exactly suffix broadcasting in row-major order.
struct Bcast {
    Shape out;
    bool a_small = false;
    bool b_small = false;
};

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Bcast bcast_plan(const TracedValue& a, const TracedValue& b, const char* opname) {
    Bcast p;
    if (a.shape() == b.shape()) {
        p.out = a.shape();
        return p;
    }
    if (b.val.numel() == 1 || is_suffix(b.shape(), a.shape())) {
        p.out = a.shape();
        p.b_small = true;
        return p;
    }
    if (a.val.numel() == 1 || is_suffix(a.shape(), b.shape())) {
        p.out = b.shape();
        p.a_small = true;
        return p;
    }
    throw EngineError(std::string(opname) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

template <class F>
TracedValue binary(const TracedValue& a, const TracedValue& b, Op op, const char* name, F&& f) {
    Bcast p = bcast_plan(a, b, name);
    Array out{p.out};
    const std::size_t n = out.numel();
    const std::size_t na = a.val.numel();
    const std::size_t nb = b.val.numel();
    const double* pa = a.val.data.data();
    const double* pb = b.val.data.data();
    double* po = out.data.data();
    kernels::parallel_map(n, [&](std::size_t i) {
        const double x = pa[p.a_small ? i % na : i];
        const double y = pb[p.b_small ? i % nb : i];
        po[i] = f(x, y);
    });
    require_finite(out, name);
    Tape* t = common_tape({&a, &b});
    Node nd;
    nd.op = op;
    nd.val = std::move(out);
    if (t) nd.in = {ensure_node(t, a), ensure_node(t, b)};
    return emit(t, std::move(nd));
}

std::size_t axis_check(const TracedValue& a, std::size_t axis, const char* name) {
    if (axis >= a.val.rank())
        throw EngineError(std::string(name) + ": axis " + std::to_string(axis) +
                          " out of range for shape " + shape_str(a.shape()));
    return axis;
}

}  // namespace

// ------------------------------------------------------------ arithmetic --

TracedValue add(const TracedValue& a, const TracedValue& b) {
    return binary(a, b, Op::Add, "add", [](double x, double y) { return x + y; });
}

TracedValue sub(const TracedValue& a, const TracedValue& b) {
    return binary(a, b, Op::Sub, "sub", [](double x, double y) { return x - y; });
}

TracedValue mul(const TracedValue& a, const TracedValue& b) {
    return binary(a, b, Op::Mul, "mul", [](double x, double y) { return x * y; });
}

TracedValue div(const TracedValue& a, const TracedValue& b) {
    for (double v : b.val.data)
        if (v == 0.0) throw EngineError("div: zero denominator");
    return binary(a, b, Op::Div, "div", [](double x, double y) { return x / y; });
}

TracedValue neg(const TracedValue& a) {
    Array out = a.val;
    for (double& v : out.data) v = -v;
    return unary(a, Op::Neg, std::move(out));
}

TracedValue matmul(const TracedValue& a, const TracedValue& b) {
    if (a.val.rank() != 2 || b.val.rank() != 2 || a.val.cols() != b.val.rows())
        throw EngineError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    const std::size_t m = a.val.rows(), k = a.val.cols(), n = b.val.cols();
    Array out{Shape{m, n}};
    kernels::matmul(a.val.data.data(), b.val.data.data(), out.data.data(), m, k, n);
    require_finite(out, "matmul");
    Tape* t = common_tape({&a, &b});
    Node nd;
    nd.op = Op::Matmul;
    nd.val = std::move(out);
    if (t) nd.in = {ensure_node(t, a), ensure_node(t, b)};
    return emit(t, std::move(nd));
}

TracedValue transpose(const TracedValue& a) {
    const std::size_t m = a.val.rows(), n = a.val.cols();
    Array out{Shape{n, m}};
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.val.data[i * n + j];
    return unary(a, Op::Transpose, std::move(out));
}

TracedValue reshape(const TracedValue& a, Shape s) {
    if (shape_numel(s) != a.val.numel())
        throw EngineError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    Array out{std::move(s), a.val.data};
    return unary(a, Op::Reshape, std::move(out));
}

// ------------------------------------------------------------- structure --

TracedValue concat(const std::vector<TracedValue>& xs, std::size_t axis) {
    if (xs.empty()) throw EngineError("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    axis_check(xs[0], axis, "concat");
    Shape out_shape = s0;
    std::size_t total = s0[axis];
    for (std::size_t i = 1; i < xs.size(); ++i) {
        const Shape& si = xs[i].shape();
        if (si.size() != s0.size())
            throw EngineError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(si));
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && si[d] != s0[d])
                throw EngineError("concat: shape mismatch " + shape_str(s0) + " vs " +
                                  shape_str(si));
        total += si[axis];
    }
    out_shape[axis] = total;

    // outer = product of dims before axis, inner = product after
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    Array out{out_shape};
    std::size_t off = 0;
    for (const TracedValue& x : xs) {
        const std::size_t ax = x.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.val.data.data() + o * ax * inner, ax * inner,
                        out.data.data() + (o * total + off) * inner);
        off += ax;
    }

    Tape* t = nullptr;
    for (const TracedValue& x : xs)
        if (x.traced()) {
            if (t && t != x.tape) throw EngineError("operands recorded on different tapes");
            t = x.tape;
        }
    Node nd;
    nd.op = Op::Concat;
    nd.axis = axis;
    nd.val = std::move(out);
    if (t) {
        nd.in.reserve(xs.size());
        for (const TracedValue& x : xs) nd.in.push_back(ensure_node(t, x));
    }
    return emit(t, std::move(nd));
}

TracedValue slice(const TracedValue& a, std::size_t axis, std::size_t start, std::size_t len) {
    axis_check(a, axis, "slice");
    const Shape& s = a.shape();
    if (start + len > s[axis])
        throw EngineError("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") exceeds dim " +
                          std::to_string(s[axis]) + " of " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Shape out_shape = s;
    out_shape[axis] = len;
    Array out{out_shape};
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.val.data.data() + (o * s[axis] + start) * inner, len * inner,
                    out.data.data() + o * len * inner);
    Tape* t = common_tape({&a});
    Node nd;
    nd.op = Op::Slice;
    nd.axis = axis;
    nd.idx = {start, len};
    nd.val = std::move(out);
    if (t) nd.in = {a.node};
    return emit(t, std::move(nd));
}

TracedValue take_rows(const TracedValue& a, std::vector<std::size_t> rows) {
    if (a.val.rank() < 1) throw EngineError("take_rows: scalar input");
    const std::size_t nrows = a.shape()[0];
    const std::size_t stride = a.val.numel() / nrows;
    for (std::size_t r : rows)
        if (r >= nrows)
            throw EngineError("take_rows: index " + std::to_string(r) + " out of range " +
                              std::to_string(nrows));
    Shape out_shape = a.shape();
    out_shape[0] = rows.size();
    Array out{out_shape};
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(a.val.data.data() + rows[i] * stride, stride, out.data.data() + i * stride);
    Tape* t = common_tape({&a});
    Node nd;
    nd.op = Op::TakeRows;
    nd.idx = std::move(rows);
    nd.val = std::move(out);
    if (t) nd.in = {a.node};
    return emit(t, std::move(nd));
}

// ------------------------------------------------------------ reductions --

namespace {

// shared reduce layout: out[o, i] aggregates over the `axis` dimension
struct ReduceDims {
    std::size_t outer, len, inner;
    Shape out_shape;
};

ReduceDims reduce_dims(const TracedValue& a, std::size_t axis) {
    const Shape& s = a.shape();
    ReduceDims d{1, s[axis], 1, {}};
    for (std::size_t i = 0; i < axis; ++i) d.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) d.inner *= s[i];
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) d.out_shape.push_back(s[i]);
    return d;
}

}  // namespace

TracedValue sum_axis(const TracedValue& a, std::size_t axis) {
    axis_check(a, axis, "sum_axis");
    ReduceDims d = reduce_dims(a, axis);
    Array out{d.out_shape};
    const double* px = a.val.data.data();
    for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t i = 0; i < d.inner; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d.len; ++j) s += px[(o * d.len + j) * d.inner + i];
            out.data[o * d.inner + i] = s;
        }
    require_finite(out, "sum_axis");
    Tape* t = common_tape({&a});
    Node nd;
    nd.op = Op::SumAxis;
    nd.axis = axis;
    nd.val = std::move(out);
    if (t) nd.in = {a.node};
    return emit(t, std::move(nd));
}

TracedValue mean_axis(const TracedValue& a, std::size_t axis) {
    axis_check(a, axis, "mean_axis");
    ReduceDims d = reduce_dims(a, axis);
    Array out{d.out_shape};
    const double* px = a.val.data.data();
    for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t i = 0; i < d.inner; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d.len; ++j) s += px[(o * d.len + j) * d.inner + i];
            out.data[o * d.inner + i] = s / static_cast<double>(d.len);
        }
    require_finite(out, "mean_axis");
    Tape* t = common_tape({&a});
    Node nd;
    nd.op = Op::MeanAxis;
    nd.axis = axis;
    nd.val = std::move(out);
    if (t) nd.in = {a.node};
    return emit(t, std::move(nd));
}

TracedValue sum_all(const TracedValue& a) {
    Array out = Array::scalar(kernels::sum(a.val.data.data(), a.val.numel()));
    return unary(a, Op::SumAll, std::move(out));
}

TracedValue mean_all(const TracedValue& a) {
    Array out =
        Array::scalar(kernels::sum(a.val.data.data(), a.val.numel()) /
                      static_cast<double>(a.val.numel()));
    return unary(a, Op::MeanAll, std::move(out));
}

TracedValue max_axis(const TracedValue& a, std::size_t axis) {
    axis_check(a, axis, "max_axis");
    ReduceDims d = reduce_dims(a, axis);
    Array out{d.out_shape};
    std::vector<std::size_t> arg(out.numel());
    const double* px = a.val.data.data();
    for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t i = 0; i < d.inner; ++i) {
            double best = px[(o * d.len) * d.inner + i];
            std::size_t bj = 0;
            for (std::size_t j = 1; j < d.len; ++j) {
                const double v = px[(o * d.len + j) * d.inner + i];
                if (v > best) {
                    best = v;
                    bj = j;
                }
            }
            out.data[o * d.inner + i] = best;
            arg[o * d.inner + i] = bj;
        }
    require_finite(out, "max_axis");
    Tape* t = common_tape({&a});
    Node nd;
    nd.op = Op::MaxAxis;
    nd.axis = axis;
    nd.idx = std::move(arg);
    nd.val = std::move(out);
    if (t) nd.in = {a.node};
    return emit(t, std::move(nd));
}

// ------------------------------------------------------------ elementwise --

namespace {
template <class F>
Array map_array(const Array& a, F&& f) {
    Array out = a;
    double* p = out.data.data();
    kernels::parallel_map(out.numel(), [&](std::size_t i) { p[i] = f(p[i]); });
    return out;
}
}  // namespace

TracedValue exp(const TracedValue& a) {
    return unary(a, Op::Exp, map_array(a.val, [](double x) { return std::exp(x); }));
}

TracedValue log(const TracedValue& a) {
    for (double v : a.val.data)
        if (v <= 0.0) throw EngineError("log: non-positive input " + std::to_string(v));
    return unary(a, Op::Log, map_array(a.val, [](double x) { return std::log(x); }));
}

TracedValue sqrt(const TracedValue& a) {
    for (double v : a.val.data)
        if (v < 0.0) throw EngineError("sqrt: negative input " + std::to_string(v));
    return unary(a, Op::Sqrt, map_array(a.val, [](double x) { return std::sqrt(x); }));
}

TracedValue pow(const TracedValue& a, double p) {
    const bool integral = p == std::floor(p);
    for (double v : a.val.data) {
        if (!integral && v < 0.0)
            throw EngineError("pow: negative base with non-integer exponent");
        if (v == 0.0 && p < 0.0) throw EngineError("pow: zero base with negative exponent");
    }
    return unary(a, Op::PowConst, map_array(a.val, [p](double x) { return std::pow(x, p); }), p);
}

TracedValue sigmoid(const TracedValue& a) {
    return unary(a, Op::Sigmoid, map_array(a.val, [](double x) {
                     return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x));
                 }));
}

TracedValue gelu(const TracedValue& a) {
    return unary(a, Op::Gelu, map_array(a.val, [](double x) {
                     return 0.5 * x * (1.0 + std::erf(x * kSqrt1_2));
                 }));
}

TracedValue sin(const TracedValue& a) {
    return unary(a, Op::Sin, map_array(a.val, [](double x) { return std::sin(x); }));
}

TracedValue cos(const TracedValue& a) {
    return unary(a, Op::Cos, map_array(a.val, [](double x) { return std::cos(x); }));
}

TracedValue huber(const TracedValue& a) {
    return unary(a, Op::Huber, map_array(a.val, [](double x) {
                     const double ax = std::fabs(x);
                     return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
                 }));
}

// ---------------------------------------------------------- normalization --

TracedValue softmax_last(const TracedValue& a) {
    if (a.val.rank() < 1) throw EngineError("softmax_last: scalar input");
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.val.numel() / cols;
    Array out{a.shape()};
    kernels::softmax_rows(a.val.data.data(), out.data.data(), rows, cols);
    return unary(a, Op::SoftmaxLast, std::move(out));
}

TracedValue layer_norm_last(const TracedValue& a, double eps) {
    if (a.val.rank() < 1) throw EngineError("layer_norm_last: scalar input");
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.val.numel() / cols;
    Array out{a.shape()};
    kernels::layernorm_rows(a.val.data.data(), out.data.data(), rows, cols, eps);
    return unary(a, Op::LayerNormLast, std::move(out), eps);
}

TracedValue l2norm_last(const TracedValue& a) {
    if (a.val.rank() < 1) throw EngineError("l2norm_last: scalar input");
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.val.numel() / cols;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    Array out{out_shape};
    const double* px = a.val.data.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = px[r * cols + j];
            s += v * v;
        }
        out.data[r] = std::sqrt(s);
    }
    return unary(a, Op::L2NormLast, std::move(out));
}

// ----------------------------------------------------------------- misc --

TracedValue stop_gradient(const TracedValue& a) { return TracedValue(a.val); }

TracedValue constant(Array v) { return TracedValue(std::move(v)); }

TracedValue scale(const TracedValue& a, double s) {
    return mul(a, TracedValue(Array::scalar(s)));
}

TracedValue add_const(const TracedValue& a, double s) {
    return add(a, TracedValue(Array::scalar(s)));
}

}  // namespace psra
