#include "psra/tape.hpp"

#include <cmath>

namespace psra {

namespace {

constexpr double kSqrt1_2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Sum a broadcast-shaped gradient back to the operand's shape. Broadcasting
// repeats the operand with flat index (i % numel), so the reduction is the
// matching modulo accumulation.
Array reduce_to(const Array& g, const Shape& target) {
    if (g.shape == target) return g;
    Array out{target};
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < g.data.size(); ++i) out.data[i % n] += g.data[i];
    return out;
}

// out[i] = g[i] * src[i % src.numel()]
Array mul_broadcast(const Array& g, const Array& src) {
    Array out = g;
    const std::size_t ns = src.numel();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= src.data[i % ns];
    return out;
}

Array broadcast_like(const Array& src, const Shape& target) {
    if (src.shape == target) return src;
    Array out{target};
    const std::size_t ns = src.numel();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = src.data[i % ns];
    return out;
}

struct ReduceDims {
    std::size_t outer, len, inner;
};

ReduceDims reduce_dims(const Shape& s, std::size_t axis) {
    ReduceDims d{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) d.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) d.inner *= s[i];
    return d;
}

double gelu_deriv(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kSqrt1_2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

// rowwise inverse std of layer norm, recomputed with the forward arithmetic
void layernorm_stats(const Array& x, double eps, std::vector<double>& inv_std) {
    const std::size_t cols = x.shape.back();
    const std::size_t rows = x.numel() / cols;
    inv_std.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data.data() + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += xi[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = xi[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
    }
}

}  // namespace

TracedValue Tape::leaf(Array v) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    Array copy = n.val;
    int id = record(std::move(n));
    return TracedValue(std::move(copy), this, id);
}

int Tape::constant_node(Array v) {
    Node n;
    n.op = Op::Constant;
    n.val = std::move(v);
    return record(std::move(n));
}

int Tape::record(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<Array> Tape::gradients(const TracedValue& loss) {
    if (!loss.traced() || loss.tape != this)
        throw EngineError("backward: loss is not recorded on this tape");
    if (loss.val.numel() != 1)
        throw EngineError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

    const std::size_t n = nodes_.size();
    std::vector<Array> adj(n);
    std::vector<char> has(n, 0);
    auto acc = [&](int id, Array contrib) {
        auto u = static_cast<std::size_t>(id);
        if (!has[u]) {
            adj[u] = std::move(contrib);
            has[u] = 1;
        } else {
            for (std::size_t i = 0; i < adj[u].data.size(); ++i)
                adj[u].data[i] += contrib.data[i];
        }
    };

    adj[static_cast<std::size_t>(loss.node)] = Array{loss.val.shape, 1.0};
    has[static_cast<std::size_t>(loss.node)] = 1;
    last_backward_visits_ = 0;

    for (int id = loss.node; id >= 0; --id) {
        const auto u = static_cast<std::size_t>(id);
        if (!has[u]) continue;
        ++last_backward_visits_;
        const Node& nd = nodes_[u];
        const Array& g = adj[u];
        switch (nd.op) {
        case Op::Leaf:
        case Op::Constant:
            break;
        case Op::Add: {
            acc(nd.in[0], reduce_to(g, nodes_[nd.in[0]].val.shape));
            acc(nd.in[1], reduce_to(g, nodes_[nd.in[1]].val.shape));
            break;
        }
        case Op::Sub: {
            acc(nd.in[0], reduce_to(g, nodes_[nd.in[0]].val.shape));
            Array ng = g;
            for (double& v : ng.data) v = -v;
            acc(nd.in[1], reduce_to(ng, nodes_[nd.in[1]].val.shape));
            break;
        }
        case Op::Mul: {
            const Array& a = nodes_[nd.in[0]].val;
            const Array& b = nodes_[nd.in[1]].val;
            acc(nd.in[0], reduce_to(mul_broadcast(g, b), a.shape));
            acc(nd.in[1], reduce_to(mul_broadcast(g, a), b.shape));
            break;
        }
        case Op::Div: {
            const Array& a = nodes_[nd.in[0]].val;
            const Array& b = nodes_[nd.in[1]].val;
            Array ga = g;
            const std::size_t nb = b.numel();
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] /= b.data[i % nb];
            acc(nd.in[0], reduce_to(ga, a.shape));
            Array gb = g;
            const std::size_t na = a.numel();
            for (std::size_t i = 0; i < gb.data.size(); ++i) {
                const double bv = b.data[i % nb];
                gb.data[i] *= -a.data[i % na] / (bv * bv);
            }
            acc(nd.in[1], reduce_to(gb, b.shape));
            break;
        }
        case Op::Neg: {
            Array ng = g;
            for (double& v : ng.data) v = -v;
            acc(nd.in[0], std::move(ng));
            break;
        }
        case Op::Matmul: {
            const Array& a = nodes_[nd.in[0]].val;
            const Array& b = nodes_[nd.in[1]].val;
            const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
            Array da{Shape{m, k}};
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < nn; ++j)
                        s += g.data[i * nn + j] * b.data[p * nn + j];
                    da.data[i * k + p] = s;
                }
            Array db{Shape{k, nn}};
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < nn; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        s += a.data[i * k + p] * g.data[i * nn + j];
                    db.data[p * nn + j] = s;
                }
            acc(nd.in[0], std::move(da));
            acc(nd.in[1], std::move(db));
            break;
        }
        case Op::Transpose: {
            const Array& a = nodes_[nd.in[0]].val;
            const std::size_t m = a.rows(), c = a.cols();
            Array da{a.shape};
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) da.data[i * c + j] = g.data[j * m + i];
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Reshape: {
            Array da{nodes_[nd.in[0]].val.shape, g.data};
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Concat: {
            const std::size_t axis = nd.axis;
            const Shape& os = nd.val.shape;
            std::size_t outer = 1, inner = 1;
            for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
            for (std::size_t d = axis + 1; d < os.size(); ++d) inner *= os[d];
            std::size_t off = 0;
            for (int child : nd.in) {
                const Array& cv = nodes_[child].val;
                const std::size_t ax = cv.shape[axis];
                Array dc{cv.shape};
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data.data() + (o * os[axis] + off) * inner, ax * inner,
                                dc.data.data() + o * ax * inner);
                acc(child, std::move(dc));
                off += ax;
            }
            break;
        }
        case Op::Slice: {
            const Array& a = nodes_[nd.in[0]].val;
            const std::size_t axis = nd.axis, start = nd.idx[0], len = nd.idx[1];
            const Shape& s = a.shape;
            std::size_t outer = 1, inner = 1;
            for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
            for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
            Array da{s, 0.0};
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(g.data.data() + o * len * inner, len * inner,
                            da.data.data() + (o * s[axis] + start) * inner);
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::TakeRows: {
            const Array& a = nodes_[nd.in[0]].val;
            const std::size_t stride = a.numel() / a.shape[0];
            Array da{a.shape, 0.0};
            for (std::size_t i = 0; i < nd.idx.size(); ++i)
                for (std::size_t c = 0; c < stride; ++c)
                    da.data[nd.idx[i] * stride + c] += g.data[i * stride + c];
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::SumAxis:
        case Op::MeanAxis: {
            const Array& a = nodes_[nd.in[0]].val;
            ReduceDims d = reduce_dims(a.shape, nd.axis);
            const double w = nd.op == Op::MeanAxis ? 1.0 / static_cast<double>(d.len) : 1.0;
            Array da{a.shape};
            for (std::size_t o = 0; o < d.outer; ++o)
                for (std::size_t j = 0; j < d.len; ++j)
                    for (std::size_t i = 0; i < d.inner; ++i)
                        da.data[(o * d.len + j) * d.inner + i] = w * g.data[o * d.inner + i];
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::SumAll:
        case Op::MeanAll: {
            const Array& a = nodes_[nd.in[0]].val;
            const double w = nd.op == Op::MeanAll
                                 ? g.item() / static_cast<double>(a.numel())
                                 : g.item();
            acc(nd.in[0], Array{a.shape, w});
            break;
        }
        case Op::MaxAxis: {
            const Array& a = nodes_[nd.in[0]].val;
            ReduceDims d = reduce_dims(a.shape, nd.axis);
            Array da{a.shape, 0.0};
            for (std::size_t o = 0; o < d.outer; ++o)
                for (std::size_t i = 0; i < d.inner; ++i) {
                    const std::size_t j = nd.idx[o * d.inner + i];
                    da.data[(o * d.len + j) * d.inner + i] = g.data[o * d.inner + i];
                }
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Exp: {
            acc(nd.in[0], mul_broadcast(g, nd.val));
            break;
        }
        case Op::Log: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] /= a.data[i];
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Sqrt: {
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i)
                da.data[i] *= 0.5 / nd.val.data[i];
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::PowConst: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i)
                da.data[i] *= nd.a * std::pow(a.data[i], nd.a - 1.0);
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Sigmoid: {
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i) {
                const double y = nd.val.data[i];
                da.data[i] *= y * (1.0 - y);
            }
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Gelu: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i)
                da.data[i] *= gelu_deriv(a.data[i]);
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Sin: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i)
                da.data[i] *= std::cos(a.data[i]);
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Cos: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i)
                da.data[i] *= -std::sin(a.data[i]);
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::Huber: {
            const Array& a = nodes_[nd.in[0]].val;
            Array da = g;
            for (std::size_t i = 0; i < da.data.size(); ++i) {
                const double x = a.data[i];
                da.data[i] *= x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
            }
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::SoftmaxLast: {
            const Array& y = nd.val;
            const std::size_t cols = y.shape.back();
            const std::size_t rows = y.numel() / cols;
            Array da{y.shape};
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    dot += g.data[r * cols + j] * y.data[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    da.data[r * cols + j] =
                        y.data[r * cols + j] * (g.data[r * cols + j] - dot);
            }
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::LayerNormLast: {
            const Array& x = nodes_[nd.in[0]].val;
            const Array& y = nd.val;
            const std::size_t cols = y.shape.back();
            const std::size_t rows = y.numel() / cols;
            std::vector<double> inv_std;
            layernorm_stats(x, nd.a, inv_std);
            Array da{x.shape};
            for (std::size_t r = 0; r < rows; ++r) {
                double gmean = 0.0, gymean = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    gmean += g.data[r * cols + j];
                    gymean += g.data[r * cols + j] * y.data[r * cols + j];
                }
                gmean /= static_cast<double>(cols);
                gymean /= static_cast<double>(cols);
                for (std::size_t j = 0; j < cols; ++j)
                    da.data[r * cols + j] =
                        inv_std[r] *
                        (g.data[r * cols + j] - gmean - y.data[r * cols + j] * gymean);
            }
            acc(nd.in[0], std::move(da));
            break;
        }
        case Op::L2NormLast: {
            const Array& x = nodes_[nd.in[0]].val;
            const std::size_t rows = nd.val.numel();
            const std::size_t cols = x.shape.back();
            Array da{x.shape, 0.0};
            for (std::size_t r = 0; r < rows; ++r) {
                const double yv = nd.val.data[r];
                if (yv == 0.0) continue;
                const double w = g.data[r] / yv;
                for (std::size_t j = 0; j < cols; ++j)
                    da.data[r * cols + j] = w * x.data[r * cols + j];
            }
            acc(nd.in[0], std::move(da));
            break;
        }
        }
    }

    for (std::size_t i = 0; i < n; ++i)
        if (!has[i]) adj[i] = Array{nodes_[i].val.shape, 0.0};
    return adj;
}

Array Tape::forward_tangent(const std::vector<std::pair<int, Array>>& seeds,
                            int out_node) const {
    const std::size_t n = nodes_.size();
    std::vector<Array> tan(n);
    std::vector<char> has(n, 0);
    for (const auto& [id, t] : seeds) {
        const auto u = static_cast<std::size_t>(id);
        if (nodes_[u].val.shape != t.shape)
            throw EngineError("forward_tangent: seed shape " + shape_str(t.shape) +
                              " does not match node shape " + shape_str(nodes_[u].val.shape));
        tan[u] = t;
        has[u] = 1;
    }

    auto tin = [&](int id) -> const Array* {
        return has[static_cast<std::size_t>(id)] ? &tan[static_cast<std::size_t>(id)] : nullptr;
    };

    for (std::size_t u = 0; u < n; ++u) {
        const Node& nd = nodes_[u];
        if (nd.op == Op::Leaf || nd.op == Op::Constant) continue;
        bool any = false;
        for (int in : nd.in)
            if (has[static_cast<std::size_t>(in)]) any = true;
        if (!any) continue;

        Array out;
        switch (nd.op) {
        case Op::Leaf:
        case Op::Constant:
            continue;
        case Op::Add: {
            const Array* ta = tin(nd.in[0]);
            const Array* tb = tin(nd.in[1]);
            out = Array{nd.val.shape, 0.0};
            if (ta) {
                Array ba = broadcast_like(*ta, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += ba.data[i];
            }
            if (tb) {
                Array bb = broadcast_like(*tb, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bb.data[i];
            }
            break;
        }
        case Op::Sub: {
            const Array* ta = tin(nd.in[0]);
            const Array* tb = tin(nd.in[1]);
            out = Array{nd.val.shape, 0.0};
            if (ta) {
                Array ba = broadcast_like(*ta, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += ba.data[i];
            }
            if (tb) {
                Array bb = broadcast_like(*tb, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bb.data[i];
            }
            break;
        }
        case Op::Mul: {
            const Array& a = nodes_[nd.in[0]].val;
            const Array& b = nodes_[nd.in[1]].val;
            const Array* ta = tin(nd.in[0]);
            const Array* tb = tin(nd.in[1]);
            out = Array{nd.val.shape, 0.0};
            if (ta) {
                Array t = mul_broadcast(broadcast_like(*ta, nd.val.shape), b);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.data[i];
            }
            if (tb) {
                Array t = mul_broadcast(broadcast_like(*tb, nd.val.shape), a);
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.data[i];
            }
            break;
        }
        case Op::Div: {
            const Array& b = nodes_[nd.in[1]].val;
            const Array* ta = tin(nd.in[0]);
            const Array* tb = tin(nd.in[1]);
            out = Array{nd.val.shape, 0.0};
            const std::size_t nb = b.numel();
            if (ta) {
                Array t = broadcast_like(*ta, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] += t.data[i] / b.data[i % nb];
            }
            if (tb) {
                Array t = broadcast_like(*tb, nd.val.shape);
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] -= nd.val.data[i] * t.data[i] / b.data[i % nb];
            }
            break;
        }
        case Op::Neg: {
            out = *tin(nd.in[0]);
            for (double& v : out.data) v = -v;
            break;
        }
        case Op::Matmul: {
            const Array& a = nodes_[nd.in[0]].val;
            const Array& b = nodes_[nd.in[1]].val;
            const Array* ta = tin(nd.in[0]);
            const Array* tb = tin(nd.in[1]);
            const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
            out = Array{nd.val.shape, 0.0};
            if (ta)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = ta->data[i * k + p];
                        for (std::size_t j = 0; j < nn; ++j)
                            out.data[i * nn + j] += av * b.data[p * nn + j];
                    }
            if (tb)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a.data[i * k + p];
                        for (std::size_t j = 0; j < nn; ++j)
                            out.data[i * nn + j] += av * tb->data[p * nn + j];
                    }
            break;
        }
        case Op::Transpose: {
            const Array& t = *tin(nd.in[0]);
            const std::size_t m = t.rows(), c = t.cols();
            out = Array{nd.val.shape};
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[j * m + i] = t.data[i * c + j];
            break;
        }
        case Op::Reshape: {
            out = Array{nd.val.shape, tin(nd.in[0])->data};
            break;
        }
        case Op::Concat: {
            const std::size_t axis = nd.axis;
            const Shape& os = nd.val.shape;
            std::size_t outer = 1, inner = 1;
            for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
            for (std::size_t d = axis + 1; d < os.size(); ++d) inner *= os[d];
            out = Array{os, 0.0};
            std::size_t off = 0;
            for (int child : nd.in) {
                const Array& cv = nodes_[child].val;
                const std::size_t ax = cv.shape[axis];
                if (const Array* tc = tin(child))
                    for (std::size_t o = 0; o < outer; ++o)
                        std::copy_n(tc->data.data() + o * ax * inner, ax * inner,
                                    out.data.data() + (o * os[axis] + off) * inner);
                off += ax;
            }
            break;
        }
        case Op::Slice: {
            const Array& t = *tin(nd.in[0]);
            const std::size_t axis = nd.axis, start = nd.idx[0], len = nd.idx[1];
            const Shape& s = t.shape;
            std::size_t outer = 1, inner = 1;
            for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
            for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
            out = Array{nd.val.shape};
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(t.data.data() + (o * s[axis] + start) * inner, len * inner,
                            out.data.data() + o * len * inner);
            break;
        }
        case Op::TakeRows: {
            const Array& t = *tin(nd.in[0]);
            const std::size_t stride = t.numel() / t.shape[0];
            out = Array{nd.val.shape};
            for (std::size_t i = 0; i < nd.idx.size(); ++i)
                std::copy_n(t.data.data() + nd.idx[i] * stride, stride,
                            out.data.data() + i * stride);
            break;
        }
        case Op::SumAxis:
        case Op::MeanAxis: {
            const Array& t = *tin(nd.in[0]);
            ReduceDims d = reduce_dims(t.shape, nd.axis);
            const double w = nd.op == Op::MeanAxis ? 1.0 / static_cast<double>(d.len) : 1.0;
            out = Array{nd.val.shape, 0.0};
            for (std::size_t o = 0; o < d.outer; ++o)
                for (std::size_t j = 0; j < d.len; ++j)
                    for (std::size_t i = 0; i < d.inner; ++i)
                        out.data[o * d.inner + i] += w * t.data[(o * d.len + j) * d.inner + i];
            break;
        }
        case Op::SumAll:
        case Op::MeanAll: {
            const Array& t = *tin(nd.in[0]);
            double s = 0.0;
            for (double v : t.data) s += v;
            if (nd.op == Op::MeanAll) s /= static_cast<double>(t.numel());
            out = Array::scalar(s);
            break;
        }
        case Op::MaxAxis: {
            const Array& t = *tin(nd.in[0]);
            ReduceDims d = reduce_dims(t.shape, nd.axis);
            out = Array{nd.val.shape};
            for (std::size_t o = 0; o < d.outer; ++o)
                for (std::size_t i = 0; i < d.inner; ++i) {
                    const std::size_t j = nd.idx[o * d.inner + i];
                    out.data[o * d.inner + i] = t.data[(o * d.len + j) * d.inner + i];
                }
            break;
        }
        case Op::Exp: {
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= nd.val.data[i];
            break;
        }
        case Op::Log: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= a.data[i];
            break;
        }
        case Op::Sqrt: {
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] *= 0.5 / nd.val.data[i];
            break;
        }
        case Op::PowConst: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] *= nd.a * std::pow(a.data[i], nd.a - 1.0);
            break;
        }
        case Op::Sigmoid: {
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i) {
                const double y = nd.val.data[i];
                out.data[i] *= y * (1.0 - y);
            }
            break;
        }
        case Op::Gelu: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] *= gelu_deriv(a.data[i]);
            break;
        }
        case Op::Sin: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] *= std::cos(a.data[i]);
            break;
        }
        case Op::Cos: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] *= -std::sin(a.data[i]);
            break;
        }
        case Op::Huber: {
            const Array& a = nodes_[nd.in[0]].val;
            out = *tin(nd.in[0]);
            for (std::size_t i = 0; i < out.data.size(); ++i) {
                const double x = a.data[i];
                out.data[i] *= x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
            }
            break;
        }
        case Op::SoftmaxLast: {
            const Array& y = nd.val;
            const Array& t = *tin(nd.in[0]);
            const std::size_t cols = y.shape.back();
            const std::size_t rows = y.numel() / cols;
            out = Array{y.shape};
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    dot += y.data[r * cols + j] * t.data[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    out.data[r * cols + j] =
                        y.data[r * cols + j] * (t.data[r * cols + j] - dot);
            }
            break;
        }
        case Op::LayerNormLast: {
            const Array& x = nodes_[nd.in[0]].val;
            const Array& y = nd.val;
            const Array& t = *tin(nd.in[0]);
            const std::size_t cols = y.shape.back();
            const std::size_t rows = y.numel() / cols;
            std::vector<double> inv_std;
            layernorm_stats(x, nd.a, inv_std);
            out = Array{y.shape};
            for (std::size_t r = 0; r < rows; ++r) {
                double tmean = 0.0, tymean = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    tmean += t.data[r * cols + j];
                    tymean += t.data[r * cols + j] * y.data[r * cols + j];
                }
                tmean /= static_cast<double>(cols);
                tymean /= static_cast<double>(cols);
                for (std::size_t j = 0; j < cols; ++j)
                    out.data[r * cols + j] =
                        inv_std[r] *
                        (t.data[r * cols + j] - tmean - y.data[r * cols + j] * tymean);
            }
            break;
        }
        case Op::L2NormLast: {
            const Array& x = nodes_[nd.in[0]].val;
            const Array& t = *tin(nd.in[0]);
            const std::size_t rows = nd.val.numel();
            const std::size_t cols = x.shape.back();
            out = Array{nd.val.shape, 0.0};
            for (std::size_t r = 0; r < rows; ++r) {
                const double yv = nd.val.data[r];
                if (yv == 0.0) continue;
                double s = 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    s += x.data[r * cols + j] * t.data[r * cols + j];
                out.data[r] = s / yv;
            }
            break;
        }
        }
        tan[u] = std::move(out);
        has[u] = 1;
    }

    const auto ou = static_cast<std::size_t>(out_node);
    if (!has[ou]) return Array{nodes_[ou].val.shape, 0.0};
    return tan[ou];
}

DualNumberArray jvp(const std::function<TracedValue(const TracedValue&, const TracedValue&)>& f,
                    const Array& z, double t, const Array& tangent_z, double tangent_t) {
    if (z.shape != tangent_z.shape)
        throw EngineError("jvp: tangent shape " + shape_str(tangent_z.shape) +
                          " does not match input shape " + shape_str(z.shape));
    Tape tape;
    TracedValue zt = tape.leaf(z);
    TracedValue tt = tape.leaf(Array::scalar(t));
    TracedValue out = f(zt, tt);
    if (!out.traced())
        return {out.val, Array{out.val.shape, 0.0}};
    if (out.tape != &tape)
        throw EngineError("jvp: function returned a value from a foreign tape");
    Array tangent = tape.forward_tangent(
        {{zt.node, tangent_z}, {tt.node, Array::scalar(tangent_t)}}, out.node);
    return {out.val, std::move(tangent)};
}

}  // namespace psra
