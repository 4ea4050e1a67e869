#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "psra/array.hpp"

namespace psra {

class Tape;

// A value flowing through the recorded computation. `tape == nullptr` marks
// a constant: constants (and stop-gradient outputs) have no node and never
// receive or propagate derivatives.
struct TracedValue {
    Array val;
    Tape* tape = nullptr;
    int node = -1;

    TracedValue() = default;
    explicit TracedValue(Array v) : val(std::move(v)) {}
    TracedValue(Array v, Tape* t, int n) : val(std::move(v)), tape(t), node(n) {}

    bool traced() const { return tape != nullptr; }
    const Shape& shape() const { return val.shape; }
    double item() const { return val.item(); }
};

// Carrier for forward-mode results: f(x) and its directional derivative.
struct DualNumberArray {
    Array primal;
    Array tangent;
};

enum class Op : std::uint8_t {
    Leaf, Constant,
    Add, Sub, Mul, Div, Neg,
    Matmul, Transpose, Reshape,
    Concat, Slice, TakeRows,
    SumAxis, MeanAxis, SumAll, MeanAll, MaxAxis,
    Exp, Log, Sqrt, PowConst, Sigmoid, Gelu, Sin, Cos, Huber,
    SoftmaxLast, LayerNormLast, L2NormLast,
};

struct Node {
    Op op;
    std::vector<int> in;
    Array val;
    double a = 0.0;              // op parameter (pow exponent, layernorm eps)
    std::size_t axis = 0;
    std::vector<std::size_t> idx;  // take/argmax indices, slice {start, len}
};

// Per-forward-pass recording of the computation. Topological order is the
// recording order, so both sweeps are single linear passes; the reverse
// sweep touches each node exactly once. Single-threaded by contract; run
// batch elements on their own tapes for parallelism.
class Tape {
public:
    TracedValue leaf(Array v);
    int constant_node(Array v);
    int record(Node n);

    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Returns one adjoint per node
    // (zero-filled where the loss does not reach). Rejects non-scalar loss.
    std::vector<Array> gradients(const TracedValue& loss);

    // Forward (tangent) sweep: seeds are (node id, tangent) pairs for leaves;
    // every other tangent is derived in recording order. Returns the tangent
    // at `out_node`.
    Array forward_tangent(const std::vector<std::pair<int, Array>>& seeds, int out_node) const;

    std::size_t last_backward_visits() const { return last_backward_visits_; }

private:
    std::vector<Node> nodes_;
    std::size_t last_backward_visits_ = 0;
};

// Forward-mode directional derivative of a function built from engine ops.
// f receives traced (z, t) and must return a single TracedValue; tangents
// are propagated analytically node by node (never finite differences).
DualNumberArray jvp(const std::function<TracedValue(const TracedValue&, const TracedValue&)>& f,
                    const Array& z, double t, const Array& tangent_z, double tangent_t);

}  // namespace psra
