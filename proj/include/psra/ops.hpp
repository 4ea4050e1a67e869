#pragma once

#include <vector>

#include "psra/tape.hpp"

namespace psra {

// Elementwise binary ops broadcast when shapes are unequal: a scalar operand
// broadcasts against anything, and an operand whose shape is a trailing
// suffix of the other's is tiled over the leading dimensions. Anything else
// is rejected with both shapes in the message.
TracedValue add(const TracedValue& a, const TracedValue& b);
TracedValue sub(const TracedValue& a, const TracedValue& b);
TracedValue mul(const TracedValue& a, const TracedValue& b);
TracedValue div(const TracedValue& a, const TracedValue& b);
TracedValue neg(const TracedValue& a);

TracedValue matmul(const TracedValue& a, const TracedValue& b);  // rank-2 only
TracedValue transpose(const TracedValue& a);                     // rank-2 only
TracedValue reshape(const TracedValue& a, Shape s);

TracedValue concat(const std::vector<TracedValue>& xs, std::size_t axis);
TracedValue slice(const TracedValue& a, std::size_t axis, std::size_t start, std::size_t len);
// Gather rows (axis 0); an index may repeat. Adjoint scatter-adds.
TracedValue take_rows(const TracedValue& a, std::vector<std::size_t> rows);

TracedValue sum_axis(const TracedValue& a, std::size_t axis);
TracedValue mean_axis(const TracedValue& a, std::size_t axis);
TracedValue sum_all(const TracedValue& a);
TracedValue mean_all(const TracedValue& a);
// max over an axis; ties resolve to the lowest index (and route the
// subgradient there)
TracedValue max_axis(const TracedValue& a, std::size_t axis);

TracedValue exp(const TracedValue& a);
TracedValue log(const TracedValue& a);   // rejects non-positive input
TracedValue sqrt(const TracedValue& a);  // rejects negative input
TracedValue pow(const TracedValue& a, double p);
TracedValue sigmoid(const TracedValue& a);
TracedValue gelu(const TracedValue& a);  // exact erf form
TracedValue sin(const TracedValue& a);
TracedValue cos(const TracedValue& a);
// smooth-L1 elementwise with transition 1: 0.5 x^2 inside, |x| - 0.5 outside
TracedValue huber(const TracedValue& a);

TracedValue softmax_last(const TracedValue& a);                       // max-subtracted
TracedValue layer_norm_last(const TracedValue& a, double eps = 1e-5); // no affine
TracedValue l2norm_last(const TracedValue& a);

// Detach: same value, no node. Idempotent.
TracedValue stop_gradient(const TracedValue& a);

// Convenience wrappers
TracedValue constant(Array v);
TracedValue scale(const TracedValue& a, double s);
TracedValue add_const(const TracedValue& a, double s);

}  // namespace psra
