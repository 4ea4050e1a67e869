#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace psra {

// Thrown by every engine-level contract violation (shape mismatch, domain
// errors, non-finite results). Carries a plain what() message that includes
// the offending shapes/values.
class EngineError : public std::runtime_error {
public:
    explicit EngineError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major array of 64-bit floats. Rank 0 (empty shape) is a scalar
// with exactly one element. Plain value type: copies are deep, sharing is
// by const reference only.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() : shape{}, data{0.0} {}
    explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Array(Shape s, std::vector<double> d);
    Array(Shape s, double fill);

    static Array scalar(double v);
    static Array vec(std::initializer_list<double> v);
    static Array from_rows(std::size_t rows, std::size_t cols, std::vector<double> d);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    double item() const;
    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    // rows()/cols() require rank 2
    std::size_t rows() const;
    std::size_t cols() const;

    bool same_shape(const Array& o) const { return shape == o.shape; }
    bool all_finite() const;
};

bool bit_equal(const Array& a, const Array& b);
double max_abs_diff(const Array& a, const Array& b);

// Throws EngineError if any element is NaN/Inf; `what` names the producing op.
void require_finite(const Array& a, const char* what);

}  // namespace psra
