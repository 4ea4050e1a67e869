#include "psra/array.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace psra {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw EngineError("array shape " + shape_str(shape) + " does not match data length " +
                          std::to_string(data.size()));
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Array Array::scalar(double v) {
    Array a;
    a.data[0] = v;
    return a;
}

Array Array::vec(std::initializer_list<double> v) {
    Array a{Shape{v.size()}, std::vector<double>(v)};
    return a;
}

Array Array::from_rows(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Array{Shape{rows, cols}, std::move(d)};
}

double Array::item() const {
    if (data.size() != 1)
        throw EngineError("item() on non-scalar array of shape " + shape_str(shape));
    return data[0];
}

std::size_t Array::rows() const {
    if (shape.size() != 2) throw EngineError("rows(): array is not rank 2: " + shape_str(shape));
    return shape[0];
}

std::size_t Array::cols() const {
    if (shape.size() != 2) throw EngineError("cols(): array is not rank 2: " + shape_str(shape));
    return shape[1];
}

bool Array::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool bit_equal(const Array& a, const Array& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Array& a, const Array& b) {
    if (a.shape != b.shape)
        throw EngineError("max_abs_diff shape mismatch: " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

void require_finite(const Array& a, const char* what) {
    if (!a.all_finite())
        throw EngineError(std::string(what) + " produced a non-finite value");
}

}  // namespace psra
