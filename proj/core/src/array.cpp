#include "ape/array.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace ape {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Array::Array(Shape shape) : shape_(std::move(shape)), values_(element_count(shape_), 0.0) {}

Array::Array(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
        throw std::invalid_argument("Array: shape " + to_string(shape_) + " needs " +
                                    std::to_string(element_count(shape_)) + " values, got " +
                                    std::to_string(values_.size()));
    }
    if (!all_finite()) throw std::domain_error("Array: non-finite value");
}

Array Array::scalar(double value) { return Array({}, {value}); }

Array Array::filled(Shape shape, double value) {
    const auto n = element_count(shape);
    return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Array({rows, cols}, std::move(values));
}

Array Array::row(std::initializer_list<double> values) {
    return Array({1, values.size()}, std::vector<double>(values));
}

std::size_t Array::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Array::cols() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.back();
}

std::span<const double> Array::row_span(std::size_t r) const noexcept {
    return std::span<const double>(values_).subspan(r * cols(), cols());
}

std::span<double> Array::row_span(std::size_t r) noexcept {
    return std::span<double>(values_).subspan(r * cols(), cols());
}

double Array::item() const {
    if (values_.size() != 1) {
        throw std::invalid_argument("Array::item: shape " + to_string(shape_) + " is not a single value");
    }
    return values_.front();
}

bool Array::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Array vstack(const Array& top, const Array& bottom) {
    if (top.rank() != 2 || bottom.rank() != 2 || top.cols() != bottom.cols()) {
        throw std::invalid_argument("vstack: incompatible shapes " + to_string(top.shape()) + " and " +
                                    to_string(bottom.shape()));
    }
    std::vector<double> values(top.data().begin(), top.data().end());
    values.insert(values.end(), bottom.data().begin(), bottom.data().end());
    return Array({top.rows() + bottom.rows(), top.cols()}, std::move(values));
}

Array take_rows(const Array& source, std::span<const std::size_t> indices) {
    const std::size_t n = source.cols();
    Array out({indices.size(), n});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= source.rows()) throw std::out_of_range("take_rows: row index out of range");
        const auto src = source.row_span(indices[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

}  // namespace ape
