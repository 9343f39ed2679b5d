#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ape {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of finite doubles. Rank 0 is a scalar.
///
/// Constructors reject non-finite values; mutable element access does not
/// re-check, so code writing through `data()` owns that invariant.
class Array {
public:
    Array() : values_(1, 0.0) {}
    explicit Array(Shape shape);
    Array(Shape shape, std::vector<double> values);

    static Array scalar(double value);
    static Array filled(Shape shape, double value);
    static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Array row(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    // 2-D accessors; rank-0/1 arrays report rows()==1.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }

    std::span<const double> data() const noexcept { return values_; }
    std::span<double> data() noexcept { return values_; }
    std::span<const double> row_span(std::size_t r) const noexcept;
    std::span<double> row_span(std::size_t r) noexcept;

    /// Scalar value of a one-element array.
    double item() const;

    bool all_finite() const noexcept;

    friend bool operator==(const Array& a, const Array& b) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

/// Stacks two 2-D arrays with equal column counts, top then bottom.
Array vstack(const Array& top, const Array& bottom);

/// Rows of `source` at the given indices, in order.
Array take_rows(const Array& source, std::span<const std::size_t> indices);

}  // namespace ape
