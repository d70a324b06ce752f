#pragma once

#include <cstddef>
#include <vector>

#include "dermpolar/errors.hpp"

namespace dermpolar {

/// Dense row-major grid of doubles with up to four axes.
///
/// Axis order is fixed project-wide as (height, width, channels, view);
/// trailing axes may be omitted. All numerical blocks in the library
/// exchange data through this type.
class ValueGrid {
public:
    ValueGrid() = default;

    /// Grid of the given shape with every element set to `fill`.
    explicit ValueGrid(std::vector<int> shape, double fill = 0.0);

    /// Adopts `data`, which must have exactly product-of-extents elements.
    static ValueGrid from_data(std::vector<int> shape, std::vector<double> data);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }

    /// Extent along `axis`; axes beyond the rank report 1.
    int extent(int axis) const {
        return axis < rank() ? shape_[static_cast<std::size_t>(axis)] : 1;
    }

    std::size_t size() const { return data_.size(); }
    bool same_shape(const ValueGrid& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[flat(i, j)]; }
    double at(int i, int j) const { return data_[flat(i, j)]; }
    double& at(int i, int j, int k) { return data_[flat(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[flat(i, j, k)]; }
    double& at(int i, int j, int k, int l) { return data_[flat(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data_[flat(i, j, k, l)]; }

    std::size_t flat(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(extent(1)) +
               static_cast<std::size_t>(j);
    }
    std::size_t flat(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(extent(1)) +
                static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(extent(2)) +
               static_cast<std::size_t>(k);
    }
    std::size_t flat(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * static_cast<std::size_t>(extent(1)) +
                 static_cast<std::size_t>(j)) *
                    static_cast<std::size_t>(extent(2)) +
                static_cast<std::size_t>(k)) *
                   static_cast<std::size_t>(extent(3)) +
               static_cast<std::size_t>(l);
    }

    ValueGrid& operator+=(const ValueGrid& other);
    ValueGrid& operator-=(const ValueGrid& other);
    ValueGrid& operator*=(double scale);

    /// Elementwise product; shapes must match.
    ValueGrid hadamard(const ValueGrid& other) const;

    double sum() const;
    double max_abs() const;
    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

ValueGrid operator+(ValueGrid lhs, const ValueGrid& rhs);
ValueGrid operator-(ValueGrid lhs, const ValueGrid& rhs);
ValueGrid operator*(ValueGrid grid, double scale);

/// Grid of the given shape filled with a constant.
inline ValueGrid grid_create(std::vector<int> shape, double fill) {
    return ValueGrid(std::move(shape), fill);
}

} // namespace dermpolar
