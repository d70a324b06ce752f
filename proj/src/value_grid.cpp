#include "dermpolar/value_grid.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace dermpolar {

namespace {

std::size_t checked_element_count(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw InvalidShape("grid rank must be between 1 and 4, got " +
                           std::to_string(shape.size()));
    }
    std::size_t count = 1;
    for (int extent : shape) {
        if (extent < 1) {
            throw InvalidShape("grid extents must be positive, got " +
                               std::to_string(extent));
        }
        count *= static_cast<std::size_t>(extent);
    }
    return count;
}

} // namespace

ValueGrid::ValueGrid(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), fill) {}

ValueGrid ValueGrid::from_data(std::vector<int> shape, std::vector<double> data) {
    const std::size_t count = checked_element_count(shape);
    if (data.size() != count) {
        throw InvalidShape("data length " + std::to_string(data.size()) +
                           " does not match shape element count " + std::to_string(count));
    }
    ValueGrid grid;
    grid.shape_ = std::move(shape);
    grid.data_ = std::move(data);
    return grid;
}

ValueGrid& ValueGrid::operator+=(const ValueGrid& other) {
    if (!same_shape(other)) throw ShapeError("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

ValueGrid& ValueGrid::operator-=(const ValueGrid& other) {
    if (!same_shape(other)) throw ShapeError("operator-=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

ValueGrid& ValueGrid::operator*=(double scale) {
    for (double& v : data_) v *= scale;
    return *this;
}

ValueGrid ValueGrid::hadamard(const ValueGrid& other) const {
    if (!same_shape(other)) throw ShapeError("hadamard: shape mismatch");
    ValueGrid out = *this;
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] *= other.data_[i];
    return out;
}

double ValueGrid::sum() const {
    double total = 0.0;
    for (double v : data_) total += v;
    return total;
}

double ValueGrid::max_abs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
}

bool ValueGrid::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

ValueGrid operator+(ValueGrid lhs, const ValueGrid& rhs) {
    lhs += rhs;
    return lhs;
}

ValueGrid operator-(ValueGrid lhs, const ValueGrid& rhs) {
    lhs -= rhs;
    return lhs;
}

ValueGrid operator*(ValueGrid grid, double scale) {
    grid *= scale;
    return grid;
}

} // namespace dermpolar
