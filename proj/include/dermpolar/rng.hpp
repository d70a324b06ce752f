#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Seeded deterministic generator used for every random draw in the library.
///
/// Variates are derived directly from mt19937_64 bits instead of the
/// standard distributions, so the same seed yields the same stream on
/// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    ValueGrid uniform_grid(std::vector<int> shape, double lo, double hi) {
        ValueGrid grid(std::move(shape));
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = uniform(lo, hi);
        return grid;
    }

    ValueGrid normal_grid(std::vector<int> shape, double stddev = 1.0) {
        ValueGrid grid(std::move(shape));
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = stddev * normal();
        return grid;
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace dermpolar
