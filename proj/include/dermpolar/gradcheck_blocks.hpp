#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dermpolar {

/// One named differentiable block wired up with seeded random inputs.
/// run(seed) performs a single finite-difference trial and returns its
/// maximum relative error.
struct GradcheckBlock {
    std::string name;
    double (*run)(std::uint64_t seed);
};

/// The library's differentiable blocks, in report order.
const std::vector<GradcheckBlock>& gradcheck_blocks();

/// Worst relative error over `trials` seeded runs of one block.
double gradcheck_block_error(const GradcheckBlock& block, int trials,
                             std::uint64_t base_seed);

} // namespace dermpolar
