#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dermpolar/lesion_geometry.hpp"
#include "dermpolar/rng.hpp"
#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Diagnosis classes, in fixed index order.
inline constexpr int kDiagnosisClasses = 3;
extern const std::array<const char*, kDiagnosisClasses> kDiagnosisClassNames;

/// Pooling sectors: R radial rings crossed with A angular sectors in
/// normalized polar coordinates. Ring boundaries are the R outer radii;
/// the equal-area default sqrt(k/R) gives every ring the same pixel
/// count on a perfect circular lesion.
struct PolarPoolSpec {
    enum class Mode { Average, Max };

    int rings = 3;
    int angles = 6;
    Mode mode = Mode::Average;
    double overlap_frac = 0.0;
    std::vector<double> ring_boundaries; // empty selects the equal-area default

    static std::vector<double> equal_area_boundaries(int rings);

    /// Boundaries actually in effect (explicit or equal-area default).
    std::vector<double> effective_boundaries() const;

    void validate() const;
};

struct PolarPoolStats {
    int empty_sectors = 0;
};

/// Channel-wise modulation of a feature grid by structure probability
/// maps. The maps are average-pooled down to the feature resolution and
/// the output concatenates the original features with one modulated
/// copy per structure, so C channels become (1 + S) * C.
ValueGrid modulation(const ValueGrid& features, const ValueGrid& structures);

/// Gradients of modulation w.r.t. (features, structures).
std::pair<ValueGrid, ValueGrid> modulation_backward(const ValueGrid& features,
                                                    const ValueGrid& structures,
                                                    const ValueGrid& grad_out);

/// Pools features over polar sectors, producing R x A x C. Pixels with
/// rho > 1 never participate; an empty sector yields 0 (and zero
/// gradient). Average mode spreads gradient equally over member pixels,
/// max mode routes it to the first-scanned argmax.
ValueGrid polar_pool(const ValueGrid& features, const NormalizedPolarMap& npc,
                     const PolarPoolSpec& spec, PolarPoolStats* stats = nullptr);

ValueGrid polar_pool_backward(const ValueGrid& features, const NormalizedPolarMap& npc,
                              const PolarPoolSpec& spec, const ValueGrid& grad_out);

/// Lesion asymmetry from a polar-pooled grid: for each of the A/2 fold
/// axes (through sector centers), the accumulated absolute difference
/// between sectors mirrored across that axis, per channel.
ValueGrid asymmetry(const ValueGrid& polar);

ValueGrid asymmetry_backward(const ValueGrid& polar, const ValueGrid& grad_out);

/// Weights of the three-arm head: each arm is an affine map from its
/// arm's flattened input to the three diagnosis scores, and the arm
/// outputs are linearly combined by the sum-block weights. M below is
/// the modulated channel count, (1 + S) * C.
struct HeadParams {
    ValueGrid fc1_weight; // 3 x M
    ValueGrid fc1_bias;   // 3
    ValueGrid fc2_weight; // 3 x (R*A*M)
    ValueGrid fc2_bias;   // 3
    ValueGrid fc3_weight; // 3 x ((A/2)*M)
    ValueGrid fc3_bias;   // 3
    std::array<double, 3> sum_weights{1.0, 1.0, 1.0};

    static HeadParams seeded_init(int modulated_channels, const PolarPoolSpec& spec, Rng& rng);

    void check_shapes(int modulated_channels, const PolarPoolSpec& spec) const;
};

/// Per-view diagnosis scores: modulation feeds three arms (global average
/// pool -> FC1, polar pooling -> FC2, asymmetry of that pooling -> FC3)
/// whose outputs are combined by the sum-block weights. Softmax is left
/// to the caller.
std::array<double, 3> head_forward(const ValueGrid& features, const ValueGrid& structures,
                                   const NormalizedPolarMap& npc, const HeadParams& params,
                                   const PolarPoolSpec& spec);

/// Gradients of the head scores w.r.t. (features, structures), contracted
/// with grad_scores.
std::pair<ValueGrid, ValueGrid> head_backward(const ValueGrid& features,
                                              const ValueGrid& structures,
                                              const NormalizedPolarMap& npc,
                                              const HeadParams& params,
                                              const PolarPoolSpec& spec,
                                              const std::array<double, 3>& grad_scores);

std::array<double, 3> softmax3(const std::array<double, 3>& scores);

/// Per-case and per-view diagnosis distributions.
struct DiagnosisOutput {
    std::vector<std::array<double, 3>> per_view;
    std::array<double, 3> fused{};
};

/// Product-of-views fusion computed in the log domain and renormalized.
std::array<double, 3> fuse_views(const std::vector<std::array<double, 3>>& per_view);

} // namespace dermpolar
