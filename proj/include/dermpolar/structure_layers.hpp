#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dermpolar/lesion_geometry.hpp"
#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// The eight dermoscopic structure patterns, in fixed index order.
inline constexpr int kStructureCount = 8;
extern const std::array<const char*, kStructureCount> kStructureNames;

/// Index of the streaks structure, the one pattern that carries a
/// non-trivial default spatial region (near the lesion border).
inline constexpr int kStreaksIndex = 5;

/// Image-level annotation per structure.
enum class WeakLevel { Absent = 0, Local = 1, Global = 2 };

struct StructureWeakLabels {
    std::array<WeakLevel, kStructureCount> levels{};

    static StructureWeakLabels from_ints(const std::vector<int>& values);
};

/// rho interval (and optional theta interval, wrapping allowed when
/// lo > hi) in normalized polar coordinates defining where a structure
/// tends to appear.
struct RegionSpec {
    double rho_min = 0.0;
    double rho_max = 1.0;
    std::optional<std::pair<double, double>> theta;
};

/// Default per-structure regions: streaks get the border annulus
/// rho in [0.7, 1], every other structure the full lesion (rho <= 1).
std::map<int, RegionSpec> default_structure_regions();

/// Softmax over the channel axis of gamma-scaled scores, computed with
/// max subtraction. gamma = 1 is the standard softmax; the default used
/// throughout the pipeline is 20.
ValueGrid parametric_softmax(const ValueGrid& scores, double gamma);

/// Gradient of parametric_softmax w.r.t. the scores, contracted with
/// grad_probs.
ValueGrid parametric_softmax_backward(const ValueGrid& scores, double gamma,
                                      const ValueGrid& grad_probs);

/// P_s = sum of each structure's probability over region pixels.
std::vector<double> accumulated_probability(const ValueGrid& maps, const ValueGrid& region);

/// Binary grid marking pixels whose (rho, theta) lie in the spec's intervals.
ValueGrid spatial_region_from_npc(const NormalizedPolarMap& npc, const RegionSpec& spec);

struct Constraint {
    enum class Kind { Upper, Lower };

    int structure = 0;
    Kind kind = Kind::Upper;
    double bound = 0.0;
    ValueGrid region;     // binary, spatial extents of the maps
    double region_size = 0.0;

    static Constraint make(int structure, Kind kind, double bound, ValueGrid region);
};

struct ConstraintSet {
    std::vector<Constraint> items;

    /// Enforces the documented invariants: bounds within region capacity,
    /// lower <= upper per (structure, region).
    void validate() const;
};

/// Fractions of the relevant region's pixel count used to turn weak
/// labels into accumulated-probability bounds.
struct BoundConfig {
    double epsilon_absent = 0.01;
    double alpha_low = 0.02;
    double alpha_high = 0.30;
    double beta_low = 0.30;
};

/// Builds the constraint set for one view: absent labels give an upper
/// bound over the full grid, local labels a lower and upper bound over
/// the structure's spatial region, global labels a lower bound over the
/// full grid.
ConstraintSet constraints_from_labels(const StructureWeakLabels& labels,
                                      const NormalizedPolarMap& npc,
                                      const std::map<int, RegionSpec>& regions,
                                      const BoundConfig& bounds);

struct ProjectionOptions {
    double step = 0.1;
    int max_iterations = 2000;
    double tolerance_fraction = 1e-3; // residual tolerance per constraint, times region size
};

struct ProjectionResult {
    ValueGrid maps;
    std::vector<double> residuals; // remaining violation per constraint, probability mass
    int iterations = 0;
};

/// KL projection of a per-location distribution field onto the
/// constraint set, solved by projected dual ascent on per-constraint
/// multipliers with diagonal (per-constraint Newton) preconditioning;
/// step damps the Newton step. The result satisfies every constraint
/// within tolerance_fraction * region size and each location still
/// sums to 1.
ProjectionResult project_onto_constraints(const ValueGrid& maps,
                                          const ConstraintSet& constraints,
                                          const ProjectionOptions& options = {});

struct ConstrainedLossResult {
    double loss = 0.0;
    ValueGrid grad_scores;
    ValueGrid target; // the projected distribution used as the fixed target
};

/// Cross-entropy between the parametric softmax of the scores and its
/// constraint projection, averaged over locations. The projected target
/// is treated as constant, so the gradient is gamma * (p - q) / N.
ConstrainedLossResult constrained_loss(const ValueGrid& scores,
                                       const ConstraintSet& constraints, double gamma,
                                       const ProjectionOptions& options = {});

/// Cross-entropy against an explicit fixed target; the building block
/// checked by the gradient harness.
double cross_entropy_loss(const ValueGrid& scores, const ValueGrid& target, double gamma,
                          ValueGrid* grad_scores = nullptr);

} // namespace dermpolar
