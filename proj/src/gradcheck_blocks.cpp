#include "dermpolar/gradcheck_blocks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dermpolar/diagnosis_blocks.hpp"
#include "dermpolar/gradcheck.hpp"
#include "dermpolar/lesion_geometry.hpp"
#include "dermpolar/rng.hpp"
#include "dermpolar/structure_layers.hpp"
#include "dermpolar/value_grid.hpp"

namespace dermpolar {

namespace {

// Central differences on multilinear / piecewise-linear blocks carry no
// truncation term, so a larger step only reduces rounding noise. The
// exponential blocks (softmax, cross entropy) get a smaller step and
// mildly scaled scores to stay clear of both truncation and saturation.
constexpr double kEpsilon = 1e-5;
constexpr double kExpEpsilon = 3e-6;

/// Polar map of a synthetic off-center tilted ellipse, so every trial
/// exercises non-trivial rho and theta fields.
NormalizedPolarMap test_npc(int height, int width) {
    MomentEllipse ellipse;
    ellipse.cx = 0.5 * (width - 1) + 0.3;
    ellipse.cy = 0.5 * (height - 1) - 0.2;
    ellipse.a = 0.55 * width;
    ellipse.b = 0.35 * height;
    ellipse.orientation = 0.4;
    return polar_map(height, width, normalizing_affine(ellipse));
}

ValueGrid random_grid(std::vector<int> shape, Rng& rng) {
    return rng.normal_grid(std::move(shape));
}

class SoftmaxOp final : public DifferentiableOp {
public:
    explicit SoftmaxOp(double gamma) : gamma_(gamma) {}

    std::string name() const override { return "parametric_softmax"; }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        return parametric_softmax(inputs[0], gamma_);
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        return {parametric_softmax_backward(inputs[0], gamma_, output_grad)};
    }

private:
    double gamma_;
};

class ModulationOp final : public DifferentiableOp {
public:
    std::string name() const override { return "modulation"; }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        return modulation(inputs[0], inputs[1]);
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        auto [gf, gs] = modulation_backward(inputs[0], inputs[1], output_grad);
        return {std::move(gf), std::move(gs)};
    }
};

class PolarPoolOp final : public DifferentiableOp {
public:
    PolarPoolOp(NormalizedPolarMap npc, PolarPoolSpec spec)
        : npc_(std::move(npc)), spec_(std::move(spec)) {}

    std::string name() const override {
        return spec_.mode == PolarPoolSpec::Mode::Average ? "polar_pool_average"
                                                          : "polar_pool_max";
    }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        return polar_pool(inputs[0], npc_, spec_);
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        return {polar_pool_backward(inputs[0], npc_, spec_, output_grad)};
    }

private:
    NormalizedPolarMap npc_;
    PolarPoolSpec spec_;
};

class AsymmetryOp final : public DifferentiableOp {
public:
    std::string name() const override { return "asymmetry"; }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        return asymmetry(inputs[0]);
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        return {asymmetry_backward(inputs[0], output_grad)};
    }
};

class HeadOp final : public DifferentiableOp {
public:
    HeadOp(NormalizedPolarMap npc, HeadParams params, PolarPoolSpec spec)
        : npc_(std::move(npc)), params_(std::move(params)), spec_(std::move(spec)) {}

    std::string name() const override { return "head_forward"; }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        const auto scores = head_forward(inputs[0], inputs[1], npc_, params_, spec_);
        return ValueGrid::from_data({3}, {scores[0], scores[1], scores[2]});
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        const std::array<double, 3> g{output_grad[0], output_grad[1], output_grad[2]};
        auto [gf, gs] = head_backward(inputs[0], inputs[1], npc_, params_, spec_, g);
        return {std::move(gf), std::move(gs)};
    }

private:
    NormalizedPolarMap npc_;
    HeadParams params_;
    PolarPoolSpec spec_;
};

/// Cross-entropy against a constraint projection computed once up front
/// and then held fixed, matching how the training loss treats it.
class ConstrainedLossOp final : public DifferentiableOp {
public:
    ConstrainedLossOp(ValueGrid target, double gamma)
        : target_(std::move(target)), gamma_(gamma) {}

    std::string name() const override { return "constrained_loss"; }

    ValueGrid forward(const std::vector<ValueGrid>& inputs) const override {
        const double loss = cross_entropy_loss(inputs[0], target_, gamma_);
        return ValueGrid::from_data({1}, {loss});
    }

    std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                    const ValueGrid& output_grad) const override {
        ValueGrid grad;
        cross_entropy_loss(inputs[0], target_, gamma_, &grad);
        grad *= output_grad[0];
        return {std::move(grad)};
    }

private:
    ValueGrid target_;
    double gamma_;
};

double softmax_trial(std::uint64_t seed) {
    Rng rng(seed);
    ValueGrid scores = random_grid({4, 4, kStructureCount}, rng);
    scores *= 0.1;
    ValueGrid probe = random_grid(scores.shape(), rng);
    return finite_diff_check(SoftmaxOp(20.0), {std::move(scores)}, probe, kExpEpsilon);
}

double modulation_trial(std::uint64_t seed) {
    Rng rng(seed);
    ValueGrid features = random_grid({4, 4, 4}, rng);
    ValueGrid structures = random_grid({8, 8, kStructureCount}, rng);
    ValueGrid probe = random_grid({4, 4, (1 + kStructureCount) * 4}, rng);
    return finite_diff_check(ModulationOp(), {std::move(features), std::move(structures)},
                             probe, kEpsilon);
}

double polar_pool_trial(std::uint64_t seed, PolarPoolSpec::Mode mode) {
    Rng rng(seed);
    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 4;
    spec.mode = mode;
    ValueGrid features = random_grid({12, 12, 3}, rng);
    ValueGrid probe = random_grid({spec.rings, spec.angles, 3}, rng);
    return finite_diff_check(PolarPoolOp(test_npc(12, 12), spec), {std::move(features)},
                             probe, kEpsilon);
}

double polar_avg_trial(std::uint64_t seed) {
    return polar_pool_trial(seed, PolarPoolSpec::Mode::Average);
}

double polar_max_trial(std::uint64_t seed) {
    return polar_pool_trial(seed, PolarPoolSpec::Mode::Max);
}

/// Smallest sector difference the asymmetry fold rectifies. Pairs of
/// sectors that are both empty stay identically zero under perturbation
/// and cannot produce a kink, so they are skipped.
double min_fold_gap(const ValueGrid& polar, const ValueGrid* occupancy) {
    const int rings = polar.extent(0);
    const int angles = polar.extent(1);
    const int channels = polar.extent(2);
    double gap = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < angles / 2; ++axis) {
        for (int a1 = 0; a1 < angles; ++a1) {
            const int a2 = (((2 * axis - a1) % angles) + angles) % angles;
            if (a1 >= a2) continue;
            for (int r = 0; r < rings; ++r) {
                if (occupancy && occupancy->at(r, a1, 0) == 0.0 &&
                    occupancy->at(r, a2, 0) == 0.0) {
                    continue;
                }
                for (int j = 0; j < channels; ++j) {
                    gap = std::min(gap, std::abs(polar.at(r, a1, j) - polar.at(r, a2, j)));
                }
            }
        }
    }
    return gap;
}

double asymmetry_trial(std::uint64_t seed) {
    Rng rng(seed);
    // Redraw near-tied mirror sectors: the fold's absolute value has a
    // kink there that the finite-difference step would straddle.
    ValueGrid polar = random_grid({3, 6, 5}, rng);
    for (int attempt = 0; attempt < 16 && min_fold_gap(polar, nullptr) < 1e-3; ++attempt) {
        polar = random_grid({3, 6, 5}, rng);
    }
    ValueGrid probe = random_grid({3, 5}, rng);
    return finite_diff_check(AsymmetryOp(), {std::move(polar)}, probe, kEpsilon);
}

double head_trial(std::uint64_t seed) {
    Rng rng(seed);
    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 4;
    const int channels = 6;
    const int modulated = (1 + kStructureCount) * channels;
    HeadParams params = HeadParams::seeded_init(modulated, spec, rng);
    const NormalizedPolarMap npc = test_npc(4, 4);
    const ValueGrid occupancy = polar_pool(ValueGrid({4, 4, 1}, 1.0), npc, spec);
    ValueGrid features = random_grid({4, 4, channels}, rng);
    ValueGrid structures = random_grid({8, 8, kStructureCount}, rng);
    for (int attempt = 0; attempt < 16; ++attempt) {
        const ValueGrid polar = polar_pool(modulation(features, structures), npc, spec);
        if (min_fold_gap(polar, &occupancy) > 2e-3) break;
        features = random_grid({4, 4, channels}, rng);
        structures = random_grid({8, 8, kStructureCount}, rng);
    }
    ValueGrid probe = random_grid({3}, rng);
    return finite_diff_check(HeadOp(npc, std::move(params), spec),
                             {std::move(features), std::move(structures)}, probe, 1e-4);
}

double constrained_loss_trial(std::uint64_t seed) {
    Rng rng(seed);
    const double gamma = 20.0;
    ValueGrid scores = random_grid({8, 8, kStructureCount}, rng);
    scores *= 0.05; // keep the projected target comfortably interior

    const NormalizedPolarMap npc = test_npc(8, 8);
    std::vector<int> levels(kStructureCount, 0);
    levels[kStreaksIndex] = 1;
    levels[kStructureCount - 1] = 2;
    const ConstraintSet constraints = constraints_from_labels(
        StructureWeakLabels::from_ints(levels), npc, default_structure_regions(),
        BoundConfig{});
    ProjectionOptions options;
    options.max_iterations = 50000;
    const ProjectionResult projected =
        project_onto_constraints(parametric_softmax(scores, gamma), constraints, options);

    ValueGrid probe({1}, 1.0);
    return finite_diff_check(ConstrainedLossOp(projected.maps, gamma),
                             {std::move(scores)}, probe, kExpEpsilon);
}

} // namespace

const std::vector<GradcheckBlock>& gradcheck_blocks() {
    static const std::vector<GradcheckBlock> blocks = {
        {"parametric_softmax", &softmax_trial},
        {"modulation", &modulation_trial},
        {"polar_pool_average", &polar_avg_trial},
        {"polar_pool_max", &polar_max_trial},
        {"asymmetry", &asymmetry_trial},
        {"head_forward", &head_trial},
        {"constrained_loss", &constrained_loss_trial},
    };
    return blocks;
}

double gradcheck_block_error(const GradcheckBlock& block, int trials,
                             std::uint64_t base_seed) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        worst = std::max(worst, block.run(base_seed + static_cast<std::uint64_t>(t)));
    }
    return worst;
}

} // namespace dermpolar
