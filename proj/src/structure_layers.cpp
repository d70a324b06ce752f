#include "dermpolar/structure_layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace dermpolar {

const std::array<const char*, kStructureCount> kStructureNames = {
    "dots_globules_cobblestone", "reticular_pigmented_network",
    "homogeneous_areas",         "regression_areas",
    "blue_white_veil",           "streaks",
    "vascular_structures",       "unspecific_pattern"};

StructureWeakLabels StructureWeakLabels::from_ints(const std::vector<int>& values) {
    if (values.size() != kStructureCount) {
        throw Error("weak labels must list exactly " + std::to_string(kStructureCount) +
                    " levels");
    }
    StructureWeakLabels labels;
    for (int s = 0; s < kStructureCount; ++s) {
        const int v = values[static_cast<std::size_t>(s)];
        if (v < 0 || v > 2) throw Error("weak label levels must be 0, 1, or 2");
        labels.levels[static_cast<std::size_t>(s)] = static_cast<WeakLevel>(v);
    }
    return labels;
}

std::map<int, RegionSpec> default_structure_regions() {
    std::map<int, RegionSpec> regions;
    for (int s = 0; s < kStructureCount; ++s) {
        regions[s] = RegionSpec{0.0, 1.0, std::nullopt};
    }
    regions[kStreaksIndex] = RegionSpec{0.7, 1.0, std::nullopt};
    return regions;
}

namespace {

void check_score_grid(const ValueGrid& grid, const char* who) {
    if (grid.rank() != 3 || grid.extent(2) < 2) {
        throw ShapeError(std::string(who) + ": expected H x W x S grid with S >= 2");
    }
}

} // namespace

ValueGrid parametric_softmax(const ValueGrid& scores, double gamma) {
    check_score_grid(scores, "parametric_softmax");
    if (gamma <= 0.0) throw Error("parametric_softmax: gamma must be positive");

    const int classes = scores.extent(2);
    const std::size_t locations = scores.size() / static_cast<std::size_t>(classes);
    ValueGrid probs = scores;
    double* p = probs.data();
    for (std::size_t i = 0; i < locations; ++i, p += classes) {
        double top = p[0];
        for (int s = 1; s < classes; ++s) top = std::max(top, p[s]);
        double z = 0.0;
        for (int s = 0; s < classes; ++s) {
            p[s] = std::exp(gamma * (p[s] - top));
            z += p[s];
        }
        const double inv_z = 1.0 / z;
        for (int s = 0; s < classes; ++s) p[s] *= inv_z;
    }
    return probs;
}

ValueGrid parametric_softmax_backward(const ValueGrid& scores, double gamma,
                                      const ValueGrid& grad_probs) {
    if (!scores.same_shape(grad_probs)) {
        throw ShapeError("parametric_softmax_backward: gradient shape mismatch");
    }
    const ValueGrid probs = parametric_softmax(scores, gamma);
    const int classes = scores.extent(2);
    const std::size_t locations = scores.size() / static_cast<std::size_t>(classes);

    ValueGrid grad = scores;
    const double* p = probs.data();
    const double* g = grad_probs.data();
    double* out = grad.data();
    for (std::size_t i = 0; i < locations; ++i, p += classes, g += classes, out += classes) {
        double dot = 0.0;
        for (int s = 0; s < classes; ++s) dot += g[s] * p[s];
        for (int s = 0; s < classes; ++s) out[s] = gamma * p[s] * (g[s] - dot);
    }
    return grad;
}

std::vector<double> accumulated_probability(const ValueGrid& maps, const ValueGrid& region) {
    check_score_grid(maps, "accumulated_probability");
    if (region.extent(0) != maps.extent(0) || region.extent(1) != maps.extent(1)) {
        throw ShapeError("accumulated_probability: region extents mismatch");
    }
    const int classes = maps.extent(2);
    const std::size_t locations = maps.size() / static_cast<std::size_t>(classes);
    std::vector<double> accumulated(static_cast<std::size_t>(classes), 0.0);
    const double* p = maps.data();
    for (std::size_t i = 0; i < locations; ++i, p += classes) {
        if (region[i] == 0.0) continue;
        for (int s = 0; s < classes; ++s) accumulated[static_cast<std::size_t>(s)] += p[s];
    }
    return accumulated;
}

ValueGrid spatial_region_from_npc(const NormalizedPolarMap& npc, const RegionSpec& spec) {
    const int height = npc.height();
    const int width = npc.width();
    ValueGrid region({height, width}, 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double rho = npc.rho.at(y, x);
            if (rho < spec.rho_min || rho > spec.rho_max) continue;
            if (spec.theta) {
                const double theta = npc.theta.at(y, x);
                const auto [lo, hi] = *spec.theta;
                const bool inside =
                    lo <= hi ? (theta >= lo && theta <= hi) : (theta >= lo || theta <= hi);
                if (!inside) continue;
            }
            region.at(y, x) = 1.0;
        }
    }
    return region;
}

Constraint Constraint::make(int structure, Kind kind, double bound, ValueGrid region) {
    if (structure < 0) throw Error("constraint structure index must be non-negative");
    if (bound < 0.0) throw Error("constraint bound must be non-negative");
    Constraint c;
    c.structure = structure;
    c.kind = kind;
    c.bound = bound;
    c.region_size = region.sum();
    c.region = std::move(region);
    if (c.bound > c.region_size + 1e-9) {
        throw Error("constraint bound exceeds region pixel count");
    }
    return c;
}

namespace {

std::uint64_t region_fingerprint(const ValueGrid& region) {
    // FNV-1a over the 0/1 pattern; identical regions must compare equal.
    std::uint64_t hash = 1469598103934665603ull;
    for (std::size_t i = 0; i < region.size(); ++i) {
        hash ^= region[i] == 0.0 ? 0x9eu : 0x3bu;
        hash *= 1099511628211ull;
    }
    return hash;
}

} // namespace

void ConstraintSet::validate() const {
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Constraint& c = items[i];
        if (!c.region.same_shape(items[0].region)) {
            throw ShapeError("constraint regions must share one spatial shape");
        }
        if (c.kind != Constraint::Kind::Lower) continue;
        for (std::size_t j = 0; j < items.size(); ++j) {
            const Constraint& other = items[j];
            if (other.kind != Constraint::Kind::Upper) continue;
            if (other.structure != c.structure) continue;
            if (region_fingerprint(other.region) != region_fingerprint(c.region)) continue;
            if (c.bound > other.bound + 1e-9) {
                throw InfeasibleConstraints(
                    "lower bound exceeds upper bound for structure " +
                    std::to_string(c.structure));
            }
        }
    }
}

ConstraintSet constraints_from_labels(const StructureWeakLabels& labels,
                                      const NormalizedPolarMap& npc,
                                      const std::map<int, RegionSpec>& regions,
                                      const BoundConfig& bounds) {
    const int height = npc.height();
    const int width = npc.width();
    const ValueGrid full({height, width}, 1.0);
    const double full_size = static_cast<double>(height) * width;

    ConstraintSet set;
    for (int s = 0; s < kStructureCount; ++s) {
        const WeakLevel level = labels.levels[static_cast<std::size_t>(s)];
        switch (level) {
            case WeakLevel::Absent:
                set.items.push_back(Constraint::make(
                    s, Constraint::Kind::Upper, bounds.epsilon_absent * full_size, full));
                break;
            case WeakLevel::Local: {
                RegionSpec spec{0.0, 1.0, std::nullopt};
                if (auto it = regions.find(s); it != regions.end()) spec = it->second;
                ValueGrid region = spatial_region_from_npc(npc, spec);
                const double region_size = region.sum();
                if (region_size < 1.0) {
                    throw InfeasibleConstraints("empty spatial region for structure " +
                                                std::to_string(s));
                }
                set.items.push_back(Constraint::make(s, Constraint::Kind::Lower,
                                                     bounds.alpha_low * region_size, region));
                set.items.push_back(Constraint::make(s, Constraint::Kind::Upper,
                                                     bounds.alpha_high * region_size,
                                                     std::move(region)));
                break;
            }
            case WeakLevel::Global:
                set.items.push_back(Constraint::make(
                    s, Constraint::Kind::Lower, bounds.beta_low * full_size, full));
                break;
        }
    }
    set.validate();
    return set;
}

namespace {

/// Feasibility screen over each group of constraints sharing one region:
/// the lower bounds of distinct structures cannot exceed the region's
/// capacity, and upper bounds covering every class cannot leave the
/// region's mass without a home.
void check_feasibility(const ConstraintSet& constraints, int classes) {
    constraints.validate();
    struct RegionGroup {
        double capacity = 0.0;
        std::map<int, double> lower; // per structure, tightest bound
        std::map<int, double> upper;
    };
    std::map<std::uint64_t, RegionGroup> groups;
    for (const Constraint& c : constraints.items) {
        RegionGroup& group = groups[region_fingerprint(c.region)];
        group.capacity = c.region_size;
        if (c.kind == Constraint::Kind::Lower) {
            auto [it, fresh] = group.lower.emplace(c.structure, c.bound);
            if (!fresh) it->second = std::max(it->second, c.bound);
        } else {
            auto [it, fresh] = group.upper.emplace(c.structure, c.bound);
            if (!fresh) it->second = std::min(it->second, c.bound);
        }
    }
    for (const auto& [key, group] : groups) {
        double lower_sum = 0.0;
        for (const auto& [structure, bound] : group.lower) lower_sum += bound;
        if (lower_sum > group.capacity + 1e-9) {
            throw InfeasibleConstraints(
                "sum of lower bounds exceeds region capacity: " +
                std::to_string(lower_sum) + " > " + std::to_string(group.capacity));
        }
        if (static_cast<int>(group.upper.size()) == classes) {
            double upper_sum = 0.0;
            for (const auto& [structure, bound] : group.upper) upper_sum += bound;
            if (upper_sum < group.capacity - 1e-9) {
                throw InfeasibleConstraints(
                    "upper bounds cover every class but sum below the region mass: " +
                    std::to_string(upper_sum) + " < " + std::to_string(group.capacity));
            }
        }
    }
}

} // namespace

ProjectionResult project_onto_constraints(const ValueGrid& maps,
                                          const ConstraintSet& constraints,
                                          const ProjectionOptions& options) {
    check_score_grid(maps, "project_onto_constraints");
    if (constraints.items.empty()) {
        return ProjectionResult{maps, {}, 0};
    }
    for (const Constraint& c : constraints.items) {
        if (c.region.extent(0) != maps.extent(0) || c.region.extent(1) != maps.extent(1)) {
            throw ShapeError("project_onto_constraints: region extents mismatch");
        }
        if (c.structure >= maps.extent(2)) {
            throw ShapeError("project_onto_constraints: structure index out of range");
        }
    }
    const int classes = maps.extent(2);
    check_feasibility(constraints, classes);
    const std::size_t locations = maps.size() / static_cast<std::size_t>(classes);
    const std::size_t n_constraints = constraints.items.size();

    // Signed multiplier exponents: q_i(s) ~ p_i(s) * exp(-sum_k lambda_k * sign_k
    // * [i in R_k][s = s_k]), renormalized per location.
    std::vector<double> multipliers(n_constraints, 0.0);
    std::vector<double> signs(n_constraints);
    std::vector<double> tolerances(n_constraints);
    for (std::size_t k = 0; k < n_constraints; ++k) {
        const Constraint& c = constraints.items[k];
        signs[k] = c.kind == Constraint::Kind::Upper ? 1.0 : -1.0;
        tolerances[k] = options.tolerance_fraction * std::max(c.region_size, 1.0);
    }

    ValueGrid projected = maps;
    std::vector<double> accumulated(n_constraints, 0.0);
    std::vector<double> curvatures(n_constraints, 0.0);
    std::vector<double> exponents(static_cast<std::size_t>(classes), 0.0);
    int iteration = 0;
    bool converged = false;
    for (; iteration < options.max_iterations; ++iteration) {
        // Rebuild q from the current multipliers.
        std::fill(accumulated.begin(), accumulated.end(), 0.0);
        std::fill(curvatures.begin(), curvatures.end(), 0.0);
        const double* p = maps.data();
        double* q = projected.data();
        for (std::size_t i = 0; i < locations; ++i, p += classes, q += classes) {
            std::fill(exponents.begin(), exponents.end(), 0.0);
            bool touched = false;
            for (std::size_t k = 0; k < n_constraints; ++k) {
                if (multipliers[k] == 0.0) continue;
                if (constraints.items[k].region[i] == 0.0) continue;
                exponents[static_cast<std::size_t>(constraints.items[k].structure)] -=
                    multipliers[k] * signs[k];
                touched = true;
            }
            double z = 0.0;
            if (touched) {
                for (int s = 0; s < classes; ++s) {
                    // Clamp keeps exp() finite even when several multipliers
                    // stack on one class; active solutions never live there.
                    const double e =
                        std::clamp(exponents[static_cast<std::size_t>(s)], -700.0, 700.0);
                    q[s] = p[s] * std::exp(e);
                    z += q[s];
                }
                const double inv_z = 1.0 / z;
                for (int s = 0; s < classes; ++s) q[s] *= inv_z;
            } else {
                for (int s = 0; s < classes; ++s) q[s] = p[s];
            }
            for (std::size_t k = 0; k < n_constraints; ++k) {
                if (constraints.items[k].region[i] != 0.0) {
                    const double v = q[constraints.items[k].structure];
                    accumulated[k] += v;
                    curvatures[k] += v * (1.0 - v);
                }
            }
        }

        // Convergence: no violation, and active multipliers sit on their bound.
        converged = true;
        for (std::size_t k = 0; k < n_constraints; ++k) {
            const double gap = signs[k] * (accumulated[k] - constraints.items[k].bound);
            if (gap > tolerances[k]) converged = false;
            if (multipliers[k] > 0.0 && std::abs(gap) > tolerances[k]) converged = false;
        }
        if (converged) break;

        // Diagonally preconditioned ascent: the dual gradient for constraint k
        // is its signed gap and the matching curvature is sum q(1-q) over the
        // region, so step * gap / curvature is a damped Newton step. The cap
        // bounds the jump while the curvature is still vanishing (a class
        // driven to ~0 whose lower bound has yet to bite).
        constexpr double kMaxMultiplierStep = 5.0;
        constexpr double kTinyCurvature = 1e-12;
        for (std::size_t k = 0; k < n_constraints; ++k) {
            const double gap = signs[k] * (accumulated[k] - constraints.items[k].bound);
            const double raw = options.step * gap / std::max(curvatures[k], kTinyCurvature);
            const double delta = std::clamp(raw, -kMaxMultiplierStep, kMaxMultiplierStep);
            multipliers[k] = std::max(0.0, multipliers[k] + delta);
        }
    }

    ProjectionResult result;
    result.iterations = iteration;
    result.residuals.resize(n_constraints);
    for (std::size_t k = 0; k < n_constraints; ++k) {
        result.residuals[k] =
            std::max(0.0, signs[k] * (accumulated[k] - constraints.items[k].bound));
    }
    if (!converged) {
        throw NotConverged("project_onto_constraints: dual ascent did not converge in " +
                               std::to_string(options.max_iterations) + " iterations",
                           result.residuals);
    }
    result.maps = std::move(projected);
    return result;
}

double cross_entropy_loss(const ValueGrid& scores, const ValueGrid& target, double gamma,
                          ValueGrid* grad_scores) {
    if (!scores.same_shape(target)) {
        throw ShapeError("cross_entropy_loss: target shape mismatch");
    }
    const ValueGrid probs = parametric_softmax(scores, gamma);
    const int classes = scores.extent(2);
    const std::size_t locations = scores.size() / static_cast<std::size_t>(classes);

    // loss = -(1/N) sum_i sum_s target * gamma * (f - logsumexp(gamma f)); computed
    // from the stabilized probabilities.
    double loss = 0.0;
    const double* p = probs.data();
    const double* t = target.data();
    for (std::size_t i = 0; i < locations * static_cast<std::size_t>(classes); ++i) {
        if (t[i] > 0.0) loss -= t[i] * std::log(std::max(p[i], 1e-300));
    }
    loss /= static_cast<double>(locations);

    if (grad_scores) {
        *grad_scores = probs;
        double* g = grad_scores->data();
        const double scale = gamma / static_cast<double>(locations);
        for (std::size_t i = 0; i < scores.size(); ++i) g[i] = scale * (g[i] - t[i]);
    }
    return loss;
}

ConstrainedLossResult constrained_loss(const ValueGrid& scores,
                                       const ConstraintSet& constraints, double gamma,
                                       const ProjectionOptions& options) {
    const ValueGrid probs = parametric_softmax(scores, gamma);
    ProjectionResult projection = project_onto_constraints(probs, constraints, options);

    ConstrainedLossResult result;
    result.target = std::move(projection.maps);
    result.loss = cross_entropy_loss(scores, result.target, gamma, &result.grad_scores);
    return result;
}

} // namespace dermpolar
