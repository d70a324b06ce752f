#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <dermpolar/errors.hpp>
#include <dermpolar/rng.hpp>
#include <dermpolar/structure_layers.hpp>

#include "test_support.hpp"

using namespace dermpolar;
using namespace dermpolar::testing;

namespace {

constexpr double kPi = std::numbers::pi;

} // namespace

TEST_CASE("parametric softmax") {
    SUBCASE("gamma 1 equals the standard softmax") {
        ValueGrid scores = ValueGrid::from_data({1, 1, 3}, {1.0, 2.0, 0.5});
        ValueGrid probs = parametric_softmax(scores, 1.0);
        const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
        CHECK(probs[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
        CHECK(probs[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
        CHECK(probs[2] == doctest::Approx(std::exp(0.5) / z).epsilon(1e-12));
    }
    SUBCASE("gamma scales the logits") {
        ValueGrid scores = ValueGrid::from_data({1, 1, 2}, {0.1, 0.0});
        ValueGrid probs = parametric_softmax(scores, 20.0);
        const double expected = 1.0 / (1.0 + std::exp(-2.0));
        CHECK(probs[0] == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("uniform scores give uniform probabilities") {
        ValueGrid probs = parametric_softmax(ValueGrid({4, 4, 8}, 3.7), 20.0);
        for (std::size_t i = 0; i < probs.size(); ++i) {
            CHECK(probs[i] == doctest::Approx(0.125).epsilon(1e-12));
        }
    }
    SUBCASE("max subtraction keeps huge scores finite") {
        ValueGrid scores = ValueGrid::from_data({1, 1, 3}, {1e5, 0.0, -1e5});
        ValueGrid probs = parametric_softmax(scores, 20.0);
        CHECK(probs.all_finite());
        CHECK(probs[0] == doctest::Approx(1.0));
        CHECK(probs[1] == 0.0);
    }
    SUBCASE("rows always sum to one") {
        Rng rng(3);
        ValueGrid probs = parametric_softmax(rng.normal_grid({5, 7, 6}), 20.0);
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 7; ++x) {
                double z = 0.0;
                for (int s = 0; s < 6; ++s) z += probs.at(y, x, s);
                CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    SUBCASE("gamma must be positive, scores rank 3") {
        CHECK_THROWS_AS(parametric_softmax(ValueGrid({2, 2, 3}), 0.0), Error);
        CHECK_THROWS_AS(parametric_softmax(ValueGrid({2, 2}), 20.0), ShapeError);
    }
}

TEST_CASE("accumulated probability sums the region only") {
    ValueGrid maps = ValueGrid::from_data({1, 3, 2}, {0.9, 0.1, 0.4, 0.6, 0.2, 0.8});
    ValueGrid region = ValueGrid::from_data({1, 3}, {1, 0, 1});
    const auto acc = accumulated_probability(maps, region);
    CHECK(acc[0] == doctest::Approx(1.1));
    CHECK(acc[1] == doctest::Approx(0.9));
    CHECK_THROWS_AS(accumulated_probability(maps, ValueGrid({2, 2}, 1.0)), ShapeError);
}

TEST_CASE("spatial regions from polar coordinates") {
    NormalizedPolarMap npc = synthetic_npc(40, 40, 12.0);

    SUBCASE("rho annulus") {
        RegionSpec spec{0.7, 1.0, std::nullopt};
        ValueGrid region = spatial_region_from_npc(npc, spec);
        for (int y = 0; y < 40; ++y) {
            for (int x = 0; x < 40; ++x) {
                const double rho = npc.rho.at(y, x);
                const bool expected = rho >= 0.7 && rho <= 1.0;
                CHECK(region.at(y, x) == (expected ? 1.0 : 0.0));
            }
        }
    }
    SUBCASE("wrapping theta interval") {
        RegionSpec spec{0.0, 1.0, std::make_pair(1.5 * kPi, 0.5 * kPi)};
        ValueGrid region = spatial_region_from_npc(npc, spec);
        int inside = 0;
        for (int y = 0; y < 40; ++y) {
            for (int x = 0; x < 40; ++x) {
                if (region.at(y, x) == 0.0) continue;
                ++inside;
                const double theta = npc.theta.at(y, x);
                CHECK((theta >= 1.5 * kPi || theta <= 0.5 * kPi));
            }
        }
        CHECK(inside > 0);
    }
}

TEST_CASE("constraints_from_labels expands the three label levels") {
    NormalizedPolarMap npc = synthetic_npc(16, 16, 6.0);
    StructureWeakLabels labels = StructureWeakLabels::from_ints({0, 2, 0, 0, 0, 1, 0, 0});
    BoundConfig bounds;
    ConstraintSet set = constraints_from_labels(labels, npc, default_structure_regions(), bounds);

    // 6 absent + 1 global + local streaks (lower and upper).
    REQUIRE(set.items.size() == 9);
    set.validate();

    int uppers = 0;
    int lowers = 0;
    for (const Constraint& c : set.items) {
        if (c.kind == Constraint::Kind::Upper) ++uppers;
        if (c.kind == Constraint::Kind::Lower) ++lowers;
        if (c.structure == 1) {
            CHECK(c.kind == Constraint::Kind::Lower);
            CHECK(c.region_size == 256.0);
            CHECK(c.bound == doctest::Approx(bounds.beta_low * 256.0));
        }
        if (c.structure == kStreaksIndex) {
            // Streaks default to the border annulus, not the full grid.
            CHECK(c.region_size < 256.0);
            const double expected = c.kind == Constraint::Kind::Lower
                                        ? bounds.alpha_low * c.region_size
                                        : bounds.alpha_high * c.region_size;
            CHECK(c.bound == doctest::Approx(expected));
        }
    }
    CHECK(uppers == 7);
    CHECK(lowers == 2);
}

TEST_CASE("constraint validation") {
    ValueGrid region({2, 2}, 1.0);
    CHECK_THROWS_AS(Constraint::make(0, Constraint::Kind::Upper, 5.0, region), Error);
    CHECK_THROWS_AS(Constraint::make(-1, Constraint::Kind::Upper, 1.0, region), Error);

    ConstraintSet set;
    set.items.push_back(Constraint::make(0, Constraint::Kind::Lower, 2.0, region));
    set.items.push_back(Constraint::make(0, Constraint::Kind::Upper, 1.0, region));
    CHECK_THROWS_AS(set.validate(), InfeasibleConstraints);
}

TEST_CASE("projection matches the independent penalty-method reference") {
    Rng rng(90210);
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        const ValueGrid p = random_distribution_field(2, 2, 3, rng);
        const ConstraintSet constraints = random_feasible_constraints(rng, 2, 2, 3);

        ProjectionOptions options;
        options.tolerance_fraction = 1e-5; // sharper than the default for oracle comparison
        options.max_iterations = 20000;
        const ProjectionResult result = project_onto_constraints(p, constraints, options);
        const ValueGrid reference = dykstra_projection(p, constraints);

        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(std::abs(result.maps[i] - reference[i]) <= 1e-3);
        }
        // Sanity on top of the value match: feasibility and KL optimality order.
        for (const Constraint& c : constraints.items) {
            CHECK(constraint_violation(result.maps, c) <= 1e-4 * std::max(c.region_size, 1.0));
        }
        CHECK(kl_divergence(result.maps, p) <=
              kl_divergence(reference, p) + 1e-3);
    }
}

TEST_CASE("projection leaves feasible fields untouched and is idempotent") {
    Rng rng(777);
    const ValueGrid p = random_distribution_field(8, 8, 4, rng);

    SUBCASE("feasible constraints are a no-op") {
        ValueGrid region({8, 8}, 1.0);
        ConstraintSet set;
        // Mass of class 0 over the full grid is well under 64.
        set.items.push_back(Constraint::make(0, Constraint::Kind::Upper, 64.0, region));
        const ProjectionResult result = project_onto_constraints(p, set);
        CHECK(result.iterations == 0);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(result.maps[i] == p[i]);
    }

    SUBCASE("projecting a projection changes nothing") {
        const ConstraintSet constraints = random_feasible_constraints(rng, 8, 8, 4);
        const ProjectionResult once = project_onto_constraints(p, constraints);
        const ProjectionResult twice = project_onto_constraints(once.maps, constraints);
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(std::abs(twice.maps[i] - once.maps[i]) < 1e-6);
        }
    }
}

TEST_CASE("projection meets the residual contract at pipeline scale") {
    Rng rng(4242);
    const ValueGrid probs = random_distribution_field(64, 64, 8, rng, 2.0);
    NormalizedPolarMap npc = synthetic_npc(64, 64, 24.0);
    StructureWeakLabels labels = StructureWeakLabels::from_ints({0, 0, 2, 0, 0, 1, 0, 2});
    ConstraintSet constraints =
        constraints_from_labels(labels, npc, default_structure_regions(), BoundConfig{});

    const ProjectionResult result = project_onto_constraints(probs, constraints);
    REQUIRE(result.residuals.size() == constraints.items.size());
    for (std::size_t k = 0; k < constraints.items.size(); ++k) {
        const double region_size = constraints.items[k].region_size;
        CHECK(result.residuals[k] <= 1e-3 * std::max(region_size, 1.0));
    }
    // Locations still carry distributions.
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            double z = 0.0;
            for (int s = 0; s < 8; ++s) {
                const double v = result.maps.at(y, x, s);
                CHECK(v >= 0.0);
                z += v;
            }
            CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("infeasible constraint sets are rejected up front") {
    Rng rng(55);
    const ValueGrid p = random_distribution_field(4, 4, 3, rng);
    ValueGrid region({4, 4}, 1.0);

    SUBCASE("lower bounds exceeding the region capacity") {
        ConstraintSet set;
        set.items.push_back(Constraint::make(0, Constraint::Kind::Lower, 10.0, region));
        set.items.push_back(Constraint::make(1, Constraint::Kind::Lower, 8.0, region));
        CHECK_THROWS_AS(project_onto_constraints(p, set), InfeasibleConstraints);
    }
    SUBCASE("upper bounds on every class that cannot absorb the capacity") {
        ConstraintSet set;
        for (int s = 0; s < 3; ++s) {
            set.items.push_back(Constraint::make(s, Constraint::Kind::Upper, 2.0, region));
        }
        CHECK_THROWS_AS(project_onto_constraints(p, set), InfeasibleConstraints);
    }
}

TEST_CASE("non-convergence carries residuals") {
    Rng rng(66);
    const ValueGrid p = random_distribution_field(4, 4, 3, rng);
    ValueGrid region({4, 4}, 1.0);
    ConstraintSet set;
    set.items.push_back(Constraint::make(0, Constraint::Kind::Upper, 0.5, region));

    ProjectionOptions options;
    options.max_iterations = 1;
    try {
        project_onto_constraints(p, set, options);
        FAIL("expected NotConverged");
    } catch (const NotConverged& e) {
        REQUIRE(e.residuals().size() == 1);
        CHECK(e.residuals()[0] > 0.0);
    }
}

TEST_CASE("projection validates shapes") {
    Rng rng(8);
    const ValueGrid p = random_distribution_field(4, 4, 3, rng);
    ConstraintSet set;
    set.items.push_back(Constraint::make(0, Constraint::Kind::Upper, 1.0, ValueGrid({2, 2}, 1.0)));
    CHECK_THROWS_AS(project_onto_constraints(p, set), ShapeError);

    ConstraintSet bad_structure;
    bad_structure.items.push_back(
        Constraint::make(7, Constraint::Kind::Upper, 1.0, ValueGrid({4, 4}, 1.0)));
    CHECK_THROWS_AS(project_onto_constraints(p, bad_structure), ShapeError);
}

TEST_CASE("cross entropy against a fixed target") {
    ValueGrid scores = ValueGrid::from_data({1, 1, 2}, {0.2, -0.1});
    ValueGrid target = ValueGrid::from_data({1, 1, 2}, {0.7, 0.3});
    ValueGrid grad;
    const double loss = cross_entropy_loss(scores, target, 20.0, &grad);

    const ValueGrid probs = parametric_softmax(scores, 20.0);
    const double expected = -(0.7 * std::log(probs[0]) + 0.3 * std::log(probs[1]));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
    REQUIRE(grad.same_shape(scores));
    // d loss / d f = gamma * (p - t) at a single location.
    CHECK(grad[0] == doctest::Approx(20.0 * (probs[0] - 0.7)).epsilon(1e-12));
    CHECK(grad[1] == doctest::Approx(20.0 * (probs[1] - 0.3)).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy_loss(scores, ValueGrid({1, 1, 3}), 20.0, nullptr),
                    ShapeError);
}

TEST_CASE("constrained loss projects then scores the distance to the target") {
    Rng rng(99);
    ValueGrid scores = rng.normal_grid({8, 8, 8}, 0.05);
    NormalizedPolarMap npc = synthetic_npc(8, 8, 3.0);
    StructureWeakLabels labels = StructureWeakLabels::from_ints({2, 0, 0, 0, 0, 0, 0, 2});
    ConstraintSet constraints =
        constraints_from_labels(labels, npc, default_structure_regions(), BoundConfig{});

    const ConstrainedLossResult result = constrained_loss(scores, constraints, 20.0);
    CHECK(result.loss > 0.0);
    CHECK(std::isfinite(result.loss));
    REQUIRE(result.grad_scores.same_shape(scores));
    REQUIRE(result.target.same_shape(scores));
    for (const Constraint& c : constraints.items) {
        CHECK(constraint_violation(result.target, c) <= 1e-3 * std::max(c.region_size, 1.0));
    }
}
