#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <dermpolar/diagnosis_blocks.hpp>
#include <dermpolar/errors.hpp>
#include <dermpolar/rng.hpp>

#include "test_support.hpp"

using namespace dermpolar;
using namespace dermpolar::testing;

namespace {

/// Polar map built from explicit per-pixel coordinates, laid out 1 x N.
NormalizedPolarMap manual_npc(const std::vector<double>& rho, const std::vector<double>& theta) {
    NormalizedPolarMap npc;
    const int n = static_cast<int>(rho.size());
    npc.rho = ValueGrid::from_data({1, n}, rho);
    npc.theta = ValueGrid::from_data({1, n}, theta);
    npc.affine.m = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    return npc;
}

/// One-hot 1 x N x 1 feature grid.
ValueGrid delta_feature(int n, int hot) {
    ValueGrid f({1, n, 1}, 0.0);
    f.at(0, hot, 0) = 1.0;
    return f;
}

std::array<double, 3> manual_affine(const ValueGrid& weight, const ValueGrid& bias,
                                    const std::vector<double>& input) {
    std::array<double, 3> out{};
    for (int t = 0; t < 3; ++t) {
        double acc = bias[static_cast<std::size_t>(t)];
        for (std::size_t j = 0; j < input.size(); ++j) {
            acc += weight.at(t, static_cast<int>(j)) * input[j];
        }
        out[static_cast<std::size_t>(t)] = acc;
    }
    return out;
}

} // namespace

TEST_CASE("diagnosis class names are fixed") {
    REQUIRE(kDiagnosisClasses == 3);
    CHECK(std::string(kDiagnosisClassNames[0]) == "melanoma");
    CHECK(std::string(kDiagnosisClassNames[1]) == "seborrheic_keratosis");
    CHECK(std::string(kDiagnosisClassNames[2]) == "nevus");
}

TEST_CASE("modulation concatenates features with per-structure products") {
    // 1x1 spatial grid keeps the arithmetic inspectable: C = 2, S = 3.
    const ValueGrid features = ValueGrid::from_data({1, 1, 2}, {2.0, 3.0});
    const ValueGrid structures = ValueGrid::from_data({1, 1, 3}, {0.5, 0.25, 1.0});
    const ValueGrid out = modulation(features, structures);

    REQUIRE(out.rank() == 3);
    CHECK(out.extent(2) == (1 + 3) * 2);
    // Channels 0..C-1 pass the features through.
    CHECK(out.at(0, 0, 0) == 2.0);
    CHECK(out.at(0, 0, 1) == 3.0);
    // Channel C + k*C + j holds feature j scaled by structure k.
    CHECK(out.at(0, 0, 2) == 2.0 * 0.5);
    CHECK(out.at(0, 0, 3) == 3.0 * 0.5);
    CHECK(out.at(0, 0, 4) == 2.0 * 0.25);
    CHECK(out.at(0, 0, 5) == 3.0 * 0.25);
    CHECK(out.at(0, 0, 6) == 2.0);
    CHECK(out.at(0, 0, 7) == 3.0);
}

TEST_CASE("modulation pools finer structure grids by the integer factor") {
    const ValueGrid features = ValueGrid::from_data({1, 1, 1}, {4.0});
    // 2x2 structure grid over a 1x1 feature grid: factor 2 average.
    const ValueGrid structures = ValueGrid::from_data({2, 2, 1}, {0.1, 0.2, 0.3, 0.4});
    const ValueGrid out = modulation(features, structures);
    CHECK(out.at(0, 0, 1) == doctest::Approx(4.0 * 0.25).epsilon(1e-12));
}

TEST_CASE("modulation rejects non-covering structure grids") {
    const ValueGrid features({2, 2, 1}, 1.0);
    CHECK_THROWS_AS(modulation(features, ValueGrid({3, 3, 1}, 1.0)), ShapeError);
    CHECK_THROWS_AS(modulation(features, ValueGrid({4, 2, 1}, 1.0)), ShapeError);
    CHECK_THROWS_AS(modulation(features, ValueGrid({2, 2}, 1.0)), InvalidShape);
    CHECK_THROWS_AS(modulation(ValueGrid({2, 2}, 1.0), ValueGrid({2, 2, 1}, 1.0)),
                    InvalidShape);
}

TEST_CASE("modulation backward matches the product rule on a hand case") {
    const ValueGrid features = ValueGrid::from_data({1, 1, 2}, {2.0, 3.0});
    const ValueGrid structures = ValueGrid::from_data({1, 1, 1}, {0.5});
    const ValueGrid grad_out = ValueGrid::from_data({1, 1, 4}, {1.0, 1.0, 1.0, 1.0});
    const auto [gf, gs] = modulation_backward(features, structures, grad_out);

    // d out_j / d f_j = 1 along the passthrough plus pooled_k per product.
    CHECK(gf.at(0, 0, 0) == doctest::Approx(1.0 + 0.5).epsilon(1e-12));
    CHECK(gf.at(0, 0, 1) == doctest::Approx(1.0 + 0.5).epsilon(1e-12));
    // d out_{C+j} / d s_0 = f_j, summed over j.
    CHECK(gs.at(0, 0, 0) == doctest::Approx(2.0 + 3.0).epsilon(1e-12));

    CHECK_THROWS_AS(modulation_backward(features, structures, ValueGrid({1, 1, 3}, 0.0)),
                    ShapeError);
}

TEST_CASE("modulation backward spreads pooled gradient over the fine grid") {
    const ValueGrid features = ValueGrid::from_data({1, 1, 1}, {4.0});
    const ValueGrid structures = ValueGrid::from_data({2, 2, 1}, {0.1, 0.2, 0.3, 0.4});
    const ValueGrid grad_out = ValueGrid::from_data({1, 1, 2}, {0.0, 1.0});
    const auto [gf, gs] = modulation_backward(features, structures, grad_out);
    // Average pooling routes f_0 / 4 to every contributing structure cell.
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            CHECK(gs.at(y, x, 0) == doctest::Approx(4.0 / 4.0).epsilon(1e-12));
        }
    }
    CHECK(gf.at(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("equal-area ring boundaries follow sqrt(k / R)") {
    const std::vector<double> b = PolarPoolSpec::equal_area_boundaries(4);
    REQUIRE(b.size() == 4);
    CHECK(b[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(b[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(b[2] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));
    CHECK(b[3] == 1.0);
}

TEST_CASE("polar pool spec validation") {
    PolarPoolSpec spec;
    CHECK_NOTHROW(spec.validate());

    PolarPoolSpec bad = spec;
    bad.rings = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidShape);

    bad = spec;
    bad.angles = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidShape);

    bad = spec;
    bad.overlap_frac = -0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.overlap_frac = 0.6;
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.overlap_frac = 0.5;
    CHECK_NOTHROW(bad.validate());

    bad = spec;
    bad.rings = 2;
    bad.ring_boundaries = {0.5};
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.ring_boundaries = {0.5, 0.5};
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.ring_boundaries = {0.8, 0.5};
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.ring_boundaries = {0.5, 0.9};
    CHECK_THROWS_AS(bad.validate(), InvalidShape);
    bad.ring_boundaries = {0.5, 1.0};
    CHECK_NOTHROW(bad.validate());
}

TEST_CASE("zero-overlap sectors partition the unit disk") {
    // Every rho <= 1 pixel must land in exactly one sector; rho > 1 in
    // none. Probed one pixel at a time with a one-hot feature in max
    // mode, where a sector reads 1 exactly when it contains the pixel.
    const int side = 21;
    const NormalizedPolarMap npc = synthetic_npc(side, side, 8.0);
    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 4;
    spec.mode = PolarPoolSpec::Mode::Max;

    long inside = 0;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            ValueGrid f({side, side, 1}, 0.0);
            f.at(y, x, 0) = 1.0;
            const ValueGrid pooled = polar_pool(f, npc, spec);
            int holders = 0;
            for (std::size_t i = 0; i < pooled.size(); ++i) {
                if (pooled[i] == 1.0) ++holders;
            }
            const bool in_disk = npc.rho.at(y, x) <= 1.0;
            CHECK(holders == (in_disk ? 1 : 0));
            if (in_disk) ++inside;
        }
    }
    REQUIRE(inside > 100); // the probe covered a real disk
}

TEST_CASE("single-sector average equals the masked mean") {
    const int side = 33;
    const NormalizedPolarMap npc = synthetic_npc(side, side, 12.0);
    Rng rng(404);
    const ValueGrid f = rng.normal_grid({side, side, 2});

    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 1;
    const ValueGrid pooled = polar_pool(f, npc, spec);

    for (int j = 0; j < 2; ++j) {
        double total = 0.0;
        long count = 0;
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                if (npc.rho.at(y, x) > 1.0) continue;
                total += f.at(y, x, j);
                ++count;
            }
        }
        REQUIRE(count > 0);
        CHECK(std::abs(pooled.at(0, 0, j) - total / static_cast<double>(count)) < 1e-12);
    }
}

TEST_CASE("single-sector max equals the masked maximum") {
    const int side = 25;
    const NormalizedPolarMap npc = synthetic_npc(side, side, 9.0);
    Rng rng(405);
    const ValueGrid f = rng.normal_grid({side, side, 1});

    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 1;
    spec.mode = PolarPoolSpec::Mode::Max;
    const ValueGrid pooled = polar_pool(f, npc, spec);

    double best = -1e300;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            if (npc.rho.at(y, x) <= 1.0) best = std::max(best, f.at(y, x, 0));
        }
    }
    CHECK(pooled.at(0, 0, 0) == best);
}

TEST_CASE("polar pooling on hand-placed pixels") {
    // Three pixels at rho 0.5, one per quadrant sector; sector 3 empty.
    const NormalizedPolarMap npc = manual_npc({0.5, 0.5, 0.5}, {0.05, 3.0, 4.0});
    const ValueGrid f = ValueGrid::from_data({1, 3, 1}, {1.0, 0.0, 0.0});
    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 4;

    SUBCASE("zero overlap assigns one sector per pixel") {
        PolarPoolStats stats;
        const ValueGrid pooled = polar_pool(f, npc, spec, &stats);
        CHECK(pooled.at(0, 0, 0) == 1.0);
        CHECK(pooled.at(0, 1, 0) == 0.0);
        CHECK(pooled.at(0, 2, 0) == 0.0);
        CHECK(pooled.at(0, 3, 0) == 0.0);
        CHECK(stats.empty_sectors == 1);
    }

    SUBCASE("overlap widens sectors across the wrap") {
        // At overlap 0.25 sector 3 stretches to [1.375 pi, 2.125 pi), so
        // the pixel at theta = 0.05 joins it from across the 2 pi seam.
        spec.overlap_frac = 0.25;
        PolarPoolStats stats;
        const ValueGrid pooled = polar_pool(f, npc, spec, &stats);
        CHECK(pooled.at(0, 0, 0) == 1.0);
        CHECK(pooled.at(0, 3, 0) == 1.0);
        CHECK(pooled.at(0, 1, 0) == 0.0);
        CHECK(stats.empty_sectors == 0);
    }
}

TEST_CASE("ring membership is half-open with an inclusive outer edge") {
    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 1;
    spec.mode = PolarPoolSpec::Mode::Max;
    const double split = std::sqrt(0.5);

    // Pixels at the split radius, just inside, at 1, and beyond 1.
    const NormalizedPolarMap npc =
        manual_npc({split, split - 1e-9, 1.0, 1.0 + 1e-9}, {0.1, 0.2, 0.3, 0.4});

    for (int hot = 0; hot < 4; ++hot) {
        const ValueGrid pooled = polar_pool(delta_feature(4, hot), npc, spec);
        const bool inner = pooled.at(0, 0, 0) == 1.0;
        const bool outer = pooled.at(1, 0, 0) == 1.0;
        switch (hot) {
        case 0: // boundary value opens the outer ring
            CHECK(!inner);
            CHECK(outer);
            break;
        case 1:
            CHECK(inner);
            CHECK(!outer);
            break;
        case 2: // rho exactly 1 stays in the outer ring
            CHECK(!inner);
            CHECK(outer);
            break;
        case 3: // rho beyond 1 belongs nowhere
            CHECK(!inner);
            CHECK(!outer);
            break;
        }
    }
}

TEST_CASE("explicit ring boundaries replace the equal-area default") {
    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 1;
    spec.mode = PolarPoolSpec::Mode::Max;
    spec.ring_boundaries = {0.25, 1.0};

    const NormalizedPolarMap npc = manual_npc({0.2, 0.3}, {0.1, 0.2});
    ValueGrid pooled = polar_pool(delta_feature(2, 0), npc, spec);
    CHECK(pooled.at(0, 0, 0) == 1.0);
    CHECK(pooled.at(1, 0, 0) == 0.0);
    pooled = polar_pool(delta_feature(2, 1), npc, spec);
    CHECK(pooled.at(0, 0, 0) == 0.0);
    CHECK(pooled.at(1, 0, 0) == 1.0);
}

TEST_CASE("empty sectors pool to zero and are counted") {
    // All mass in one quadrant leaves three sectors empty.
    const NormalizedPolarMap npc = manual_npc({0.4, 0.6}, {0.3, 0.5});
    const ValueGrid f = ValueGrid::from_data({1, 2, 1}, {-2.0, -4.0});
    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 4;
    spec.mode = PolarPoolSpec::Mode::Max;

    PolarPoolStats stats;
    const ValueGrid pooled = polar_pool(f, npc, spec, &stats);
    CHECK(stats.empty_sectors == 3);
    CHECK(pooled.at(0, 0, 0) == -2.0);
    CHECK(pooled.at(0, 1, 0) == 0.0);
    CHECK(pooled.at(0, 2, 0) == 0.0);
    CHECK(pooled.at(0, 3, 0) == 0.0);
}

TEST_CASE("polar pooling validates its inputs") {
    const NormalizedPolarMap npc = synthetic_npc(8, 8, 3.0);
    PolarPoolSpec spec;
    CHECK_THROWS_AS(polar_pool(ValueGrid({8, 8}, 0.0), npc, spec), InvalidShape);
    CHECK_THROWS_AS(polar_pool(ValueGrid({8, 9, 1}, 0.0), npc, spec), ShapeError);
    CHECK_THROWS_AS(
        polar_pool_backward(ValueGrid({8, 8, 1}, 0.0), npc, spec, ValueGrid({3, 5, 1}, 0.0)),
        ShapeError);
}

TEST_CASE("average pooling backward spreads gradient over members") {
    const NormalizedPolarMap npc = manual_npc({0.3, 0.5, 0.7}, {0.1, 0.2, 0.3});
    const ValueGrid f = ValueGrid::from_data({1, 3, 1}, {1.0, 2.0, 3.0});
    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 1;

    const ValueGrid grad = polar_pool_backward(f, npc, spec, ValueGrid({1, 1, 1}, 3.0));
    for (int x = 0; x < 3; ++x) {
        CHECK(grad.at(0, x, 0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("max pooling backward routes gradient to the argmax") {
    const NormalizedPolarMap npc = manual_npc({0.3, 0.5, 0.7}, {0.1, 0.2, 0.3});
    const ValueGrid f = ValueGrid::from_data({1, 3, 1}, {1.0, 5.0, 3.0});
    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 1;
    spec.mode = PolarPoolSpec::Mode::Max;

    const ValueGrid grad = polar_pool_backward(f, npc, spec, ValueGrid({1, 1, 1}, 2.0));
    CHECK(grad.at(0, 0, 0) == 0.0);
    CHECK(grad.at(0, 1, 0) == 2.0);
    CHECK(grad.at(0, 2, 0) == 0.0);
}

TEST_CASE("asymmetry folds sectors across each axis") {
    // A = 4: axis 0 passes through sectors 0 and 2, pairing (1, 3);
    // axis 1 passes through 1 and 3, pairing (0, 2).
    const ValueGrid polar = ValueGrid::from_data({1, 4, 1}, {1.0, 5.0, 2.0, 9.0});
    const ValueGrid out = asymmetry(polar);
    REQUIRE(out.rank() == 2);
    REQUIRE(out.extent(0) == 2);
    REQUIRE(out.extent(1) == 1);
    CHECK(out.at(0, 0) == doctest::Approx(std::abs(5.0 - 9.0)).epsilon(1e-12));
    CHECK(out.at(1, 0) == doctest::Approx(std::abs(1.0 - 2.0)).epsilon(1e-12));
}

TEST_CASE("asymmetry accumulates over rings and channels separately") {
    // Two rings, A = 4, C = 2. Ring contributions add; channels stay apart.
    ValueGrid polar({2, 4, 2}, 0.0);
    for (int r = 0; r < 2; ++r) {
        for (int a = 0; a < 4; ++a) {
            polar.at(r, a, 0) = static_cast<double>(a + 4 * r);
            polar.at(r, a, 1) = 10.0 * a;
        }
    }
    const ValueGrid out = asymmetry(polar);
    // Channel 0, axis 0: |1-3| + |5-7| = 4; axis 1: |0-2| + |4-6| = 4.
    CHECK(out.at(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(out.at(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
    // Channel 1, both axes: 2 * |10 - 30| and 2 * |0 - 20|.
    CHECK(out.at(0, 1) == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(out.at(1, 1) == doctest::Approx(40.0).epsilon(1e-12));
}

TEST_CASE("mirror-symmetric grids have zero asymmetry on that axis") {
    // A = 6, axis 0 pairs (1, 5) and (2, 4).
    const ValueGrid polar =
        ValueGrid::from_data({1, 6, 1}, {3.0, 1.5, 0.25, 7.0, 0.25, 1.5});
    const ValueGrid out = asymmetry(polar);
    CHECK(out.at(0, 0) == 0.0);
    // Axis 1 pairs (0, 2), (3, 5): |3 - 0.25| + |7 - 1.5| != 0.
    CHECK(out.at(1, 0) > 0.0);
}

TEST_CASE("asymmetry rejects odd sector counts") {
    CHECK_THROWS_AS(asymmetry(ValueGrid({1, 5, 1}, 0.0)), InvalidShape);
    CHECK_THROWS_AS(asymmetry(ValueGrid({4, 2}, 0.0)), InvalidShape);
}

TEST_CASE("asymmetry backward routes signs and mutes ties") {
    const ValueGrid polar = ValueGrid::from_data({1, 4, 1}, {1.0, 5.0, 2.0, 9.0});
    const ValueGrid grad_out = ValueGrid::from_data({2, 1}, {1.0, 2.0});
    const ValueGrid grad = asymmetry_backward(polar, grad_out);
    // Axis 0 pair (1, 3): d = -4, so -1 flows to sector 1 and +1 to 3.
    CHECK(grad.at(0, 1, 0) == -1.0);
    CHECK(grad.at(0, 3, 0) == 1.0);
    // Axis 1 pair (0, 2): d = -1, scaled by the axis gradient 2.
    CHECK(grad.at(0, 0, 0) == -2.0);
    CHECK(grad.at(0, 2, 0) == 2.0);

    const ValueGrid tied = ValueGrid::from_data({1, 4, 1}, {3.0, 3.0, 3.0, 3.0});
    const ValueGrid tied_grad = asymmetry_backward(tied, grad_out);
    for (std::size_t i = 0; i < tied_grad.size(); ++i) CHECK(tied_grad[i] == 0.0);

    CHECK_THROWS_AS(asymmetry_backward(polar, ValueGrid({3, 1}, 0.0)), ShapeError);
}

TEST_CASE("seeded head parameters have the documented shapes") {
    PolarPoolSpec spec;
    spec.rings = 3;
    spec.angles = 6;
    Rng rng(77);
    const HeadParams p = HeadParams::seeded_init(16, spec, rng);

    CHECK(p.fc1_weight.extent(0) == 3);
    CHECK(p.fc1_weight.extent(1) == 16);
    CHECK(p.fc2_weight.extent(1) == 3 * 6 * 16);
    CHECK(p.fc3_weight.extent(1) == 3 * 16);
    for (const ValueGrid* bias : {&p.fc1_bias, &p.fc2_bias, &p.fc3_bias}) {
        REQUIRE(bias->rank() == 1);
        REQUIRE(bias->extent(0) == 3);
        for (std::size_t i = 0; i < bias->size(); ++i) CHECK((*bias)[i] == 0.0);
    }
    CHECK(p.sum_weights[0] == 1.0);
    CHECK(p.sum_weights[1] == 1.0);
    CHECK(p.sum_weights[2] == 1.0);
    CHECK_NOTHROW(p.check_shapes(16, spec));

    Rng rng2(77);
    const HeadParams q = HeadParams::seeded_init(16, spec, rng2);
    CHECK((p.fc2_weight - q.fc2_weight).max_abs() == 0.0);
}

TEST_CASE("head shape checks reject mismatched arms") {
    PolarPoolSpec spec;
    Rng rng(78);
    HeadParams p = HeadParams::seeded_init(4, spec, rng);
    CHECK_THROWS_AS(p.check_shapes(5, spec), ShapeError);

    PolarPoolSpec wider = spec;
    wider.angles = 8;
    CHECK_THROWS_AS(p.check_shapes(4, wider), ShapeError);

    p.fc1_bias = ValueGrid({4}, 0.0);
    CHECK_THROWS_AS(p.check_shapes(4, spec), ShapeError);
}

TEST_CASE("head forward composes the three arms") {
    const int side = 16;
    Rng rng(505);
    const ValueGrid features = rng.normal_grid({side, side, 2});
    const ValueGrid structures = random_distribution_field(side * 2, side * 2, 3, rng);
    const NormalizedPolarMap npc = synthetic_npc(side, side, 6.0);

    PolarPoolSpec spec;
    spec.rings = 2;
    spec.angles = 4;
    const int m_channels = (1 + 3) * 2;
    Rng prng(506);
    const HeadParams params = HeadParams::seeded_init(m_channels, spec, prng);

    const std::array<double, 3> scores = head_forward(features, structures, npc, params, spec);

    // Reference composition from the independently tested pieces.
    const ValueGrid m = modulation(features, structures);
    std::vector<double> pooled(static_cast<std::size_t>(m_channels), 0.0);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int j = 0; j < m_channels; ++j) {
                pooled[static_cast<std::size_t>(j)] += m.at(y, x, j);
            }
        }
    }
    for (double& v : pooled) v /= static_cast<double>(side) * side;
    const ValueGrid polar = polar_pool(m, npc, spec);
    const ValueGrid asym = asymmetry(polar);

    const std::vector<double> polar_flat(polar.data(), polar.data() + polar.size());
    const std::vector<double> asym_flat(asym.data(), asym.data() + asym.size());
    const auto s1 = manual_affine(params.fc1_weight, params.fc1_bias, pooled);
    const auto s2 = manual_affine(params.fc2_weight, params.fc2_bias, polar_flat);
    const auto s3 = manual_affine(params.fc3_weight, params.fc3_bias, asym_flat);
    for (int t = 0; t < 3; ++t) {
        const double expected = params.sum_weights[0] * s1[static_cast<std::size_t>(t)] +
                                params.sum_weights[1] * s2[static_cast<std::size_t>(t)] +
                                params.sum_weights[2] * s3[static_cast<std::size_t>(t)];
        CHECK(scores[static_cast<std::size_t>(t)] ==
              doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("sum weights scale the arm contributions") {
    const int side = 8;
    Rng rng(507);
    const ValueGrid features = rng.normal_grid({side, side, 1});
    const ValueGrid structures = random_distribution_field(side, side, 2, rng);
    const NormalizedPolarMap npc = synthetic_npc(side, side, 3.0);
    PolarPoolSpec spec;
    spec.rings = 1;
    spec.angles = 2;

    Rng prng(508);
    HeadParams params = HeadParams::seeded_init(3, spec, prng);
    const std::array<double, 3> base = head_forward(features, structures, npc, params, spec);

    // Doubling every arm weight doubles the scores (biases are zero).
    params.sum_weights = {2.0, 2.0, 2.0};
    const std::array<double, 3> twice = head_forward(features, structures, npc, params, spec);
    for (int t = 0; t < 3; ++t) {
        CHECK(twice[static_cast<std::size_t>(t)] ==
              doctest::Approx(2.0 * base[static_cast<std::size_t>(t)]).epsilon(1e-12));
    }
}

TEST_CASE("head forward rejects odd sector counts") {
    PolarPoolSpec spec;
    spec.angles = 5;
    Rng rng(509);
    const HeadParams params = HeadParams::seeded_init(2, spec, rng);
    const NormalizedPolarMap npc = synthetic_npc(4, 4, 2.0);
    CHECK_THROWS_AS(head_forward(ValueGrid({4, 4, 1}, 0.5), ValueGrid({4, 4, 1}, 0.5), npc,
                                 params, spec),
                    InvalidShape);
}

TEST_CASE("softmax3 basics") {
    const std::array<double, 3> uniform = softmax3({0.0, 0.0, 0.0});
    for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // Shift invariance and normalization.
    const std::array<double, 3> a = softmax3({0.3, -1.2, 2.0});
    const std::array<double, 3> b = softmax3({10.3, 8.8, 12.0});
    double total = 0.0;
    for (int t = 0; t < 3; ++t) {
        CHECK(a[static_cast<std::size_t>(t)] ==
              doctest::Approx(b[static_cast<std::size_t>(t)]).epsilon(1e-12));
        total += a[static_cast<std::size_t>(t)];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // Extreme scores stay finite.
    const std::array<double, 3> extreme = softmax3({1000.0, 0.0, -1000.0});
    CHECK(std::isfinite(extreme[0]));
    CHECK(extreme[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(extreme[2] == 0.0);
}

TEST_CASE("view fusion multiplies and renormalizes") {
    Rng rng(606);
    std::vector<std::array<double, 3>> views;
    for (int v = 0; v < 5; ++v) {
        std::array<double, 3> p{};
        double z = 0.0;
        for (int t = 0; t < 3; ++t) {
            p[static_cast<std::size_t>(t)] = std::exp(rng.normal());
            z += p[static_cast<std::size_t>(t)];
        }
        for (double& x : p) x /= z;
        views.push_back(p);
    }

    std::array<double, 3> product{1.0, 1.0, 1.0};
    for (const auto& p : views) {
        for (int t = 0; t < 3; ++t) {
            product[static_cast<std::size_t>(t)] *= p[static_cast<std::size_t>(t)];
        }
    }
    const double z = product[0] + product[1] + product[2];
    const std::array<double, 3> fused = fuse_views(views);
    for (int t = 0; t < 3; ++t) {
        CHECK(std::abs(fused[static_cast<std::size_t>(t)] -
                       product[static_cast<std::size_t>(t)] / z) < 1e-12);
    }

    // View order cannot matter.
    std::vector<std::array<double, 3>> shuffled = {views[3], views[0], views[4], views[1],
                                                   views[2]};
    const std::array<double, 3> refused = fuse_views(shuffled);
    for (int t = 0; t < 3; ++t) {
        CHECK(std::abs(fused[static_cast<std::size_t>(t)] -
                       refused[static_cast<std::size_t>(t)]) < 1e-12);
    }
}

TEST_CASE("fusing a single view returns it unchanged") {
    const std::array<double, 3> p = {0.2, 0.5, 0.3};
    const std::array<double, 3> fused = fuse_views({p});
    for (int t = 0; t < 3; ++t) {
        CHECK(std::abs(fused[static_cast<std::size_t>(t)] -
                       p[static_cast<std::size_t>(t)]) < 1e-12);
    }
}

TEST_CASE("fusion of two confident views sharpens the distribution") {
    const std::array<double, 3> p = {0.6, 0.3, 0.1};
    const std::array<double, 3> fused = fuse_views({p, p});
    CHECK(fused[0] == doctest::Approx(0.78261).epsilon(1e-5));
    CHECK(fused[1] == doctest::Approx(0.19565).epsilon(1e-5));
    CHECK(fused[2] == doctest::Approx(0.02174).epsilon(1e-5));
}

TEST_CASE("fusion tolerates zeros that do not wipe every class") {
    const std::array<double, 3> p = {0.5, 0.5, 0.0};
    const std::array<double, 3> fused = fuse_views({p, p});
    CHECK(fused[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fused[2] == 0.0);
}

TEST_CASE("fusion fails when the views share no support") {
    const std::vector<std::array<double, 3>> disjoint = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    CHECK_THROWS_AS(fuse_views(disjoint), DegenerateFusion);
    CHECK_THROWS_AS(fuse_views({}), InvalidShape);
}
