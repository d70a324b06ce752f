#include "dermpolar/diagnosis_blocks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dermpolar/errors.hpp"

namespace dermpolar {

const std::array<const char*, kDiagnosisClasses> kDiagnosisClassNames = {
    "melanoma",
    "seborrheic_keratosis",
    "nevus",
};

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Spatial membership of one pooling sector, with the widened interval
/// bounds resolved. Rho beyond 1 never belongs to any ring.
struct SectorGrid {
    int rings = 0;
    int angles = 0;
    std::vector<double> ring_lo;
    std::vector<double> ring_hi; // exclusive except for the outer ring
    double angle_lo0 = 0.0;      // widened start of sector 0
    double angle_width = 0.0;    // widened width, shared by all sectors
    double angle_step = 0.0;

    bool in_ring(int r, double rho) const {
        if (rho > 1.0) {
            return false;
        }
        if (rho < ring_lo[static_cast<std::size_t>(r)]) {
            return false;
        }
        if (r == rings - 1) {
            return true; // outer ring keeps rho == 1
        }
        return rho < ring_hi[static_cast<std::size_t>(r)];
    }

    bool in_angle(int a, double theta) const {
        double lo = angle_lo0 + angle_step * a;
        double d = std::fmod(theta - lo, kTwoPi);
        if (d < 0.0) {
            d += kTwoPi;
        }
        return d < angle_width;
    }
};

SectorGrid build_sectors(const PolarPoolSpec& spec) {
    SectorGrid s;
    s.rings = spec.rings;
    s.angles = spec.angles;
    const std::vector<double> bounds = spec.effective_boundaries();
    s.ring_lo.resize(static_cast<std::size_t>(spec.rings));
    s.ring_hi.resize(static_cast<std::size_t>(spec.rings));
    for (int r = 0; r < spec.rings; ++r) {
        double lo = r == 0 ? 0.0 : bounds[static_cast<std::size_t>(r - 1)];
        double hi = bounds[static_cast<std::size_t>(r)];
        double pad = spec.overlap_frac * (hi - lo);
        s.ring_lo[static_cast<std::size_t>(r)] = std::max(0.0, lo - pad);
        s.ring_hi[static_cast<std::size_t>(r)] = hi + pad;
    }
    s.angle_step = kTwoPi / spec.angles;
    s.angle_lo0 = -spec.overlap_frac * s.angle_step;
    s.angle_width = s.angle_step * (1.0 + 2.0 * spec.overlap_frac);
    return s;
}

void check_pool_inputs(const ValueGrid& features, const NormalizedPolarMap& npc) {
    if (features.rank() != 3) {
        throw InvalidShape("polar_pool expects height x width x channels features");
    }
    if (npc.rho.extent(0) != features.extent(0) || npc.rho.extent(1) != features.extent(1)) {
        throw ShapeError("polar map does not match the feature resolution");
    }
}

/// Average-pools `structures` down to the (h, w) feature resolution. The
/// structure grid must cover the feature grid by an integer factor.
ValueGrid pool_structures(const ValueGrid& structures, int h, int w) {
    const int sh = structures.extent(0);
    const int sw = structures.extent(1);
    const int s = structures.extent(2);
    if (sh % h != 0 || sw % w != 0 || sh / h != sw / w) {
        throw ShapeError("structure maps must cover the features by one integer factor");
    }
    const int f = sh / h;
    const double inv = 1.0 / (static_cast<double>(f) * f);
    ValueGrid pooled({h, w, s}, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < s; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy < f; ++dy) {
                    for (int dx = 0; dx < f; ++dx) {
                        acc += structures.at(y * f + dy, x * f + dx, c);
                    }
                }
                pooled.at(y, x, c) = acc * inv;
            }
        }
    }
    return pooled;
}

/// Fold axis j maps sector a to (2j - a) mod A. Unordered pairs with
/// a1 < a2; the two sectors on the axis mirror onto themselves and
/// contribute nothing.
std::vector<std::pair<int, int>> fold_pairs(int angles, int axis) {
    std::vector<std::pair<int, int>> pairs;
    for (int a1 = 0; a1 < angles; ++a1) {
        int a2 = ((2 * axis - a1) % angles + angles) % angles;
        if (a1 < a2) {
            pairs.emplace_back(a1, a2);
        }
    }
    return pairs;
}

std::array<double, 3> affine3(const ValueGrid& weight, const ValueGrid& bias,
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

/// weight^T applied to a 3-vector of score gradients.
std::vector<double> affine3_input_grad(const ValueGrid& weight,
                                       const std::array<double, 3>& grad) {
    const int cols = weight.extent(1);
    std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
    for (int t = 0; t < 3; ++t) {
        for (int j = 0; j < cols; ++j) {
            out[static_cast<std::size_t>(j)] += weight.at(t, j) * grad[static_cast<std::size_t>(t)];
        }
    }
    return out;
}

ValueGrid seeded_fc(int cols, Rng& rng) {
    ValueGrid w({3, cols}, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = rng.normal() * scale;
    }
    return w;
}

void require_fc(const ValueGrid& weight, const ValueGrid& bias, int cols, const char* arm) {
    if (weight.rank() != 2 || weight.extent(0) != 3 || weight.extent(1) != cols) {
        throw ShapeError(std::string(arm) + " weight must be 3 x " + std::to_string(cols));
    }
    if (bias.rank() != 1 || bias.extent(0) != 3) {
        throw ShapeError(std::string(arm) + " bias must have 3 entries");
    }
}

} // namespace

std::vector<double> PolarPoolSpec::equal_area_boundaries(int rings) {
    std::vector<double> bounds(static_cast<std::size_t>(rings));
    for (int k = 1; k <= rings; ++k) {
        bounds[static_cast<std::size_t>(k - 1)] =
            std::sqrt(static_cast<double>(k) / static_cast<double>(rings));
    }
    bounds.back() = 1.0;
    return bounds;
}

std::vector<double> PolarPoolSpec::effective_boundaries() const {
    return ring_boundaries.empty() ? equal_area_boundaries(rings) : ring_boundaries;
}

void PolarPoolSpec::validate() const {
    if (rings < 1) {
        throw InvalidShape("polar pooling needs at least one ring");
    }
    if (angles < 1) {
        throw InvalidShape("polar pooling needs at least one angular sector");
    }
    if (!(overlap_frac >= 0.0 && overlap_frac <= 0.5)) {
        throw InvalidShape("sector overlap fraction must lie in [0, 0.5]");
    }
    if (!ring_boundaries.empty()) {
        if (static_cast<int>(ring_boundaries.size()) != rings) {
            throw InvalidShape("ring boundary list must hold one outer radius per ring");
        }
        double prev = 0.0;
        for (double b : ring_boundaries) {
            if (!(b > prev)) {
                throw InvalidShape("ring boundaries must be strictly increasing and positive");
            }
            prev = b;
        }
        if (std::abs(ring_boundaries.back() - 1.0) > 1e-9) {
            throw InvalidShape("the outer ring boundary must be 1");
        }
    }
}

ValueGrid modulation(const ValueGrid& features, const ValueGrid& structures) {
    if (features.rank() != 3 || structures.rank() != 3) {
        throw InvalidShape("modulation expects height x width x channels grids");
    }
    const int h = features.extent(0);
    const int w = features.extent(1);
    const int c = features.extent(2);
    const int s = structures.extent(2);
    const ValueGrid pooled = pool_structures(structures, h, w);

    ValueGrid out({h, w, (1 + s) * c}, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < c; ++j) {
                const double v = features.at(y, x, j);
                out.at(y, x, j) = v;
                for (int k = 0; k < s; ++k) {
                    out.at(y, x, c + k * c + j) = v * pooled.at(y, x, k);
                }
            }
        }
    }
    return out;
}

std::pair<ValueGrid, ValueGrid> modulation_backward(const ValueGrid& features,
                                                    const ValueGrid& structures,
                                                    const ValueGrid& grad_out) {
    const int h = features.extent(0);
    const int w = features.extent(1);
    const int c = features.extent(2);
    const int s = structures.extent(2);
    if (grad_out.rank() != 3 || grad_out.extent(0) != h || grad_out.extent(1) != w ||
        grad_out.extent(2) != (1 + s) * c) {
        throw ShapeError("modulation gradient has the wrong shape");
    }
    const ValueGrid pooled = pool_structures(structures, h, w);
    const int f = structures.extent(0) / h;
    const double inv = 1.0 / (static_cast<double>(f) * f);

    ValueGrid grad_features({h, w, c}, 0.0);
    ValueGrid grad_pooled({h, w, s}, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < c; ++j) {
                double acc = grad_out.at(y, x, j);
                for (int k = 0; k < s; ++k) {
                    const double g = grad_out.at(y, x, c + k * c + j);
                    acc += g * pooled.at(y, x, k);
                    grad_pooled.at(y, x, k) += g * features.at(y, x, j);
                }
                grad_features.at(y, x, j) = acc;
            }
        }
    }

    ValueGrid grad_structures({structures.extent(0), structures.extent(1), s}, 0.0);
    for (int y = 0; y < structures.extent(0); ++y) {
        for (int x = 0; x < structures.extent(1); ++x) {
            for (int k = 0; k < s; ++k) {
                grad_structures.at(y, x, k) = grad_pooled.at(y / f, x / f, k) * inv;
            }
        }
    }
    return {std::move(grad_features), std::move(grad_structures)};
}

ValueGrid polar_pool(const ValueGrid& features, const NormalizedPolarMap& npc,
                     const PolarPoolSpec& spec, PolarPoolStats* stats) {
    spec.validate();
    check_pool_inputs(features, npc);
    const SectorGrid sectors = build_sectors(spec);
    const int h = features.extent(0);
    const int w = features.extent(1);
    const int c = features.extent(2);

    ValueGrid out({spec.rings, spec.angles, c}, 0.0);
    if (stats != nullptr) {
        stats->empty_sectors = 0;
    }
    std::vector<double> best(static_cast<std::size_t>(c));
    for (int r = 0; r < spec.rings; ++r) {
        for (int a = 0; a < spec.angles; ++a) {
            long count = 0;
            std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!sectors.in_ring(r, npc.rho.at(y, x)) ||
                        !sectors.in_angle(a, npc.theta.at(y, x))) {
                        continue;
                    }
                    ++count;
                    for (int j = 0; j < c; ++j) {
                        const double v = features.at(y, x, j);
                        if (spec.mode == PolarPoolSpec::Mode::Average) {
                            out.at(r, a, j) += v;
                        } else if (v > best[static_cast<std::size_t>(j)]) {
                            best[static_cast<std::size_t>(j)] = v;
                        }
                    }
                }
            }
            if (count == 0) {
                if (stats != nullptr) {
                    ++stats->empty_sectors;
                }
                continue; // sector stays 0
            }
            for (int j = 0; j < c; ++j) {
                if (spec.mode == PolarPoolSpec::Mode::Average) {
                    out.at(r, a, j) /= static_cast<double>(count);
                } else {
                    out.at(r, a, j) = best[static_cast<std::size_t>(j)];
                }
            }
        }
    }
    return out;
}

ValueGrid polar_pool_backward(const ValueGrid& features, const NormalizedPolarMap& npc,
                              const PolarPoolSpec& spec, const ValueGrid& grad_out) {
    spec.validate();
    check_pool_inputs(features, npc);
    if (grad_out.rank() != 3 || grad_out.extent(0) != spec.rings ||
        grad_out.extent(1) != spec.angles || grad_out.extent(2) != features.extent(2)) {
        throw ShapeError("polar pooling gradient has the wrong shape");
    }
    const SectorGrid sectors = build_sectors(spec);
    const int h = features.extent(0);
    const int w = features.extent(1);
    const int c = features.extent(2);

    ValueGrid grad({h, w, c}, 0.0);
    std::vector<double> best(static_cast<std::size_t>(c));
    std::vector<std::size_t> argbest(static_cast<std::size_t>(c));
    for (int r = 0; r < spec.rings; ++r) {
        for (int a = 0; a < spec.angles; ++a) {
            long count = 0;
            std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!sectors.in_ring(r, npc.rho.at(y, x)) ||
                        !sectors.in_angle(a, npc.theta.at(y, x))) {
                        continue;
                    }
                    ++count;
                    if (spec.mode == PolarPoolSpec::Mode::Average) {
                        continue; // membership count is all this pass needs
                    }
                    for (int j = 0; j < c; ++j) {
                        const double v = features.at(y, x, j);
                        if (v > best[static_cast<std::size_t>(j)]) {
                            best[static_cast<std::size_t>(j)] = v;
                            argbest[static_cast<std::size_t>(j)] = features.flat(y, x, j);
                        }
                    }
                }
            }
            if (count == 0) {
                continue;
            }
            if (spec.mode == PolarPoolSpec::Mode::Max) {
                for (int j = 0; j < c; ++j) {
                    grad[argbest[static_cast<std::size_t>(j)]] += grad_out.at(r, a, j);
                }
                continue;
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!sectors.in_ring(r, npc.rho.at(y, x)) ||
                        !sectors.in_angle(a, npc.theta.at(y, x))) {
                        continue;
                    }
                    for (int j = 0; j < c; ++j) {
                        grad.at(y, x, j) += grad_out.at(r, a, j) * inv;
                    }
                }
            }
        }
    }
    return grad;
}

ValueGrid asymmetry(const ValueGrid& polar) {
    if (polar.rank() != 3) {
        throw InvalidShape("asymmetry expects a rings x angles x channels grid");
    }
    const int rings = polar.extent(0);
    const int angles = polar.extent(1);
    const int c = polar.extent(2);
    if (angles % 2 != 0) {
        throw InvalidShape("asymmetry needs an even number of angular sectors");
    }
    ValueGrid out({angles / 2, c}, 0.0);
    for (int axis = 0; axis < angles / 2; ++axis) {
        for (const auto& [a1, a2] : fold_pairs(angles, axis)) {
            for (int r = 0; r < rings; ++r) {
                for (int j = 0; j < c; ++j) {
                    out.at(axis, j) += std::abs(polar.at(r, a1, j) - polar.at(r, a2, j));
                }
            }
        }
    }
    return out;
}

ValueGrid asymmetry_backward(const ValueGrid& polar, const ValueGrid& grad_out) {
    const int rings = polar.extent(0);
    const int angles = polar.extent(1);
    const int c = polar.extent(2);
    if (grad_out.rank() != 2 || grad_out.extent(0) != angles / 2 || grad_out.extent(1) != c) {
        throw ShapeError("asymmetry gradient has the wrong shape");
    }
    ValueGrid grad({rings, angles, c}, 0.0);
    for (int axis = 0; axis < angles / 2; ++axis) {
        for (const auto& [a1, a2] : fold_pairs(angles, axis)) {
            for (int r = 0; r < rings; ++r) {
                for (int j = 0; j < c; ++j) {
                    const double d = polar.at(r, a1, j) - polar.at(r, a2, j);
                    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    const double g = grad_out.at(axis, j) * s;
                    grad.at(r, a1, j) += g;
                    grad.at(r, a2, j) -= g;
                }
            }
        }
    }
    return grad;
}

HeadParams HeadParams::seeded_init(int modulated_channels, const PolarPoolSpec& spec, Rng& rng) {
    spec.validate();
    HeadParams p;
    p.fc1_weight = seeded_fc(modulated_channels, rng);
    p.fc1_bias = ValueGrid({3}, 0.0);
    p.fc2_weight = seeded_fc(spec.rings * spec.angles * modulated_channels, rng);
    p.fc2_bias = ValueGrid({3}, 0.0);
    p.fc3_weight = seeded_fc((spec.angles / 2) * modulated_channels, rng);
    p.fc3_bias = ValueGrid({3}, 0.0);
    p.sum_weights = {1.0, 1.0, 1.0};
    return p;
}

void HeadParams::check_shapes(int modulated_channels, const PolarPoolSpec& spec) const {
    require_fc(fc1_weight, fc1_bias, modulated_channels, "fc1");
    require_fc(fc2_weight, fc2_bias, spec.rings * spec.angles * modulated_channels, "fc2");
    require_fc(fc3_weight, fc3_bias, (spec.angles / 2) * modulated_channels, "fc3");
}

std::array<double, 3> head_forward(const ValueGrid& features, const ValueGrid& structures,
                                   const NormalizedPolarMap& npc, const HeadParams& params,
                                   const PolarPoolSpec& spec) {
    spec.validate();
    if (spec.angles % 2 != 0) {
        throw InvalidShape("the head needs an even number of angular sectors");
    }
    const ValueGrid m = modulation(features, structures);
    check_pool_inputs(m, npc);
    params.check_shapes(m.extent(2), spec);

    const int h = m.extent(0);
    const int w = m.extent(1);
    const int mc = m.extent(2);
    std::vector<double> pooled(static_cast<std::size_t>(mc), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < mc; ++j) {
                pooled[static_cast<std::size_t>(j)] += m.at(y, x, j);
            }
        }
    }
    const double inv_hw = 1.0 / (static_cast<double>(h) * w);
    for (double& v : pooled) {
        v *= inv_hw;
    }

    const ValueGrid polar = polar_pool(m, npc, spec);
    const ValueGrid asym = asymmetry(polar);
    std::vector<double> polar_flat(polar.data(), polar.data() + polar.size());
    std::vector<double> asym_flat(asym.data(), asym.data() + asym.size());

    const std::array<double, 3> s1 = affine3(params.fc1_weight, params.fc1_bias, pooled);
    const std::array<double, 3> s2 = affine3(params.fc2_weight, params.fc2_bias, polar_flat);
    const std::array<double, 3> s3 = affine3(params.fc3_weight, params.fc3_bias, asym_flat);

    std::array<double, 3> out{};
    for (int t = 0; t < 3; ++t) {
        out[static_cast<std::size_t>(t)] = params.sum_weights[0] * s1[static_cast<std::size_t>(t)] +
                                           params.sum_weights[1] * s2[static_cast<std::size_t>(t)] +
                                           params.sum_weights[2] * s3[static_cast<std::size_t>(t)];
    }
    return out;
}

std::pair<ValueGrid, ValueGrid> head_backward(const ValueGrid& features,
                                              const ValueGrid& structures,
                                              const NormalizedPolarMap& npc,
                                              const HeadParams& params,
                                              const PolarPoolSpec& spec,
                                              const std::array<double, 3>& grad_scores) {
    spec.validate();
    const ValueGrid m = modulation(features, structures);
    check_pool_inputs(m, npc);
    params.check_shapes(m.extent(2), spec);
    const ValueGrid polar = polar_pool(m, npc, spec);

    std::array<double, 3> g1{};
    std::array<double, 3> g2{};
    std::array<double, 3> g3{};
    for (int t = 0; t < 3; ++t) {
        g1[static_cast<std::size_t>(t)] = params.sum_weights[0] * grad_scores[static_cast<std::size_t>(t)];
        g2[static_cast<std::size_t>(t)] = params.sum_weights[1] * grad_scores[static_cast<std::size_t>(t)];
        g3[static_cast<std::size_t>(t)] = params.sum_weights[2] * grad_scores[static_cast<std::size_t>(t)];
    }

    const int h = m.extent(0);
    const int w = m.extent(1);
    const int mc = m.extent(2);
    const double inv_hw = 1.0 / (static_cast<double>(h) * w);

    // Arm 1: gradient of the global average pool spreads evenly.
    const std::vector<double> grad_pooled = affine3_input_grad(params.fc1_weight, g1);
    ValueGrid grad_m({h, w, mc}, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < mc; ++j) {
                grad_m.at(y, x, j) = grad_pooled[static_cast<std::size_t>(j)] * inv_hw;
            }
        }
    }

    // Arms 2 and 3 both reach the modulated grid through the pooled polar grid.
    const std::vector<double> grad_polar_flat = affine3_input_grad(params.fc2_weight, g2);
    ValueGrid grad_polar =
        ValueGrid::from_data({spec.rings, spec.angles, mc}, grad_polar_flat);
    const std::vector<double> grad_asym_flat = affine3_input_grad(params.fc3_weight, g3);
    const ValueGrid grad_asym =
        ValueGrid::from_data({spec.angles / 2, mc}, grad_asym_flat);
    grad_polar += asymmetry_backward(polar, grad_asym);
    grad_m += polar_pool_backward(m, npc, spec, grad_polar);

    return modulation_backward(features, structures, grad_m);
}

std::array<double, 3> softmax3(const std::array<double, 3>& scores) {
    const double peak = std::max({scores[0], scores[1], scores[2]});
    std::array<double, 3> out{};
    double total = 0.0;
    for (int t = 0; t < 3; ++t) {
        out[static_cast<std::size_t>(t)] = std::exp(scores[static_cast<std::size_t>(t)] - peak);
        total += out[static_cast<std::size_t>(t)];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

std::array<double, 3> fuse_views(const std::vector<std::array<double, 3>>& per_view) {
    if (per_view.empty()) {
        throw InvalidShape("view fusion needs at least one view");
    }
    std::array<double, 3> log_sum{};
    for (const auto& p : per_view) {
        for (int t = 0; t < 3; ++t) {
            const double v = p[static_cast<std::size_t>(t)];
            log_sum[static_cast<std::size_t>(t)] +=
                v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
        }
    }
    const double peak = std::max({log_sum[0], log_sum[1], log_sum[2]});
    if (!std::isfinite(peak)) {
        throw DegenerateFusion("every class has zero probability in some view");
    }
    std::array<double, 3> out{};
    double total = 0.0;
    for (int t = 0; t < 3; ++t) {
        out[static_cast<std::size_t>(t)] = std::exp(log_sum[static_cast<std::size_t>(t)] - peak);
        total += out[static_cast<std::size_t>(t)];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

} // namespace dermpolar
