"""End-to-end smoke checks of the Python bindings.

Each test exercises one exported operation on a small input and checks a
property that does not depend on implementation details.
"""

import math

import numpy as np
import pytest

import dermpolar


def disk_mask(side, radius):
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    return ((xx - c) ** 2 + (yy - c) ** 2 <= radius**2).astype(np.float64)


def test_module_constants():
    assert len(dermpolar.STRUCTURE_NAMES) == 8
    assert len(dermpolar.DIAGNOSIS_CLASSES) == 3
    assert dermpolar.STRUCTURE_NAMES[dermpolar.STREAKS_INDEX] == "streaks"
    assert dermpolar.__version__


def test_ellipse_of_disk():
    ellipse = dermpolar.ellipse_of_mask(disk_mask(101, 40))
    assert ellipse.cx == pytest.approx(50.0, abs=0.01)
    assert ellipse.cy == pytest.approx(50.0, abs=0.01)
    # The moment ellipse of a radius-r disk has semi-axes r.
    assert ellipse.a == pytest.approx(40.0, rel=0.02)
    assert ellipse.b == pytest.approx(40.0, rel=0.02)


def test_rasterize_round_trip():
    source = dermpolar.MomentEllipse(cx=60.0, cy=48.0, a=35.0, b=20.0, orientation=0.7)
    mask = dermpolar.rasterize_ellipse(source, 100, 120)
    fitted = dermpolar.ellipse_of_mask(mask)
    assert fitted.a == pytest.approx(source.a, rel=0.02)
    assert fitted.b == pytest.approx(source.b, rel=0.02)
    assert abs(math.remainder(fitted.orientation - source.orientation, math.pi)) < 0.02


def test_polar_map_of_disk():
    side, radius = 81, 30
    pm = dermpolar.polar_map_of_mask(disk_mask(side, radius))
    assert pm.shape == (side, side)
    c = (side - 1) // 2
    assert pm.rho[c, c] == pytest.approx(0.0, abs=1e-6)
    # rho reaches 1 at the mask boundary and keeps growing outside it.
    assert pm.rho[c, c + radius] == pytest.approx(1.0, abs=0.05)
    assert pm.rho[0, 0] > 1.0
    assert np.all(pm.theta >= 0.0) and np.all(pm.theta < 2 * math.pi)


def test_inscribed_rect_square_diagonal():
    # A square rotated 45 degrees admits an inscribed square of side s/sqrt(2).
    x, y, w, h = dermpolar.largest_inscribed_rect(200, 200, 45.0)
    assert w * h == pytest.approx((200 / math.sqrt(2)) ** 2, rel=0.05)


def test_augment_shapes_and_fallback_flags():
    rng = np.random.default_rng(7)
    image = rng.uniform(size=(96, 96, 3))
    views = dermpolar.augment(image, disk_mask(96, 30), output_side=64)
    assert len(views) == 24
    for view in views:
        assert view["image"].shape == (64, 64, 3)
        assert view["mask"].shape == (64, 64)
        assert view["rho"].shape == (64, 64)
        assert set(np.unique(view["mask"])) <= {0.0, 1.0}
    assert not views[0]["fallback"]
    assert views[0]["rotation_deg"] == 0.0


def test_parametric_softmax_normalizes_and_sharpens():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=(5, 4, 3))
    probs = dermpolar.parametric_softmax(scores, gamma=20.0)
    assert probs.shape == scores.shape
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    soft = dermpolar.parametric_softmax(scores, gamma=1.0)
    assert probs.max() > soft.max()


def test_projection_enforces_weak_labels():
    side = 32
    pm = dermpolar.polar_map_of_mask(disk_mask(side, 13))
    maps = np.full((side, side, 8), 1.0 / 8.0)
    labels = [0] * 8
    labels[dermpolar.STREAKS_INDEX] = 1  # local
    labels[7] = 2  # global
    result = dermpolar.project_structures(maps, pm, labels)
    projected = result["maps"]
    assert np.allclose(projected.sum(axis=-1), 1.0, atol=1e-9)
    n = side * side
    assert all(r <= 1e-3 * n for r in result["residuals"])
    # Absent structures end up with next to no mass; the global one gains it.
    full = np.ones((side, side))
    mass = dermpolar.accumulated_probability(projected, full)
    assert mass[0] <= 0.0115 * n
    assert mass[7] >= 0.29 * n


def test_polar_pool_average_matches_masked_mean():
    rng = np.random.default_rng(11)
    side = 48
    pm = dermpolar.polar_map_of_mask(disk_mask(side, 18))
    features = rng.normal(size=(side, side, 2))
    pooled = dermpolar.polar_pool(features, pm, rings=1, angles=1)
    inside = np.asarray(pm.rho) <= 1.0
    for c in range(2):
        assert pooled[0, 0, c] == pytest.approx(features[..., c][inside].mean(), abs=1e-12)


def test_asymmetry_zero_for_symmetric_sectors():
    polar = np.ones((3, 6, 2))
    out = dermpolar.asymmetry(polar)
    assert np.allclose(out, 0.0)


def test_modulation_channel_count():
    rng = np.random.default_rng(5)
    features = rng.normal(size=(4, 4, 6))
    structures = rng.uniform(size=(8, 8, 8))
    out = dermpolar.modulation(features, structures)
    assert out.shape == (4, 4, 6 * 9)


def test_fuse_views_product_rule():
    fused = dermpolar.fuse_views([[0.6, 0.3, 0.1], [0.6, 0.3, 0.1]])
    assert fused[0] == pytest.approx(0.78261, abs=5e-6)
    assert fused[1] == pytest.approx(0.19565, abs=5e-6)
    assert fused[2] == pytest.approx(0.02174, abs=5e-6)
    assert sum(fused) == pytest.approx(1.0, abs=1e-12)


def test_gradcheck_blocks_all_tight():
    errors = dermpolar.gradcheck_errors(trials=1, seed=2026)
    assert len(errors) == 7
    for name, err in errors.items():
        assert err <= 1e-5, f"{name}: {err}"


def test_shape_errors_raise_value_error():
    with pytest.raises(ValueError):
        dermpolar.ellipse_of_mask(np.zeros((10, 10)))  # empty mask
    with pytest.raises(ValueError):
        dermpolar.parametric_softmax(np.zeros((2, 2, 2, 2)))  # rank 4
    with pytest.raises(ValueError):
        dermpolar.polar_pool(np.zeros((4, 4, 1)),
                             dermpolar.polar_map_of_mask(disk_mask(8, 3)),
                             mode="median")
