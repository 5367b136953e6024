import numpy as np
import pytest

from grapplesim.terrain import gen_terrain


def test_deterministic_for_fixed_seed(cfg):
    a = gen_terrain(7, cfg.terrain)
    b = gen_terrain(7, cfg.terrain)
    assert np.array_equal(a.elevations, b.elevations)
    assert a.elevations.dtype == np.float32


def test_different_seeds_differ(cfg):
    a = gen_terrain(1, cfg.terrain)
    b = gen_terrain(2, cfg.terrain)
    assert not np.array_equal(a.elevations, b.elevations)


@pytest.mark.parametrize("seed", [0, 3, 17, 123, 99999])
def test_span_within_population_bounds(cfg, seed):
    hf = gen_terrain(seed, cfg.terrain)
    assert cfg.terrain.span_min <= hf.span <= cfg.terrain.span_max


def test_population_mean_span(cfg):
    spans = [gen_terrain(s, cfg.terrain).span for s in range(40)]
    assert abs(np.mean(spans) - 0.4) < 0.1


def test_covers_minimum_patch(cfg):
    hf = gen_terrain(5, cfg.terrain)
    ex, ey = hf.extent
    assert ex >= 5.0 and ey >= 5.0


def test_height_query_matches_nodes(cfg):
    hf = gen_terrain(11, cfg.terrain)
    ny, nx = hf.shape
    xs = hf.origin[0] + np.arange(0, nx - 1, 7) * hf.cell_size
    ys = hf.origin[1] + np.arange(0, ny - 1, 7) * hf.cell_size
    got = hf.height_at(xs, np.full_like(xs, hf.origin[1]))
    expected = hf.elevations[0, np.arange(0, nx - 1, 7)]
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_border_clamp(cfg):
    hf = gen_terrain(2, cfg.terrain)
    inside = hf.height_at(hf.origin[0], hf.origin[1])
    outside = hf.height_at(hf.origin[0] - 50.0, hf.origin[1] - 50.0)
    assert np.isclose(float(inside), float(outside), atol=1e-6)
