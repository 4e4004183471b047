import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stefan_pinn.problems import REGISTRY, get_problem
from stefan_pinn.sampling import (
    Dataset, Rect, draw_batches, grid, make_rng, sample_measurements, solution_sup_norm,
    uniform_rect,
)

INV2 = [p for p in REGISTRY if get_problem(p).id.uses_data]


def test_uniform_rect_bounds_and_mean():
    rect = Rect(((0.0, 2.25), (0.0, 1.0), (0.0, 1.0)))
    pts = uniform_rect(make_rng(0), rect, 100_000)
    assert pts.shape == (100_000, 3)
    assert np.all(pts >= rect.lo) and np.all(pts <= rect.hi)
    assert np.allclose(pts.mean(axis=0), (rect.lo + rect.hi) / 2, atol=0.01)


def test_uniform_rect_is_deterministic():
    rect = Rect(((0.0, 1.0), (0.0, 1.0)))
    assert np.array_equal(uniform_rect(make_rng(5), rect, 10), uniform_rect(make_rng(5), rect, 10))
    assert not np.array_equal(uniform_rect(make_rng(5), rect, 10), uniform_rect(make_rng(6), rect, 10))


def test_uniform_rect_rejects_bad_input():
    with pytest.raises(ValueError):
        uniform_rect(make_rng(0), Rect(((0.0, 1.0),)), 0)
    with pytest.raises(ValueError):
        Rect(((1.0, 0.0),))


def test_draw_batches_respects_regions():
    spec = get_problem("1d2p:direct")
    b = draw_batches(spec, make_rng(1), 64)
    assert set(b) == {g.name for g in spec.groups}
    for g in spec.groups:
        for c, r in g.region.items():
            v = b[g.name][c]
            assert v.shape == (64,)
            if isinstance(r, tuple):
                assert np.all((v >= r[0]) & (v <= r[1]))
            else:
                assert np.all(v == r)


def test_draw_batches_needs_dataset_for_data_group():
    with pytest.raises(ValueError):
        draw_batches(get_problem("1d1p:inv2"), make_rng(0), 8)


def test_sup_norms_match_closed_forms():
    # maxima sit at grid corners, so the grid search is exact there
    assert solution_sup_norm("1d1p:inv2") == pytest.approx(1.5, abs=1e-12)
    assert solution_sup_norm("2d1p:inv2") == pytest.approx(np.e ** 2.25 - 1, rel=1e-12)
    assert solution_sup_norm("1d2p:inv2") == pytest.approx(2 * (np.e ** 0.75 - 1), rel=1e-12)


def test_noise_sigma_from_independent_grid():
    # independent oracle: max |u| over a fine grid of the exact domain
    t = np.linspace(0, 1, 2001)
    x = np.linspace(0, 1, 2001)
    X, T = np.meshgrid(x, t)
    inside = X <= 2 - np.sqrt(3 - 2 * T)
    sup = np.abs(np.where(inside, -X ** 2 / 2 + 2 * X - 0.5 - T, 0)).max()
    ds = sample_measurements("1d1p:inv2", 10, 0.1, seed=0)
    assert ds.sigma == pytest.approx(0.1 * sup, abs=1e-6)
    assert ds.sigma == pytest.approx(0.15, abs=1e-12)


@pytest.mark.parametrize("pid", INV2)
def test_noise_free_measurements_are_exact(pid):
    spec = get_problem(pid)
    ds = sample_measurements(pid, 50, 0.0, seed=3)
    assert ds.sigma == 0.0
    assert np.array_equal(ds.values, np.asarray(spec.exact_u(*ds.points.T)))


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["1d1p:inv2", "2d1p:inv2"]), st.integers(1, 200), st.integers(0, 10**6))
def test_measurements_lie_inside_exact_domain(pid, M, seed):
    spec = get_problem(pid)
    ds = sample_measurements(pid, M, 0.05, seed)
    assert ds.points.shape == (M, len(spec.coords))
    s = spec.exact_boundary(*[ds.points[:, spec.coords.index(c)] for c in spec.s_coords])
    assert np.all((ds.points[:, 0] > 0) & (ds.points[:, 0] < s))


def test_measurements_reproducible_and_share_locations():
    a = sample_measurements("1d2p:inv2", 30, 0.05, seed=9)
    b = sample_measurements("1d2p:inv2", 30, 0.05, seed=9)
    c = sample_measurements("1d2p:inv2", 30, 0.0, seed=9)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.points, c.points)
    assert not np.array_equal(a.values, c.values)


def test_dataset_csv_roundtrip(tmp_path):
    ds = sample_measurements("2d1p:inv2", 12, 0.02, seed=4)
    ds.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x,y,t,u,delta,seed"
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert back.coords == ("x", "y", "t")
    assert np.array_equal(back.points, ds.points)
    assert np.array_equal(back.values, ds.values)
    assert back.delta == 0.02 and back.seed == 4


def test_grid_first_axis_slowest():
    g = grid([np.array([0.0, 1.0]), np.array([5.0, 6.0, 7.0])])
    assert g.shape == (6, 2)
    assert g[:3, 0].tolist() == [0.0, 0.0, 0.0]
    assert g[:3, 1].tolist() == [5.0, 6.0, 7.0]
