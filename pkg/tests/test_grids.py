import numpy as np
import pytest
from hypothesis import given, strategies as st

from covest.errors import DomainError, FormatError
from covest.gp import GridGeometry, correlation_eigenvalues, edf_from_values
from covest.grids import (
    ParamGrid,
    ScalingStats,
    read_grid_csv,
    scale,
    scaling_stats,
    test_grid as make_test_grid,
    training_grid,
    unscale,
    write_grid_csv,
)


@pytest.fixture(scope="module")
def full_grid(geom16):
    return training_grid(geom16)


def _edf_errors(grid):
    err = []
    for theta, sl in grid.theta_blocks():
        values = correlation_eigenvalues(grid.geometry, theta)
        got = np.array([edf_from_values(values, l) for l in grid.lam[sl]])
        err.append(np.abs(got - grid.edf_target[sl]))
    return np.concatenate(err)


def test_training_grid_defaults(full_grid):
    assert len(full_grid) == 40200
    thetas = np.unique(full_grid.theta)
    assert len(thetas) == 201
    assert np.allclose(np.diff(thetas), 0.24)
    edfs = full_grid.edf_target[:200]
    assert np.allclose(-np.diff(edfs), 254 / 199)
    assert edfs[0] == 255.0 and edfs[-1] == 1.0
    assert _edf_errors(full_grid).max() <= 1e-6 * 256


def test_training_grid_ordering(full_grid):
    assert np.all(np.diff(full_grid.theta) >= 0)
    for _, sl in list(full_grid.theta_blocks())[::20]:
        assert np.all(np.diff(full_grid.lam[sl]) > 0)
        assert np.all(np.diff(full_grid.edf_target[sl]) < 0)


def test_training_grid_reproducible(geom16):
    a = training_grid(geom16, 7, 9)
    b = training_grid(geom16, 7, 9)
    assert a.lam.tobytes() == b.lam.tobytes()


def test_training_grid_rejects_bad_edf(geom16):
    with pytest.raises(DomainError):
        training_grid(geom16, 5, 5, edf_range=(1, 256))
    with pytest.raises(DomainError):
        training_grid(geom16, 1, 5)


def test_test_grid_defaults(geom16):
    g = make_test_grid(geom16)
    assert len(g) == 2000
    assert g.kind == "test" and not g.extrapolated
    assert g.theta.min() >= 2 and g.theta.max() <= 25
    assert g.edf_target.min() >= 40 and g.edf_target.max() <= 216
    assert _edf_errors(g).max() <= 1e-6 * 256
    # one point per 1/N stratum along each axis
    u = np.floor((g.theta - 2) / 23 * 2000).astype(int)
    v = np.floor((g.edf_target - 40) / 176 * 2000).astype(int)
    assert len(np.unique(u)) == 2000 and len(np.unique(v)) == 2000
    again = make_test_grid(geom16)
    assert g.lam.tobytes() == again.lam.tobytes()
    assert make_test_grid(geom16, 50, seed=1).theta.tobytes() != make_test_grid(geom16, 50, seed=2).theta.tobytes()


def test_test_grid_flags_extrapolation(geom16):
    g = make_test_grid(geom16, 20, theta_range=(1.0, 25.0))
    assert g.extrapolated


def test_scaling_three_point_example(geom4):
    g = ParamGrid(geom4, [1.0, 2.0, 3.0], np.exp([-1.0, 0.0, 1.0]), [1.0, 1.0, 1.0])
    s = scaling_stats(g)
    ll, th = scale(g.loglambda, g.theta, s)
    np.testing.assert_allclose(ll, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    np.testing.assert_allclose(th, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_scaled_training_grid_standardised(full_grid):
    s = scaling_stats(full_grid)
    ll, th = scale(full_grid.loglambda, full_grid.theta, s)
    assert abs(ll.mean()) < 1e-12 and abs(th.mean()) < 1e-12
    assert ll.std() == pytest.approx(1.0, abs=1e-12) and th.std() == pytest.approx(1.0, abs=1e-12)
    assert scale(s.mean_loglambda, s.mean_theta, s) == (0.0, 0.0)


@given(
    st.lists(st.tuples(st.floats(-30, 10), st.floats(0.5, 60)), min_size=1, max_size=50),
)
def test_scale_round_trip(points):
    s = ScalingStats(-2.0, 3.5, 26.0, 14.0)
    p = np.array(points)
    ll, th = unscale(*scale(p[:, 0], p[:, 1], s), s)
    np.testing.assert_allclose(ll, p[:, 0], atol=1e-12)
    np.testing.assert_allclose(th, p[:, 1], atol=1e-12)


def test_scale_round_trip_1000_points():
    rng = np.random.default_rng(0)
    s = ScalingStats(-2.0, 3.5, 26.0, 14.0)
    p = rng.uniform([-25, 2], [5, 50], size=(1000, 2))
    ll, th = unscale(*scale(p[:, 0], p[:, 1], s), s)
    assert np.abs(ll - p[:, 0]).max() <= 1e-12 and np.abs(th - p[:, 1]).max() <= 1e-12


def test_scaling_zero_variance_rejected(geom4):
    g = ParamGrid(geom4, [2.0, 2.0], [0.1, 0.2], [5.0, 4.0])
    with pytest.raises(DomainError):
        scaling_stats(g)


def test_grid_csv_round_trip(tmp_path, geom16):
    g = training_grid(geom16, 5, 4)
    p = tmp_path / "g.csv"
    write_grid_csv(g, p)
    h = read_grid_csv(p, geom16)
    for a in ("theta", "lam", "edf_target"):
        assert getattr(g, a).tobytes() == getattr(h, a).tobytes()


def test_grid_csv_errors(tmp_path, geom16):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_grid_csv(p, geom16)
    with pytest.raises(FormatError):
        read_grid_csv(tmp_path / "missing.csv", geom16)
