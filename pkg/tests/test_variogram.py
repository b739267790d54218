import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from covest.errors import DomainError, FormatError, InputError
from covest.gp import CovParams, FieldStack, GridGeometry, lambda_for_edf, matern_nu1, simulate
from covest.variogram import (
    canonical_orientation,
    empirical_variogram,
    lag_table,
    read_variogram_csv,
    variogram_stack,
    variograms,
    write_lag_table_csv,
    write_variogram_csv,
)


def brute_force_variogram(field):
    """Pair-by-pair reference: dict squared lag -> semivariance."""
    H, W = field.shape
    sums, counts = {}, {}
    sites = [(i, j) for i in range(H) for j in range(W)]
    for a in range(len(sites)):
        for b in range(a + 1, len(sites)):
            (i1, j1), (i2, j2) = sites[a], sites[b]
            k = (i1 - i2) ** 2 + (j1 - j2) ** 2
            sums[k] = sums.get(k, 0.0) + (field[i1, j1] - field[i2, j2]) ** 2
            counts[k] = counts.get(k, 0) + 1
    keys = sorted(sums)
    return np.array(keys), np.array([sums[k] / (2 * counts[k]) for k in keys]), np.array([counts[k] for k in keys])


def dihedral(field):
    out = []
    for k in range(4):
        r = np.rot90(field, k)
        out += [r, r[:, ::-1]]
    return out


def test_lag_table_sizes():
    lt = lag_table(GridGeometry(16, 16))
    assert len(lt) == 119
    assert lt.pair_counts.sum() == 256 * 255 // 2
    assert np.all(np.diff(lt.distances) > 0)
    assert lag_table(GridGeometry(4, 4)).squared_lags.tolist() == [1, 2, 4, 5, 8, 9, 10, 13, 18]
    two = lag_table(GridGeometry(2, 1, spacing=2.5))
    assert len(two) == 1 and two.distances[0] == 2.5 and two.pair_counts[0] == 1


def test_lag_table_matches_enumeration():
    field = np.random.default_rng(0).standard_normal((6, 5))
    keys, gamma, counts = brute_force_variogram(field)
    lt = lag_table(GridGeometry(6, 5))
    assert lt.squared_lags.tolist() == keys.tolist()
    assert lt.pair_counts.tolist() == counts.tolist()
    for method in ("direct", "fft"):
        np.testing.assert_allclose(empirical_variogram(field, lt, method), gamma, rtol=1e-12, atol=1e-15)


def test_lag_table_needs_two_sites():
    with pytest.raises(DomainError):
        lag_table(GridGeometry(1, 1))


def test_examples():
    assert np.all(empirical_variogram(np.full((16, 16), 3.7)) == 0.0)
    cb = np.array([[1.0, -1.0], [-1.0, 1.0]])
    for method in ("direct", "fft"):
        g = empirical_variogram(cb, method=method)
        assert g[0] == pytest.approx(2.0, abs=1e-15) and g[1] == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40)
@given(arrays(np.float64, (16, 16), elements=st.floats(-1e3, 1e3)))
def test_dihedral_invariance_bit_exact(field):
    for method in ("direct", "fft"):
        ref = empirical_variogram(field, method=method)
        for img in dihedral(field):
            assert empirical_variogram(np.ascontiguousarray(img), method=method).tobytes() == ref.tobytes()


def test_dihedral_invariance_simulated():
    y = simulate(GridGeometry(16, 16), CovParams(6.0, 0.1), 20, seed=3).values
    ref = variograms(y, lag_table(GridGeometry(16, 16)))
    for k, img in enumerate(zip(*[dihedral(f) for f in y])):
        got = variograms(np.array(img), lag_table(GridGeometry(16, 16)))
        assert got.tobytes() == ref.tobytes(), k


def test_routes_agree():
    y = simulate(GridGeometry(16, 16), CovParams(10.0, 0.05, 3.0), 50, seed=8)
    a = variogram_stack(y, method="direct")
    b = variogram_stack(y, method="fft")
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
    assert np.all(b >= 0)


def test_stack_properties():
    geom = GridGeometry(16, 16)
    y = simulate(geom, CovParams(5.0, 0.2), 30, seed=1)
    vs = variogram_stack(y)
    assert vs.shape == (30, 119) and vs.size == 3570
    single = empirical_variogram(y.replicate(4))
    assert vs[4].tobytes() == single.tobytes()
    perm = np.random.default_rng(0).permutation(30)
    assert variogram_stack(FieldStack(geom, y.values[perm])).tobytes() == vs[perm].tobytes()
    assert variogram_stack(y.replicate(0)).shape == (1, 119)


def test_batch_independence():
    y = simulate(GridGeometry(16, 16), CovParams(5.0, 0.2), 37, seed=2).values
    lt = lag_table(GridGeometry(16, 16))
    full = variograms(y, lt)
    for i in (0, 5, 36):
        assert variograms(y[i : i + 1], lt).tobytes() == full[i : i + 1].tobytes()
        assert variograms(y[i : i + 3], lt)[0].tobytes() == full[i].tobytes()


def test_mean_variogram_matches_model():
    geom = GridGeometry(16, 16)
    theta, lam = 5.0, 0.3
    y = simulate(geom, CovParams(theta, lam), 2000, seed=21)
    vs = variogram_stack(y)
    lt = lag_table(geom)
    model = 1.0 - matern_nu1(lt.distances, theta) + lam
    z = (vs.mean(axis=0) - model) / (vs.std(axis=0, ddof=1) / math.sqrt(2000))
    assert np.abs(z).max() < 3.0


def test_flatter_with_more_noise():
    geom = GridGeometry(16, 16)
    ratios = []
    for target in (5.0, 250.0):
        lam = lambda_for_edf(10.0, target, geom)
        v = variogram_stack(simulate(geom, CovParams(10.0, lam), 200, seed=4)).mean(axis=0)
        ratios.append(v.max() / v.min())
    assert ratios[0] < ratios[1]


def test_canonical_orientation_is_orbit_invariant():
    f = np.random.default_rng(5).standard_normal((16, 16))
    reps = [canonical_orientation(np.ascontiguousarray(img)[None])[0] for img in dihedral(f)]
    assert all(r.tobytes() == reps[0].tobytes() for r in reps)


def test_input_errors():
    with pytest.raises(InputError):
        empirical_variogram(np.full((4, 4), np.nan))
    with pytest.raises(InputError):
        empirical_variogram(np.zeros((2, 4, 4)))
    with pytest.raises(InputError):
        empirical_variogram(np.zeros((4, 4)), lag_table(GridGeometry(5, 5)))
    with pytest.raises(ValueError):
        empirical_variogram(np.zeros((4, 4)), method="binned")


def test_csv_round_trip(tmp_path):
    geom = GridGeometry(16, 16)
    lt = lag_table(geom)
    v = variogram_stack(simulate(geom, CovParams(5.0, 0.2), 3, seed=0))
    write_variogram_csv(v, lt, tmp_path / "v.csv")
    assert read_variogram_csv(tmp_path / "v.csv").tobytes() == v.tobytes()
    write_lag_table_csv(lt, tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "distance,pair_count" and len(lines) == 120
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(FormatError):
        read_variogram_csv(tmp_path / "bad.csv")
