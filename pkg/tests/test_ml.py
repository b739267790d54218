import math

import numpy as np
import pytest

from covest.errors import InputError
from covest.gp import CovParams, FactorCache, FieldStack, GridGeometry, correlation_matrix, lambda_for_edf, simulate
from covest.grids import training_grid
from covest.ml import (
    EstimateRecord,
    LikelihoodSurface,
    ml_fit,
    ml_fit_batch,
    read_records_csv,
    surface_values,
    write_records_csv,
)


def dense_surface(y, grid):
    """Concentrated log-likelihood at every entry by explicit solves (summed over replicates)."""
    ys = y.flat()
    R, n = ys.shape
    out = []
    for theta, lam in zip(grid.theta, grid.lam):
        m = correlation_matrix(grid.geometry, theta) + lam * np.eye(n)
        quad = sum(float(v @ np.linalg.solve(m, v)) for v in ys)
        s2 = quad / (R * n)
        _, logdet = np.linalg.slogdet(m)
        out.append(-0.5 * R * (n + n * math.log(s2) + logdet + n * math.log(2 * math.pi)))
    return np.array(out)


@pytest.fixture(scope="module")
def mini_grid():
    return training_grid(GridGeometry(4, 4), 5, 5, theta_range=(0.5, 4.0), edf_range=(2.0, 14.0))


def test_argmax_matches_dense_oracle_25_of_25(mini_grid):
    geom = mini_grid.geometry
    hits = 0
    for k in range(25):
        rng = np.random.default_rng(k)
        p = CovParams(float(rng.uniform(0.5, 4)), float(rng.uniform(0.01, 2)))
        y = simulate(geom, p, 1, seed=1000 + k)
        rec, surf = ml_fit(y, mini_grid, keep_surface=True)
        dense = dense_surface(y, mini_grid)
        np.testing.assert_allclose(surf.values, dense, rtol=1e-6)
        hits += surf.argmax() == int(np.argmax(dense))
        assert rec.theta_hat == mini_grid.theta[int(np.argmax(dense))]
    assert hits == 25


def test_surface_agrees_with_dense_on_random_entries(geom16):
    rng = np.random.default_rng(3)
    big = training_grid(geom16, 21, 20)
    cache = FactorCache(geom16)
    for k in range(10):
        y = simulate(geom16, CovParams(rng.uniform(2, 30), rng.uniform(0.01, 1)), 1, seed=k)
        vals = surface_values(y, big, cache)
        idx = rng.choice(len(big), 20, replace=False)
        sub = type(big)(geom16, big.theta[idx], big.lam[idx], big.edf_target[idx])
        np.testing.assert_allclose(vals[idx], dense_surface(y, sub), rtol=1e-6)


def test_scale_invariance_and_sigma2(small_grid):
    y = simulate(small_grid.geometry, CovParams(9.0, 0.02), 1, seed=4)
    a = ml_fit(y, small_grid)
    b = ml_fit(FieldStack(y.geometry, 3.0 * y.values), small_grid)
    assert a.estimate() == b.estimate()
    assert b.sigma2_hat == pytest.approx(9.0 * a.sigma2_hat, rel=1e-10)
    assert a.method == "ML"


def test_fine_grid_oracle(geom16):
    grid = training_grid(geom16)
    theta0 = grid.theta[34 * 200]
    assert theta0 == pytest.approx(10.16)
    lam = lambda_for_edf(theta0, 128.0, geom16)
    y = simulate(geom16, CovParams(theta0, lam), 30, seed=11)
    rec, coarse = ml_fit(y, grid, keep_surface=True)
    assert rec.method == "ML30"
    edf_c = grid.edf_target[coarse.argmax()]
    step = 254 / 199
    # four times finer in both coordinates, centred on the coarse estimate
    fine = training_grid(
        geom16,
        4 * 20 + 1,
        4 * 40 + 1,
        theta_range=(rec.theta_hat - 2.4, rec.theta_hat + 2.4),
        edf_range=(edf_c - 20 * step, edf_c + 20 * step),
    )
    f, surf = ml_fit(y, fine, keep_surface=True)
    i = surf.argmax()
    assert fine.theta.min() < f.theta_hat < fine.theta.max()
    assert fine.edf_target.min() < fine.edf_target[i] < fine.edf_target.max()
    assert abs(rec.theta_hat - f.theta_hat) <= 0.24 + 1e-9


def test_ml30_less_variable_than_ml(geom16):
    grid = training_grid(geom16, 49, 50)
    cache = FactorCache(geom16)
    lam = lambda_for_edf(12.0, 128.0, geom16)
    sims = simulate(geom16, CovParams(12.0, lam), 200 * 30, seed=99).values.reshape(200, 30, 16, 16)
    ml = ml_fit_batch([s[:1] for s in sims], grid, cache=cache)
    ml30 = ml_fit_batch(list(sims), grid, cache=cache)
    sd1 = np.std([r.theta_hat for r in ml])
    sd30 = np.std([r.theta_hat for r in ml30])
    assert sd30 < sd1


def test_degenerate_constant_field(small_grid):
    y = FieldStack(small_grid.geometry, np.full((1, 16, 16), 2.5))
    rec = ml_fit(y, small_grid)
    assert rec.clipped
    assert rec.theta_hat == small_grid.theta.max()
    assert math.isfinite(rec.loglambda_hat)


def test_geometry_mismatch(small_grid):
    with pytest.raises(InputError):
        ml_fit(np.zeros((8, 8)) + np.arange(64).reshape(8, 8), small_grid)


def test_ties_go_to_lowest_index(geom4):
    g = training_grid(geom4, 3, 3, theta_range=(1, 2), edf_range=(2, 10))
    s = LikelihoodSurface(g, np.array([0.0, 1.0, 3.0, 3.0, 2.0, 3.0, 0.0, 0.0, 0.0]))
    assert s.argmax() == 2


def test_batch_matches_single_and_threads(small_grid):
    geom = small_grid.geometry
    samples = [simulate(geom, CovParams(5.0 + k, 0.05), 1 + (k % 2), seed=k) for k in range(6)]
    cache = FactorCache(geom)
    singles = [ml_fit(s, small_grid, cache=cache) for s in samples]
    one = ml_fit_batch(samples, small_grid, threads=1)
    four = ml_fit_batch(samples, small_grid, threads=4)
    for a, b, c in zip(singles, one, four):
        assert a.estimate() == b.estimate() == c.estimate()
        assert a.sigma2_hat == b.sigma2_hat == c.sigma2_hat
    assert ml_fit_batch(samples[:1], small_grid)[0].estimate() == singles[0].estimate()


def test_batch_flags_failures(small_grid):
    good = simulate(small_grid.geometry, CovParams(5.0, 0.1), 1, seed=0)
    recs = ml_fit_batch([good, np.ones((3, 3))], small_grid)
    assert len(recs) == 2
    assert recs[0].error is None and recs[1].error is not None


def test_record_csv_round_trip(tmp_path):
    recs = [
        EstimateRecord(-3.25, 10.16, "ML30", 1.5, 0.01, False),
        EstimateRecord(-math.inf, 2.0, "ML", 0.7, 0.02, True),
    ]
    p = tmp_path / "r.csv"
    write_records_csv(recs, p)
    back = read_records_csv(p)
    assert [(r.method, r.loglambda_hat, r.theta_hat, r.sigma2_hat, r.clipped) for r in back] == [
        (r.method, r.loglambda_hat, r.theta_hat, r.sigma2_hat, r.clipped) for r in recs
    ]
    assert back[1].lambda_hat == 0.0
