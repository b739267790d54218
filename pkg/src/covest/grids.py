"""EDF-stratified parameter grids and the standardisation of (log lambda, theta).

Along each range value the noise-to-signal ratios are chosen so that the
effective degrees of freedom are equally spaced, which keeps lambda values
comparable across ranges.  Training and grid-search share the training grid;
the test grid is a shifted rank-1 lattice over a smaller box.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError
from .gp import (
    LAMBDA_MIN,
    FactorCache,
    GridGeometry,
    correlation_eigenvalues,
    lambdas_for_edf,
    spectral_factor,
)

TRAINING_THETA = (2.0, 50.0)
TRAINING_EDF = (1.0, 255.0)
TEST_THETA = (2.0, 25.0)
TEST_EDF = (40.0, 216.0)


@dataclass(frozen=True)
class ScalingStats:
    """Means and population standard deviations used to standardise targets."""

    mean_loglambda: float
    sd_loglambda: float
    mean_theta: float
    sd_theta: float

    def __post_init__(self):
        if not (self.sd_loglambda > 0 and self.sd_theta > 0):
            raise DomainError("scaling standard deviations must be positive")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mean_loglambda, self.sd_loglambda, self.mean_theta, self.sd_theta)


@dataclass(frozen=True)
class ParamGrid:
    """Ordered (theta, lambda, edf_target) configurations.

    Entries are ordered theta-major, then EDF descending (so lambda
    ascending within a theta block).
    """

    geometry: GridGeometry
    theta: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    edf_target: np.ndarray = field(repr=False)
    kind: str = "training"
    extrapolated: bool = False

    def __post_init__(self):
        for name in ("theta", "lam", "edf_target"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.theta.shape == self.lam.shape == self.edf_target.shape and self.theta.ndim == 1):
            raise DomainError("grid columns must be 1-D and of equal length")
        if self.kind not in ("training", "test"):
            raise DomainError(f"unknown grid kind {self.kind!r}")

    def __len__(self):
        return self.theta.shape[0]

    @property
    def loglambda(self) -> np.ndarray:
        return np.log(np.maximum(self.lam, LAMBDA_MIN))

    def theta_blocks(self):
        """Yield ``(theta, index_slice)`` for each run of equal theta values."""
        t = self.theta
        if len(t) == 0:
            return
        breaks = np.flatnonzero(np.diff(t) != 0) + 1
        starts = np.concatenate([[0], breaks])
        stops = np.concatenate([breaks, [len(t)]])
        for a, b in zip(starts, stops):
            yield float(t[a]), slice(int(a), int(b))

    def box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Axis-aligned (theta, EDF) bounding box."""
        return (
            (float(self.theta.min()), float(self.theta.max())),
            (float(self.edf_target.min()), float(self.edf_target.max())),
        )


def _solve_lambdas(geom, thetas, targets_per_theta, cache=None):
    out = []
    for t, tg in zip(thetas, targets_per_theta):
        values = cache.get(t).values if cache is not None else correlation_eigenvalues(geom, t)
        out.append(lambdas_for_edf(values, tg))
    return out


def training_grid(
    geom: GridGeometry,
    n_theta: int = 201,
    n_edf: int = 200,
    theta_range=TRAINING_THETA,
    edf_range=TRAINING_EDF,
    cache: FactorCache | None = None,
) -> ParamGrid:
    """Full factorial grid: ``n_theta`` ranges times ``n_edf`` EDF levels.

    Both axes are inclusive linspaces.  With the defaults on a 16 x 16 grid
    this is the 40200-configuration grid.
    """
    if n_theta < 2 or n_edf < 2:
        raise DomainError("n_theta and n_edf must be >= 2")
    lo, hi = edf_range
    if not (0 < lo < hi < geom.n):
        raise DomainError(f"edf_range must lie inside (0, {geom.n}), got {edf_range}")
    thetas = np.linspace(theta_range[0], theta_range[1], n_theta)
    targets = np.linspace(hi, lo, n_edf)  # descending EDF -> ascending lambda
    lams = _solve_lambdas(geom, thetas, [targets] * n_theta, cache)
    return ParamGrid(
        geom,
        np.repeat(thetas, n_edf),
        np.concatenate(lams),
        np.tile(targets, n_theta),
        kind="training",
    )


def _lattice_generator(n: int) -> int:
    # generator near n / golden ratio, coprime to n
    g = max(1, int(round(n / ((1 + math.sqrt(5)) / 2))))
    while math.gcd(g, n) != 1:
        g += 1
    return g


def test_grid(
    geom: GridGeometry,
    n_configs: int = 2000,
    theta_range=TEST_THETA,
    edf_range=TEST_EDF,
    seed=0,
    training_box=(TRAINING_THETA, TRAINING_EDF),
    cache: FactorCache | None = None,
) -> ParamGrid:
    """Deterministic low-discrepancy design over a (theta, EDF) box.

    Points form a rank-1 lattice ``(i/N, i*g/N mod 1)`` with a random shift
    drawn from ``seed`` (one point per 1/N stratum in each coordinate).
    ``extrapolated`` is set when the box leaves ``training_box``.
    """
    if n_configs < 1:
        raise DomainError("n_configs must be >= 1")
    (tlo, thi), (elo, ehi) = theta_range, edf_range
    if not (0 < elo <= ehi < geom.n) or not (0 < tlo <= thi):
        raise DomainError("invalid test ranges")
    (btlo, bthi), (belo, behi) = training_box
    extrapolated = not (btlo <= tlo and thi <= bthi and belo <= elo and ehi <= behi)
    g = _lattice_generator(n_configs)
    shift = np.random.default_rng(seed).random(2)
    i = np.arange(n_configs)
    u = np.mod(i / n_configs + shift[0], 1.0)
    v = np.mod(i * g / n_configs + shift[1], 1.0)
    thetas = tlo + (thi - tlo) * u
    targets = elo + (ehi - elo) * v
    order = np.lexsort((-targets, thetas))
    thetas, targets = thetas[order], targets[order]
    lams = _solve_lambdas(geom, thetas, [[t] for t in targets], cache)
    return ParamGrid(geom, thetas, np.concatenate(lams), targets, kind="test", extrapolated=extrapolated)


def scaling_stats(grid: ParamGrid) -> ScalingStats:
    """Mean and population sd of log(lambda) and theta over all grid entries."""
    ll = grid.loglambda
    th = grid.theta
    sd_ll, sd_th = float(np.std(ll)), float(np.std(th))
    if not (sd_ll > 0 and sd_th > 0):
        raise DomainError("grid has zero variance in log(lambda) or theta")
    return ScalingStats(float(np.mean(ll)), sd_ll, float(np.mean(th)), sd_th)


def scale(loglambda, theta, s: ScalingStats):
    """Raw ``(log lambda, theta)`` -> standardised ``(log Lambda, Theta)``."""
    return (
        (np.asarray(loglambda) - s.mean_loglambda) / s.sd_loglambda,
        (np.asarray(theta) - s.mean_theta) / s.sd_theta,
    )


def unscale(loglambda_scaled, theta_scaled, s: ScalingStats):
    """Inverse of :func:`scale`."""
    return (
        np.asarray(loglambda_scaled) * s.sd_loglambda + s.mean_loglambda,
        np.asarray(theta_scaled) * s.sd_theta + s.mean_theta,
    )


def write_grid_csv(grid: ParamGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "lambda", "edf_target"])
        for t, l, e in zip(grid.theta, grid.lam, grid.edf_target):
            w.writerow([repr(float(t)), repr(float(l)), repr(float(e))])


def read_grid_csv(path, geom: GridGeometry, kind: str = "training") -> ParamGrid:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read grid file {path}: {exc}") from exc
    if not rows or rows[0] != ["theta", "lambda", "edf_target"]:
        raise FormatError(f"{path}: expected CSV header theta,lambda,edf_target")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, 3)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric grid entry") from exc
    return ParamGrid(geom, data[:, 0], data[:, 1], data[:, 2], kind=kind)


test_grid.__test__ = False  # keep pytest from collecting the factory


def simulate_grid_fields(grid: ParamGrid, per_config: int, seed, cache: FactorCache | None = None, threads: int = 1):
    """``per_config`` unit-variance fields for every grid entry, (len(grid), per_config, H, W).

    Each theta block draws from its own generator seeded by ``(seed, block)``,
    so the output does not depend on ``threads``.  Without ``cache`` each
    factor is computed and dropped, which keeps memory flat for test grids
    with thousands of distinct range values.
    """
    geom = grid.geometry
    out = np.empty((len(grid), per_config, geom.n))
    blocks = list(grid.theta_blocks())

    def fill(job):
        b, (theta, sl) = job
        f = cache.get(theta) if cache is not None else spectral_factor(geom, theta)
        rng = np.random.default_rng([int(seed), b])
        lam = grid.lam[sl]
        z = rng.standard_normal((lam.shape[0], per_config, geom.n))
        z *= np.sqrt(f.values[None, None, :] + lam[:, None, None])
        out[sl] = (z.reshape(-1, geom.n) @ f.vectors.T).reshape(lam.shape[0], per_config, geom.n)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(fill, enumerate(blocks)))
    else:
        for job in enumerate(blocks):
            fill(job)
    return out.reshape(len(grid), per_config, *geom.shape)
