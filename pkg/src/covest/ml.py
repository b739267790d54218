"""Grid-search maximum likelihood (the ML / ML30 estimators).

For every grid entry the concentrated log-likelihood is evaluated and the
best entry is reported as-is (no refinement between grid atoms).  Entries
sharing a range value share one spectral factor, so each lambda costs a
single pass over ``n`` projected coordinates.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError
from .gp import LOG_2PI, FactorCache, FieldStack, as_stack
from .grids import ParamGrid

METHODS = ("ML", "ML30", "NF", "NF30", "NV", "NV30")
RECORD_COLUMNS = ["method", "loglambda_hat", "theta_hat", "sigma2_hat", "elapsed", "clipped"]


@dataclass
class EstimateRecord:
    """One estimate of ``(log lambda, theta)`` plus bookkeeping.

    ``loglambda_hat`` is ``-inf`` when the estimated lambda is exactly 0.
    ``error`` carries a message for samples that failed inside a batch.
    """

    loglambda_hat: float
    theta_hat: float
    method: str
    sigma2_hat: float = math.nan
    elapsed: float = 0.0
    clipped: bool = False
    error: str | None = None

    @property
    def lambda_hat(self) -> float:
        return math.exp(self.loglambda_hat)

    def estimate(self) -> tuple[float, float]:
        return (self.loglambda_hat, self.theta_hat)


@dataclass
class LikelihoodSurface:
    """Concentrated log-likelihood for every entry of ``grid``."""

    grid: ParamGrid
    values: np.ndarray = field(repr=False)

    def argmax(self) -> int:
        # np.argmax returns the first maximum: ties go to the lowest index
        return int(np.argmax(self.values))


def method_name(replicates: int, base: str = "ML") -> str:
    return f"{base}30" if replicates == 30 else base


def surface_values(y: FieldStack, grid: ParamGrid, cache: FactorCache) -> np.ndarray:
    """Concentrated log-likelihood (summed over replicates) at every grid entry."""
    n = y.geometry.n
    R = y.replicates
    flat = y.flat()
    out = np.empty(len(grid))
    for theta, sl in grid.theta_blocks():
        f = cache.get(theta)
        z = f.project(flat)
        ss = np.sum(z * z, axis=0)  # summed over replicates
        d = f.values[:, None] + grid.lam[sl][None, :]
        quad = ss @ (1.0 / d)
        logdet = np.sum(np.log(d), axis=0)
        s2 = quad / (R * n)
        with np.errstate(divide="ignore"):
            out[sl] = -0.5 * R * (n + n * np.log(s2) + logdet + n * LOG_2PI)
    return out


def _sigma2_at(y: FieldStack, f, lam) -> float:
    z = f.project(y.flat())
    return float(np.mean(np.sum(z * z / (f.values + lam), axis=1)) / y.geometry.n)


def ml_fit(
    y,
    grid: ParamGrid,
    keep_surface: bool = False,
    cache: FactorCache | None = None,
    method: str | None = None,
):
    """Maximum-likelihood estimate of ``(log lambda, theta)`` by exhaustive grid search.

    Parameters
    ----------
    y : FieldStack or array_like
        One field (ML) or a stack of replicates (ML30 for 30 of them).
    grid : ParamGrid
        Candidate configurations; the geometry must match ``y``.
    keep_surface : bool
        Also return the :class:`LikelihoodSurface`.
    cache : FactorCache, optional
        Spectral factors shared across calls.  Without one, every range value
        of the grid is factorised once inside this call.

    Returns
    -------
    EstimateRecord or (EstimateRecord, LikelihoodSurface)
    """
    t0 = time.perf_counter()
    ys = as_stack(y)
    if ys.geometry.shape != grid.geometry.shape:
        raise InputError(f"field grid {ys.geometry.shape} does not match parameter grid {grid.geometry.shape}")
    if cache is None:
        cache = FactorCache(grid.geometry)
    method = method or method_name(ys.replicates)

    degenerate = bool(np.all(ys.values == ys.values.flat[0]))
    if degenerate:
        # constant fields: report the smoothest boundary entry and flag it
        smooth = np.lexsort((-grid.edf_target, -grid.theta))
        idx = int(smooth[0])
        values = np.full(len(grid), np.nan)
        clipped = True
    else:
        values = surface_values(ys, grid, cache)
        idx = int(np.argmax(values))
        clipped = False
    theta, lam = float(grid.theta[idx]), float(grid.lam[idx])
    s2 = _sigma2_at(ys, cache.get(theta), lam)
    rec = EstimateRecord(
        loglambda_hat=math.log(lam) if lam > 0 else -math.inf,
        theta_hat=theta,
        method=method,
        sigma2_hat=s2,
        elapsed=time.perf_counter() - t0,
        clipped=clipped,
    )
    if keep_surface:
        return rec, LikelihoodSurface(grid, values)
    return rec


def ml_fit_batch(samples, grid: ParamGrid, threads: int = 1, cache: FactorCache | None = None, method=None):
    """:func:`ml_fit` over many samples with a shared factor cache.

    Results are placed by index, so they do not depend on ``threads``.
    Per-sample failures come back as records with ``error`` set.
    """
    cache = cache or FactorCache(grid.geometry)

    def one(s):
        try:
            return ml_fit(s, grid, cache=cache, method=method)
        except (InputError, ArithmeticError, ValueError) as exc:
            return EstimateRecord(math.nan, math.nan, method or "ML", error=str(exc), clipped=True)

    samples = list(samples)
    if threads <= 1:
        return [one(s) for s in samples]
    # warm the cache in grid order so factor construction is not duplicated
    for theta, _ in grid.theta_blocks():
        cache.get(theta)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, samples))


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([
                r.method,
                repr(float(r.loglambda_hat)),
                repr(float(r.theta_hat)),
                repr(float(r.sigma2_hat)),
                repr(float(r.elapsed)),
                int(bool(r.clipped)),
            ])


def read_records_csv(path) -> list[EstimateRecord]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read records file {path}: {exc}") from exc
    if not rows or rows[0] != RECORD_COLUMNS:
        raise FormatError(f"{path}: expected header {','.join(RECORD_COLUMNS)}")
    out = []
    for r in rows[1:]:
        out.append(EstimateRecord(float(r[1]), float(r[2]), r[0], float(r[3]), float(r[4]), bool(int(r[5]))))
    return out

