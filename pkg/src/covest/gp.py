"""Exact Gaussian-process numerics on a regular grid.

The data model is ``y ~ N(0, sigma2 * Sigma(theta) + tau2 * I)`` with a
Matern correlation of smoothness one,

    C(d) = (d / theta) * K_1(d / theta),    C(0) = 1,

and ``tau2 = lambda * sigma2``.  Everything is routed through one symmetric
eigendecomposition ``Sigma(theta) = Q diag(e) Q^T`` per range value, so a
sweep over many noise-to-signal ratios at fixed ``theta`` costs O(n^2) each.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError, NumericalError
from .special import bessel_k1

LOG_2PI = math.log(2.0 * math.pi)

#: Floor applied to lambda wherever its logarithm is needed.
LAMBDA_MIN = 1e-12


@dataclass(frozen=True)
class GridGeometry:
    """Regular ``height x width`` grid with row-major site ordering."""

    height: int
    width: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise DomainError(f"grid dimensions must be >= 1, got {self.height}x{self.width}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise DomainError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def coordinates(self) -> np.ndarray:
        """Integer (row, col) index of each site, shape (n, 2), row-major."""
        rows, cols = np.indices(self.shape)
        return np.column_stack([rows.ravel(), cols.ravel()])

    def squared_lags(self) -> np.ndarray:
        """Integer squared lag ``dr^2 + dc^2`` between all site pairs, (n, n)."""
        c = self.coordinates()
        dr = c[:, 0][:, None] - c[:, 0][None, :]
        dc = c[:, 1][:, None] - c[:, 1][None, :]
        return dr * dr + dc * dc


@dataclass(frozen=True)
class CovParams:
    """Covariance parameters; ``tau2`` is derived as ``lam * sigma2``."""

    theta: float
    lam: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise DomainError(f"theta must be finite and > 0, got {self.theta}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lambda must be finite and >= 0, got {self.lam}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DomainError(f"sigma2 must be finite and > 0, got {self.sigma2}")

    @property
    def tau2(self) -> float:
        return self.lam * self.sigma2


@dataclass(frozen=True)
class FieldStack:
    """One or more replicate fields sharing a grid geometry."""

    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1:] != self.geometry.shape:
            raise InputError(
                f"values of shape {np.shape(self.values)} do not match grid {self.geometry.shape}"
            )
        if v.shape[0] < 1:
            raise InputError("a FieldStack needs at least one replicate")
        if not np.all(np.isfinite(v)):
            raise InputError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values, spacing: float = 1.0) -> "FieldStack":
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise InputError(f"expected a 2-D field or 3-D stack, got shape {v.shape}")
        return cls(GridGeometry(v.shape[1], v.shape[2], spacing), v)

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        """Values as a (replicates, n) array in row-major site order."""
        return self.values.reshape(self.replicates, -1)

    def replicate(self, r: int) -> "FieldStack":
        return FieldStack(self.geometry, self.values[r : r + 1])


def as_stack(y, spacing: float = 1.0) -> FieldStack:
    if isinstance(y, FieldStack):
        return y
    return FieldStack.from_array(y, spacing)


@dataclass(frozen=True)
class SpectralFactor:
    """``Sigma(theta) = vectors @ diag(values) @ vectors.T``, eigenvalues non-increasing."""

    theta: float
    values: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    def project(self, y_flat: np.ndarray) -> np.ndarray:
        """Coordinates ``Q^T y`` for each row of a (R, n) array."""
        return y_flat @ self.vectors


def _check_theta(theta):
    if not (np.isfinite(theta) and theta > 0):
        raise DomainError(f"theta must be finite and > 0, got {theta}")


def matern_nu1(d, theta):
    """Matern correlation with smoothness 1: ``(d/theta) K_1(d/theta)``, 1 at ``d = 0``."""
    _check_theta(theta)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DomainError("distances must be finite and non-negative")
    x = d / theta
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        out[pos] = xp * bessel_k1(xp)
    return out[()] if out.ndim == 0 else out


def correlation_matrix(geom: GridGeometry, theta: float) -> np.ndarray:
    """``Sigma(theta)``: the n x n Matern correlation matrix of the grid."""
    _check_theta(theta)
    uniq, inverse = _lag_structure(geom.height, geom.width)
    # only ~n distinct lags; evaluate the kernel once per lag
    corr = matern_nu1(geom.spacing * np.sqrt(uniq.astype(np.float64)), theta)
    return np.asarray(corr)[inverse]


@functools.lru_cache(maxsize=8)
def _lag_structure(height, width):
    sq = GridGeometry(height, width).squared_lags()
    uniq, inverse = np.unique(sq, return_inverse=True)
    inverse = inverse.reshape(sq.shape)
    inverse.setflags(write=False)
    return uniq, inverse


def build_cov(geom: GridGeometry, p: CovParams) -> np.ndarray:
    """Covariance ``sigma2 * Sigma(theta) + tau2 * I``."""
    try:
        cov = p.sigma2 * correlation_matrix(geom, p.theta)
    except MemoryError as exc:
        raise MemoryError(f"cannot allocate a {geom.n}x{geom.n} covariance") from exc
    cov[np.diag_indices_from(cov)] += p.tau2
    return cov


def spectral_factor(geom: GridGeometry, theta: float) -> SpectralFactor:
    """Symmetric eigendecomposition of ``Sigma(theta)``."""
    corr = correlation_matrix(geom, theta)
    try:
        vals, vecs = np.linalg.eigh(corr)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed for theta={theta}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    if not vals[-1] > 0:
        raise NumericalError(
            f"Sigma(theta={theta}) is not numerically positive definite "
            f"(smallest eigenvalue {vals[-1]:.3e})"
        )
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return SpectralFactor(float(theta), vals, vecs)


def correlation_eigenvalues(geom: GridGeometry, theta: float) -> np.ndarray:
    """Eigenvalues of ``Sigma(theta)`` in non-increasing order (no eigenvectors)."""
    try:
        vals = np.linalg.eigvalsh(correlation_matrix(geom, theta))[::-1].copy()
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed for theta={theta}") from exc
    if not vals[-1] > 0:
        raise NumericalError(f"Sigma(theta={theta}) is not numerically positive definite")
    return vals


class FactorCache:
    """Thread-safe memo of spectral factors keyed by ``theta``."""

    def __init__(self, geom: GridGeometry):
        self.geometry = geom
        self._store: dict[float, SpectralFactor] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def get(self, theta: float) -> SpectralFactor:
        theta = float(theta)
        f = self._store.get(theta)
        if f is None:
            f = spectral_factor(self.geometry, theta)
            with self._lock:
                f = self._store.setdefault(theta, f)
        return f


def _factor_for(geom, theta, factor):
    if factor is None:
        return spectral_factor(geom, theta)
    if factor.theta != float(theta) or factor.values.shape[0] != geom.n:
        raise InputError("supplied SpectralFactor does not match theta/geometry")
    return factor


def simulate(geom: GridGeometry, p: CovParams, replicates: int, seed, factor=None) -> FieldStack:
    """Draw independent fields ``y = A z`` with ``A A^T = sigma2 Sigma + tau2 I``.

    ``A = Q diag(sqrt(sigma2 e + tau2))`` from the spectral factor; ``z`` is
    standard normal from ``numpy.random.default_rng(seed)``.
    """
    if int(replicates) < 1:
        raise DomainError("replicates must be >= 1")
    f = _factor_for(geom, p.theta, factor)
    scale = np.sqrt(p.sigma2 * f.values + p.tau2)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(replicates), geom.n))
    y = (z * scale) @ f.vectors.T
    return FieldStack(geom, y.reshape(int(replicates), *geom.shape))


def _quad_logdet(z, f: SpectralFactor, p: CovParams):
    d = p.sigma2 * f.values + p.tau2
    if not np.all(d > 0):
        raise NumericalError(f"covariance is singular for {p}")
    quad = np.sum(z * z / d, axis=1)
    logdet = float(np.sum(np.log(d)))
    return quad, logdet


def loglik(y, p: CovParams, factor: SpectralFactor | None = None) -> float:
    """Gaussian log-likelihood, summed over replicates.

    Each replicate contributes
    ``-0.5 * (y' C^{-1} y + log det C + n log(2 pi))`` with
    ``C = sigma2 Sigma(theta) + tau2 I``.
    """
    ys = as_stack(y)
    geom = ys.geometry
    f = _factor_for(geom, p.theta, factor)
    quad, logdet = _quad_logdet(f.project(ys.flat()), f, p)
    return float(-0.5 * np.sum(quad + logdet + geom.n * LOG_2PI))


def _profile_from_z(z, f, lam):
    d = f.values + lam
    if not np.all(d > 0):
        raise NumericalError(f"Sigma(theta={f.theta}) + lambda I is singular")
    return float(np.mean(np.sum(z * z / d, axis=1)) / f.values.shape[0])


def profile_sigma2(y, theta: float, lam: float, factor: SpectralFactor | None = None) -> float:
    """Closed-form maximiser ``y' (Sigma + lam I)^{-1} y / n`` of the likelihood in ``sigma2``.

    For several replicates this is the mean of the per-replicate values.  A
    zero field gives 0 (degenerate; the caller decides how to flag it).
    """
    if not (np.isfinite(lam) and lam >= 0):
        raise DomainError(f"lambda must be >= 0, got {lam}")
    ys = as_stack(y)
    f = _factor_for(ys.geometry, theta, factor)
    return _profile_from_z(f.project(ys.flat()), f, lam)


def concentrated_loglik(y, theta: float, lam: float, factor: SpectralFactor | None = None) -> float:
    """Log-likelihood with ``sigma2`` replaced by :func:`profile_sigma2`.

    With ``R`` replicates and ``s = profile_sigma2``,
    ``l = -R/2 * (n + n log s + sum log(e_i + lam) + n log 2 pi)``.
    Returns ``+inf`` for an all-zero field.
    """
    if not (np.isfinite(lam) and lam >= 0):
        raise DomainError(f"lambda must be >= 0, got {lam}")
    ys = as_stack(y)
    f = _factor_for(ys.geometry, theta, factor)
    n = ys.geometry.n
    s2 = _profile_from_z(f.project(ys.flat()), f, lam)
    logdet = float(np.sum(np.log(f.values + lam)))
    if s2 == 0.0:
        return math.inf
    return -0.5 * ys.replicates * (n + n * math.log(s2) + logdet + n * LOG_2PI)


def edf_from_values(values: np.ndarray, lam) -> np.ndarray:
    """``sum_i e_i / (e_i + lam)`` for scalar or array ``lam``."""
    lam = np.asarray(lam, dtype=np.float64)
    return np.sum(values[:, None] / (values[:, None] + lam.reshape(1, -1)), axis=0).reshape(lam.shape)


def edf(theta: float, lam: float, geom: GridGeometry, factor: SpectralFactor | None = None) -> float:
    """Effective degrees of freedom ``trace(Sigma (Sigma + lam I)^{-1})``."""
    if not lam >= 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    f = _factor_for(geom, theta, factor)
    return float(edf_from_values(f.values, lam))


def lambdas_for_edf(values: np.ndarray, targets, tol: float | None = None) -> np.ndarray:
    """Vectorised inverse of the EDF in ``lambda`` for fixed eigenvalues.

    Bisection on ``log(lambda)``; each bracket starts at the mean eigenvalue
    and is widened geometrically until the EDF straddles the target.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    n = values.shape[0]
    if np.any(~(targets > 0)) or np.any(~(targets < n)):
        raise DomainError(f"EDF targets must lie in (0, {n})")
    if tol is None:
        tol = 1e-6 * n
    centre = math.log(float(np.mean(values)))
    lo = np.full(targets.shape, centre)
    hi = np.full(targets.shape, centre)
    step = 1.0
    # edf decreases in lambda: need edf(lo) >= target >= edf(hi)
    for _ in range(200):
        need_lo = edf_from_values(values, np.exp(lo)) < targets
        need_hi = edf_from_values(values, np.exp(hi)) > targets
        if not (need_lo.any() or need_hi.any()):
            break
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
        step *= 2.0
    else:  # pragma: no cover - bracket always found for 0 < target < n
        raise NumericalError("could not bracket the EDF target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e_mid = edf_from_values(values, np.exp(mid))
        if np.all(np.abs(e_mid - targets) <= 0.01 * tol) or np.all(hi - lo < 1e-15 * (1 + np.abs(mid))):
            break
        above = e_mid > targets
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    lam = np.exp(mid)
    err = np.abs(edf_from_values(values, lam) - targets)
    if np.any(err > tol):
        raise NumericalError(f"EDF inversion missed its tolerance (max error {err.max():.3e})")
    return lam


def lambda_for_edf(theta: float, target: float, geom: GridGeometry, factor: SpectralFactor | None = None) -> float:
    """``lambda`` such that ``edf(theta, lambda)`` hits ``target`` within ``1e-6 * n``."""
    if not (0 < target < geom.n):
        raise DomainError(f"EDF target must lie in (0, {geom.n}), got {target}")
    f = _factor_for(geom, theta, factor)
    return float(lambdas_for_edf(f.values, [target])[0])
