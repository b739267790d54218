"""Raster files (stacks of replicate fields) and a synthetic two-regime generator.

Binary layout (all little-endian)::

    bytes 0-4    b"COVR1"
    bytes 5-16   u32 height, u32 width, u32 replicates
    bytes 17-    float64 values, replicate-major, row-major within a replicate

The CSV form has the header ``replicate,row,col,value`` with one line per cell.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError
from .gp import FieldStack, GridGeometry, lambda_for_edf, matern_nu1

MAGIC = b"COVR1"
_HEADER = struct.Struct("<III")


@dataclass
class Raster:
    """``replicates`` fields on a ``height x width`` grid; ``values`` has shape (R, H, W)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise DomainError(f"raster values must have shape (R, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("raster values must be finite")
        self.values = np.ascontiguousarray(v)

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def to_stack(self) -> FieldStack:
        return FieldStack(GridGeometry(self.height, self.width), self.values)


def as_raster(x) -> Raster:
    if isinstance(x, Raster):
        return x
    if isinstance(x, FieldStack):
        return Raster(x.values)
    return Raster(x)


def raster_bytes(r: Raster) -> bytes:
    return MAGIC + _HEADER.pack(r.height, r.width, r.replicates) + r.values.astype("<f8").tobytes()


def write_raster(r, path) -> None:
    with open(path, "wb") as fh:
        fh.write(raster_bytes(as_raster(r)))


def read_raster(path) -> Raster:
    """Read a binary raster; a ``.csv`` suffix selects the CSV form."""
    if str(path).lower().endswith(".csv"):
        return read_raster_csv(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read raster {path}: {exc}") from exc
    expected = "COVR1 raster (magic, u32 height/width/replicates, float64 payload)"
    if len(data) < len(MAGIC) + _HEADER.size or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a {expected}")
    h, w, r = _HEADER.unpack_from(data, len(MAGIC))
    payload = data[len(MAGIC) + _HEADER.size :]
    if h * w * r == 0 or len(payload) != 8 * h * w * r:
        raise FormatError(f"{path}: header {h}x{w}x{r} does not match payload of {len(payload)} bytes; expected {expected}")
    values = np.frombuffer(payload, dtype="<f8").reshape(r, h, w).astype(np.float64)
    try:
        return Raster(values)
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_raster_csv(r, path) -> None:
    r = as_raster(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "row", "col", "value"])
        for k in range(r.replicates):
            for i in range(r.height):
                for j in range(r.width):
                    w.writerow([k, i, j, repr(float(r.values[k, i, j]))])


def read_raster_csv(path) -> Raster:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read raster {path}: {exc}") from exc
    if not rows or rows[0] != ["replicate", "row", "col", "value"]:
        raise FormatError(f"{path}: expected CSV header replicate,row,col,value")
    try:
        idx = np.array([[int(a), int(b), int(c)] for a, b, c, _ in rows[1:]], dtype=np.int64).reshape(-1, 3)
        vals = np.array([float(v[3]) for v in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed raster row") from exc
    if idx.size == 0 or idx.min() < 0:
        raise FormatError(f"{path}: empty raster or negative index")
    shape = tuple(int(m) + 1 for m in idx.max(axis=0))
    if len(vals) != shape[0] * shape[1] * shape[2]:
        raise FormatError(f"{path}: {len(vals)} cells do not fill a {shape} raster")
    out = np.full(shape, np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    try:
        return Raster(out)
    except DomainError as exc:
        raise FormatError(f"{path}: missing or duplicate cells") from exc


def _embedding_sizes(n: int, limit: int = 4096):
    sizes = sorted({b * n * 2**k for b in (2, 3) for k in range(12) if b * n * 2**k <= max(limit, 2 * n)})
    return sizes or [2 * n]


def _torus_eigenvalues(height: int, width: int, theta: float, tol: float = 1e-6):
    # smallest torus whose circulant spectrum is non-negative up to ``tol``
    # (relative); the tiny negative remainder is set to zero
    for P0, P1 in zip(_embedding_sizes(height), _embedding_sizes(width)):
        di = np.minimum(np.arange(P0), P0 - np.arange(P0))
        dj = np.minimum(np.arange(P1), P1 - np.arange(P1))
        d = np.hypot(di[:, None], dj[None, :])
        ev = np.fft.fft2(matern_nu1(d, theta)).real
        if ev.min() >= -tol * ev.max():
            return np.maximum(ev, 0.0), (P0, P1)
    raise DomainError(f"circulant embedding failed for theta={theta} on {height}x{width}")


def simulate_raster(height: int, width: int, theta: float, lam: float, replicates: int, seed) -> np.ndarray:
    """Unit-sill fields with nugget ``lam`` on a large grid by circulant embedding.

    Each complex FFT of white noise yields two independent fields (real and
    imaginary parts).
    """
    if theta <= 0 or lam < 0 or replicates < 1:
        raise DomainError("need theta > 0, lam >= 0, replicates >= 1")
    ev, (P0, P1) = _torus_eigenvalues(height, width, theta)
    rng = np.random.default_rng(seed)
    amp = np.sqrt(ev / (P0 * P1))
    out = np.empty((replicates, height, width))
    for k in range(0, replicates, 2):
        z = rng.standard_normal((P0, P1)) + 1j * rng.standard_normal((P0, P1))
        f = np.fft.fft2(amp * z)[:height, :width]
        out[k] = f.real
        if k + 1 < replicates:
            out[k + 1] = f.imag
    out += np.sqrt(lam) * rng.standard_normal(out.shape)
    return out


def two_regime_raster(
    height: int = 128,
    width: int = 128,
    replicates: int = 30,
    theta_left: float = 4.0,
    theta_right: float = 16.0,
    edf: float = 128.0,
    window: int = 16,
    seed=0,
) -> Raster:
    """Left half drawn with range ``theta_left``, right half with ``theta_right``.

    Each side's nugget ratio gives EDF ``edf`` on a ``window x window`` patch.
    """
    geom = GridGeometry(window, window)
    seeds = np.random.SeedSequence(seed).spawn(2)
    half = width // 2
    lam_l = lambda_for_edf(theta_left, edf, geom)
    lam_r = lambda_for_edf(theta_right, edf, geom)
    left = simulate_raster(height, width, theta_left, lam_l, replicates, seeds[0])
    right = simulate_raster(height, width, theta_right, lam_r, replicates, seeds[1])
    values = np.concatenate([left[:, :, :half], right[:, :, half:]], axis=2)
    return Raster(values)
