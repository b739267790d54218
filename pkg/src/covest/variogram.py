"""Exact-lag empirical variograms on regular grids.

Site pairs are grouped by their exact Euclidean distance (keyed by the
integer squared lag), so a 16 x 16 grid yields 119 lags and no binning rule
is needed.

Two evaluation routes are provided:

``"direct"``
    Enumerates all pairs.  Squared differences are accumulated in 64-bit
    fixed point with a per-field power-of-two scale, so the per-lag sums are
    exact integers and independent of traversal order.
``"fft"`` (default)
    Per-offset sums ``sum (y(s) - y(s+h))^2`` from zero-padded FFT
    correlations, several times faster.  Fields are first mapped to a
    canonical orientation among their eight flips/rotations, which keeps the
    output bit-identical across those transforms.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError, InputError
from .gp import FieldStack, GridGeometry, as_stack

_CHUNK_BYTES = 64 * 2**20


@dataclass(frozen=True)
class LagTable:
    """Distinct pair distances of a grid with their pair counts."""

    geometry: GridGeometry
    squared_lags: np.ndarray = field(repr=False)
    pair_counts: np.ndarray = field(repr=False)
    # pair endpoints sorted by lag, and the start offset of each lag's run
    _first: np.ndarray = field(repr=False, compare=False)
    _second: np.ndarray = field(repr=False, compare=False)
    _starts: np.ndarray = field(repr=False, compare=False)
    _bits: int = field(repr=False, compare=False)
    # FFT route: flat indices of half-plane offsets in the padded grid,
    # sorted by lag, and the start of each lag's run of offsets
    _offset_index: np.ndarray = field(repr=False, compare=False)
    _offset_starts: np.ndarray = field(repr=False, compare=False)
    _pad: tuple = field(repr=False, compare=False)

    def __len__(self):
        return self.squared_lags.shape[0]

    @property
    def distances(self) -> np.ndarray:
        return self.geometry.spacing * np.sqrt(self.squared_lags.astype(np.float64))


@functools.lru_cache(maxsize=16)
def lag_table(geom: GridGeometry) -> LagTable:
    """Enumerate all unordered site pairs of ``geom`` and group them by distance."""
    if geom.n < 2:
        raise DomainError("a lag table needs at least two sites")
    i, j = np.triu_indices(geom.n, k=1)
    c = geom.coordinates()
    d = c[i] - c[j]
    sq = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
    order = np.argsort(sq, kind="stable")
    i, j, sq = i[order], j[order], sq[order]
    uniq, starts, counts = np.unique(sq, return_index=True, return_counts=True)
    bits = 62 - math.ceil(math.log2(int(counts.max()) + 1))

    H, W = geom.shape
    pad = (_fft_size(2 * H - 1), _fft_size(2 * W - 1))
    offsets = [(0, dc) for dc in range(1, W)]
    offsets += [(dr, dc) for dr in range(1, H) for dc in range(-(W - 1), W)]
    offsets = np.array(offsets, dtype=np.int64).reshape(-1, 2)
    off_sq = offsets[:, 0] ** 2 + offsets[:, 1] ** 2
    order = np.argsort(off_sq, kind="stable")
    offsets, off_sq = offsets[order], off_sq[order]
    off_index = (offsets[:, 0] % pad[0]) * pad[1] + (offsets[:, 1] % pad[1])
    off_starts = np.searchsorted(off_sq, uniq)
    for a in (uniq, counts, i, j, starts, off_index, off_starts):
        a.setflags(write=False)
    return LagTable(geom, uniq, counts, i, j, starts, bits, off_index, off_starts, pad)


def _fft_size(m: int) -> int:
    # smallest 2^a 3^b 5^c >= m
    best = 1 << (m - 1).bit_length()
    p5 = 1
    while p5 < best:
        p35 = p5
        while p35 < best:
            p = p35
            while p < m:
                p *= 2
            best = min(best, p)
            p35 *= 3
        p5 *= 5
    return best


def _variogram_rows_direct(flat: np.ndarray, lt: LagTable) -> np.ndarray:
    """Semivariances for each row of a (N, n) array by pair enumeration."""
    N = flat.shape[0]
    P = lt._first.shape[0]
    out = np.empty((N, len(lt)))
    if P == 0:
        return out
    chunk = max(1, _CHUNK_BYTES // (8 * P))
    denom = 2.0 * lt.pair_counts
    for a in range(0, N, chunk):
        block = flat[a : a + chunk]
        sq = block[:, lt._first] - block[:, lt._second]
        np.multiply(sq, sq, out=sq)
        peak = sq.max(axis=1)
        _, expo = np.frexp(peak)
        shift = (lt._bits - expo).astype(np.int64)
        # scale by 2**shift (exact), round to integers, sum exactly per lag
        q = np.rint(np.ldexp(sq, shift[:, None])).astype(np.int64)
        sums = np.add.reduceat(q, lt._starts, axis=1)
        gamma = np.ldexp(sums.astype(np.float64), -shift[:, None]) / denom
        gamma[peak == 0] = 0.0
        out[a : a + chunk] = gamma
    return out


def _dihedral_images(fields: np.ndarray) -> list[np.ndarray]:
    out = []
    for k in range(4):
        r = np.rot90(fields, k, axes=(-2, -1))
        out.append(r)
        out.append(r[..., ::-1])
    return out


def canonical_orientation(fields: np.ndarray) -> np.ndarray:
    """Map each (H, W) field to a fixed representative of its dihedral orbit.

    The representative is the lexicographically smallest flattened image
    among the eight flips/rotations (only images with the original shape
    compete for non-square grids).
    """
    H, W = fields.shape[-2:]
    images = [im for im in _dihedral_images(fields) if im.shape[-2:] == (H, W)]
    stacked = np.stack([im.reshape(-1, H * W) for im in images], axis=1)  # (N, k, n)
    N, k, n = stacked.shape
    alive = np.ones((N, k), dtype=bool)
    for c in range(n):
        v = np.where(alive, stacked[:, :, c], np.inf)
        alive &= v == v.min(axis=1, keepdims=True)
        if np.all(alive.sum(axis=1) == 1):
            break
    pick = np.argmax(alive, axis=1)
    return stacked[np.arange(N), pick].reshape(N, H, W)


def _variogram_rows_fft(flat: np.ndarray, lt: LagTable) -> np.ndarray:
    """Semivariances for each row of a (N, n) array via FFT correlations."""
    H, W = lt.geometry.shape
    N = flat.shape[0]
    P0, P1 = lt._pad
    fields = canonical_orientation(flat.reshape(N, H, W))
    fields = fields - fields.mean(axis=(1, 2), keepdims=True)
    mask = np.zeros((P0, P1))
    mask[:H, :W] = 1.0
    fm = np.fft.rfft2(mask)
    fy = np.fft.rfft2(fields, s=(P0, P1))
    fy2 = np.fft.rfft2(fields * fields, s=(P0, P1))
    # sum_s [y(s)^2 M(s+h) + M(s) y(s+h)^2 - 2 y(s) y(s+h)]
    spec = np.conj(fy2) * fm + np.conj(fm) * fy2 - 2.0 * (fy.real**2 + fy.imag**2)
    per_offset = np.fft.irfft2(spec, s=(P0, P1)).reshape(N, -1)[:, lt._offset_index]
    sums = np.add.reduceat(np.maximum(per_offset, 0.0), lt._offset_starts, axis=1)
    # constant fields: mean removal can leave rounding residue
    sums[np.ptp(flat, axis=1) == 0] = 0.0
    return sums / (2.0 * lt.pair_counts)


def _variogram_rows(flat: np.ndarray, lt: LagTable, method: str = "fft") -> np.ndarray:
    if method == "fft":
        out = np.empty((flat.shape[0], len(lt)))
        chunk = 4096
        for a in range(0, flat.shape[0], chunk):
            out[a : a + chunk] = _variogram_rows_fft(flat[a : a + chunk], lt)
        return out
    if method == "direct":
        return _variogram_rows_direct(flat, lt)
    raise ValueError(f"unknown variogram method {method!r}")


def _check_geometry(ys: FieldStack, lt: LagTable):
    if ys.geometry != lt.geometry:
        raise InputError(f"field grid {ys.geometry} does not match lag table grid {lt.geometry}")


def empirical_variogram(y, lt: LagTable | None = None, method: str = "fft") -> np.ndarray:
    """Semivariance ``gamma(h) = sum (y_i - y_j)^2 / (2 N_h)`` at every exact lag."""
    ys = as_stack(y)
    if ys.replicates != 1:
        raise InputError("empirical_variogram expects a single field; use variogram_stack")
    lt = lt or lag_table(ys.geometry)
    _check_geometry(ys, lt)
    return _variogram_rows(ys.flat(), lt, method)[0]


def variogram_stack(ys, lt: LagTable | None = None, method: str = "fft") -> np.ndarray:
    """One variogram per replicate, shape (replicates, lags)."""
    ys = as_stack(ys)
    lt = lt or lag_table(ys.geometry)
    _check_geometry(ys, lt)
    return _variogram_rows(ys.flat(), lt, method)


def variograms(fields: np.ndarray, lt: LagTable, method: str = "fft") -> np.ndarray:
    """Variograms of an arbitrary stack of fields ``(..., H, W)`` -> ``(..., L)``."""
    fields = np.asarray(fields, dtype=np.float64)
    if fields.shape[-2:] != lt.geometry.shape:
        raise InputError(f"fields of shape {fields.shape} do not match grid {lt.geometry.shape}")
    if not np.all(np.isfinite(fields)):
        raise InputError("field values must be finite")
    lead = fields.shape[:-2]
    flat = fields.reshape(-1, lt.geometry.n)
    return _variogram_rows(flat, lt, method).reshape(*lead, len(lt))


def write_variogram_csv(rows: np.ndarray, lt: LagTable, path) -> None:
    rows = np.atleast_2d(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"h{int(s)}" for s in lt.squared_lags])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_variogram_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not all(h.startswith("h") for h in rows[0]):
        raise FormatError(f"{path}: expected a header of squared lags h<k>")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


def write_lag_table_csv(lt: LagTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance", "pair_count"])
        for d, c in zip(lt.distances, lt.pair_counts):
            w.writerow([repr(float(d)), int(c)])
