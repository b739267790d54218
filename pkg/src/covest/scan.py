"""Moving-window estimation of (log lambda, theta) over a large raster.

Every ``window x window`` patch (stride 1 by default) is estimated with
either the grid-search likelihood (``ml``: ML/ML30 depending on the
replicate count) or a trained network, giving per-location parameter maps
that describe how the covariance changes across the domain.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, InputError
from .evaluate import TEST_BOX, clip_rule
from .gp import FactorCache, GridGeometry
from .grids import ParamGrid
from .ml import ml_fit
from .raster import Raster, as_raster, write_raster

METHODS = ("ml", "ml30", "nv", "nv30", "nf", "nf30")
_ARCH = {"nv": "NV", "nv30": "NV30", "nf": "NF", "nf30": "NF"}


def standardize(values: np.ndarray):
    """Standardise each location by its mean and population sd across replicates.

    Returns the standardised values and a mask of locations with zero sd
    (their values are set to 0).
    """
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean(axis=0)
    sd = v.std(axis=0)
    bad = sd == 0
    out = (v - mean) / np.where(bad, 1.0, sd)
    out[:, bad] = 0.0
    return out, bad


@dataclass
class WindowScanResult:
    """Per-window estimates; every array has shape (rows, cols) of window positions."""

    loglambda: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    clipped: np.ndarray = field(repr=False)
    flagged: np.ndarray = field(repr=False)
    window: int = 16
    stride: int = 1
    method: str = "nv30"
    seconds: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    @property
    def count(self) -> int:
        return int(self.theta.size)

    def summary(self) -> dict:
        ok = ~self.clipped
        return {
            "method": self.method,
            "window": self.window,
            "stride": self.stride,
            "rows": self.shape[0],
            "cols": self.shape[1],
            "estimates": self.count,
            "clipped": int(self.clipped.sum()),
            "flagged": int(self.flagged.sum()),
            "mean_loglambda_unclipped": float(self.loglambda[ok].mean()) if ok.any() else float("nan"),
            "mean_theta_unclipped": float(self.theta[ok].mean()) if ok.any() else float("nan"),
            "seconds": self.seconds,
            "seconds_per_window": self.seconds / max(1, self.count),
        }

    def write(self, prefix) -> list[str]:
        """Write ``<prefix>_loglambda.covr``, ``_theta.covr``, ``_clip.covr`` and ``_summary.csv``."""
        paths = []
        for name, arr in (("loglambda", self.loglambda), ("theta", self.theta), ("clip", self.clipped)):
            p = f"{prefix}_{name}.covr"
            write_raster(Raster(np.asarray(arr, dtype=np.float64)[None]), p)
            paths.append(p)
        p = f"{prefix}_summary.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in self.summary().items():
                w.writerow([k, repr(v) if isinstance(v, float) else v])
        paths.append(p)
        return paths


def window_positions(height: int, width: int, window: int, stride: int = 1) -> tuple[int, int]:
    if window < 2 or stride < 1:
        raise DomainError("window must be >= 2 and stride >= 1")
    if height < window or width < window:
        raise InputError(f"raster {height}x{width} is smaller than the {window}x{window} window")
    return (height - window) // stride + 1, (width - window) // stride + 1


def extract_windows(values: np.ndarray, window: int, stride: int = 1) -> np.ndarray:
    """All windows as a read-only view of shape (rows, cols, R, window, window)."""
    v = sliding_window_view(values, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return v.transpose(1, 2, 0, 3, 4)


def window_scan(
    raster,
    window: int = 16,
    method: str = "nv30",
    weights=None,
    grid: ParamGrid | None = None,
    standardize_locations: bool = True,
    stride: int = 1,
    threads: int = 1,
    clip_box=TEST_BOX,
    chunk_rows: int = 4,
) -> WindowScanResult:
    """Estimate the covariance parameters in every window of ``raster``.

    Parameters
    ----------
    raster : Raster or array (R, H, W)
    window : int
    method : {"ml", "ml30", "nv", "nv30", "nf", "nf30"}
        ``ml``/``ml30`` need ``grid``; the network methods need ``weights``
        (a WeightStore of the matching architecture).
    standardize_locations : bool
        Standardise every location across replicates first.  Windows touching
        a zero-sd location are still estimated but flagged.
    stride : int
    threads : int
        Window rows are split across threads; results are placed by index.
    chunk_rows : int
        Window rows per work unit (bounds memory).
    """
    t0 = time.perf_counter()
    method = method.lower()
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    r = as_raster(raster)
    rows, cols = window_positions(r.height, r.width, window, stride)
    if standardize_locations:
        values, bad = standardize(r.values)
    else:
        values, bad = r.values, np.zeros((r.height, r.width), dtype=bool)
    windows = extract_windows(values, window, stride)
    flagged = extract_windows(bad[None].astype(np.uint8), window, stride).reshape(rows, cols, -1).any(axis=2)

    geom = GridGeometry(window, window)
    if method.startswith("ml"):
        if grid is None:
            raise InputError("ML window scans need a parameter grid")
        if grid.geometry.shape != geom.shape:
            raise InputError(f"grid is defined on {grid.geometry.shape}, window is {geom.shape}")
        cache = FactorCache(grid.geometry)
        for theta, _ in grid.theta_blocks():
            cache.get(theta)
    else:
        if weights is None:
            raise InputError("network window scans need weights")
        from .train import _architecture, _store_geometry, predict_batch

        arch = _architecture(weights)
        if arch != _ARCH[method]:
            raise InputError(f"weights are for {arch}, not {method}")
        if _store_geometry(weights).shape != geom.shape:
            raise InputError(f"weights expect {_store_geometry(weights).shape} fields, window is {geom.shape}")

    ll = np.empty((rows, cols))
    th = np.empty((rows, cols))
    clipped = np.empty((rows, cols), dtype=bool)

    def run(a):
        b = min(rows, a + chunk_rows)
        block = np.ascontiguousarray(windows[a:b]).reshape(-1, r.replicates, window, window)
        if method.startswith("ml"):
            recs = [ml_fit(s, grid, cache=cache) for s in block]
            flags = [clip_rule(rec.estimate(), clip_box, geom) for rec in recs]
        else:
            recs = predict_batch(weights, block, clip_box=clip_box)
            flags = [rec.clipped for rec in recs]
        ll[a:b] = np.array([rec.loglambda_hat for rec in recs]).reshape(b - a, cols)
        th[a:b] = np.array([rec.theta_hat for rec in recs]).reshape(b - a, cols)
        clipped[a:b] = np.array(flags).reshape(b - a, cols)

    starts = range(0, rows, chunk_rows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    else:
        for a in starts:
            run(a)
    return WindowScanResult(ll, th, clipped, flagged, window, stride, method, time.perf_counter() - t0)
