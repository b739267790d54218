"""Simulation-study harness: test sets, error summaries, timing and domain clipping.

Estimators are plain callables taking an array of samples ``(S, R, H, W)``
and returning one :class:`~covest.ml.EstimateRecord` per sample;
:func:`ml_estimator` and :func:`nn_estimator` wrap the two families.
"""

from __future__ import annotations

import csv
import functools
import math
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .gp import GridGeometry, correlation_eigenvalues, edf_from_values
from .grids import TEST_EDF, TEST_THETA, ParamGrid, ScalingStats, simulate_grid_fields

TEST_BOX = (TEST_THETA, TEST_EDF)
CLIP_MARGIN = 0.05
SPLIT = (0.5 * (TEST_THETA[0] + TEST_THETA[1]), 0.5 * (TEST_EDF[0] + TEST_EDF[1]))
PARAMETERS = ("loglambda", "theta")
REGIONS = ("lower", "upper")


@functools.lru_cache(maxsize=4096)
def _eigenvalues(height: int, width: int, spacing: float, theta: float) -> np.ndarray:
    return correlation_eigenvalues(GridGeometry(height, width, spacing), theta)


def estimate_edf(loglambda: float, theta: float, geom: GridGeometry) -> float:
    """EDF of the configuration ``(exp(loglambda), theta)`` on ``geom``."""
    if not theta > 0:
        return math.nan
    lam = 0.0 if loglambda == -math.inf else math.exp(loglambda)
    values = _eigenvalues(geom.height, geom.width, geom.spacing, float(theta))
    return float(edf_from_values(values, lam))


def clip_rule(estimate, box=TEST_BOX, geom: GridGeometry | None = None, margin: float = CLIP_MARGIN) -> bool:
    """True when ``(theta, EDF)`` of an estimate lies outside the expanded test box.

    Parameters
    ----------
    estimate : (loglambda, theta)
    box : ((theta_lo, theta_hi), (edf_lo, edf_hi))
    geom : GridGeometry, default 16 x 16
    margin : float
        Fraction of each side's width added on both ends.
    """
    loglambda, theta = float(estimate[0]), float(estimate[1])
    (t0, t1), (e0, e1) = box
    mt, me = margin * (t1 - t0), margin * (e1 - e0)
    if not (t0 - mt <= theta <= t1 + mt) or math.isnan(loglambda):
        return True
    e = estimate_edf(loglambda, theta, geom or GridGeometry(16, 16))
    return not (e0 - me <= e <= e1 + me)


@dataclass
class TestSet:
    """Simulated samples with their true configurations.

    ``fields`` has shape (samples, replicates, H, W); sample ``i`` was drawn
    from configuration ``config[i]`` of ``grid``.
    """

    __test__ = False

    grid: ParamGrid
    fields: np.ndarray = field(repr=False)
    config: np.ndarray = field(repr=False)

    def __len__(self):
        return self.fields.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return self.grid.theta[self.config]

    @property
    def loglambda(self) -> np.ndarray:
        return self.grid.loglambda[self.config]

    @property
    def edf(self) -> np.ndarray:
        return self.grid.edf_target[self.config]

    def first_replicates(self, r: int = 1) -> "TestSet":
        """The same samples restricted to their first ``r`` replicates."""
        return TestSet(self.grid, self.fields[:, :r], self.config)


def make_test_set(grid: ParamGrid, fields_per_config: int = 5, replicates_per_field: int = 1, seed=0, threads: int = 1):
    """Simulate ``fields_per_config`` samples of ``replicates_per_field`` fields per configuration."""
    per = fields_per_config * replicates_per_field
    sims = simulate_grid_fields(grid, per, seed, threads=threads)
    H, W = grid.geometry.shape
    fields = sims.reshape(len(grid) * fields_per_config, replicates_per_field, H, W)
    config = np.repeat(np.arange(len(grid)), fields_per_config)
    return TestSet(grid, fields, config)


make_test_set.__test__ = False


def ml_estimator(grid: ParamGrid, cache=None, threads: int = 1):
    """Grid-search ML as an estimator callable (ML or ML30 by replicate count).

    With ``cache=None`` every call factorises the grid afresh; pass a
    :class:`~covest.gp.FactorCache` to share factors across calls.
    """
    from .ml import ml_fit_batch

    def run(samples):
        return ml_fit_batch(list(samples), grid, threads=threads, cache=cache)

    return run


def nn_estimator(store, batch_size: int = 256):
    """A trained network (from :func:`covest.train.train`) as an estimator callable."""
    from .train import predict_batch

    def run(samples):
        return predict_batch(store, samples, batch_size=batch_size)

    return run


RAW_COLUMNS = [
    "method",
    "sample",
    "config",
    "theta",
    "loglambda",
    "edf",
    "theta_hat",
    "loglambda_hat",
    "err_theta",
    "err_loglambda",
    "clipped",
    "failed",
]
SUMMARY_COLUMNS = ["method", "parameter", "region", "count", "failed", "bias", "sd", "mae"]


@dataclass
class RegionStats:
    count: int
    failed: int
    bias: float
    sd: float
    mae: float


@dataclass
class EvalSummary:
    """Bias, sd and MAE of the errors per parameter and half-space.

    Errors in ``theta`` are split at the midpoint of the test theta range,
    errors in ``log lambda`` at the midpoint of the test EDF range.
    ``scaled_mae`` is the mean absolute error over both coordinates after
    dividing by the scaling standard deviations (when available).
    """

    method: str
    stats: dict = field(default_factory=dict)  # (parameter, region) -> RegionStats
    failed: int = 0
    clipped: int = 0
    scaled_mae: float = math.nan

    def get(self, parameter: str, region: str) -> RegionStats:
        return self.stats[(parameter, region)]


@dataclass
class RawErrors:
    """Per-sample errors of one or more methods (one dict per row, RAW_COLUMNS keys)."""

    rows: list = field(default_factory=list)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RAW_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in RAW_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "RawErrors":
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise FormatError(f"cannot read raw error file {path}: {exc}") from exc
        if not rows or rows[0] != RAW_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(RAW_COLUMNS)}")
        out = []
        for r in rows[1:]:
            d = dict(zip(RAW_COLUMNS, r))
            for c in ("sample", "config", "clipped", "failed"):
                d[c] = int(d[c])
            for c in RAW_COLUMNS[3:10]:
                d[c] = float(d[c])
            out.append(d)
        return cls(out)

    def write_long_csv(self, path) -> None:
        """One row per (method, parameter, region, error): the shape of a box-plot panel."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "parameter", "region", "error"])
            for r in self.rows:
                if r["failed"]:
                    continue
                for p in PARAMETERS:
                    w.writerow([r["method"], p, _region(r, p), _fmt(r[f"err_{p}"])])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _region(row, parameter: str, split=SPLIT) -> str:
    if parameter == "theta":
        return "lower" if row["theta"] < split[0] else "upper"
    return "lower" if row["edf"] < split[1] else "upper"


def raw_errors(method: str, records, test_set: TestSet) -> RawErrors:
    rows = []
    for i, rec in enumerate(records):
        failed = rec.error is not None or not (math.isfinite(rec.theta_hat) and math.isfinite(rec.loglambda_hat))
        th, ll = float(test_set.theta[i]), float(test_set.loglambda[i])
        rows.append(
            {
                "method": method,
                "sample": i,
                "config": int(test_set.config[i]),
                "theta": th,
                "loglambda": ll,
                "edf": float(test_set.edf[i]),
                "theta_hat": float(rec.theta_hat),
                "loglambda_hat": float(rec.loglambda_hat),
                "err_theta": float(rec.theta_hat) - th if not failed else math.nan,
                "err_loglambda": float(rec.loglambda_hat) - ll if not failed else math.nan,
                "clipped": int(bool(rec.clipped)),
                "failed": int(failed),
            }
        )
    return RawErrors(rows)


def summarize(raw: RawErrors, scaling: ScalingStats | None = None, split=SPLIT) -> dict[str, EvalSummary]:
    """Aggregate per-sample errors into an :class:`EvalSummary` per method.

    Failed samples are excluded and counted; all statistics use population
    moments so the summary is a pure function of the rows.
    """
    out = {}
    for m in raw.methods():
        rows = [r for r in raw.rows if r["method"] == m]
        ok = [r for r in rows if not r["failed"]]
        s = EvalSummary(m, failed=len(rows) - len(ok), clipped=sum(r["clipped"] for r in rows))
        for p in PARAMETERS:
            for region in REGIONS:
                sel = [r for r in rows if _region(r, p, split) == region]
                e = np.array([r[f"err_{p}"] for r in sel if not r["failed"]], dtype=np.float64)
                nfail = sum(r["failed"] for r in sel)
                if e.size:
                    s.stats[(p, region)] = RegionStats(
                        int(e.size), nfail, float(e.mean()), float(e.std()), float(np.abs(e).mean())
                    )
                else:
                    s.stats[(p, region)] = RegionStats(0, nfail, 0.0, 0.0, 0.0)
        if scaling is not None and ok:
            el = np.array([r["err_loglambda"] for r in ok]) / scaling.sd_loglambda
            et = np.array([r["err_theta"] for r in ok]) / scaling.sd_theta
            s.scaled_mae = float(0.5 * (np.abs(el).mean() + np.abs(et).mean()))
        out[m] = s
    return out


def write_summary_csv(summaries: dict[str, EvalSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for m, s in summaries.items():
            for (p, region), st in s.stats.items():
                w.writerow([m, p, region, st.count, st.failed, repr(st.bias), repr(st.sd), repr(st.mae)])


def evaluate(methods: dict, test_set: TestSet, scaling: ScalingStats | None = None):
    """Run each estimator on ``test_set`` and summarise its errors.

    Parameters
    ----------
    methods : dict
        ``name -> callable(samples) -> list of EstimateRecord``.
    test_set : TestSet
    scaling : ScalingStats, optional
        Enables ``scaled_mae`` in the summaries.

    Returns
    -------
    summaries : dict[str, EvalSummary]
    raw : RawErrors
    """
    raw = RawErrors()
    for name, est in methods.items():
        records = est(test_set.fields)
        raw.rows.extend(raw_errors(name, records, test_set).rows)
    return summarize(raw, scaling), raw


@dataclass
class TimingResult:
    method: str
    samples: int
    total_seconds: float
    per_sample: float
    repetitions: list = field(default_factory=list)
    hardware: str = ""
    threads: int = 1
    records: list = field(default_factory=list, repr=False)


TIMING_COLUMNS = ["method", "samples", "total_seconds", "per_sample", "threads", "hardware"]


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or platform.system()} cpus={os.cpu_count()}"


def benchmark(methods: dict, samples, warmup: int = 1, repetitions: int = 3, threads: int = 1, per_sample=False):
    """Median wall time of each estimator over the same samples.

    Parameters
    ----------
    methods : dict
        ``name -> callable(samples) -> records``; methods run one after another.
    samples : array (S, R, H, W)
    warmup : int
        Untimed calls on the first sample before timing.
    repetitions : int
        Timed passes; the median is reported.
    per_sample : bool
        Time each sample in its own call (median over samples and passes)
        instead of one call on the whole batch.
    """
    samples = np.asarray(samples)
    out = {}
    for name, est in methods.items():
        for _ in range(warmup):
            est(samples[:1])
        totals, records = [], None
        for _ in range(repetitions):
            if per_sample:
                times, recs = [], []
                for s in samples:
                    t0 = time.perf_counter()
                    recs.extend(est(s[None]))
                    times.append(time.perf_counter() - t0)
                totals.append(statistics.median(times) * len(samples))
            else:
                t0 = time.perf_counter()
                recs = est(samples)
                totals.append(time.perf_counter() - t0)
            records = recs
        total = statistics.median(totals)
        out[name] = TimingResult(
            name, len(samples), total, total / len(samples), totals, hardware_note(), threads, records
        )
    return out


def write_timing_csv(results: dict[str, TimingResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for r in results.values():
            w.writerow([r.method, r.samples, repr(r.total_seconds), repr(r.per_sample), r.threads, r.hardware])

