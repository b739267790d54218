"""Training pipelines for the NF, NV and NV30 estimators and their use for prediction.

Training samples are simulated from the training grid on the fly: a fixed
number of fields per configuration, optionally expanded to the eight
flips/rotations (NF), or turned into variograms (NV) or 30-replicate
variogram stacks (NV30).  Targets are the standardised (log lambda, theta).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, InputError, TrainingError
from .evaluate import TEST_BOX, clip_rule
from .gp import FactorCache, FieldStack, GridGeometry, as_stack
from .grids import (
    ParamGrid,
    ScalingStats,
    read_grid_csv,
    scale,
    scaling_stats,
    simulate_grid_fields,
    training_grid,
    unscale,
)
from .ml import EstimateRecord
from .nn import (
    AdamState,
    ModelSpec,
    WeightStore,
    adam_step,
    backward,
    build_nf,
    build_nv,
    build_nv30,
    forward,
    init_weights,
    save_weights,
)
from .variogram import lag_table, variograms

ARCHITECTURES = ("NF", "NV", "NV30")


@dataclass
class TrainConfig:
    """Settings for one training run.

    ``augment`` and ``refresh_every`` default by architecture (NF: augmented,
    refreshed every epoch; NV: refreshed every epoch; NV30: refreshed every
    50th epoch).  When ``grid`` is None an ``n_theta x n_edf`` training grid
    is built on a ``size x size`` geometry.
    """

    architecture: str = "NV"
    grid: ParamGrid | None = None
    n_theta: int = 201
    n_edf: int = 200
    size: int = 16
    fields_per_config: int = 3
    augment: bool | None = None
    batch_size: int = 200
    epochs: int = 300
    refresh_every: int | None = None
    replicates: int = 30
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint: str | None = None
    out: str | None = None
    report: str | None = None
    threads: int = 1
    dtype: str = "float32"
    transform: str | None = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise DomainError(f"architecture must be one of {ARCHITECTURES}")
        if self.transform is None:
            self.transform = "none" if self.architecture == "NF" else "log1p"
        check_transform(self.transform, self.architecture)
        if self.augment is None:
            self.augment = self.architecture == "NF"
        if self.refresh_every is None:
            self.refresh_every = 50 if self.architecture == "NV30" else 1
        if self.refresh_every < 1 or self.batch_size < 1 or self.fields_per_config < 1:
            raise DomainError("refresh_every, batch_size and fields_per_config must be >= 1")

    def geometry(self) -> GridGeometry:
        return self.grid.geometry if self.grid is not None else GridGeometry(self.size, self.size)

    def resolve_grid(self) -> ParamGrid:
        if self.grid is None:
            self.grid = training_grid(GridGeometry(self.size, self.size), self.n_theta, self.n_edf)
        return self.grid


_CONFIG_TYPES = {f.name: f.type for f in dc_fields(TrainConfig)}


def read_config(path) -> TrainConfig:
    """Parse a flat ``key = value`` file whose keys are :class:`TrainConfig` fields.

    ``grid`` may be ``training`` (build from ``n_theta``/``n_edf``) or a
    path to a grid CSV.  Lines starting with ``#`` are ignored.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _CONFIG_TYPES:
            raise FormatError(f"{path}:{lineno}: unknown key {k!r}")
        raw[k] = v
    grid_value = raw.pop("grid", "training")
    kw = {}
    for k, v in raw.items():
        t = _CONFIG_TYPES[k]
        try:
            if "bool" in t:
                if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(v)
                kw[k] = v.lower() in ("true", "1", "yes")
            elif "int" in t:
                kw[k] = int(v)
            else:
                kw[k] = v
        except ValueError as exc:
            raise FormatError(f"{path}: bad value for {k}: {v!r}") from exc
    try:
        cfg = TrainConfig(**kw)
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if grid_value != "training":
        gpath = Path(grid_value)
        if not gpath.is_absolute():
            gpath = Path(path).parent / gpath
        cfg.grid = read_grid_csv(gpath, cfg.geometry())
    return cfg


@dataclass
class TrainReport:
    mae: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    threads: int = 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mae", "seconds"])
            for i, (m, s) in enumerate(zip(self.mae, self.seconds), 1):
                w.writerow([i, repr(float(m)), repr(float(s))])


def spec_for(architecture: str, size: int = 16, replicates: int = 30) -> ModelSpec:
    n_lags = len(lag_table(GridGeometry(size, size)))
    if architecture == "NF":
        return build_nf(size)
    if architecture == "NV":
        return build_nv(n_lags)
    if architecture == "NV30":
        return build_nv30(n_lags, replicates)
    raise DomainError(f"unknown architecture {architecture!r}")


def dihedral_stack(fields: np.ndarray) -> np.ndarray:
    """All eight flips/rotations of each (H, W) field: (N, H, W) -> (N, 8, H, W)."""
    out = []
    for k in range(4):
        r = np.rot90(fields, k, axes=(-2, -1))
        out.append(r)
        out.append(r[..., ::-1])
    return np.stack(out, axis=1)


def generate_epoch(
    grid: ParamGrid,
    architecture: str,
    fields_per_config: int = 3,
    augment: bool = False,
    seed_epoch=0,
    scaling: ScalingStats | None = None,
    replicates: int = 30,
    cache: FactorCache | None = None,
    threads: int = 1,
    dtype=np.float32,
    transform: str = "none",
):
    """Simulate one epoch of shuffled ``(inputs, scaled targets)``.

    NF inputs are (N, H, W, 1) fields (times 8 with ``augment``); NV inputs
    are (N, lags) variograms; NV30 inputs are (N, replicates * lags) stacks
    flattened row-major over (replicate, lag).
    """
    scaling = scaling or scaling_stats(grid)
    geom = grid.geometry
    per = fields_per_config * (replicates if architecture == "NV30" else 1)
    fields = simulate_grid_fields(grid, per, seed_epoch, cache, threads)  # (G, per, H, W)
    ll, th = scale(grid.loglambda, grid.theta, scaling)
    target = np.stack([ll, th], axis=1)
    G = len(grid)
    if architecture == "NF":
        x = transform_inputs(fields.reshape(G * fields_per_config, *geom.shape), transform, fields=True)
        t = np.repeat(target, fields_per_config, axis=0)
        if augment:
            x = dihedral_stack(x).reshape(-1, *geom.shape)
            t = np.repeat(t, 8, axis=0)
        x = x[..., None]
    elif architecture == "NV":
        x = transform_inputs(variograms(fields.reshape(-1, *geom.shape), lag_table(geom)), transform)
        t = np.repeat(target, fields_per_config, axis=0)
    elif architecture == "NV30":
        vg = variograms(fields.reshape(-1, *geom.shape), lag_table(geom))
        x = transform_inputs(vg.reshape(G * fields_per_config, replicates * vg.shape[-1]), transform)
        t = np.repeat(target, fields_per_config, axis=0)
    else:
        raise DomainError(f"unknown architecture {architecture!r}")
    perm = np.random.default_rng([int(seed_epoch), 0xE90C]).permutation(x.shape[0])
    return np.ascontiguousarray(x[perm], dtype=dtype), np.ascontiguousarray(t[perm], dtype=dtype)


TRANSFORMS = ("none", "log1p", "unit")


def check_transform(transform: str, architecture: str) -> None:
    if transform not in TRANSFORMS:
        raise DomainError(f"transform must be one of {TRANSFORMS}, got {transform!r}")
    if transform == "log1p" and architecture == "NF":
        raise DomainError("log1p applies to variogram inputs only (NV, NV30)")


def transform_inputs(x: np.ndarray, transform: str = "none", fields: bool = False) -> np.ndarray:
    """Elementwise or per-sample input map shared by training and prediction.

    ``none`` passes inputs through.  ``log1p`` maps semivariances ``g`` to
    ``log(1 + g)``: invertible, so the overall level (which carries
    information on lambda when the sill is fixed) is kept while the dynamic
    range across the grid shrinks.  ``unit`` divides each sample by its
    level (RMS for fields, mean for variograms), removing the scale.
    Returns float64.
    """
    x = np.asarray(x, dtype=np.float64)
    if transform == "none":
        return x
    if transform == "log1p":
        if fields:
            raise DomainError("log1p applies to variogram inputs only")
        return np.log1p(x)
    if transform == "unit":
        if fields:
            level = np.sqrt(np.mean(x * x, axis=(-2, -1), keepdims=True))
        else:
            level = np.mean(x, axis=-1, keepdims=True)
        return x / np.where(level > 0, level, 1.0)
    raise DomainError(f"transform must be one of {TRANSFORMS}, got {transform!r}")


def reshuffle(x: np.ndarray, t: np.ndarray, seed, rows: int | None = None):
    """Permute samples and, for stacked inputs, the ``rows`` blocks within each sample."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.shape[0])
    x, t = x[perm], t[perm]
    if rows:
        n = x.shape[0]
        x3 = x.reshape(n, rows, -1)
        order = np.argsort(rng.random((n, rows)), axis=1)
        x = np.take_along_axis(x3, order[:, :, None], axis=1).reshape(n, -1)
    return x, t


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch)]).generate_state(1)[0])


def _save_checkpoint(path, params, adam: AdamState, epoch: int, report: TrainReport):
    arrays = {}
    for i, (p, m, v) in enumerate(zip(params, adam.m, adam.v)):
        for k in p:
            arrays[f"p{i}_{k}"] = p[k]
            arrays[f"m{i}_{k}"] = m[k]
            arrays[f"v{i}_{k}"] = v[k]
    arrays["_epoch"] = np.array(epoch)
    arrays["_step"] = np.array(adam.step)
    arrays["_mae"] = np.array(report.mae)
    arrays["_seconds"] = np.array(report.seconds)
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def _load_checkpoint(path, params, adam: AdamState, report: TrainReport) -> int:
    try:
        data = np.load(path)
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    for i, (p, m, v) in enumerate(zip(params, adam.m, adam.v)):
        for k in p:
            p[k][...] = data[f"p{i}_{k}"]
            m[k][...] = data[f"m{i}_{k}"]
            v[k][...] = data[f"v{i}_{k}"]
    adam.step = int(data["_step"])
    report.mae = [float(a) for a in data["_mae"]]
    report.seconds = [float(a) for a in data["_seconds"]]
    return int(data["_epoch"])


def train(config: TrainConfig, resume: str | None = None, progress=None):
    """Fit an estimator with Adam on the mean-absolute-error loss.

    Parameters
    ----------
    config : TrainConfig
    resume : str, optional
        Checkpoint written by an earlier run with the same config; training
        continues from the stored epoch and reproduces the uninterrupted run.
    progress : callable, optional
        Called as ``progress(epoch, mae)`` after each epoch.

    Returns
    -------
    WeightStore, TrainReport
    """
    t_start = time.perf_counter()
    grid = config.resolve_grid()
    geom = grid.geometry
    scaling = scaling_stats(grid)
    spec = spec_for(config.architecture, geom.height, config.replicates)
    if geom.height != geom.width:
        raise DomainError("estimators are defined on square fields")
    params = init_weights(spec, seed=config.seed, dtype=np.dtype(config.dtype))
    adam = AdamState.zeros_like(params)
    report = TrainReport(seed=config.seed, threads=config.threads)
    cache = FactorCache(geom)
    start = 0
    if resume is not None:
        start = _load_checkpoint(resume, params, adam, report)

    rows = config.replicates if config.architecture == "NV30" else None
    base_epoch, base = None, None
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        refresh_epoch = epoch - epoch % config.refresh_every
        if base_epoch != refresh_epoch:
            base = generate_epoch(
                grid,
                config.architecture,
                config.fields_per_config,
                config.augment,
                _epoch_seed(config.seed, refresh_epoch),
                scaling,
                config.replicates,
                cache,
                config.threads,
                np.dtype(config.dtype),
                config.transform,
            )
            base_epoch = refresh_epoch
        if epoch == refresh_epoch:
            x, t = base
        else:
            x, t = reshuffle(*base, seed=[config.seed, epoch, 1], rows=rows)
        total, count = 0.0, 0
        for a in range(0, x.shape[0], config.batch_size):
            xb, tb = x[a : a + config.batch_size], t[a : a + config.batch_size]
            loss, grads = backward(spec, params, xb, tb)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch + 1}; last checkpoint: {config.checkpoint or 'none'}"
                )
            adam_step(params, grads, adam)
            total += loss * xb.shape[0]
            count += xb.shape[0]
        report.mae.append(total / count)
        report.seconds.append(time.perf_counter() - t0)
        if progress is not None:
            progress(epoch + 1, report.mae[-1])
        if config.checkpoint and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            _save_checkpoint(config.checkpoint, params, adam, epoch + 1, report)

    report.wall_time = time.perf_counter() - t_start
    metadata = {
        "architecture": config.architecture,
        "epochs": len(report.mae),
        "loss_history": report.mae,
        "seed": config.seed,
        "threads": config.threads,
        "grid_shape": list(geom.shape),
        "grid_size": len(grid),
        "replicates": config.replicates,
        "transform": config.transform,
    }
    store = WeightStore(spec, params, scaling, metadata)
    if config.out:
        save_weights(store, config.out)
    if config.report:
        report.write_csv(config.report)
    return store, report


def aggregate_replicates(per_field) -> tuple[float, float]:
    """Combine per-field estimates: mean of log(lambda), geometric mean of theta."""
    arr = np.asarray(per_field, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] < 1:
        raise DomainError("need at least one per-field estimate")
    if np.any(~(arr[:, 1] > 0)):
        raise DomainError("theta estimates must be positive to aggregate")
    if arr.shape[0] == 1:
        return float(arr[0, 0]), float(arr[0, 1])
    return float(np.mean(arr[:, 0])), float(np.exp(np.mean(np.log(arr[:, 1]))))


def _architecture(store: WeightStore) -> str:
    return store.metadata.get("architecture", store.spec.name)


def _transform(store: WeightStore) -> str:
    return store.metadata.get("transform", "none")


def _store_geometry(store: WeightStore) -> GridGeometry:
    h, w = store.metadata.get("grid_shape", [16, 16])
    return GridGeometry(int(h), int(w))


def _as_sample_array(samples, geom: GridGeometry) -> np.ndarray:
    if isinstance(samples, FieldStack):
        return samples.values[None]
    if isinstance(samples, (list, tuple)):
        return np.stack([as_stack(s).values for s in samples])
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-2:] != geom.shape:
        raise InputError(f"expected fields on a {geom.shape} grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("field values must be finite")
    return arr


def nn_inputs(store: WeightStore, samples) -> tuple[np.ndarray, int]:
    """Network inputs for field samples (S, R, H, W); returns (inputs, R)."""
    arch = _architecture(store)
    geom = _store_geometry(store)
    arr = _as_sample_array(samples, geom)
    S, R = arr.shape[:2]
    if arch == "NF":
        return transform_inputs(arr.reshape(S * R, *geom.shape), _transform(store), fields=True)[..., None], R
    vg = variograms(arr, lag_table(geom))  # (S, R, L)
    return _variogram_inputs(store, vg)


def _variogram_inputs(store: WeightStore, vg: np.ndarray):
    arch = _architecture(store)
    S, R, L = vg.shape
    if arch == "NV":
        if L != store.spec.input_shape[0]:
            raise InputError(f"NV expects {store.spec.input_shape[0]} lags, got {L}")
        return transform_inputs(vg.reshape(S * R, L), _transform(store)), R
    if arch == "NV30":
        if R * L != store.spec.input_shape[0]:
            raise InputError(f"NV30 expects {store.spec.input_shape[0]} values per sample, got {R}x{L}")
        return transform_inputs(vg.reshape(S, R * L), _transform(store)), 1
    raise InputError(f"{arch} weights cannot take variogram input")


def _records_from_outputs(store, out, R, elapsed, geom, clip_box) -> list[EstimateRecord]:
    arch = _architecture(store)
    ll, th = unscale(out[:, 0].astype(np.float64), out[:, 1].astype(np.float64), store.scaling)
    ll = ll.reshape(-1, R)
    th = th.reshape(-1, R)
    recs = []
    per = elapsed / max(1, ll.shape[0])
    for i in range(ll.shape[0]):
        if R == 1:
            est = (float(ll[i, 0]), float(th[i, 0]))
            method = arch
        else:
            est = aggregate_replicates(np.column_stack([ll[i], th[i]]))
            method = {"NF": "NF30" if R == 30 else "NF", "NV": "NV-mean"}[arch]
        clipped = clip_rule(est, clip_box, geom) if clip_box is not None else False
        recs.append(EstimateRecord(est[0], est[1], method, elapsed=per, clipped=clipped))
    return recs


def predict_batch(store: WeightStore, samples, clip_box=TEST_BOX, batch_size: int = 256) -> list[EstimateRecord]:
    """Estimates for many field samples at once (see :func:`predict`)."""
    if store.scaling is None:
        raise InputError("weights carry no scaling statistics; cannot unscale predictions")
    t0 = time.perf_counter()
    geom = _store_geometry(store)
    arr = _as_sample_array(samples, geom)
    outs, R = [], 1
    for a in range(0, arr.shape[0], batch_size):
        x, R = nn_inputs(store, arr[a : a + batch_size])
        outs.append(forward(store.spec, store.params, x))
    out = np.concatenate(outs)
    return _records_from_outputs(store, out, R, time.perf_counter() - t0, geom, clip_box)


def predict(store: WeightStore, sample, clip_box=TEST_BOX) -> EstimateRecord:
    """Estimate ``(log lambda, theta)`` for one sample.

    ``sample`` is a FieldStack (NF: each replicate estimated then aggregated;
    NV: one field, or several aggregated as an NV-mean baseline; NV30: 30
    replicates) or, for NV/NV30 weights, an array of variograms (R, lags).
    """
    if isinstance(sample, np.ndarray) and sample.ndim == 2 and sample.shape[-1] == len(
        lag_table(_store_geometry(store))
    ) and sample.shape != _store_geometry(store).shape:
        return predict_variograms(store, sample, clip_box)
    return predict_batch(store, [as_stack(sample)] if not isinstance(sample, FieldStack) else sample, clip_box)[0]


def predict_variograms(store: WeightStore, vg, clip_box=TEST_BOX) -> EstimateRecord:
    """Estimate from precomputed variograms of shape (replicates, lags)."""
    if store.scaling is None:
        raise InputError("weights carry no scaling statistics; cannot unscale predictions")
    t0 = time.perf_counter()
    vg = np.asarray(vg, dtype=np.float64)
    if vg.ndim == 1:
        vg = vg[None]
    x, R = _variogram_inputs(store, vg[None])
    out = forward(store.spec, store.params, x)
    return _records_from_outputs(store, out, R, time.perf_counter() - t0, _store_geometry(store), clip_box)[0]
