"""Windowing, normalisation and the per-cluster training loop.

The 30-day protocol: days 1-20 are the training window and days 21-30 the
evaluation window. Inside the training window the last two days only
supply validation targets for early stopping.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, ValidationError
from .evaluation import ZERO_TARGET
from .ingest import HourlyCellSeries
from .model import ModelGraph, ModelSpec
from .nn import AdamState, adam_step, clip_grad_norm, global_norm

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
GLOBAL_SCOPE = "global"


@dataclass(frozen=True)
class Sample:
    cell_id: int
    input: np.ndarray
    target: np.ndarray
    t0: int


@dataclass
class SampleSet:
    """Stacked samples: ``inputs [n, window]``, ``targets [n, horizon]``."""

    inputs: np.ndarray
    targets: np.ndarray
    cell_ids: np.ndarray
    t0: np.ndarray

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def empty(cls, window, horizon):
        return cls(np.zeros((0, window)), np.zeros((0, horizon)), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise ValidationError("no samples")
        return cls(
            np.stack([s.input for s in samples]),
            np.stack([s.target for s in samples]),
            np.array([s.cell_id for s in samples], dtype=np.int64),
            np.array([s.t0 for s in samples], dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValidationError("no samples")
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("inputs", "targets", "cell_ids", "t0")))

    def samples(self):
        return [Sample(int(c), x, y, int(t)) for c, x, y, t in zip(self.cell_ids, self.inputs, self.targets, self.t0)]


def window_arrays(series: HourlyCellSeries, window: int, horizon: int, split: tuple[int, int]) -> SampleSet:
    """Every (input, target) pair lying entirely inside ``split`` (absolute hours)."""
    start, end = split
    lo, hi = start - series.start_hour, end - series.start_hour
    if lo < 0 or hi > len(series.values) or hi < lo:
        raise ValidationError(f"cell {series.cell_id}: split [{start}, {end}) outside the series")
    count = (hi - lo) - window - horizon + 1
    if count <= 0:
        warnings.warn(
            f"cell {series.cell_id}: split of {hi - lo} hours is too short for window {window} + horizon {horizon}",
            stacklevel=2,
        )
        return SampleSet.empty(window, horizon)
    frames = np.lib.stride_tricks.sliding_window_view(series.values[lo:hi], window + horizon)[:count]
    frames = np.array(frames)
    return SampleSet(
        frames[:, :window],
        frames[:, window:],
        np.full(count, series.cell_id, dtype=np.int64),
        np.arange(count, dtype=np.int64) + start + window,
    )


def make_windows(series: HourlyCellSeries, window: int, horizon: int, split: tuple[int, int]) -> list[Sample]:
    return window_arrays(series, window, horizon, split).samples()


@dataclass(frozen=True)
class NormStats:
    scope: str
    mean: float
    std: float

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_norm(cells: Mapping[int, HourlyCellSeries], split: tuple[int, int], scope: str = GLOBAL_SCOPE) -> NormStats:
    """Mean and population std of every value of every cell inside ``split``."""
    if not cells:
        raise ValidationError(f"cannot fit normalisation for empty scope {scope!r}")
    start, end = split
    chunks = []
    for cid in sorted(cells):
        s = cells[cid]
        lo, hi = start - s.start_hour, end - s.start_hour
        if lo < 0 or hi > len(s.values) or hi <= lo:
            raise ValidationError(f"cell {cid}: split [{start}, {end}) outside the series")
        chunks.append(s.values[lo:hi])
    values = np.concatenate(chunks)
    return NormStats(str(scope), float(values.mean()), max(float(values.std()), STD_FLOOR))


def normalize(x, stats: NormStats):
    return stats.normalize(x)


def denormalize(z, stats: NormStats):
    return stats.denormalize(z)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    train_days: int = 20
    val_days: int = 2
    eval_days: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValidationError("epochs, batch_size and patience must be positive")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not 0 < self.val_days < self.train_days:
            raise ValidationError("val_days must lie strictly inside the training window")


@dataclass(frozen=True)
class Splits:
    """Absolute hour ranges of the experiment protocol."""

    fit: tuple[int, int]
    val_targets: tuple[int, int]
    train: tuple[int, int]
    eval: tuple[int, int]

    @classmethod
    def from_start(cls, start_hour: int, config: TrainConfig) -> "Splits":
        train_end = start_hour + 24 * config.train_days
        fit_end = train_end - 24 * config.val_days
        return cls(
            fit=(start_hour, fit_end),
            val_targets=(fit_end, train_end),
            train=(start_hour, train_end),
            eval=(train_end, train_end + 24 * config.eval_days),
        )


@dataclass
class TrainRun:
    variant: str
    model_id: str
    seed: int
    norm: NormStats
    cells: tuple[int, ...] = ()
    train_loss: list[float] = field(default_factory=list)
    val_mape: list[float] = field(default_factory=list)
    best_epoch: int = -1
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def predictor(self, spec: ModelSpec, batch: int = 1024):
        """Raw-traffic windows ``[n, window]`` to raw one-step forecasts."""
        model = spec.build()
        model.load_state_dict(self.weights)
        return make_predictor(model, self.norm, batch)


def make_predictor(model: ModelGraph, norm: NormStats, batch: int = 1024):
    def predict(windows):
        windows = np.asarray(windows, dtype=np.float64)
        out = []
        for i in range(0, len(windows), batch):
            z = norm.normalize(windows[i : i + batch])[..., None]
            out.append(norm.denormalize(model.forward(z)))
        if not out:
            return np.zeros((0, model.horizon))
        return np.concatenate(out)

    return predict


def _val_mape(model, val: SampleSet, norm: NormStats) -> float:
    if not len(val):
        return float("nan")
    pred = norm.denormalize(model.forward(val.inputs[..., None]))[:, 0]
    actual = norm.denormalize(val.targets)[:, 0]
    keep = actual > ZERO_TARGET
    if not keep.any():
        return float("nan")
    return float(100.0 * np.mean(np.abs(actual[keep] - pred[keep]) / actual[keep]))


def train(
    model: ModelGraph,
    samples: SampleSet,
    config: TrainConfig = TrainConfig(),
    val: SampleSet | None = None,
    norm: NormStats | None = None,
    variant: str = "model",
    model_id: str = GLOBAL_SCOPE,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainRun:
    """Minibatch Adam on MSE over normalised ``samples``.

    Samples are reshuffled each epoch from a generator seeded with
    ``config.seed``. With a validation set, training stops after
    ``config.patience`` epochs without a better validation MAPE and the
    best weights are restored.
    """
    if isinstance(samples, list):
        samples = SampleSet.from_samples(samples)
    if not len(samples):
        raise ValidationError("train needs at least one sample")
    norm = norm or NormStats(GLOBAL_SCOPE, 0.0, 1.0)
    val = val if val is not None else SampleSet.empty(samples.inputs.shape[1], samples.targets.shape[1])
    rng = np.random.default_rng(config.seed)
    opt = AdamState(lr=config.lr)
    params, grads = model.parameters(), model.gradients()
    x_all = norm.normalize(samples.inputs)[..., None]
    y_all = norm.normalize(samples.targets)
    val = SampleSet(norm.normalize(val.inputs), norm.normalize(val.targets), val.cell_ids, val.t0)

    run = TrainRun(variant, model_id, config.seed, norm, tuple(sorted(set(samples.cell_ids.tolist()))))
    best, best_state, stale = np.inf, model.state_dict(), 0
    n = len(samples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            model.zero_grad()
            pred = model.forward(x_all[idx])
            err = pred - y_all[idx]
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(p)) for k, p in params.items()}
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}; parameter norms {norms}")
            model.backward(2.0 * err / err.size)
            clip_grad_norm(grads, config.clip_norm)
            adam_step(opt, params, grads)
            total += loss * len(idx)
        run.train_loss.append(total / n)
        vm = _val_mape(model, val, norm)
        run.val_mape.append(vm)
        if on_epoch is not None:
            on_epoch({"model_id": model_id, "epoch": epoch, "loss": run.train_loss[-1], "val_mape": vm})
        if np.isnan(vm):
            best_state, run.best_epoch = model.state_dict(), epoch
            continue
        if vm < best:
            best, best_state, stale, run.best_epoch = vm, model.state_dict(), 0, epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    run.weights = model.state_dict()
    log.debug("%s/%s: %d epochs, best %d, grad norm %.3g", variant, model_id, run.epochs, run.best_epoch, global_norm(grads))
    return run


def model_scopes(cells, assignment: Mapping[int, int] | None) -> dict[str, list[int]]:
    """Model id -> cells it serves; one global model without an assignment."""
    cells = sorted(cells)
    if assignment is None:
        return {GLOBAL_SCOPE: cells}
    missing = [c for c in cells if c not in assignment]
    if missing:
        raise ValidationError(f"{len(missing)} cells missing from the assignment, e.g. {missing[:5]}")
    scopes: dict[str, list[int]] = {}
    for c in cells:
        scopes.setdefault(f"cluster-{assignment[c]}", []).append(c)
    return dict(sorted(scopes.items(), key=lambda kv: int(kv[0].split("-")[1])))


def routing_for(cells, assignment: Mapping[int, int] | None) -> dict[int, str]:
    return {c: mid for mid, members in model_scopes(cells, assignment).items() for c in members}


def run_experiment(
    series: Mapping[int, HourlyCellSeries],
    assignment: Mapping[int, int] | None,
    spec: ModelSpec,
    config: TrainConfig = TrainConfig(),
    jobs: int = 1,
    on_epoch: Callable[[dict], None] | None = None,
) -> dict[str, TrainRun]:
    """Train one model per cluster (or one global model) under the 30-day protocol."""
    if not series:
        raise ValidationError("no series")
    starts = {s.start_hour for s in series.values()}
    if len(starts) != 1:
        raise ValidationError("all series must start at the same hour")
    start = starts.pop()
    splits = Splits.from_start(start, config)
    need = splits.eval[1] - start
    short = [c for c, s in series.items() if len(s.values) < need]
    if short:
        raise ValidationError(f"{len(short)} series shorter than the {need}-hour protocol, e.g. {short[:5]}")

    window, horizon = spec.window, spec.horizon
    val_split = (splits.val_targets[0] - window, splits.val_targets[1])
    variant = spec.variant + ("-C" if assignment is not None else "")

    def one(item):
        model_id, members = item
        scope = {c: series[c] for c in members}
        norm = fit_norm(scope, splits.train, model_id)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_set = SampleSet.concat([window_arrays(series[c], window, horizon, splits.fit) for c in members])
            val_parts = [window_arrays(series[c], window, horizon, val_split) for c in members]
        val_parts = [p for p in val_parts if len(p)]
        val_set = SampleSet.concat(val_parts) if val_parts else None
        model = spec.build(config.seed)
        return model_id, train(model, fit_set, config, val_set, norm, variant, model_id, on_epoch)

    scopes = model_scopes(series, assignment)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, scopes.items()))
    return dict(results)
