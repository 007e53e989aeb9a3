"""MAPE / MAE, rolling one-step evaluation, and CSV exports of results."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import MissingInputError, ShapeError, UndefinedMetricError, ValidationError
from .ingest import HourlyCellSeries, cell_row_col

ZERO_TARGET = 1e-9

Predictor = Callable[[np.ndarray], np.ndarray]


def _pair(actual, predicted):
    q = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if q.shape != p.shape:
        raise ShapeError(f"actual and predicted lengths differ: {q.size} vs {p.size}")
    if q.size == 0:
        raise UndefinedMetricError("metrics need at least one point")
    return q, p


def mape(actual, predicted) -> tuple[float, int]:
    """Mean absolute percentage error in percent, and the count of skipped points.

    Targets at or below 1e-9 are left out because the ratio is undefined
    there; raises ``UndefinedMetricError`` if nothing is left.
    """
    q, p = _pair(actual, predicted)
    keep = q > ZERO_TARGET
    if not keep.any():
        raise UndefinedMetricError("every target is zero; MAPE undefined")
    return float(100.0 * np.mean(np.abs(q[keep] - p[keep]) / q[keep])), int((~keep).sum())


def mae(actual, predicted) -> float:
    q, p = _pair(actual, predicted)
    return float(np.mean(np.abs(q - p)))


@dataclass
class CellMetrics:
    n: int
    skipped: int
    ratio_sum: float
    abs_sum: float

    @property
    def mape_percent(self) -> float:
        return 100.0 * self.ratio_sum / self.n if self.n else math.nan

    @property
    def mae(self) -> float:
        total = self.n + self.skipped
        return self.abs_sum / total if total else math.nan


@dataclass
class EvalReport:
    variant: str
    n: int
    mape_percent: float
    mae: float
    skipped_zero_targets: int
    per_cell: dict[int, CellMetrics] = field(default_factory=dict)
    # cell -> (absolute hours, actual, predicted)
    traces: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def mape_fraction(self) -> float:
        return self.mape_percent / 100.0

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "mape_percent": self.mape_percent,
            "mape_fraction": self.mape_fraction,
            "mae": self.mae,
            "n": self.n,
            "skipped": self.skipped_zero_targets,
        }

    def save(self, path) -> None:
        """JSON dump of the summary, per-cell metrics and traces."""
        data = self.summary()
        data["per_cell"] = {str(c): asdict(m) for c, m in sorted(self.per_cell.items())}
        data["traces"] = {
            str(c): [h.tolist(), a.tolist(), p.tolist()] for c, (h, a, p) in sorted(self.traces.items())
        }
        Path(path).write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalReport":
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"evaluation report {path} does not exist")
        d = json.loads(path.read_text(encoding="utf-8"))
        per_cell = {int(c): CellMetrics(**m) for c, m in d["per_cell"].items()}
        traces = {int(c): tuple(np.asarray(v, dtype=np.float64) for v in t) for c, t in d["traces"].items()}
        traces = {c: (t[0].astype(np.int64), t[1], t[2]) for c, t in traces.items()}
        return cls(d["variant"], d["n"], d["mape_percent"], d["mae"], d["skipped"], per_cell, traces)


def eval_windows(series: HourlyCellSeries, window: int, split: tuple[int, int]):
    """Inputs and targets for one-step prediction of every hour in ``split``.

    Input history may come from before the split; targets never do.
    """
    start, end = split
    lo = start - series.start_hour
    hi = end - series.start_hour
    if lo - window < 0 or hi > len(series.values) or hi <= lo:
        raise ValidationError(
            f"cell {series.cell_id}: evaluation split [{start}, {end}) needs {window} hours of history inside the series"
        )
    values = series.values
    inputs = np.lib.stride_tricks.sliding_window_view(values[lo - window : hi - 1], window)
    targets = values[lo:hi]
    hours = np.arange(start, end, dtype=np.int64)
    return inputs, targets, hours


def evaluate(
    predictors: Mapping[str, Predictor],
    series: Mapping[int, HourlyCellSeries],
    routing: Mapping[int, str],
    split: tuple[int, int],
    window: int,
    variant: str = "model",
    cells=None,
) -> EvalReport:
    """Rolling one-step evaluation with true history over ``split``.

    ``routing`` maps each cell to the id of the predictor that serves it.
    Predictors take raw-traffic windows ``[n, window]`` and return raw
    predictions ``[n]`` or ``[n, horizon]``; only the first step is scored.
    Metrics pool every cell and hour.
    """
    cells = sorted(series) if cells is None else sorted(cells)
    per_cell, traces = {}, {}
    for cid in cells:
        if cid not in series:
            raise ValidationError(f"cell {cid} has no series")
        model_id = routing.get(cid)
        if model_id is None or model_id not in predictors:
            raise ValidationError(f"cell {cid} is not routed to any model")
        inputs, targets, hours = eval_windows(series[cid], window, split)
        pred = np.asarray(predictors[model_id](inputs), dtype=np.float64)
        pred = pred.reshape(len(targets), -1)[:, 0]
        keep = targets > ZERO_TARGET
        per_cell[cid] = CellMetrics(
            n=int(keep.sum()),
            skipped=int((~keep).sum()),
            ratio_sum=float(np.sum(np.abs(targets[keep] - pred[keep]) / targets[keep])),
            abs_sum=float(np.sum(np.abs(targets - pred))),
        )
        traces[cid] = (hours, np.array(targets), pred)

    n = sum(m.n for m in per_cell.values())
    skipped = sum(m.skipped for m in per_cell.values())
    if n == 0:
        raise UndefinedMetricError("no non-zero targets in the evaluation split")
    ratio = sum(m.ratio_sum for m in per_cell.values())
    abs_err = sum(m.abs_sum for m in per_cell.values())
    return EvalReport(variant, n, 100.0 * ratio / n, abs_err / (n + skipped), skipped, per_cell, traces)


# -- exports -------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_comparison_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "mape_percent", "mape_fraction", "mae", "n", "skipped"])
        for r in reports:
            writer.writerow([r.variant, _fmt(r.mape_percent), _fmt(r.mape_fraction), _fmt(r.mae), r.n, r.skipped_zero_targets])


def write_per_cell_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "cell_id", "n", "skipped", "mape_percent", "mae"])
        for r in reports:
            for cid, m in sorted(r.per_cell.items()):
                writer.writerow([r.variant, cid, m.n, m.skipped, _fmt(m.mape_percent), _fmt(m.mae)])


def export_traces(cell_ids, reports, path) -> None:
    """Ground truth and every variant's predictions, one row per cell-hour."""
    reports = list(reports)
    if not reports:
        raise ValidationError("export_traces needs at least one report")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "hour", "actual"] + [f"predicted_{r.variant}" for r in reports])
        for cid in sorted(cell_ids):
            for r in reports:
                if cid not in r.traces:
                    raise ValidationError(f"cell {cid} was not evaluated in variant {r.variant}")
            hours, actual, _ = reports[0].traces[cid]
            preds = [r.traces[cid][2] for r in reports]
            for i, hour in enumerate(hours):
                writer.writerow([cid, int(hour), _fmt(actual[i])] + [_fmt(p[i]) for p in preds])


def export_grid_heatmap(series: Mapping[int, HourlyCellSeries], path, grid_side: int = 100) -> None:
    """Mean traffic of every grid cell over its span; cells without data read 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "mean_traffic"])
        for cid in range(1, grid_side * grid_side + 1):
            row, col = cell_row_col(cid, grid_side)
            s = series.get(cid)
            value = float(np.mean(s.values)) if s is not None and len(s.values) else 0.0
            writer.writerow([row, col, _fmt(value)])
