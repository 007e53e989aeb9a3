"""Peak-hour statistics, peak-hour groups and the group Pearson correlation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import UndefinedCorrelationError, ValidationError
from .ingest import HourlyCellSeries

TRAIN_DAYS = 20


@dataclass(frozen=True)
class PeakHistogram:
    cell_id: int
    counts: tuple[int, ...]
    n_days: int

    def __post_init__(self):
        if len(self.counts) != 24 or sum(self.counts) != self.n_days or self.n_days < 1:
            raise ValidationError(f"cell {self.cell_id}: inconsistent peak histogram")

    @property
    def mode(self) -> int:
        # np.argmax returns the first maximum, i.e. the earliest hour on ties
        return int(np.argmax(self.counts))


@dataclass(frozen=True)
class GroupProfile:
    """Cells sharing a representative peak hour and their hourly mean traffic."""

    group_id: int
    members: frozenset[int]
    profile: np.ndarray

    def __post_init__(self):
        profile = np.array(self.profile, dtype=np.float64)
        profile.setflags(write=False)
        object.__setattr__(self, "profile", profile)
        object.__setattr__(self, "members", frozenset(self.members))

    @property
    def mean(self) -> float:
        return float(self.profile.mean())

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.profile) == 0)


def _day_matrix(series: HourlyCellSeries, n_days: int) -> np.ndarray:
    if n_days < 1 or len(series.values) < n_days * 24:
        raise ValidationError(
            f"cell {series.cell_id}: series of {len(series.values)} hours does not cover {n_days} days"
        )
    return series.values[: n_days * 24].reshape(n_days, 24)


def daily_peak_hour(series: HourlyCellSeries, day: int) -> int:
    """Hour of day with the largest traffic on ``day``; earliest hour wins ties."""
    if day < 0 or (day + 1) * 24 > len(series.values):
        raise ValidationError(f"cell {series.cell_id}: day {day} not covered by the series")
    return int(np.argmax(series.values[day * 24 : (day + 1) * 24]))


def daily_peaks(series: HourlyCellSeries, n_days: int = TRAIN_DAYS) -> np.ndarray:
    return np.argmax(_day_matrix(series, n_days), axis=1)


def peak_histogram(series: HourlyCellSeries, n_days: int = TRAIN_DAYS) -> PeakHistogram:
    counts = np.bincount(daily_peaks(series, n_days), minlength=24)
    return PeakHistogram(series.cell_id, tuple(int(c) for c in counts), n_days)


def representative_peak_hour(series: HourlyCellSeries, n_days: int = TRAIN_DAYS) -> int:
    """Mode of the daily peak hours over the first ``n_days`` days."""
    return peak_histogram(series, n_days).mode


def group_by_peak_hour(
    cells: Mapping[int, HourlyCellSeries], n_days: int = TRAIN_DAYS, fold: bool = False
) -> dict[int, GroupProfile]:
    """Partition cells by representative peak hour.

    Profiles are per-hour member means over the first ``n_days * 24`` hours.
    With ``fold=True`` the profile is instead averaged over days into a
    single 24-hour shape. Empty groups are omitted.
    """
    if not cells:
        raise ValidationError("group_by_peak_hour needs at least one cell")
    starts = {s.start_hour for s in cells.values()}
    if len(starts) != 1:
        raise ValidationError("all series must start at the same hour")

    members: dict[int, list[int]] = {}
    for cid in sorted(cells):
        members.setdefault(representative_peak_hour(cells[cid], n_days), []).append(cid)

    groups = {}
    for gid in sorted(members):
        rows = np.stack([_day_matrix(cells[cid], n_days).ravel() for cid in members[gid]])
        profile = rows.mean(axis=0)
        if fold:
            profile = profile.reshape(n_days, 24).mean(axis=0)
        groups[gid] = GroupProfile(gid, frozenset(members[gid]), profile)
    return groups


def _values(x) -> np.ndarray:
    return x.profile if isinstance(x, GroupProfile) else np.asarray(x, dtype=np.float64)


def pearson(x, y) -> float:
    """Pearson correlation of two group profiles (or plain sequences).

    Raises ``UndefinedCorrelationError`` when either input is constant.
    """
    a, b = _values(x), _values(y)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"profiles must be equal-length vectors, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise ValidationError("profiles need at least two hours")
    constant = [p for p, v in ((x, a), (y, b)) if np.ptp(v) == 0]
    if constant:
        ids = [p.group_id for p in constant if isinstance(p, GroupProfile)]
        raise UndefinedCorrelationError("correlation undefined for a constant profile", ids)
    da = a - a.mean()
    db = b - b.mean()
    r = float(da @ db / np.sqrt((da @ da) * (db @ db)))
    return min(1.0, max(-1.0, r))


def write_group_profiles_csv(groups: Mapping[int, GroupProfile], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group_id", "hour_index", "mean_value"])
        for gid in sorted(groups):
            for j, v in enumerate(groups[gid].profile):
                writer.writerow([gid, j, repr(float(v))])


def write_peak_histograms_csv(histograms, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "hour", "count"])
        for hist in sorted(histograms, key=lambda h: h.cell_id):
            for hour, count in enumerate(hist.counts):
                writer.writerow([hist.cell_id, hour, count])
