"""Raw grid records to hourly per-cell traffic series.

The raw input is the Milan telecom grid format: one tab-separated line per
(cell, 10-minute slot, country code) with five activity columns, any of
which may be empty. Records are summed per (cell, hour) over all country
codes; hours without records are zero.

Also holds the central-block cell selection, a labelled synthetic traffic
generator used as a test fixture, and the CSV / binary persistence of
series maps.
"""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping
from zoneinfo import ZoneInfo

import numpy as np

from .errors import MissingInputError, ParseError, ValidationError

log = logging.getLogger(__name__)

ACTIVITIES = ("sms_in", "sms_out", "call_in", "call_out", "internet")
SELECTORS = ("internet", "total")
SLOT_MS = 600_000
HOUR_MS = 3_600_000
GRID_CELLS = 10_000
DEFAULT_TZ = "Europe/Rome"

SERIES_MAGIC = b"CCSERIES"
SERIES_VERSION = 1


@dataclass(frozen=True)
class RawRecord:
    cell_id: int
    timestamp: int
    country_code: int
    sms_in: float = 0.0
    sms_out: float = 0.0
    call_in: float = 0.0
    call_out: float = 0.0
    internet: float = 0.0

    @property
    def hour(self) -> int:
        """Epoch hour index of the slot."""
        return self.timestamp // HOUR_MS

    def activity(self, selector: str) -> float:
        if selector == "internet":
            return self.internet
        if selector == "total":
            return self.sms_in + self.sms_out + self.call_in + self.call_out + self.internet
        raise ValidationError(f"unknown selector {selector!r}; expected one of {SELECTORS}")


@dataclass(frozen=True)
class HourlyCellSeries:
    cell_id: int
    start_hour: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValidationError(f"cell {self.cell_id}: values must be one-dimensional")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValidationError(f"cell {self.cell_id}: values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def end_hour(self) -> int:
        return self.start_hour + len(self.values)

    @property
    def n_days(self) -> int:
        return len(self.values) // 24

    def window(self, start: int, stop: int) -> "HourlyCellSeries":
        """Sub-series over offsets [start, stop) relative to ``start_hour``."""
        return HourlyCellSeries(self.cell_id, self.start_hour + start, self.values[start:stop])


def _parse_int(text, what, line_number):
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f"malformed {what} {text!r}", line_number) from None


def parse_record(line: str, line_number: int | None = None) -> RawRecord:
    """Parse one tab-separated raw line.

    Absent or empty activity fields read as 0. Raises ``ParseError`` for a
    malformed id, timestamp, country code or number, and ``ValidationError``
    for values outside their domain.
    """
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 3:
        raise ParseError(f"expected at least 3 tab-separated fields, got {len(fields)}", line_number)
    cell_id = _parse_int(fields[0], "cell_id", line_number)
    timestamp = _parse_int(fields[1], "timestamp", line_number)
    country = fields[2].strip()
    country_code = _parse_int(country, "country_code", line_number) if country else 0

    if not 1 <= cell_id <= GRID_CELLS:
        raise ValidationError(f"line {line_number}: cell_id {cell_id} outside [1, {GRID_CELLS}]")
    if timestamp % SLOT_MS:
        raise ValidationError(f"line {line_number}: timestamp {timestamp} not on a 10-minute boundary")

    activity = {}
    for name, text in zip(ACTIVITIES, fields[3:8]):
        text = text.strip()
        if not text:
            continue
        try:
            value = float(text)
        except ValueError:
            raise ParseError(f"malformed {name} {text!r}", line_number) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite {name} {text!r}", line_number)
        if value < 0:
            raise ValidationError(f"line {line_number}: negative {name} {value}")
        activity[name] = value
    return RawRecord(cell_id, timestamp, country_code, **activity)


def read_records(path: str | Path) -> Iterator[RawRecord]:
    """Yield records from one raw file, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if line.strip():
                yield parse_record(line, number)


@dataclass
class HourlyAggregator:
    """Accumulates records into per-(cell, hour) sums over a fixed span.

    Merging two aggregators is addition, so per-file aggregators may be
    reduced in any order.
    """

    selector: str
    span: tuple[int, int]
    sums: dict[int, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ValidationError(f"unknown selector {self.selector!r}; expected one of {SELECTORS}")
        start, end = self.span
        if end <= start:
            raise ValidationError(f"empty span [{start}, {end})")
        self.span = (int(start), int(end))

    def add(self, record: RawRecord) -> None:
        start, end = self.span
        hour = record.hour
        if not start <= hour < end:
            self.skipped += 1
            return
        row = self.sums.get(record.cell_id)
        if row is None:
            row = self.sums[record.cell_id] = np.zeros(end - start)
        row[hour - start] += record.activity(self.selector)

    def update(self, records: Iterable[RawRecord]) -> "HourlyAggregator":
        for record in records:
            self.add(record)
        return self

    def merge(self, other: "HourlyAggregator") -> "HourlyAggregator":
        if (other.selector, other.span) != (self.selector, self.span):
            raise ValidationError("cannot merge aggregators with different selector or span")
        for cell_id, row in other.sums.items():
            if cell_id in self.sums:
                self.sums[cell_id] = self.sums[cell_id] + row
            else:
                self.sums[cell_id] = row.copy()
        self.skipped += other.skipped
        return self

    def result(self) -> dict[int, HourlyCellSeries]:
        start = self.span[0]
        return {cid: HourlyCellSeries(cid, start, self.sums[cid]) for cid in sorted(self.sums)}


def aggregate_hourly(
    records: Iterable[RawRecord], selector: str = "internet", span: tuple[int, int] = (0, 1)
) -> dict[int, HourlyCellSeries]:
    """Sum the selected activity of ``records`` per cell and epoch hour.

    Only cells with at least one in-span record appear in the result; every
    returned series covers the whole span with zero-filled gaps.
    """
    agg = HourlyAggregator(selector, span).update(records)
    if agg.skipped:
        log.info("aggregate_hourly: skipped %d out-of-span records", agg.skipped)
    return agg.result()


def ingest_directory(
    directory: str | Path, selector: str, span: tuple[int, int], jobs: int = 1
) -> tuple[dict[int, HourlyCellSeries], int]:
    """Aggregate every ``*.txt``/``*.tsv`` file under ``directory``.

    Returns the series map and the number of out-of-span records skipped.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingInputError(f"input directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".txt", ".tsv") and p.is_file())
    if not files:
        raise MissingInputError(f"no .txt or .tsv files in {directory}")

    def one(path):
        return HourlyAggregator(selector, span).update(read_records(path))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        parts = list(pool.map(one, files))
    total = HourlyAggregator(selector, span)
    for part in parts:
        total.merge(part)
    return total.result(), total.skipped


def local_midnight_hour(date: str | _dt.date, tz: str = DEFAULT_TZ) -> int:
    """Epoch hour index of local midnight starting ``date``."""
    if isinstance(date, str):
        date = _dt.date.fromisoformat(date)
    midnight = _dt.datetime(date.year, date.month, date.day, tzinfo=ZoneInfo(tz))
    seconds = int(midnight.timestamp())
    if seconds % 3600:
        raise ValidationError(f"local midnight of {date} in {tz} is not on a UTC hour boundary")
    return seconds // 3600


def select_central_cells(grid_side: int = 100, block_side: int = 30) -> set[int]:
    """Ids of the centred ``block_side`` square of a row-major grid."""
    if grid_side <= 0 or block_side <= 0:
        raise ValidationError("grid_side and block_side must be positive")
    if block_side > grid_side:
        raise ValidationError(f"block_side {block_side} exceeds grid_side {grid_side}")
    if (grid_side - block_side) % 2:
        raise ValidationError(f"grid_side - block_side must be even, got {grid_side - block_side}")
    lo = (grid_side - block_side) // 2 + 1
    hi = (grid_side + block_side) // 2
    return {(row - 1) * grid_side + col for row in range(lo, hi + 1) for col in range(lo, hi + 1)}


def cell_row_col(cell_id: int, grid_side: int = 100) -> tuple[int, int]:
    """1-based (row, col) of a row-major grid id."""
    return (cell_id - 1) // grid_side + 1, (cell_id - 1) % grid_side + 1


# -- synthetic traffic ---------------------------------------------------------

BUMP_WIDTH_HOURS = 2.0


@dataclass(frozen=True)
class Regime:
    peak_hour: int
    base_level: float
    amplitude: float
    noise_sigma: float
    cell_fraction: float


@dataclass(frozen=True)
class SyntheticSpec:
    n_cells: int
    regimes: tuple[Regime, ...]
    n_days: int
    seed: int
    start_hour: int = 0

    def validate(self) -> None:
        if self.n_cells < 1 or self.n_days < 1:
            raise ValidationError("n_cells and n_days must be positive")
        if not self.regimes:
            raise ValidationError("at least one regime is required")
        peaks = [r.peak_hour for r in self.regimes]
        if len(set(peaks)) != len(peaks):
            raise ValidationError(f"peak hours must be distinct, got {peaks}")
        for r in self.regimes:
            if not 0 <= r.peak_hour <= 23:
                raise ValidationError(f"peak hour {r.peak_hour} outside 0..23")
            if not r.base_level > 0 or r.amplitude < 0 or r.noise_sigma < 0:
                raise ValidationError(f"invalid regime levels {r}")
            if not 0 < r.cell_fraction <= 1:
                raise ValidationError(f"cell fraction {r.cell_fraction} outside (0, 1]")
        if abs(sum(r.cell_fraction for r in self.regimes) - 1.0) > 1e-9:
            raise ValidationError("regime cell fractions must sum to 1")


def daily_bump(hour_of_day: np.ndarray, peak_hour: int) -> np.ndarray:
    """Circular Gaussian bump over the 24-hour clock, 1 at ``peak_hour``."""
    d = np.abs((np.asarray(hour_of_day) - peak_hour) % 24)
    d = np.minimum(d, 24 - d)
    return np.exp(-0.5 * (d / BUMP_WIDTH_HOURS) ** 2)


def _quota(fractions, n):
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier regime."""
    raw = np.asarray(fractions) * n
    counts = np.floor(raw).astype(int)
    remainder = raw - counts
    order = sorted(range(len(raw)), key=lambda i: (-remainder[i], i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts


def generate_synthetic(spec: SyntheticSpec) -> tuple[dict[int, HourlyCellSeries], dict[int, int]]:
    """Labelled synthetic hourly traffic for cells ``1..n_cells``.

    Each regime contributes ``base + amplitude * bump(hour - peak) * exp(sigma * z)``
    with one standard normal ``z`` per cell-hour, so the noise is multiplicative
    log-normal on the daily bump and the peak hour is exact when sigma is 0.
    Regime sizes follow the fractions by largest-remainder rounding and are
    shuffled over cell ids by the seeded generator.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    counts = _quota([r.cell_fraction for r in spec.regimes], spec.n_cells)
    labels = np.repeat(np.arange(len(spec.regimes)), counts)
    labels = labels[rng.permutation(spec.n_cells)]
    z = rng.standard_normal((spec.n_cells, spec.n_days * 24))
    hour_of_day = np.arange(spec.n_days * 24) % 24

    series, regime_of = {}, {}
    for idx in range(spec.n_cells):
        cell_id = idx + 1
        regime = spec.regimes[labels[idx]]
        bump = daily_bump(hour_of_day, regime.peak_hour)
        values = regime.base_level + regime.amplitude * bump * np.exp(regime.noise_sigma * z[idx])
        series[cell_id] = HourlyCellSeries(cell_id, spec.start_hour, values)
        regime_of[cell_id] = int(labels[idx])
    return series, regime_of


# -- persistence ---------------------------------------------------------------


def _span_of(series: Mapping[int, HourlyCellSeries]) -> tuple[int, int]:
    spans = {(s.start_hour, len(s)) for s in series.values()}
    if len(spans) != 1:
        raise ValidationError("all series must share the same span")
    return spans.pop()


def write_series_csv(series: Mapping[int, HourlyCellSeries], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "hour_index", "value"])
        for cid in sorted(series):
            s = series[cid]
            for i, v in enumerate(s.values):
                writer.writerow([cid, s.start_hour + i, repr(float(v))])


def read_series_csv(path: str | Path) -> dict[int, HourlyCellSeries]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"series file {path} does not exist")
    rows: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_id", "hour_index", "value"]:
            raise ParseError(f"unexpected header {header}", 1)
        for number, row in enumerate(reader, start=2):
            try:
                cid, hour, value = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row}", number) from None
            rows.setdefault(cid, []).append((hour, value))
    out = {}
    for cid in sorted(rows):
        pairs = sorted(rows[cid])
        hours = [h for h, _ in pairs]
        if hours != list(range(hours[0], hours[0] + len(hours))):
            raise ValidationError(f"cell {cid}: hours are not contiguous")
        out[cid] = HourlyCellSeries(cid, hours[0], [v for _, v in pairs])
    return out


def write_series_cache(series: Mapping[int, HourlyCellSeries], path: str | Path) -> None:
    """Binary cache: magic, version, counts, start hour, ids, then float64 rows."""
    start, n_hours = _span_of(series) if series else (0, 0)
    ids = np.array(sorted(series), dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(SERIES_MAGIC)
        fh.write(struct.pack("<IQQq", SERIES_VERSION, len(ids), n_hours, start))
        fh.write(ids.tobytes())
        for cid in ids:
            fh.write(np.asarray(series[int(cid)].values, dtype="<f8").tobytes())


def read_series_cache(path: str | Path) -> dict[int, HourlyCellSeries]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"series cache {path} does not exist")
    blob = path.read_bytes()
    if blob[: len(SERIES_MAGIC)] != SERIES_MAGIC:
        raise ParseError(f"{path}: not a series cache (bad magic)")
    offset = len(SERIES_MAGIC)
    version, n_cells, n_hours, start = struct.unpack_from("<IQQq", blob, offset)
    if version != SERIES_VERSION:
        raise ParseError(f"{path}: unsupported cache version {version}")
    offset += struct.calcsize("<IQQq")
    ids = np.frombuffer(blob, dtype="<i8", count=n_cells, offset=offset)
    offset += 8 * n_cells
    data = np.frombuffer(blob, dtype="<f8", count=n_cells * n_hours, offset=offset)
    data = data.reshape(n_cells, n_hours)
    return {int(cid): HourlyCellSeries(int(cid), int(start), data[i]) for i, cid in enumerate(ids)}


def load_series(path: str | Path) -> dict[int, HourlyCellSeries]:
    """Load a series map from CSV or from the binary cache, by extension."""
    path = Path(path)
    if path.suffix == ".csv":
        return read_series_csv(path)
    return read_series_cache(path)
