"""Trip ingestion, hourly demand matrices, weather alignment, splits and sliding windows.

Timestamps are naive local wall-clock times; any UTC offset in the input is
dropped without conversion.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, IngestionError

log = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")
WEATHER_COLUMNS = ("precipitation_in", "avg_temp_f", "avg_wind_mps")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    ts = datetime.fromisoformat(text)
    return ts.replace(tzinfo=None)


def to_hour(ts) -> np.datetime64:
    return np.datetime64(ts, "h")


@dataclass(frozen=True)
class TripRecord:
    zone_id: str
    timestamp: datetime


@dataclass
class IngestionSummary:
    total: int = 0
    counted: int = 0
    out_of_range: int = 0
    unknown_zone: int = 0
    unknown_zone_ids: set[str] = field(default_factory=set)

    def report(self) -> str:
        msg = f"{self.counted}/{self.total} trips binned"
        if self.out_of_range:
            msg += f", {self.out_of_range} outside the time range"
        if self.unknown_zone:
            ids = ", ".join(sorted(self.unknown_zone_ids)[:10])
            msg += f", {self.unknown_zone} with unknown zones ({ids})"
        return msg


@dataclass
class DemandMatrix:
    """Hourly trip-origin counts, zones x hours, starting at ``start``."""

    zone_ids: list[str]
    start: np.datetime64
    values: np.ndarray

    def __post_init__(self):
        self.start = to_hour(self.start)
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.zone_ids):
            raise DimensionError(f"demand values {self.values.shape} do not match {len(self.zone_ids)} zones")

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start + np.arange(self.n_steps) * HOUR

    @property
    def end(self) -> np.datetime64:
        return self.start + self.n_steps * HOUR

    def index_of(self, ts) -> int:
        return int((to_hour(ts) - self.start) // HOUR)

    def slice(self, lo: int, hi: int) -> "DemandMatrix":
        return DemandMatrix(list(self.zone_ids), self.start + lo * HOUR, self.values[:, lo:hi])


def read_trips_csv(path: str | Path) -> list[TripRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["zone_id", "timestamp"]:
            raise IngestionError(f"{path}: header must be zone_id,timestamp")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2 or not row[0].strip():
                raise IngestionError(f"{path}:{lineno}: expected zone_id,timestamp")
            try:
                ts = parse_timestamp(row[1])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: malformed timestamp {row[1]!r}") from exc
            records.append(TripRecord(row[0].strip(), ts))
    return records


def bin_trips(records: Iterable[TripRecord], zones: Sequence[str], start, end) -> tuple[DemandMatrix, IngestionSummary]:
    """Count trip origins per (zone, hour) over ``[start, end)``.

    Records outside the range or for unknown zones are tallied in the summary.
    """
    start, end = to_hour(start), to_hour(end)
    if not start < end:
        raise ConfigError(f"empty time range [{start}, {end})")
    n_steps = int((end - start) // HOUR)
    index = {z: i for i, z in enumerate(zones)}
    counts = np.zeros((len(zones), n_steps), dtype=np.int64)
    summary = IngestionSummary()
    for rec in records:
        summary.total += 1
        row = index.get(rec.zone_id)
        if row is None:
            summary.unknown_zone += 1
            summary.unknown_zone_ids.add(rec.zone_id)
            continue
        col = int((to_hour(rec.timestamp) - start) // HOUR)
        if not 0 <= col < n_steps:
            summary.out_of_range += 1
            continue
        counts[row, col] += 1
        summary.counted += 1
    if summary.out_of_range or summary.unknown_zone:
        log.warning("trip ingestion: %s", summary.report())
    return DemandMatrix(list(zones), start, counts), summary


def write_demand_csv(dm: DemandMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone_id", *(str(t) for t in dm.times)])
        for z, row in zip(dm.zone_ids, dm.values):
            w.writerow([z, *(int(v) if float(v).is_integer() else repr(float(v)) for v in row)])


def read_demand_csv(path: str | Path) -> DemandMatrix:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "zone_id" or len(header) < 2:
            raise IngestionError(f"{path}: header must be zone_id followed by hour timestamps")
        times = [to_hour(parse_timestamp(h)) for h in header[1:]]
        if any(b - a != HOUR for a, b in zip(times, times[1:])):
            raise IngestionError(f"{path}: hour columns must be contiguous")
        zones, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            zones.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: non-numeric count") from exc
    return DemandMatrix(zones, times[0], np.array(rows))


# -- weather -------------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, axis: int = 0) -> "Standardizer":
        values = np.asarray(values, dtype=np.float64)
        if values.shape[axis] == 0:
            raise ContractError("cannot fit normalization statistics on an empty split")
        mean = values.mean(axis=axis)
        std = values.std(axis=axis)
        return cls(mean, np.where(std > 0, std, 1.0))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class WeatherMatrix:
    """Hourly weather rows (one per demand step) plus training-split statistics."""

    start: np.datetime64
    raw: np.ndarray  # (L, W)
    stats: Standardizer
    columns: tuple[str, ...] = WEATHER_COLUMNS

    @property
    def times(self) -> np.ndarray:
        return to_hour(self.start) + np.arange(len(self.raw)) * HOUR

    @property
    def standardized(self) -> np.ndarray:
        return (self.raw - self.stats.mean) / self.stats.std

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.stats.std + self.stats.mean


def read_weather_csv(path: str | Path) -> list[tuple[date, float, float, float]]:
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["date", *WEATHER_COLUMNS]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise IngestionError(f"{path}: header must be {','.join(expected)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                day = date.fromisoformat(r["date"].strip())
                rows.append((day, *(float(r[c]) for c in WEATHER_COLUMNS)))
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: bad weather row") from exc
    return rows


def write_weather_csv(daily: Iterable[tuple], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *WEATHER_COLUMNS])
        for day, *vals in daily:
            w.writerow([day.isoformat(), *(repr(float(v)) for v in vals)])


def join_weather(daily: Iterable[tuple], dm: DemandMatrix, train_end=None) -> WeatherMatrix:
    """Repeat each day's record over its hours; statistics come from hours before ``train_end``."""
    by_day = {}
    for day, *vals in daily:
        by_day[day.date() if isinstance(day, datetime) else day] = vals
    hours = dm.times.astype(datetime)
    raw = np.empty((len(hours), len(WEATHER_COLUMNS)))
    for i, ts in enumerate(hours):
        vals = by_day.get(ts.date())
        if vals is None:
            raise IngestionError(f"no weather record for {ts.date().isoformat()}")
        raw[i] = vals
    if not np.all(np.isfinite(raw)):
        raise IngestionError("weather values must be finite")
    n_train = len(raw) if train_end is None else max(0, min(len(raw), dm.index_of(train_end)))
    return WeatherMatrix(dm.start, raw, Standardizer.fit(raw[:n_train]))


# -- splits, normalization, windows ------------------------------------------------------

def split_by_dates(dm: DemandMatrix, train_end, val_end) -> tuple[DemandMatrix, DemandMatrix, DemandMatrix]:
    """Chronological train / validation / test views at ``[start, train_end)``, ``[train_end, val_end)``, ``[val_end, end)``."""
    a, b = dm.index_of(train_end), dm.index_of(val_end)
    if not 0 <= a <= b <= dm.n_steps:
        raise ConfigError(f"split boundaries {train_end} / {val_end} must be ordered and inside [{dm.start}, {dm.end}]")
    parts = dm.slice(0, a), dm.slice(a, b), dm.slice(b, dm.n_steps)
    for name, part in zip(("train", "validation", "test"), parts):
        if part.n_steps == 0:
            warnings.warn(f"{name} split is empty", stacklevel=2)
    return parts


def fit_demand_stats(train: DemandMatrix) -> Standardizer:
    """Per-zone mean and std from the training split; zero std becomes 1."""
    return Standardizer.fit(train.values, axis=1)


def normalize_demand(values: np.ndarray, stats: Standardizer) -> np.ndarray:
    """Z-score ``(N, ...)`` arrays per zone."""
    shape = (-1,) + (1,) * (np.ndim(values) - 1)
    return (np.asarray(values, dtype=np.float64) - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def denormalize_predictions(y: np.ndarray, stats: Standardizer, zone_axis: int = -2) -> np.ndarray:
    """Invert :func:`normalize_demand` for arrays whose ``zone_axis`` indexes zones."""
    y = np.asarray(y, dtype=np.float64)
    shape = [1] * y.ndim
    shape[zone_axis] = -1
    return y * stats.std.reshape(shape) + stats.mean.reshape(shape)


@dataclass
class WindowedDataset:
    inputs: np.ndarray        # (S, N, T) normalized
    targets: np.ndarray       # (S, N, M) normalized
    targets_raw: np.ndarray   # (S, N, M) original counts
    weather: np.ndarray       # (S, T, W) standardized
    anchors: np.ndarray       # (S,) index of the last input step within the source matrix
    target_times: np.ndarray  # (S, M) datetime64[h]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.inputs[idx], self.targets[idx], self.targets_raw[idx], self.weather[idx],
                               self.anchors[idx], self.target_times[idx], self.split)


def window_count(length: int, seq_len: int, horizon: int) -> int:
    return max(0, length - seq_len - horizon + 1)


def make_windows(dm: DemandMatrix, seq_len: int, horizon: int, weather: np.ndarray | None = None,
                 stats: Standardizer | None = None, split: str = "train") -> WindowedDataset:
    """Stride-1 windows: inputs cover ``t-T+1..t``, targets ``t+1..t+M`` for every valid anchor ``t``."""
    length = dm.n_steps
    if length < seq_len + horizon:
        raise ContractError(f"{split} split has {length} steps; windows need at least seq_len + horizon = {seq_len + horizon}")
    if weather is None:
        weather = np.zeros((length, 0))
    weather = np.asarray(weather, dtype=np.float64)
    if weather.shape[0] != length:
        raise DimensionError(f"weather has {weather.shape[0]} rows for {length} demand steps")
    values = dm.values.astype(np.float64)
    normed = values if stats is None else normalize_demand(values, stats)
    anchors = np.arange(seq_len - 1, length - horizon)
    in_idx = anchors[:, None] + np.arange(-seq_len + 1, 1)[None, :]
    out_idx = anchors[:, None] + np.arange(1, horizon + 1)[None, :]
    return WindowedDataset(
        inputs=np.ascontiguousarray(normed[:, in_idx].transpose(1, 0, 2)),
        targets=np.ascontiguousarray(normed[:, out_idx].transpose(1, 0, 2)),
        targets_raw=np.ascontiguousarray(values[:, out_idx].transpose(1, 0, 2)),
        weather=np.ascontiguousarray(weather[in_idx]),
        anchors=anchors,
        target_times=dm.times[out_idx],
        split=split,
    )


@dataclass
class Splits:
    train: WindowedDataset
    val: WindowedDataset | None
    test: WindowedDataset | None
    demand_stats: Standardizer
    weather_stats: Standardizer
    train_demand: DemandMatrix
    zone_ids: list[str]


def build_datasets(dm: DemandMatrix, weather: WeatherMatrix, train_end, val_end,
                   seq_len: int, horizon: int) -> Splits:
    """Split, fit statistics on the training part only, and window each split."""
    train, val, test = split_by_dates(dm, train_end, val_end)
    a, b = train.n_steps, train.n_steps + val.n_steps
    demand_stats = fit_demand_stats(train)
    # weather statistics are refit on the training rows so they never see later data
    w_stats = Standardizer.fit(weather.raw[:a])
    w = (weather.raw - w_stats.mean) / w_stats.std
    need = seq_len + horizon

    def windows(part, rows, name):
        if part.n_steps < need:
            if name == "train":
                raise ContractError(f"training split has {part.n_steps} steps; need at least {need}")
            log.warning("%s split too short for a window (%d < %d); skipped", name, part.n_steps, need)
            return None
        return make_windows(part, seq_len, horizon, rows, demand_stats, name)

    return Splits(
        train=windows(train, w[:a], "train"),
        val=windows(val, w[a:b], "val"),
        test=windows(test, w[b:], "test"),
        demand_stats=demand_stats,
        weather_stats=w_stats,
        train_demand=train,
        zone_ids=list(dm.zone_ids),
    )


def hourly_range(start: datetime, hours: int) -> list[datetime]:
    return [start + timedelta(hours=h) for h in range(hours)]
