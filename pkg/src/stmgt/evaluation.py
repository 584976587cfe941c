"""Metrics, historical-average baseline, ablations, permutation importance, per-hour errors.

All metrics are computed on the original count scale.
"""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import WEATHER_COLUMNS, DemandMatrix, Splits, Standardizer, WindowedDataset, denormalize_predictions
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .graphs import RelationSet
from .model import ModelConfig, ModelParams, init_params, predict
from .training import TrainConfig, TrainHistory, model_forward, train

log = logging.getLogger(__name__)

MAPE_MIN_DEMAND = 10.0
METRIC_COLUMNS = ("model", "mae", "rmse", "mape10", "smape", "n", "n_mape10")


# -- metrics --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    mape10: float | None
    smape: float
    n: int
    n_mape10: int

    def row(self, label: str) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [label, fmt(self.mae), fmt(self.rmse), fmt(self.mape10), fmt(self.smape), self.n, self.n_mape10]


def metrics(pred, truth) -> MetricReport:
    """MAE, RMSE, MAPE over samples with truth >= 10, and SMAPE with 0/0 taken as 0."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise DimensionError(f"metrics: {pred.size} predictions for {truth.size} ground-truth values")
    if truth.size == 0:
        raise DimensionError("metrics: need at least one sample")
    if np.any(truth < 0):
        raise ContractError("metrics: ground-truth demand must be non-negative")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise NumericError("metrics: non-finite values")
    err = np.abs(pred - truth)
    mae = float(np.mean(err))
    # scale by the largest error so tiny (subnormal) errors do not square to zero
    scale = float(err.max())
    rmse = scale * float(np.sqrt(np.mean((err / scale) ** 2))) if scale > 0 else 0.0
    eligible = truth >= MAPE_MIN_DEMAND
    mape10 = float(np.mean(err[eligible] / truth[eligible])) if eligible.any() else None
    denom = np.abs(truth) + np.abs(pred)
    terms = np.divide(2.0 * err, denom, out=np.zeros_like(err), where=denom > 0)
    report = MetricReport(mae, rmse, mape10, float(np.mean(terms)), int(truth.size), int(eligible.sum()))
    # Jensen: allow only last-ulp rounding
    if report.mae > report.rmse * (1 + 1e-12):
        raise NumericError(f"metrics: mae {report.mae} exceeds rmse {report.rmse}")
    return report


def write_metrics_csv(rows: Sequence[tuple[str, MetricReport]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for label, rep in rows:
            w.writerow(rep.row(label))


def format_table(rows: Sequence[tuple[str, MetricReport]]) -> str:
    lines = [f"{'model':<24}{'MAE':>10}{'RMSE':>10}{'MAPE10':>10}{'SMAPE':>10}"]
    for label, r in rows:
        mape = "n/a" if r.mape10 is None else f"{r.mape10:.4f}"
        lines.append(f"{label:<24}{r.mae:>10.4f}{r.rmse:>10.4f}{mape:>10}{r.smape:>10.4f}")
    return "\n".join(lines)


# -- calendar helpers -------------------------------------------------------------------

def hour_of_day(times) -> np.ndarray:
    hours = np.asarray(times, dtype="datetime64[h]").astype(np.int64)
    return hours % 24


def is_weekend(times) -> np.ndarray:
    days = np.asarray(times, dtype="datetime64[h]").astype(np.int64) // 24
    return (days + 3) % 7 >= 5  # 1970-01-01 was a Thursday


# -- historical average ----------------------------------------------------------------------

@dataclass
class HistoricalAverage:
    """Per-zone means by (hour of day, weekday/weekend) with coarser fallbacks."""

    by_hour_daytype: np.ndarray  # (N, 24, 2), NaN where unseen
    by_hour: np.ndarray          # (N, 24), NaN where unseen
    by_zone: np.ndarray          # (N,)

    @classmethod
    def fit(cls, history: DemandMatrix) -> "HistoricalAverage":
        if history.n_steps == 0:
            raise ContractError("historical average needs a non-empty training history")
        values = history.values.astype(np.float64)
        hod, wkd = hour_of_day(history.times), is_weekend(history.times).astype(int)
        n = history.n_zones
        sums, counts = np.zeros((n, 24, 2)), np.zeros((24, 2))
        np.add.at(sums, (slice(None), hod, wkd), values)  # noqa: advanced index broadcast over zones
        np.add.at(counts, (hod, wkd), 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            by_hd = sums / counts
            by_h = sums.sum(axis=2) / counts.sum(axis=1)
        return cls(by_hd, by_h, values.mean(axis=1))

    def predict(self, times) -> np.ndarray:
        """times: (S, M) target timestamps -> (S, N, M) predictions."""
        times = np.asarray(times, dtype="datetime64[h]")
        hod, wkd = hour_of_day(times), is_weekend(times).astype(int)
        out = self.by_hour_daytype[:, hod, wkd]  # (N, S, M)
        fallback = self.by_hour[:, hod]
        out = np.where(np.isnan(out), fallback, out)
        out = np.where(np.isnan(out), self.by_zone[:, None, None], out)
        return np.moveaxis(out, 0, 1)


def ha_baseline(history: DemandMatrix, target_times) -> np.ndarray:
    return HistoricalAverage.fit(history).predict(target_times)


# -- model evaluation ----------------------------------------------------------------------

def predict_counts(params: ModelParams, config: ModelConfig, relations, dataset: WindowedDataset,
                   demand_stats: Standardizer, weather: np.ndarray | None = None) -> np.ndarray:
    """Denormalized (S, N, M) predictions; ``weather`` overrides the dataset's weather windows."""
    w = dataset.weather if weather is None else weather
    z = predict(dataset.inputs, relations, w, params, config)
    return denormalize_predictions(z, demand_stats)


def evaluate_model(params, config, relations, dataset, demand_stats) -> MetricReport:
    return metrics(predict_counts(params, config, relations, dataset, demand_stats), dataset.targets_raw)


def rmse(pred, truth) -> float:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return float(np.sqrt(np.mean(err * err)))


# -- ablation ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    params: ModelParams
    config: ModelConfig
    relations: RelationSet
    history: TrainHistory


def fit_model(config: ModelConfig, relations: RelationSet, splits: Splits, tc: TrainConfig) -> TrainedModel:
    rel = relations.select(config.relations)
    params, history = train(init_params(config), model_forward(config, rel), splits.train, tc, val=splits.val)
    return TrainedModel(params, config, rel, history)


@dataclass
class AblationResult:
    component: str
    base: MetricReport
    ablated: MetricReport


def ablate(base: TrainedModel | None, config: ModelConfig, component: str, relations: RelationSet,
           splits: Splits, tc: TrainConfig) -> AblationResult:
    """Retrain from scratch with the same seed and ``component`` removed; compare test metrics."""
    reduced = config.without(component)
    if splits.test is None:
        raise ContractError("ablation needs a non-empty test split")
    base = base or fit_model(config, relations, splits, tc)
    other = fit_model(reduced, relations, splits, tc)
    score = lambda m: evaluate_model(m.params, m.config, m.relations, splits.test, splits.demand_stats)
    return AblationResult(component, score(base), score(other))


def ablation_components(config: ModelConfig) -> list[str]:
    comps = list(config.relations) if len(config.relations) > 1 else []
    return comps + (["weather"] if config.use_weather else [])


def ablation_study(config: ModelConfig, relations: RelationSet, splits: Splits, tc: TrainConfig,
                   components: Sequence[str] | None = None) -> list[tuple[str, MetricReport]]:
    """Rows: ``full`` then ``-<component>`` for each removed component."""
    base = fit_model(config, relations, splits, tc)
    score = lambda m: evaluate_model(m.params, m.config, m.relations, splits.test, splits.demand_stats)
    rows = [("full", score(base))]
    for comp in components if components is not None else ablation_components(config):
        log.info("ablating %s", comp)
        rows.append((f"-{comp}", ablate(base, config, comp, relations, splits, tc).ablated))
    return rows


# -- permutation importance -------------------------------------------------------------------

@dataclass
class ImportanceRow:
    group: str
    baseline_rmse: float
    permuted_rmse: float
    importance: float
    repetitions: list[float] = field(default_factory=list)


@dataclass
class ImportanceReport:
    rows: list[ImportanceRow]
    repetitions: int
    seed: int

    def __getitem__(self, group: str) -> ImportanceRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "baseline_rmse", "permuted_rmse", "importance"])
            for r in self.rows:
                w.writerow([r.group, repr(r.baseline_rmse), repr(r.permuted_rmse), repr(r.importance)])


def importance_groups(config: ModelConfig, weather_columns: Sequence[str] = ()) -> list[str]:
    """Relations, then ``weather``, then one ``weather:<column>`` group per listed column."""
    groups = list(config.relations)
    if config.use_weather:
        groups += ["weather"] + [f"weather:{c}" for c in weather_columns]
    return groups


def _group_rng(seed: int, group: str) -> np.random.Generator:
    # independent of the order groups are evaluated in
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(group.encode())]))


def permutation_importance(params: ModelParams, config: ModelConfig, relations: RelationSet,
                           dataset: WindowedDataset, demand_stats: Standardizer,
                           groups: Sequence[str] | None = None, repetitions: int = 5, seed: int = 0,
                           permutation: np.ndarray | None = None,
                           weather_columns: Sequence[str] = WEATHER_COLUMNS) -> ImportanceReport:
    """Increase of test RMSE after permuting one feature group; no retraining.

    ``weather`` permutes whole weather windows across samples, ``weather:<column>``
    only that column, and a relation name relabels that graph's nodes. A fixed
    ``permutation`` replaces the random draws (useful for the identity check).
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    relations = relations.select(config.relations)
    truth = dataset.targets_raw
    baseline = rmse(predict_counts(params, config, relations, dataset, demand_stats), truth)
    rows = []
    for group in groups if groups is not None else importance_groups(config):
        rng = _group_rng(seed, group)
        scores = []
        for _ in range(repetitions):
            if group == "weather" or group.startswith("weather:"):
                if not config.use_weather:
                    raise ConfigError("weather pathway is disabled in this model")
                perm = rng.permutation(len(dataset)) if permutation is None else np.asarray(permutation)
                weather = dataset.weather.copy()
                if group == "weather":
                    weather = weather[perm]
                else:
                    col = group.split(":", 1)[1]
                    if col not in weather_columns:
                        raise ConfigError(f"unknown weather column {col!r}; expected one of {list(weather_columns)}")
                    j = list(weather_columns).index(col)
                    weather[:, :, j] = dataset.weather[perm][:, :, j]
                pred = predict_counts(params, config, relations, dataset, demand_stats, weather=weather)
            elif group in config.relations:
                perm = rng.permutation(relations.n_nodes) if permutation is None else np.asarray(permutation)
                pred = predict_counts(params, config, relations.permuted(group, perm), dataset, demand_stats)
            else:
                raise ConfigError(f"unknown importance group {group!r}")
            scores.append(rmse(pred, truth))
        permuted = float(np.mean(scores))
        rows.append(ImportanceRow(group, baseline, permuted, permuted - baseline, scores))
    return ImportanceReport(rows, repetitions, seed)


# -- per-hour profile --------------------------------------------------------------------------

@dataclass(frozen=True)
class HourRow:
    hour: int
    count: int
    mae: float | None
    rmse: float | None
    mean_demand: float | None

    @property
    def absent(self) -> bool:
        return self.count == 0


def per_hour_errors(pred, truth, times) -> list[HourRow]:
    """24 rows of MAE, RMSE and mean ground truth by target hour of day.

    ``times`` broadcasts against ``pred`` after adding a zone axis: pass (S, M)
    target times for (S, N, M) predictions, or times shaped like ``pred``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"per_hour_errors: prediction {pred.shape} vs truth {truth.shape}")
    hod = hour_of_day(times)
    if hod.shape != pred.shape:
        if pred.ndim == 3 and hod.shape == (pred.shape[0], pred.shape[2]):
            hod = np.broadcast_to(hod[:, None, :], pred.shape)
        else:
            raise DimensionError(f"per_hour_errors: timestamps {hod.shape} not aligned with predictions {pred.shape}")
    err = (pred - truth).ravel()
    hod, truth = hod.ravel(), truth.ravel()
    rows = []
    for h in range(24):
        sel = hod == h
        if not sel.any():
            rows.append(HourRow(h, 0, None, None, None))
            continue
        e = err[sel]
        rows.append(HourRow(h, int(sel.sum()), float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e))),
                            float(np.mean(truth[sel]))))
    return rows


def write_per_hour_csv(rows: Sequence[HourRow], path: str | Path, label: str | None = None) -> None:
    """Absent hours are written with empty value cells."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["model"] if label else []) + ["hour", "count", "mae", "rmse", "mean_demand"])
        for r in rows:
            vals = ["" if v is None else repr(v) for v in (r.mae, r.rmse, r.mean_demand)]
            w.writerow(([label] if label else []) + [r.hour, r.count, *vals])
