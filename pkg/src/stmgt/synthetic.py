"""Seeded synthetic city with planted spatial, temporal and weather structure.

Hourly demand per zone is Poisson with rate

    base_i * (commute_i(hour, daytype) + leisure_i(hour, daytype) * weather_d) * exp(spatial_scale * s_t^i)

where ``s`` is an AR(1) process diffused over the zone adjacency graph and
``weather_d`` responds to the day's precipitation and temperature. Wind speed
is pure noise and serves as a control feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .data import DemandMatrix, HOUR, build_datasets, join_weather, write_demand_csv, write_weather_csv
from .graphs import (ZoneFeatureTable, build_adjacency_graph, build_similarity_graph, fuse, write_edge_list,
                     write_feature_table)

FEATURE_FILES = {"functional": "poi.csv", "demographic": "demographics.csv", "transport_supply": "transport.csv"}


@dataclass(frozen=True)
class SyntheticSpec:
    n_zones: int = 20
    n_hours: int = 2000
    seed: int = 0
    start: datetime = datetime(2019, 6, 3)  # a Monday
    n_clusters: int = 3
    neighbors: int = 3
    ar_coef: float = 0.95
    spatial_scale: float = 0.3
    rain_effect: float = 3.0
    temp_effect: float = 0.06
    base_low: float = 20.0
    base_high: float = 60.0


@dataclass
class SyntheticCity:
    spec: SyntheticSpec
    zone_ids: list[str]
    demand: DemandMatrix
    daily_weather: list[tuple[date, float, float, float]]
    features: dict[str, ZoneFeatureTable]
    edges: list[tuple[str, str]]
    rate: np.ndarray      # (N, L) Poisson intensity
    latent: np.ndarray    # (N, L) spatial AR component

    def relations(self, threshold: float = 0.8):
        graphs = [build_adjacency_graph(self.edges, self.zone_ids)]
        graphs += [build_similarity_graph(self.features[k], threshold, kind=k) for k in FEATURE_FILES]
        return fuse(graphs)

    @property
    def train_end(self) -> datetime:
        return self.spec.start + timedelta(hours=int(0.6 * self.spec.n_hours))

    @property
    def val_end(self) -> datetime:
        return self.spec.start + timedelta(hours=int(0.8 * self.spec.n_hours))

    def datasets(self, seq_len: int, horizon: int):
        weather = join_weather(self.daily_weather, self.demand, train_end=self.train_end)
        return build_datasets(self.demand, weather, self.train_end, self.val_end, seq_len, horizon)


def _knn_edges(points: np.ndarray, k: int) -> np.ndarray:
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    a = np.zeros(d.shape, dtype=int)
    for i, row in enumerate(np.argsort(d, axis=1)[:, :k]):
        a[i, row] = 1
    return np.maximum(a, a.T)


def _clustered_table(rng, zone_ids, labels, n_cols, prefix, noise=0.15):
    protos = rng.gamma(2.0, 1.0, size=(labels.max() + 1, n_cols))
    values = protos[labels] * (1 + noise * rng.normal(size=(len(labels), n_cols)))
    return ZoneFeatureTable(list(zone_ids), [f"{prefix}{j}" for j in range(n_cols)], np.abs(values))


def generate(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticCity:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n, length = spec.n_zones, spec.n_hours
    zone_ids = [f"Z{i:02d}" for i in range(n)]

    # geography and zone types
    points = rng.uniform(size=(n, 2))
    adj = _knn_edges(points, spec.neighbors)
    labels = rng.integers(0, spec.n_clusters, size=n)
    edges = [(zone_ids[i], zone_ids[j]) for i, j in zip(*np.nonzero(np.triu(adj, 1)))]

    # commute and leisure profiles; weather later modulates only the leisure part, so
    # the morning history says little about how the afternoon will respond to the day's weather
    hours = np.arange(24)
    bump = lambda c, w: np.exp(-0.5 * ((hours - c) / w) ** 2)
    commute_shape = np.stack([bump(8, 1.5), bump(18, 2.0)])        # (2, 24)
    mix = rng.dirichlet(np.ones(2), size=spec.n_clusters)[labels] + 0.1 * rng.uniform(size=(n, 2))
    commute = 0.2 + mix @ commute_shape                              # (N, 24)
    leisure = rng.uniform(0.8, 1.6, size=(n, 1)) * bump(16, 3.0)     # (N, 24)
    weekend_commute = rng.uniform(0.2, 0.5, size=(n, 1))
    weekend_leisure = rng.uniform(1.2, 1.8, size=(n, 1))
    base = rng.uniform(spec.base_low, spec.base_high, size=(n, 1))

    times = np.datetime64(spec.start, "h") + np.arange(length) * HOUR
    hod = (times.astype(np.int64) % 24)
    day_index = (times - np.datetime64(spec.start, "h")) // np.timedelta64(24, "h")
    weekend = (((times.astype(np.int64) // 24) + 3) % 7 >= 5)[None, :]
    commute_t = np.where(weekend, weekend_commute, 1.0) * commute[:, hod]
    leisure_t = np.where(weekend, weekend_leisure, 1.0) * leisure[:, hod]

    # spatial AR(1) process diffused over the adjacency graph
    p = adj + np.eye(n)
    p = p / p.sum(axis=1, keepdims=True)
    latent = np.zeros((n, length))
    s = rng.normal(size=n)
    innov = np.sqrt(1 - spec.ar_coef**2)
    for t in range(length):
        s = spec.ar_coef * (p @ s) + innov * rng.normal(size=n)
        latent[:, t] = s

    # daily weather: precipitation and temperature drive leisure demand, wind does nothing
    n_days = int(day_index[-1]) + 1
    rain = np.where(rng.uniform(size=n_days) < 0.4, rng.exponential(0.5, size=n_days), 0.0)
    doy = np.arange(n_days)
    temp = 70 + 12 * np.sin(2 * np.pi * doy / 365.0) + 8 * rng.normal(size=n_days)
    wind = np.abs(3 + 1.5 * rng.normal(size=n_days))
    day_factor = np.exp(-spec.rain_effect * rain + spec.temp_effect * (temp - 70))
    daily = [(spec.start.date() + timedelta(days=int(d)), float(rain[d]), float(temp[d]), float(wind[d]))
             for d in range(n_days)]

    profile = commute_t + leisure_t * day_factor[day_index][None, :]
    rate = base * profile * np.exp(spec.spatial_scale * latent)
    counts = rng.poisson(rate)

    features = {
        "functional": _clustered_table(rng, zone_ids, labels, 12, "poi_"),
        "demographic": _clustered_table(rng, zone_ids, labels, 8, "demo_"),
        "transport_supply": _clustered_table(rng, zone_ids, labels, 6, "supply_"),
    }
    return SyntheticCity(spec, zone_ids, DemandMatrix(zone_ids, spec.start, counts), daily, features, edges,
                         rate, latent)


def write_city(city: SyntheticCity, directory: str | Path, trips: bool = True) -> dict[str, Path]:
    """Write CLI-ready inputs: trips (or demand) CSV, weather, feature tables and edge list."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"weather": directory / "weather.csv", "edges": directory / "adjacency.csv",
             "demand": directory / "demand.csv"}
    write_weather_csv(city.daily_weather, paths["weather"])
    write_edge_list(city.edges, paths["edges"])
    write_demand_csv(city.demand, paths["demand"])
    for kind, name in FEATURE_FILES.items():
        paths[kind] = directory / name
        write_feature_table(city.features[kind], paths[kind])
    if trips:
        paths["trips"] = directory / "trips.csv"
        write_trips(city, paths["trips"])
    return paths


def write_trips(city: SyntheticCity, path: str | Path) -> None:
    """Expand counts into individual trip records at seeded minutes within each hour."""
    rng = np.random.default_rng(np.random.SeedSequence([city.spec.seed, 1]))
    times = city.demand.times
    with Path(path).open("w") as fh:
        fh.write("zone_id,timestamp\n")
        for zone, row in zip(city.zone_ids, city.demand.values):
            for t, c in zip(times, row):
                for minute in np.sort(rng.integers(0, 60, size=int(c))):
                    fh.write(f"{zone},{t}:{minute:02d}:00\n")
