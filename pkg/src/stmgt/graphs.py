"""Zone relation graphs: adjacency, Pearson-similarity graphs, normalization and fusion.

Zones are opaque string ids. Every matrix in a run uses the same zone order,
which is the lexicographic order of the ids.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, IngestionError

RELATION_KINDS = ("spatial_adjacency", "functional", "demographic", "transport_supply")
DEFAULT_THRESHOLD = 0.8


def _check_kind(kind: str) -> str:
    if kind not in RELATION_KINDS:
        raise ConfigError(f"unknown relation kind {kind!r}; expected one of {', '.join(RELATION_KINDS)}")
    return kind


@dataclass
class ZoneFeatureTable:
    zone_ids: list[str]
    columns: list[str]
    values: np.ndarray  # (N, m)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.zone_ids), len(self.columns)):
            raise DimensionError(
                f"feature table has {len(self.zone_ids)} zones x {len(self.columns)} columns "
                f"but values of shape {self.values.shape}"
            )
        if len(set(self.zone_ids)) != len(self.zone_ids):
            raise IngestionError("feature table has duplicate zone ids")
        if not np.all(np.isfinite(self.values)):
            raise IngestionError("feature table contains missing or non-finite values")

    def sorted(self) -> "ZoneFeatureTable":
        order = sorted(range(len(self.zone_ids)), key=lambda i: self.zone_ids[i])
        return ZoneFeatureTable([self.zone_ids[i] for i in order], list(self.columns), self.values[order])


@dataclass
class ZoneGraph:
    adjacency: np.ndarray  # (N, N) of {0, 1}
    kind: str
    zone_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"adjacency must be square, got shape {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ContractError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise ContractError("adjacency must be symmetric")
        if np.any(np.diag(a)):
            raise ContractError("adjacency diagonal must be zero (self-loops are added by normalize)")
        self.adjacency = a.astype(np.int8)
        _check_kind(self.kind)
        if self.zone_ids and len(self.zone_ids) != a.shape[0]:
            raise DimensionError(f"{len(self.zone_ids)} zone ids for a {a.shape[0]}-node graph")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    @property
    def density(self) -> float:
        n = self.n_nodes
        return 0.0 if n < 2 else self.n_edges / (n * (n - 1) / 2)


@dataclass
class NormalizedGraph:
    a_hat: np.ndarray
    kind: str


@dataclass
class RelationSet:
    graphs: list[NormalizedGraph]
    zone_ids: list[str] = field(default_factory=list)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(g.kind for g in self.graphs)

    @property
    def n_nodes(self) -> int:
        return self.graphs[0].a_hat.shape[0]

    def __len__(self) -> int:
        return len(self.graphs)

    def stack(self) -> np.ndarray:
        return np.stack([g.a_hat for g in self.graphs])

    def select(self, kinds: Iterable[str]) -> "RelationSet":
        wanted = set(kinds)
        missing = wanted - set(self.kinds)
        if missing:
            raise ConfigError(f"relations not available: {', '.join(sorted(missing))}")
        return RelationSet([g for g in self.graphs if g.kind in wanted], list(self.zone_ids))

    def permuted(self, kind: str, perm: np.ndarray) -> "RelationSet":
        """Copy with one relation's nodes relabelled: ``A[perm][:, perm]``."""
        if kind not in self.kinds:
            raise ConfigError(f"relation {kind!r} is not in this set")
        out = []
        for g in self.graphs:
            a = g.a_hat[np.ix_(perm, perm)] if g.kind == kind else g.a_hat
            out.append(NormalizedGraph(a, g.kind))
        return RelationSet(out, list(self.zone_ids))


# -- construction ---------------------------------------------------------------

def pearson(u: Sequence[float], v: Sequence[float]) -> float:
    """Sample Pearson correlation; 0 when either vector is constant."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"pearson: vectors of shape {u.shape} and {v.shape}")
    if u.size < 2:
        raise ContractError("pearson needs at least 2 observations")
    du, dv = u - u.mean(), v - v.mean()
    su, sv = math.sqrt(float(du @ du)), math.sqrt(float(dv @ dv))
    if su == 0.0 or sv == 0.0:
        return 0.0
    r = float(du @ dv) / (su * sv)
    return min(1.0, max(-1.0, r))


def correlation_matrix(values: np.ndarray) -> np.ndarray:
    """All-pairs row Pearson correlations with the zero-variance rule applied."""
    centered = values - values.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    ok = norms > 0
    unit = np.zeros_like(centered)
    unit[ok] = centered[ok] / norms[ok, None]
    corr = np.clip(unit @ unit.T, -1.0, 1.0)
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    return corr


def build_similarity_graph(features: ZoneFeatureTable, threshold: float = DEFAULT_THRESHOLD,
                           kind: str = "functional") -> ZoneGraph:
    n = len(features.zone_ids)
    if n < 2:
        raise ContractError(f"similarity graph needs at least 2 zones, got {n}")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"similarity threshold must lie in (0, 1), got {threshold}")
    if features.values.shape[1] < 2:
        raise ContractError("similarity graph needs at least 2 feature columns")
    adj = (correlation_matrix(features.values) > threshold).astype(np.int8)
    np.fill_diagonal(adj, 0)
    return ZoneGraph(adj, kind, list(features.zone_ids))


def build_adjacency_graph(edges: Iterable[tuple[str, str]], zone_ids: Sequence[str]) -> ZoneGraph:
    index = {z: i for i, z in enumerate(zone_ids)}
    adj = np.zeros((len(zone_ids), len(zone_ids)), dtype=np.int8)
    for a, b in edges:
        for z in (a, b):
            if z not in index:
                raise IngestionError(f"edge list references unknown zone id {z!r}")
        if a == b:
            continue
        adj[index[a], index[b]] = adj[index[b], index[a]] = 1
    return ZoneGraph(adj, "spatial_adjacency", list(zone_ids))


def normalize(g: ZoneGraph) -> NormalizedGraph:
    a_tilde = g.adjacency.astype(np.float64) + np.eye(g.n_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return NormalizedGraph(d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :], g.kind)


def fuse(graphs: Sequence[ZoneGraph]) -> RelationSet:
    """Normalize each graph and stack them in canonical relation order."""
    if not graphs:
        raise ContractError("fuse needs at least one graph")
    sizes = {g.n_nodes for g in graphs}
    if len(sizes) > 1:
        raise DimensionError(f"graphs disagree on node count: {sorted(sizes)}")
    kinds = [g.kind for g in graphs]
    if len(set(kinds)) != len(kinds):
        raise ConfigError(f"duplicate relation kinds: {kinds}")
    ordered = sorted(graphs, key=lambda g: RELATION_KINDS.index(g.kind))
    zone_ids = next((list(g.zone_ids) for g in ordered if g.zone_ids), [])
    for g in ordered:
        if g.zone_ids and list(g.zone_ids) != zone_ids:
            raise IngestionError(f"zone order of {g.kind} graph differs from the others")
    return RelationSet([normalize(g) for g in ordered], zone_ids)


def identity_relations(n: int, kinds: Sequence[str] = ("spatial_adjacency",)) -> RelationSet:
    """Edge-free graphs: every node only sees itself."""
    return fuse([ZoneGraph(np.zeros((n, n), dtype=np.int8), k) for k in kinds])


# -- file formats ----------------------------------------------------------------

def read_feature_table(path: str | Path) -> ZoneFeatureTable:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "zone_id" or len(header) < 2:
            raise IngestionError(f"{path}: header must start with zone_id followed by feature columns")
        zones, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: non-numeric feature value") from exc
            zones.append(row[0].strip())
    return ZoneFeatureTable(zones, [h.strip() for h in header[1:]], np.array(rows).reshape(len(zones), -1)).sorted()


def write_feature_table(table: ZoneFeatureTable, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone_id", *table.columns])
        for z, row in zip(table.zone_ids, table.values):
            w.writerow([z, *(repr(float(x)) for x in row)])


def read_edge_list(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"zone_a", "zone_b"} <= set(reader.fieldnames):
            raise IngestionError(f"{path}: header must contain zone_a,zone_b")
        return [(r["zone_a"].strip(), r["zone_b"].strip()) for r in reader]


def write_edge_list(edges: Iterable[tuple[str, str]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone_a", "zone_b"])
        w.writerows(edges)


def save_relation_set(rs: RelationSet, directory: str | Path, threshold: float | None = None,
                      extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for g in rs.graphs:
        np.savetxt(directory / f"{g.kind}.csv", g.a_hat, delimiter=",", fmt="%.17g")
    manifest = {
        "relations": list(rs.kinds),
        "n_nodes": rs.n_nodes,
        "threshold": threshold,
        "zone_ids": list(rs.zone_ids),
        **(extra or {}),
    }
    path = directory / "relations.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_relation_set(directory: str | Path) -> RelationSet:
    directory = Path(directory)
    manifest_path = directory / "relations.json"
    if not manifest_path.exists():
        raise IngestionError(f"{directory}: missing relations.json manifest")
    manifest = json.loads(manifest_path.read_text())
    n = manifest["n_nodes"]
    graphs = []
    for kind in manifest["relations"]:
        a = np.loadtxt(directory / f"{_check_kind(kind)}.csv", delimiter=",", ndmin=2)
        if a.shape != (n, n):
            raise IngestionError(f"{kind}.csv has shape {a.shape}, manifest says {n}x{n}")
        graphs.append(NormalizedGraph(a, kind))
    return RelationSet(graphs, list(manifest.get("zone_ids") or []))
