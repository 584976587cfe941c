"""Mini-batch L2 training with Adam, best-on-validation selection, and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import numcore as nc
from .data import Standardizer, WindowedDataset
from .errors import CheckpointError, ConfigError, ContractError, DimensionError, NumericError
from .graphs import NormalizedGraph, RelationSet
from .model import ModelConfig, ModelParams, check_params, copy_params, stmgt_forward
from .numcore import Tensor

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

ForwardFn = Callable[[ModelParams, np.ndarray, np.ndarray], Tensor]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 36
    epochs: int = 300
    learning_rate: float = 0.005
    seed: int = 0
    patience: int | None = None
    checkpoint_every: int | None = None
    lr_decay_every: int | None = None
    lr_decay_factor: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if self.lr_decay_every is not None and self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1 when set")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch; constant unless step decay is configured."""
        if self.lr_decay_every is None:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training config keys: {', '.join(sorted(extra))}")
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path: str | Path, include_time: bool = True) -> None:
        """``include_time=False`` writes a blank seconds column so reruns compare byte for byte."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, (tr, va, sec) in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
                w.writerow([i, repr(tr), "" if np.isnan(va) else repr(va), f"{sec:.3f}" if include_time else ""])


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every element."""
    pred, target = nc.as_tensor(pred), nc.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l2_loss: prediction {pred.shape} vs target {target.shape}")
    return nc.mean(nc.square(pred - target))


def model_forward(config: ModelConfig, relations) -> ForwardFn:
    rel = relations.stack() if isinstance(relations, RelationSet) else np.asarray(relations)

    def forward(params, x, weather):
        return stmgt_forward(x, rel, weather, params, config)

    return forward


def evaluate_loss(params: ModelParams, forward: ForwardFn, dataset: WindowedDataset, batch_size: int = 64) -> float:
    """Mean squared error over a dataset without recording a tape."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    sse, count = 0.0, 0
    for i in range(0, len(dataset), batch_size):
        sl = slice(i, i + batch_size)
        err = forward(frozen, dataset.inputs[sl], dataset.weather[sl]).data - dataset.targets[sl]
        sse += float(np.sum(err * err))
        count += err.size
    return sse / count


def train(params: ModelParams, forward: ForwardFn, dataset: WindowedDataset, tc: TrainConfig,
          val: WindowedDataset | None = None,
          on_checkpoint: Callable[[int, ModelParams], None] | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train a copy of ``params``; returns the best-validation parameters (final ones without ``val``).

    ``on_checkpoint(epoch, params)`` fires every ``tc.checkpoint_every`` epochs
    and once at the end with the returned parameters.
    """
    if dataset is None or len(dataset) == 0:
        raise ContractError("training split has no samples")
    history = TrainHistory()
    work = copy_params(params)
    if tc.epochs == 0:
        if on_checkpoint:
            on_checkpoint(0, work)
        return work, history
    state = nc.AdamState.for_params(work, learning_rate=tc.learning_rate)
    rng = nc.make_rng(tc.seed)
    best, best_val, stale = None, np.inf, 0
    n = len(dataset)
    for epoch in range(tc.epochs):
        tick = time.perf_counter()
        order = rng.permutation(n)
        lr = tc.lr_at(epoch)
        sse = 0.0
        for b, lo in enumerate(range(0, n, tc.batch_size)):
            idx = order[lo:lo + tc.batch_size]
            loss = l2_loss(forward(work, dataset.inputs[idx], dataset.weather[idx]), dataset.targets[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch + 1}, batch {b}")
            loss.backward()
            nc.adam_step(work, state, lr)
            sse += value * len(idx)
        history.train_loss.append(sse / n)
        val_loss = evaluate_loss(work, forward, val) if val is not None and len(val) else float("nan")
        history.val_loss.append(val_loss)
        history.seconds.append(time.perf_counter() - tick)
        log.info("epoch %d train %.6f val %.6f", epoch + 1, history.train_loss[-1], val_loss)
        if val_loss < best_val:
            best_val, best, stale = val_loss, copy_params(work), 0
            history.best_epoch = epoch + 1
        elif not np.isnan(val_loss):
            stale += 1
        if on_checkpoint and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            on_checkpoint(epoch + 1, work)
        if tc.patience is not None and stale >= tc.patience:
            log.info("early stop after %d epochs without validation improvement", stale)
            break
    result = best if best is not None else work
    if best is None:
        history.best_epoch = history.epochs_completed
    if on_checkpoint:
        on_checkpoint(history.epochs_completed, result)
    return result, history


# -- checkpoints ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    relations: RelationSet | None = None
    demand_stats: Standardizer | None = None
    weather_stats: Standardizer | None = None
    zone_ids: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, params: ModelParams, config: ModelConfig,
                    relations: RelationSet | None = None, demand_stats: Standardizer | None = None,
                    weather_stats: Standardizer | None = None, zone_ids=None, extra: dict | None = None) -> Path:
    """Directory layout: ``manifest.json``, ``tensors/<name>.npy``, ``relations/<kind>.npy``."""
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    for name, t in params.items():
        np.save(path / "tensors" / f"{name}.npy", t.data, allow_pickle=False)
    if relations is not None:
        (path / "relations").mkdir(exist_ok=True)
        for g in relations.graphs:
            np.save(path / "relations" / f"{g.kind}.npy", g.a_hat, allow_pickle=False)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": config.seed,
        "relations": list(relations.kinds) if relations is not None else list(config.relations),
        "has_relation_arrays": relations is not None,
        "zone_ids": list(zone_ids if zone_ids is not None else (relations.zone_ids if relations else [])),
        "stats": {
            "demand": demand_stats.to_dict() if demand_stats else None,
            "weather": weather_stats.to_dict() if weather_stats else None,
        },
        "tensors": {name: list(t.shape) for name, t in params.items()},
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise CheckpointError(f"{path}: no manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{mpath}: invalid JSON ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is incompatible with {FORMAT_VERSION}")
    config = ModelConfig.from_dict(manifest["config"])
    params = {}
    for name, shape in manifest["tensors"].items():
        fpath = path / "tensors" / f"{name}.npy"
        if not fpath.exists():
            raise CheckpointError(f"checkpoint tensor {name} is missing")
        arr = np.load(fpath, allow_pickle=False)
        if list(arr.shape) != list(shape):
            raise CheckpointError(f"checkpoint tensor {name}: file shape {arr.shape}, manifest says {tuple(shape)}")
        params[name] = Tensor(arr, requires_grad=True)
    try:
        check_params(params, config)
    except (ConfigError, DimensionError) as exc:
        raise CheckpointError(f"checkpoint does not match its config: {exc}") from exc
    zone_ids = list(manifest.get("zone_ids") or [])
    relations = None
    if manifest.get("has_relation_arrays"):
        graphs = [NormalizedGraph(np.load(path / "relations" / f"{k}.npy", allow_pickle=False), k)
                  for k in manifest["relations"]]
        relations = RelationSet(graphs, zone_ids)
    stats = manifest.get("stats") or {}
    load_stats = lambda d: Standardizer.from_dict(d) if d else None
    return Checkpoint(params, config, relations, load_stats(stats.get("demand")), load_stats(stats.get("weather")),
                      zone_ids, manifest.get("extra") or {})


def params_equal(a: Mapping[str, Tensor], b: Mapping[str, Tensor]) -> bool:
    return a.keys() == b.keys() and all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
