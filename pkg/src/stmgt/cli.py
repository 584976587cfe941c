"""Command-line interface: ``stmgt <command> [options]``.

Every command writes ``run_manifest.json`` into its output directory. Errors
print one line ``stmgt-error code=<code> exit=<n> message=<json string>`` to
stderr and exit with 2 (configuration), 3 (ingestion) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import evaluation as E
from .errors import ConfigError, IngestionError, StmgtError
from .graphs import (DEFAULT_THRESHOLD, RelationSet, build_adjacency_graph, build_similarity_graph, fuse,
                     load_relation_set, read_edge_list, read_feature_table, save_relation_set)
from .model import ModelConfig, count_params, init_params
from .model import predict as model_predict
from .training import TrainConfig, load_checkpoint, model_forward, save_checkpoint, train

log = logging.getLogger("stmgt")

OUTPUT_ENV = "STMGT_OUTPUT_DIR"
MANIFEST_NAME = "run_manifest.json"
TRAIN_FRACTION, VAL_FRACTION = 0.6, 0.2

MODEL_FLAGS = {  # flag dest -> ModelConfig field
    "seq_len": "seq_len", "horizon": "horizon", "blocks": "n_blocks", "d_model": "d_model", "heads": "n_heads",
    "gcn_hidden": "gcn_hidden", "gcn_filters": "gcn_filters", "weather_dim": "weather_dim",
    "gcn_output": "gcn_output",
}
TRAIN_FLAGS = {"epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate", "patience": "patience"}
DATA_KEYS = ("start", "end", "train_end", "val_end")


# -- manifest ---------------------------------------------------------------------------------

def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        with f.open("rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int | None
    inputs: dict[str, dict] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__

    def add_input(self, name: str, path) -> None:
        if path is not None:
            self.inputs[name] = {"path": str(path), "sha256": sha256(path)}

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True))
        return path


# -- config -------------------------------------------------------------------------------------

@dataclass
class RunConfig:
    model: ModelConfig
    training: TrainConfig
    data: dict

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "training": self.training.to_dict(), "data": dict(self.data)}


def resolve_config(args) -> RunConfig:
    """JSON file values, then command-line flags, on top of the defaults."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        extra = set(raw) - {"model", "training", "data"}
        if extra:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(extra))}")
    model = dict(raw.get("model", {}))
    training = dict(raw.get("training", {}))
    data = dict(raw.get("data", {}))
    for flag, key in MODEL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            model[key] = getattr(args, flag)
    if getattr(args, "no_weather", False):
        model["use_weather"] = False
    if getattr(args, "relations", None):
        model["relations"] = [r.strip() for r in args.relations.split(",") if r.strip()]
    for flag, key in TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            training[key] = getattr(args, flag)
    if getattr(args, "seed", None) is not None:
        model["seed"] = training["seed"] = args.seed
    for key in DATA_KEYS:
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    unknown = set(data) - set(DATA_KEYS)
    if unknown:
        raise ConfigError(f"unknown data config keys: {', '.join(sorted(unknown))}")
    try:
        mc = ModelConfig.from_dict(model)
        tc = TrainConfig.from_dict(training)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(mc, tc, data)


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "stmgt_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_time(value: str, name: str) -> datetime:
    try:
        return D.parse_timestamp(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {value!r} as an ISO-8601 time") from exc


# -- input loading ------------------------------------------------------------------------------

@dataclass
class Inputs:
    relations: RelationSet
    demand: D.DemandMatrix
    weather: D.WeatherMatrix
    train_end: datetime
    val_end: datetime
    summary: D.IngestionSummary | None = None


def zone_diff(expected, got) -> str:
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    parts = []
    if missing:
        parts.append(f"missing {', '.join(missing[:20])}")
    if extra:
        parts.append(f"unexpected {', '.join(extra[:20])}")
    return "; ".join(parts)


def load_inputs(args, data_cfg: dict, relations: RelationSet | None = None, split_bounds: dict | None = None) -> Inputs:
    relations = relations if relations is not None else load_relation_set(args.graphs)
    zones = list(relations.zone_ids)
    if not zones:
        raise IngestionError("relation set has no zone ids; rebuild it with build-graphs")
    summary = None
    if getattr(args, "demand", None):
        dm = D.read_demand_csv(args.demand)
        diff = zone_diff(zones, dm.zone_ids)
        if diff:
            raise IngestionError(f"demand zones do not match the graph zones: {diff}")
        order = [dm.zone_ids.index(z) for z in zones]
        dm = D.DemandMatrix(zones, dm.start, dm.values[order])
        if "start" in data_cfg or "end" in data_cfg:
            lo = dm.index_of(_parse_time(data_cfg["start"], "start")) if "start" in data_cfg else 0
            hi = dm.index_of(_parse_time(data_cfg["end"], "end")) if "end" in data_cfg else dm.n_steps
            dm = dm.slice(lo, hi)
    elif getattr(args, "trips", None):
        records = D.read_trips_csv(args.trips)
        if not records:
            raise IngestionError(f"{args.trips}: no trip records")
        if "start" in data_cfg:
            start = _parse_time(data_cfg["start"], "start")
        else:
            start = min(r.timestamp for r in records).replace(hour=0, minute=0, second=0, microsecond=0)
        if "end" in data_cfg:
            end = _parse_time(data_cfg["end"], "end")
        else:
            last = max(r.timestamp for r in records).replace(hour=0, minute=0, second=0, microsecond=0)
            end = last + timedelta(days=1)
        dm, summary = D.bin_trips(records, zones, start, end)
        print(f"ingested {summary.report()}")
    else:
        raise ConfigError("provide --trips or --demand")
    bounds = dict(data_cfg)
    bounds.update(split_bounds or {})
    start = dm.start.astype(datetime)
    train_end = (_parse_time(bounds["train_end"], "train_end") if "train_end" in bounds
                 else start + timedelta(hours=int(TRAIN_FRACTION * dm.n_steps)))
    val_end = (_parse_time(bounds["val_end"], "val_end") if "val_end" in bounds
               else start + timedelta(hours=int((TRAIN_FRACTION + VAL_FRACTION) * dm.n_steps)))
    weather = D.join_weather(D.read_weather_csv(args.weather), dm, train_end=train_end)
    return Inputs(relations, dm, weather, train_end, val_end, summary)


# -- commands -------------------------------------------------------------------------------------

def cmd_build_graphs(args) -> int:
    out = output_dir(args)
    thresholds = {
        "functional": args.functional_threshold or args.threshold,
        "demographic": args.demographic_threshold or args.threshold,
        "transport_supply": args.transport_threshold or args.threshold,
    }
    tables = {"functional": args.poi, "demographic": args.demographics, "transport_supply": args.transport}
    loaded = {k: read_feature_table(p) for k, p in tables.items() if p}
    if not loaded and not args.edges:
        raise ConfigError("build-graphs needs at least one feature table or --edges")
    zone_sets = {k: t.zone_ids for k, t in loaded.items()}
    reference = next(iter(zone_sets.values())) if zone_sets else None
    for kind, ids in zone_sets.items():
        if ids != reference:
            raise IngestionError(f"zone mismatch between feature tables ({kind}): {zone_diff(reference, ids)}")
    graphs = []
    if args.edges:
        zones = reference or sorted({z for e in read_edge_list(args.edges) for z in e})
        graphs.append(build_adjacency_graph(read_edge_list(args.edges), zones))
    for kind, table in loaded.items():
        graphs.append(build_similarity_graph(table, thresholds[kind], kind=kind))
    zone_ids = reference or graphs[0].zone_ids
    rs = fuse(graphs)
    rs.zone_ids = list(zone_ids)
    save_relation_set(rs, out, threshold=args.threshold, extra={"thresholds": thresholds})
    manifest = RunManifest("build-graphs", args.argv, {"thresholds": thresholds}, None)
    for name, p in [("edges", args.edges), *tables.items()]:
        manifest.add_input(name, p)
    manifest.outputs = {g.kind: str(out / f"{g.kind}.csv") for g in rs.graphs}
    manifest.write(out)
    for g in graphs:
        print(f"{g.kind:<18} edges={g.n_edges:<6d} density={g.density:.4f}")
    return 0


def _datasets(inputs: Inputs, cfg: ModelConfig) -> D.Splits:
    return D.build_datasets(inputs.demand, inputs.weather, inputs.train_end, inputs.val_end, cfg.seq_len, cfg.horizon)


def _split_extra(inputs: Inputs) -> dict:
    return {"train_end": inputs.train_end.isoformat(), "val_end": inputs.val_end.isoformat(),
            "data_start": str(inputs.demand.start), "n_steps": inputs.demand.n_steps}


def cmd_train(args) -> int:
    out = output_dir(args)
    rc = resolve_config(args)
    inputs = load_inputs(args, rc.data)
    rel = inputs.relations.select(rc.model.relations)
    splits = _datasets(inputs, rc.model)
    ckpt_dir = out / "checkpoint"

    def on_checkpoint(epoch, params):
        target = ckpt_dir if epoch == -1 else out / "checkpoints" / f"epoch_{epoch:04d}"
        save_checkpoint(target, params, rc.model, rel, splits.demand_stats, splits.weather_stats, rel.zone_ids,
                        extra=_split_extra(inputs))

    hook = on_checkpoint if rc.training.checkpoint_every else None
    params, history = train(init_params(rc.model), model_forward(rc.model, rel), splits.train, rc.training,
                            val=splits.val, on_checkpoint=hook)
    on_checkpoint(-1, params)
    history.write_csv(out / "history.csv", include_time=not args.no_timing)
    manifest = RunManifest("train", args.argv, rc.to_dict(), rc.model.seed)
    manifest.config["resolved_splits"] = _split_extra(inputs)
    manifest.add_input("graphs", args.graphs)
    manifest.add_input("trips", args.trips)
    manifest.add_input("demand", args.demand)
    manifest.add_input("weather", args.weather)
    manifest.outputs = {"checkpoint": str(ckpt_dir), "history": str(out / "history.csv")}
    manifest.write(out)
    best = "n/a" if history.best_epoch is None else history.best_epoch
    print(f"trained {history.epochs_completed} epochs on {len(splits.train)} samples; "
          f"{count_params(rc.model)} parameters; best epoch {best}")
    return 0


def _load_for_eval(args):
    ck = load_checkpoint(args.checkpoint)
    rel = ck.relations if ck.relations is not None else load_relation_set(args.graphs)
    data_cfg = {k: ck.extra[k] for k in ("train_end", "val_end") if k in ck.extra}
    if getattr(args, "graphs", None):
        graph_rel = load_relation_set(args.graphs)
        if graph_rel.zone_ids and ck.zone_ids and graph_rel.zone_ids != ck.zone_ids:
            raise IngestionError(f"graph zones differ from the checkpoint: {zone_diff(ck.zone_ids, graph_rel.zone_ids)}")
    inputs = load_inputs(args, {}, relations=rel, split_bounds=data_cfg)
    if ck.zone_ids and inputs.demand.zone_ids != ck.zone_ids:
        raise IngestionError(f"input zones differ from the checkpoint: {zone_diff(ck.zone_ids, inputs.demand.zone_ids)}")
    # the checkpoint's training statistics are authoritative
    splits = _datasets(inputs, ck.config) if ck.demand_stats is None else _checkpoint_splits(inputs, ck)
    return ck, rel, inputs, splits


def _checkpoint_splits(inputs: Inputs, ck) -> D.Splits:
    weather = D.WeatherMatrix(inputs.weather.start, inputs.weather.raw, ck.weather_stats or inputs.weather.stats)
    dm = inputs.demand
    a = dm.index_of(inputs.train_end)
    b = dm.index_of(inputs.val_end)
    w = weather.standardized
    cfg = ck.config

    def window(lo, hi, name):
        part = dm.slice(lo, hi)
        if part.n_steps < cfg.seq_len + cfg.horizon:
            return None
        return D.make_windows(part, cfg.seq_len, cfg.horizon, w[lo:hi], ck.demand_stats, name)

    return D.Splits(window(0, a, "train"), window(a, b, "val"), window(b, dm.n_steps, "test"), ck.demand_stats,
                    weather.stats, dm.slice(0, a), list(dm.zone_ids))


def _pick(splits: D.Splits, name: str) -> D.WindowedDataset:
    ds = {"train": splits.train, "val": splits.val, "test": splits.test}[name]
    if ds is None or len(ds) == 0:
        raise ConfigError(f"the {name} split has no complete windows")
    return ds


def cmd_predict(args) -> int:
    out = output_dir(args)
    ck, rel, inputs, splits = _load_for_eval(args)
    cfg = ck.config
    path = out / "predictions.csv"
    if args.split == "latest":
        dm = inputs.demand
        if dm.n_steps < cfg.seq_len:
            raise ConfigError(f"need {cfg.seq_len} steps of history, have {dm.n_steps}")
        x = D.normalize_demand(dm.values[:, -cfg.seq_len:], splits.demand_stats)[None]
        w = ((inputs.weather.raw - splits.weather_stats.mean) / splits.weather_stats.std)[-cfg.seq_len:][None]
        pred = D.denormalize_predictions(model_predict(x, rel, w, ck.params, cfg), splits.demand_stats)
        times = (dm.end + np.arange(cfg.horizon) * D.HOUR)[None]
    else:
        ds = _pick(splits, args.split)
        pred = E.predict_counts(ck.params, cfg, rel, ds, splits.demand_stats)
        times = ds.target_times
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["zone_id", "target_time", "step", "prediction"])
        for s in range(pred.shape[0]):
            for i, zone in enumerate(inputs.demand.zone_ids):
                for m in range(pred.shape[2]):
                    wr.writerow([zone, str(times[s, m]), m + 1, repr(float(pred[s, i, m]))])
    manifest = RunManifest("predict", args.argv, {"split": args.split, "model": cfg.to_dict()}, cfg.seed)
    _record_eval_inputs(manifest, args)
    manifest.outputs = {"predictions": str(path)}
    manifest.write(out)
    print(f"wrote {pred.shape[0] * pred.shape[1] * pred.shape[2]} predictions to {path}")
    return 0


def _record_eval_inputs(manifest: RunManifest, args) -> None:
    manifest.add_input("checkpoint", args.checkpoint)
    for name in ("graphs", "trips", "demand", "weather"):
        manifest.add_input(name, getattr(args, name, None))


def cmd_evaluate(args) -> int:
    out = output_dir(args)
    ck, rel, inputs, splits = _load_for_eval(args)
    ds = _pick(splits, args.split)
    pred = E.predict_counts(ck.params, ck.config, rel, ds, splits.demand_stats)
    rows = [("stmgt", E.metrics(pred, ds.targets_raw))]
    hour_preds = [("stmgt", pred)]
    if args.baseline == "ha":
        ha = E.ha_baseline(splits.train_demand, ds.target_times)
        rows.append(("ha", E.metrics(ha, ds.targets_raw)))
        hour_preds.append(("ha", ha))
    metrics_path = out / "metrics.csv"
    E.write_metrics_csv(rows, metrics_path)
    outputs = {"metrics": str(metrics_path)}
    if args.per_hour:
        for label, p in hour_preds:
            hp = out / f"per_hour_{label}.csv"
            E.write_per_hour_csv(E.per_hour_errors(p, ds.targets_raw, ds.target_times), hp)
            outputs[f"per_hour_{label}"] = str(hp)
    manifest = RunManifest("evaluate", args.argv,
                           {"split": args.split, "baseline": args.baseline, "per_hour": args.per_hour,
                            "model": ck.config.to_dict()}, ck.config.seed)
    _record_eval_inputs(manifest, args)
    manifest.outputs = outputs
    manifest.write(out)
    print(E.format_table(rows))
    return 0


def cmd_ablate(args) -> int:
    out = output_dir(args)
    rc = resolve_config(args)
    inputs = load_inputs(args, rc.data)
    splits = _datasets(inputs, rc.model)
    if splits.test is None:
        raise ConfigError("ablation needs a test split with at least one window")
    comps = [c.strip() for c in args.components.split(",")] if args.components else None
    rows = E.ablation_study(rc.model, inputs.relations, splits, rc.training, comps)
    path = out / "ablation.csv"
    E.write_metrics_csv(rows, path)
    manifest = RunManifest("ablate", args.argv, rc.to_dict(), rc.model.seed)
    manifest.config["resolved_splits"] = _split_extra(inputs)
    for name in ("graphs", "trips", "demand", "weather"):
        manifest.add_input(name, getattr(args, name, None))
    manifest.outputs = {"ablation": str(path)}
    manifest.write(out)
    print(E.format_table(rows))
    return 0


def cmd_importance(args) -> int:
    out = output_dir(args)
    ck, rel, inputs, splits = _load_for_eval(args)
    ds = _pick(splits, args.split)
    groups = [g.strip() for g in args.groups.split(",")] if args.groups else None
    report = E.permutation_importance(ck.params, ck.config, rel, ds, splits.demand_stats, groups=groups,
                                      repetitions=args.repetitions, seed=args.seed)
    path = out / "importance.csv"
    report.write_csv(path)
    manifest = RunManifest("importance", args.argv,
                           {"split": args.split, "repetitions": args.repetitions, "groups": groups,
                            "model": ck.config.to_dict()}, args.seed)
    _record_eval_inputs(manifest, args)
    manifest.outputs = {"importance": str(path)}
    manifest.write(out)
    for r in report.rows:
        print(f"{r.group:<28} baseline={r.baseline_rmse:.4f} permuted={r.permuted_rmse:.4f} "
              f"importance={r.importance:+.4f}")
    return 0


def cmd_make_synthetic(args) -> int:
    from .synthetic import SyntheticSpec, generate, write_city

    out = output_dir(args)
    spec = SyntheticSpec(n_zones=args.zones, n_hours=args.hours, seed=args.seed)
    paths = write_city(generate(spec), out, trips=not args.no_trips)
    manifest = RunManifest("make-synthetic", args.argv,
                           {"zones": args.zones, "hours": args.hours, "trips": not args.no_trips}, args.seed)
    manifest.outputs = {k: str(v) for k, v in paths.items()}
    manifest.write(out)
    print(f"wrote synthetic city ({args.zones} zones, {args.hours} hours) to {out}")
    return 0


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    for name, info in manifest.get("inputs", {}).items():
        if Path(info["path"]).exists() and sha256(info["path"]) != info["sha256"]:
            raise IngestionError(f"input {name} ({info['path']}) changed since the original run")
    if args.out:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv += ["--out", args.out]
    return main(argv)


# -- parser ------------------------------------------------------------------------------------------

def _add_data_args(p, need_graphs=True):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--trips", help="trip records CSV (zone_id,timestamp)")
    src.add_argument("--demand", help="hourly demand matrix CSV (zone_id, then hour columns)")
    p.add_argument("--weather", required=True, help="daily weather CSV")
    p.add_argument("--graphs", required=need_graphs, help="directory written by build-graphs")


def _add_config_args(p):
    p.add_argument("--config", help="JSON file with model / training / data sections")
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--gcn-hidden", dest="gcn_hidden", type=int)
    p.add_argument("--gcn-filters", dest="gcn_filters", type=int)
    p.add_argument("--weather-dim", dest="weather_dim", type=int)
    p.add_argument("--gcn-output", dest="gcn_output", choices=["softmax", "linear"])
    p.add_argument("--relations", help="comma-separated relation kinds to enable")
    p.add_argument("--no-weather", dest="no_weather", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    for key in DATA_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, help="ISO-8601 time")


def _threshold(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"threshold must be in (0, 1), got {text}")
    return value


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of printing usage so bad flags produce the one-line error format."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stmgt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stmgt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-graphs", help="build and normalize the relation graphs")
    p.add_argument("--poi", help="functional zone features CSV")
    p.add_argument("--demographics", help="demographic zone features CSV")
    p.add_argument("--transport", help="transport supply zone features CSV")
    p.add_argument("--edges", help="zone adjacency edge list CSV (zone_a,zone_b)")
    p.add_argument("--threshold", type=_threshold, default=DEFAULT_THRESHOLD)
    p.add_argument("--functional-threshold", type=_threshold)
    p.add_argument("--demographic-threshold", type=_threshold)
    p.add_argument("--transport-threshold", type=_threshold)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="ingest, window and train; writes a checkpoint and history")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--no-timing", dest="no_timing", action="store_true",
                   help="leave the seconds column empty so reruns are byte-identical")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "write denormalized predictions"),
                                 ("evaluate", cmd_evaluate, "metrics on a split"),
                                 ("importance", cmd_importance, "permutation feature importance")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        _add_data_args(p, need_graphs=False)
        choices = ["train", "val", "test"] + (["latest"] if name == "predict" else [])
        p.add_argument("--split", choices=choices, default="test")
        p.add_argument("--out")
        p.set_defaults(func=func)
        if name == "evaluate":
            p.add_argument("--baseline", choices=["ha"])
            p.add_argument("--per-hour", dest="per_hour", action="store_true")
        if name == "importance":
            p.add_argument("--repetitions", type=int, default=5)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--groups", help="comma-separated groups, e.g. weather,functional,weather:avg_wind_mps")

    p = sub.add_parser("ablate", help="retrain with each component removed")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--components", help="comma-separated subset of components to ablate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-synthetic", help="write a seeded synthetic city")
    p.add_argument("--zones", type=int, default=20)
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-trips", dest="no_trips", action="store_true", help="skip the per-trip CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("rerun", help="repeat a run from its run_manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rerun)
    return parser


def _fail(code: str, exit_code: int, message: str) -> int:
    print(f"stmgt-error code={code} exit={exit_code} message={json.dumps(message)}", file=sys.stderr)
    return exit_code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("config_error", 2, str(exc))
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StmgtError as exc:
        return _fail(exc.code, exc.exit_code, str(exc))
    except FileNotFoundError as exc:
        return _fail("ingestion_error", 3, f"file not found: {exc.filename}")
    except (UnicodeDecodeError, csv.Error) as exc:
        return _fail("ingestion_error", 3, str(exc))
    except FloatingPointError as exc:
        return _fail("numeric_error", 4, str(exc))


if __name__ == "__main__":
    sys.exit(main())
