import csv
import json

import numpy as np
import pytest

from stmgt import cli
from stmgt.graphs import ZoneFeatureTable, load_relation_set, write_feature_table
from stmgt.synthetic import SyntheticSpec, generate, write_city
from stmgt.training import load_checkpoint

SMALL = ["--seq-len", "12", "--blocks", "1", "--d-model", "8", "--heads", "2", "--gcn-hidden", "4",
         "--gcn-filters", "4", "--weather-dim", "2", "--batch-size", "32"]


@pytest.fixture(scope="module")
def city_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    paths = write_city(generate(SyntheticSpec(n_zones=6, n_hours=24 * 9, seed=1)), root)
    rc = cli.main(["build-graphs", "--poi", str(paths["functional"]), "--demographics", str(paths["demographic"]),
                   "--transport", str(paths["transport_supply"]), "--edges", str(paths["edges"]),
                   "--out", str(root / "graphs")])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def trained(city_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = cli.main(["train", "--trips", str(city_dir / "trips.csv"), "--weather", str(city_dir / "weather.csv"),
                   "--graphs", str(city_dir / "graphs"), "--epochs", "2", "--no-timing", "--out", str(out), *SMALL])
    assert rc == 0
    return out


def data_args(city_dir):
    return ["--trips", str(city_dir / "trips.csv"), "--weather", str(city_dir / "weather.csv")]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


# -- build-graphs -------------------------------------------------------------------------

def test_build_graphs_forced_edge(tmp_path, capsys):
    table = ZoneFeatureTable(["a", "b", "c"], ["x", "y", "z"],
                             np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [3.0, 1.0, 2.0]]))
    write_feature_table(table, tmp_path / "poi.csv")
    rc = cli.main(["build-graphs", "--poi", str(tmp_path / "poi.csv"), "--out", str(tmp_path / "g")])
    assert rc == 0
    assert "functional" in capsys.readouterr().out
    rs = load_relation_set(tmp_path / "g")
    assert rs.kinds == ("functional",) and rs.zone_ids == ["a", "b", "c"]
    adj = rs.graphs[0].a_hat > 0
    assert adj[0, 1] and adj[1, 0] and not adj[0, 2]


def test_build_graphs_prints_edge_count(tmp_path, capsys):
    table = ZoneFeatureTable(["a", "b", "c"], ["x", "y", "z"],
                             np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [3.0, 1.0, 2.0]]))
    write_feature_table(table, tmp_path / "poi.csv")
    cli.main(["build-graphs", "--poi", str(tmp_path / "poi.csv"), "--out", str(tmp_path / "g")])
    assert "edges=1 " in capsys.readouterr().out


def test_build_graphs_rejects_threshold(tmp_path, capsys):
    rc = cli.main(["build-graphs", "--poi", "x.csv", "--threshold", "1.01", "--out", str(tmp_path)])
    assert rc == 2
    assert last_error(capsys).startswith("stmgt-error code=config_error exit=2")


def test_build_graphs_zone_mismatch_named(tmp_path, capsys):
    write_feature_table(ZoneFeatureTable(["a", "b"], ["x", "y"], np.eye(2) + 1), tmp_path / "poi.csv")
    write_feature_table(ZoneFeatureTable(["a", "c"], ["x", "y"], np.eye(2) + 1), tmp_path / "demo.csv")
    rc = cli.main(["build-graphs", "--poi", str(tmp_path / "poi.csv"), "--demographics", str(tmp_path / "demo.csv"),
                   "--out", str(tmp_path / "g")])
    assert rc == 3
    line = last_error(capsys)
    assert "code=ingestion_error" in line and "b" in line and "c" in line


def test_build_graphs_round_trip(city_dir):
    rs = load_relation_set(city_dir / "graphs")
    city = generate(SyntheticSpec(n_zones=6, n_hours=24 * 9, seed=1))
    direct = city.relations()
    assert rs.kinds == direct.kinds
    for a, b in zip(rs.graphs, direct.graphs):
        np.testing.assert_array_equal(a.a_hat, b.a_hat)


# -- train --------------------------------------------------------------------------------

def test_train_outputs(trained):
    assert (trained / "checkpoint" / "manifest.json").exists()
    rows = read_csv(trained / "history.csv")
    assert rows[0] == ["epoch", "train_loss", "val_loss", "seconds"] and len(rows) == 3
    manifest = json.loads((trained / cli.MANIFEST_NAME).read_text())
    assert manifest["command"] == "train"
    assert set(manifest["inputs"]) == {"graphs", "trips", "weather"}
    assert all(len(v["sha256"]) == 64 for v in manifest["inputs"].values())
    assert manifest["config"]["training"]["epochs"] == 2


def test_train_defaults_echo_recipe(city_dir, tmp_path):
    args = cli.build_parser().parse_args(["train", *data_args(city_dir), "--graphs", "g"])
    rc = cli.resolve_config(args)
    cfg = rc.to_dict()
    assert (cfg["training"]["batch_size"], cfg["training"]["epochs"], cfg["training"]["learning_rate"]) == \
        (36, 300, 0.005)
    assert (cfg["model"]["seq_len"], cfg["model"]["n_blocks"]) == (24, 3)


def test_flags_override_config_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"d_model": 16, "n_heads": 2}, "training": {"epochs": 7}}))
    args = cli.build_parser().parse_args(["train", "--weather", "w", "--graphs", "g", "--config",
                                          str(tmp_path / "c.json"), "--epochs", "3"])
    rc = cli.resolve_config(args)
    assert rc.model.d_model == 16 and rc.training.epochs == 3


def test_bad_config_file(tmp_path, city_dir, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"d_model": 30}}))
    rc = cli.main(["train", *data_args(city_dir), "--graphs", str(city_dir / "graphs"),
                   "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)])
    assert rc == 2 and "config_error" in last_error(capsys)


def test_train_zero_epochs_writes_initial_checkpoint(city_dir, tmp_path):
    rc = cli.main(["train", *data_args(city_dir), "--graphs", str(city_dir / "graphs"), "--epochs", "0",
                   "--out", str(tmp_path), *SMALL, "--seed", "4"])
    assert rc == 0
    from stmgt.model import init_params
    from stmgt.training import params_equal

    ck = load_checkpoint(tmp_path / "checkpoint")
    assert params_equal(ck.params, init_params(ck.config))


def test_train_rerun_identical_history(trained, tmp_path):
    rc = cli.main(["rerun", str(trained / cli.MANIFEST_NAME), "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "history.csv").read_bytes() == (trained / "history.csv").read_bytes()


def test_train_inconsistent_zones(city_dir, tmp_path, capsys):
    rows = read_csv(city_dir / "demand.csv")
    rows[1][0] = "ZZ"
    with open(tmp_path / "demand.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    rc = cli.main(["train", "--demand", str(tmp_path / "demand.csv"), "--weather", str(city_dir / "weather.csv"),
                   "--graphs", str(city_dir / "graphs"), "--epochs", "0", "--out", str(tmp_path)])
    assert rc == 3
    line = last_error(capsys)
    assert "ZZ" in line and "Z00" in line


def test_malformed_trips_line(city_dir, tmp_path, capsys):
    (tmp_path / "trips.csv").write_text("zone_id,timestamp\nZ00,2019-06-03T01:00\nZ01,yesterday\n")
    rc = cli.main(["train", "--trips", str(tmp_path / "trips.csv"), "--weather", str(city_dir / "weather.csv"),
                   "--graphs", str(city_dir / "graphs"), "--out", str(tmp_path)])
    assert rc == 3
    assert ":3:" in last_error(capsys)


def test_missing_weather_date(city_dir, tmp_path, capsys):
    lines = (city_dir / "weather.csv").read_text().splitlines()
    (tmp_path / "weather.csv").write_text("\n".join(lines[:3] + lines[4:]) + "\n")
    rc = cli.main(["train", *data_args(city_dir)[:2], "--weather", str(tmp_path / "weather.csv"),
                   "--graphs", str(city_dir / "graphs"), "--out", str(tmp_path)])
    assert rc == 3
    assert lines[3].split(",")[0] in last_error(capsys)


def test_output_dir_from_environment(city_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envout"))
    rc = cli.main(["make-synthetic", "--zones", "3", "--hours", "48", "--no-trips"])
    assert rc == 0 and (tmp_path / "envout" / "demand.csv").exists()


# -- evaluate / predict / importance --------------------------------------------------------

def test_evaluate_with_baseline_and_per_hour(trained, city_dir, tmp_path):
    rc = cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir),
                   "--baseline", "ha", "--per-hour", "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "metrics.csv")
    assert rows[0] == list(("model", "mae", "rmse", "mape10", "smape", "n", "n_mape10"))
    assert [r[0] for r in rows[1:]] == ["stmgt", "ha"]
    assert all(len(r) == len(rows[0]) for r in rows)
    for label in ("stmgt", "ha"):
        hours = read_csv(tmp_path / f"per_hour_{label}.csv")
        assert hours[0] == ["hour", "count", "mae", "rmse", "mean_demand"] and len(hours) - 1 <= 24


def test_evaluate_is_bit_reproducible(trained, city_dir, tmp_path):
    args = ["evaluate", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir), "--baseline", "ha"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["rerun", str(tmp_path / "a" / cli.MANIFEST_NAME), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_evaluate_zone_mismatch(trained, city_dir, tmp_path, capsys):
    rows = read_csv(city_dir / "demand.csv")
    rows = rows[:-1]
    with open(tmp_path / "demand.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    rc = cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint"), "--demand", str(tmp_path / "demand.csv"),
                   "--weather", str(city_dir / "weather.csv"), "--out", str(tmp_path)])
    assert rc == 3 and "Z05" in last_error(capsys)


def test_predict_test_and_latest(trained, city_dir, tmp_path):
    assert cli.main(["predict", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir),
                     "--out", str(tmp_path / "t")]) == 0
    rows = read_csv(tmp_path / "t" / "predictions.csv")
    assert rows[0] == ["zone_id", "target_time", "step", "prediction"]
    assert (len(rows) - 1) % 6 == 0
    assert cli.main(["predict", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir),
                     "--split", "latest", "--out", str(tmp_path / "l")]) == 0
    latest = read_csv(tmp_path / "l" / "predictions.csv")
    assert len(latest) == 7 and latest[1][1] == "2019-06-12T00"


def test_importance_cli(trained, city_dir, tmp_path):
    rc = cli.main(["importance", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir),
                   "--repetitions", "1", "--groups", "weather,functional,weather:avg_wind_mps", "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "importance.csv")
    assert rows[0] == ["group", "baseline_rmse", "permuted_rmse", "importance"]
    assert [r[0] for r in rows[1:]] == ["weather", "functional", "weather:avg_wind_mps"]
    for r in rows[1:]:
        assert float(r[3]) == float(r[2]) - float(r[1])


def test_importance_unknown_group(trained, city_dir, tmp_path, capsys):
    rc = cli.main(["importance", "--checkpoint", str(trained / "checkpoint"), *data_args(city_dir),
                   "--groups", "roads", "--out", str(tmp_path)])
    assert rc == 2 and "roads" in last_error(capsys)


def test_corrupt_checkpoint(trained, city_dir, tmp_path, capsys):
    rc = cli.main(["evaluate", "--checkpoint", str(tmp_path), *data_args(city_dir), "--out", str(tmp_path)])
    assert rc == 3 and "checkpoint_error" in last_error(capsys)


# -- ablate -----------------------------------------------------------------------------------

def test_ablate_row_count(city_dir, tmp_path):
    rc = cli.main(["ablate", *data_args(city_dir), "--graphs", str(city_dir / "graphs"), "--epochs", "1",
                   "--relations", "spatial_adjacency,functional", "--out", str(tmp_path), *SMALL])
    assert rc == 0
    rows = read_csv(tmp_path / "ablation.csv")
    assert [r[0] for r in rows[1:]] == ["full", "-spatial_adjacency", "-functional", "-weather"]


def test_ablate_last_relation_rejected(city_dir, tmp_path, capsys):
    rc = cli.main(["ablate", *data_args(city_dir), "--graphs", str(city_dir / "graphs"), "--epochs", "1",
                   "--relations", "functional", "--components", "functional", "--out", str(tmp_path), *SMALL])
    assert rc == 2 and "last relation" in last_error(capsys)


def test_usage_error_is_single_line(capsys):
    assert cli.main(["train", "--bogus"]) == 2
    assert last_error(capsys).startswith("stmgt-error code=config_error exit=2")
