"""Acceptance suite: one marker per criterion, summarised at the end of the pytest run."""
import math
import time

import numpy as np
import pytest

from stmgt import cli
from stmgt import evaluation as E
from stmgt import graphs as G
from stmgt import layers as L
from stmgt import model as M
from stmgt import numcore as nc
from stmgt import training as TR
from stmgt.data import WindowedDataset
from stmgt.numcore.gradcheck import gradcheck, numerical_gradient, relative_error
from stmgt.synthetic import SyntheticSpec, generate, write_city

SEEDS = (0, 1, 2)
BENCH_MODEL = dict(seq_len=24, horizon=6, n_blocks=1, d_model=8, n_heads=2, gcn_hidden=4, gcn_filters=4,
                   weather_dim=2)
BENCH_EPOCHS = 30
TINY = M.ModelConfig(seq_len=4, horizon=1, n_blocks=2, d_model=8, n_heads=2, gcn_hidden=4, gcn_filters=4,
                     weather_dim=4, seed=3)


def leaf(rng, *shape, scale=0.5):
    return nc.Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def random_relations(rng, n, kinds):
    graphs = []
    for kind in kinds:
        upper = np.triu(rng.integers(0, 2, size=(n, n)), 1)
        graphs.append(G.ZoneGraph(upper + upper.T, kind))
    return G.fuse(graphs)


# -- 1: gradients ----------------------------------------------------------------------------

def layer_gradchecks(rng):
    a = random_relations(rng, 4, ("spatial_adjacency", "functional")).stack()
    errors = {}
    for output in ("softmax", "linear"):
        p = L.GcnParams([leaf(rng, 2, 3) for _ in range(2)], [leaf(rng, 3, 4) for _ in range(2)])
        x = leaf(rng, 3, 4, 2, scale=2)
        t = rng.normal(size=(3, 4, 8))
        errors[f"gcn_{output}"] = gradcheck(lambda: nc.tsum(nc.square(L.gcn_forward(x, a, p, output) - t)),
                                            [x, *p.w0, *p.w1])

    def attn():
        return L.AttentionParams(*(leaf(rng, 8, 8) for _ in range(4)), n_heads=2)

    def ffn(d):
        return L.FfnParams(leaf(rng, d, 4 * d), leaf(rng, 4 * d), leaf(rng, 4 * d, d), leaf(rng, d))

    def ln(d):
        return L.LayerNormParams(nc.Tensor(1 + 0.1 * rng.normal(size=d), requires_grad=True),
                                 nc.Tensor(0.1 * rng.normal(size=d), requires_grad=True))

    p = attn()
    q, kv = leaf(rng, 2, 3, 8), leaf(rng, 2, 5, 8)
    t = rng.normal(size=(2, 3, 8))
    errors["mha"] = gradcheck(lambda: nc.tsum(nc.square(L.multi_head_attention(q, kv, kv, p) - t)),
                              [q, kv, p.wq, p.wk, p.wv, p.wo])
    x3 = leaf(rng, 2, 3, 8)
    errors["mha_causal"] = gradcheck(
        lambda: nc.tsum(nc.square(L.multi_head_attention(x3, x3, x3, p, L.causal_mask(3)) - t)),
        [x3, p.wq, p.wk, p.wv, p.wo])

    f = ffn(4)
    xf = leaf(rng, 3, 4, scale=2)
    errors["ffn"] = gradcheck(lambda: nc.tsum(nc.square(L.ffn_forward(xf, f))), [xf, f.w1, f.b1, f.w2, f.b2])

    norm = ln(6)
    xn = leaf(rng, 3, 6, scale=2)
    tn = rng.normal(size=(3, 6))
    errors["layer_norm"] = gradcheck(lambda: nc.tsum(nc.square(nc.layer_norm(xn, norm.gain, norm.bias) - tn)),
                                     [xn, norm.gain, norm.bias])

    enc = L.EncoderLayerParams(attn(), ln(8), ffn(8), ln(8))
    dec = L.DecoderLayerParams(attn(), ln(8), attn(), ln(8), ffn(8), ln(8))
    xe, qd = leaf(rng, 2, 3, 8), leaf(rng, 2, 2, 8)
    td = rng.normal(size=(2, 2, 8))
    leaves = [xe, qd]
    for bundle in (enc.attn, dec.self_attn, dec.cross_attn):
        leaves += [bundle.wq, bundle.wk, bundle.wv, bundle.wo]
    for ff in (enc.ffn, dec.ffn):
        leaves += [ff.w1, ff.b1, ff.w2, ff.b2]
    for norm_p in (enc.ln1, enc.ln2, dec.ln1, dec.ln2, dec.ln3):
        leaves += [norm_p.gain, norm_p.bias]
    errors["encoder_decoder"] = gradcheck(
        lambda: nc.tsum(nc.square(L.decoder_layer(qd, L.encoder_layer(xe, enc), dec) - td)), leaves)

    xh, hw, hb = leaf(rng, 3, 2, 4), leaf(rng, 4, 1), leaf(rng, 1)
    errors["head"] = gradcheck(lambda: nc.tsum(nc.square(L.conv1x1_head(xh, hw, hb))), [xh, hw, hb])
    return errors


def end_to_end_error(rng):
    p = M.init_params(TINY)
    rel = random_relations(rng, 3, TINY.relations)
    x = rng.normal(size=(2, 3, TINY.seq_len))
    w = rng.normal(size=(2, TINY.seq_len, TINY.weather_features))
    y = rng.normal(size=(2, 3, 1))

    def loss():
        return nc.mean(nc.square(M.stmgt_forward(x, rel, w, p, TINY) - y))

    for t in p.values():
        t.grad = None
    loss().backward()
    analytic = {k: v.grad.copy() for k, v in p.items()}
    value = lambda: float(loss().data)
    return max(relative_error(analytic[k], numerical_gradient(value, t.data)) for k, t in p.items())


@pytest.mark.criterion(1, "gradient suite (layers < 1e-5, end-to-end < 1e-4, < 60 s)")
def test_gradient_suite(record_property):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    layers = layer_gradchecks(rng)
    e2e = end_to_end_error(rng)
    seconds = time.perf_counter() - start
    worst = max(layers, key=layers.get)
    record_property("worst_layer", f"{worst}:{layers[worst]:.1e}")
    record_property("end_to_end", f"{e2e:.1e}")
    record_property("seconds", f"{seconds:.1f}")
    assert all(v < 1e-5 for v in layers.values()), layers
    assert e2e < 1e-4
    assert seconds < 60


# -- 2: graph oracle -----------------------------------------------------------------------

def brute_pearson(u, v):
    n = len(u)
    mu, mv = sum(u) / n, sum(v) / n
    cov = sum((a - mu) * (b - mv) for a, b in zip(u, v))
    su = math.sqrt(sum((a - mu) ** 2 for a in u))
    sv = math.sqrt(sum((b - mv) ** 2 for b in v))
    return 0.0 if su == 0 or sv == 0 else cov / (su * sv)


def brute_similarity(values, d):
    n = len(values)
    rows = [list(map(float, r)) for r in values]
    return np.array([[int(i != j and brute_pearson(rows[i], rows[j]) > d) for j in range(n)] for i in range(n)])


def dense_normalize(adj):
    n = len(adj)
    at = [[adj[i][j] + (1 if i == j else 0) for j in range(n)] for i in range(n)]
    deg = [sum(row) for row in at]
    return np.array([[at[i][j] / math.sqrt(deg[i] * deg[j]) for j in range(n)] for i in range(n)])


@pytest.mark.criterion(2, "graph oracle (100 random 30x12 tables exact, normalize within 1e-12)")
def test_graph_oracle(record_property):
    rng = np.random.default_rng(0)
    edges = 0
    for i in range(100):
        # half clustered tables so that thresholds actually bite, half unstructured noise
        if i % 2:
            values = rng.normal(size=(30, 12))
        else:
            centers = rng.normal(size=(4, 12))
            values = centers[rng.integers(0, 4, size=30)] + 0.35 * rng.normal(size=(30, 12))
        table = G.ZoneFeatureTable([f"z{k:02d}" for k in range(30)], [f"f{k}" for k in range(12)], values)
        graph = G.build_similarity_graph(table, 0.8)
        oracle = brute_similarity(values, 0.8)
        np.testing.assert_array_equal(graph.adjacency, oracle)
        np.testing.assert_allclose(G.normalize(graph).a_hat, dense_normalize(oracle.tolist()), rtol=0, atol=1e-12)
        edges += int(oracle.sum()) // 2
    record_property("edges", edges)
    assert edges > 0


# -- 3: overfit ------------------------------------------------------------------------------

@pytest.mark.criterion(3, "overfit 8 samples to L2 < 1e-3 within 2000 Adam steps (lr 0.005, < 2 min)")
def test_overfit_eight_samples(record_property):
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(8, 3, 4)), rng.normal(size=(8, 3, 1))
    ds = WindowedDataset(x, y, y.copy(), rng.normal(size=(8, 4, 3)), np.arange(8),
                         np.zeros((8, 1), dtype="datetime64[h]"))
    # a path graph keeps every node's neighbourhood distinct; twin nodes could not be told apart
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    rel = G.fuse([G.ZoneGraph(path, kind) for kind in TINY.relations])
    forward = TR.model_forward(TINY, rel)
    start = time.perf_counter()
    params, history = TR.train(M.init_params(TINY), forward, ds,
                               TR.TrainConfig(epochs=2000, batch_size=8, learning_rate=0.005))
    seconds = time.perf_counter() - start
    final = TR.evaluate_loss(params, forward, ds)
    first = next((i + 1 for i, v in enumerate(history.train_loss) if v < 1e-3), None)
    record_property("final_loss", f"{final:.1e}")
    record_property("steps_to_1e-3", first)
    record_property("seconds", f"{seconds:.1f}")
    assert final < 1e-3
    assert seconds < 120


# -- 4-6: synthetic benchmark ----------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    runs = {}
    for seed in SEEDS:
        city = generate(SyntheticSpec(seed=seed))
        splits = city.datasets(BENCH_MODEL["seq_len"], BENCH_MODEL["horizon"])
        config = M.ModelConfig(**BENCH_MODEL, seed=seed)
        tc = TR.TrainConfig(epochs=BENCH_EPOCHS, seed=seed)
        start = time.perf_counter()
        trained = E.fit_model(config, city.relations(), splits, tc)
        seconds = time.perf_counter() - start
        ha = E.rmse(E.ha_baseline(splits.train_demand, splits.test.target_times), splits.test.targets_raw)
        runs[seed] = dict(city=city, splits=splits, config=config, tc=tc, model=trained, seconds=seconds, ha=ha)
    return runs


@pytest.mark.criterion(4, "STMGT test RMSE <= 0.7 x HA on 3 seeds, <= 100 epochs, < 15 min")
def test_relative_skill(benchmark, record_property):
    ratios, seconds = {}, 0.0
    for seed, run in benchmark.items():
        m = run["model"]
        score = E.evaluate_model(m.params, m.config, m.relations, run["splits"].test, run["splits"].demand_stats)
        ratios[seed] = score.rmse / run["ha"]
        seconds += run["seconds"]
    record_property("rmse_over_ha", {s: round(r, 3) for s, r in ratios.items()})
    record_property("train_seconds", f"{seconds:.0f}")
    assert BENCH_EPOCHS <= 100
    assert all(r <= 0.7 for r in ratios.values())
    assert seconds < 15 * 60


@pytest.mark.criterion(5, "ablating weather strictly increases test RMSE on >= 2 of 3 seeds")
def test_weather_ablation_direction(benchmark, record_property):
    deltas = {}
    for seed, run in benchmark.items():
        result = E.ablate(run["model"], run["config"], "weather", run["city"].relations(), run["splits"], run["tc"])
        deltas[seed] = result.ablated.rmse - result.base.rmse
    record_property("rmse_increase", {s: round(d, 3) for s, d in deltas.items()})
    assert sum(d > 0 for d in deltas.values()) >= 2


@pytest.mark.criterion(6, "weather importance > 5x noise-control importance; identity permutation gives 0")
def test_importance_sanity(benchmark, record_property):
    ratios = {}
    for seed, run in benchmark.items():
        m, splits = run["model"], run["splits"]
        report = E.permutation_importance(m.params, m.config, m.relations, splits.test, splits.demand_stats,
                                          groups=["weather", "weather:avg_wind_mps"], repetitions=5, seed=seed)
        signal, noise = report["weather"].importance, report["weather:avg_wind_mps"].importance
        ratios[seed] = signal / abs(noise) if noise else math.inf
        assert signal > 5 * abs(noise)
        for group in ("weather", "weather:avg_wind_mps", *m.config.relations):
            n = len(splits.test) if group.startswith("weather") else m.relations.n_nodes
            exact = E.permutation_importance(m.params, m.config, m.relations, splits.test, splits.demand_stats,
                                             groups=[group], repetitions=1, permutation=np.arange(n))
            assert exact[group].importance == 0.0
    record_property("signal_over_noise", {s: round(r, 1) for s, r in ratios.items()})


# -- 7: metrics ------------------------------------------------------------------------------

@pytest.mark.criterion(7, "metric exactness (hand values to 1e-12, y >= 10 rule, mae <= rmse on 1000 vectors)")
def test_metric_exactness():
    pred = [1.0, 12.0, 8.0, 30.0, 0.0]
    truth = [2.0, 10.0, 9.0, 20.0, 0.0]
    r = E.metrics(pred, truth)
    assert r.mae == pytest.approx(14 / 5, abs=1e-12)
    assert r.rmse == pytest.approx(math.sqrt(106 / 5), abs=1e-12)
    # only the truths 10 and 20 are eligible
    assert r.n_mape10 == 2
    assert r.mape10 == pytest.approx((2 / 10 + 10 / 20) / 2, abs=1e-12)
    assert r.smape == pytest.approx((2 / 3 + 4 / 22 + 2 / 17 + 20 / 50 + 0) / 5, abs=1e-12)
    assert E.metrics([5.0, 3.0], [9.0, 9.999]).mape10 is None
    assert E.metrics([11.0], [10.0]).mape10 == pytest.approx(0.1, abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        r = E.metrics(rng.uniform(0, 100, size=n), rng.uniform(0, 100, size=n))
        assert r.mae <= r.rmse * (1 + 1e-12)


# -- 8: determinism ----------------------------------------------------------------------------

SMALL = ["--seq-len", "12", "--blocks", "1", "--d-model", "8", "--heads", "2", "--gcn-hidden", "4",
         "--gcn-filters", "4", "--weather-dim", "2", "--batch-size", "32", "--epochs", "2", "--no-timing"]


def run_pipeline(root, city_dir, monkeypatch):
    monkeypatch.chdir(root)
    data = ["--trips", str(city_dir / "trips.csv"), "--weather", str(city_dir / "weather.csv")]
    assert cli.main(["build-graphs", "--poi", str(city_dir / "poi.csv"), "--demographics",
                     str(city_dir / "demographics.csv"), "--transport", str(city_dir / "transport.csv"),
                     "--edges", str(city_dir / "adjacency.csv"), "--out", "graphs"]) == 0
    assert cli.main(["train", *data, "--graphs", "graphs", *SMALL, "--out", "train"]) == 0
    assert cli.main(["evaluate", "--checkpoint", "train/checkpoint", *data, "--baseline", "ha", "--out", "eval"]) == 0
    return {name: (root / name).read_bytes()
            for name in ("train/run_manifest.json", "train/history.csv", "eval/run_manifest.json",
                         "eval/metrics.csv")}


@pytest.mark.criterion(8, "identical manifests give bit-identical metrics CSVs; checkpoint forward is bitwise")
def test_determinism_and_persistence(tmp_path, monkeypatch):
    city_dir = tmp_path / "city"
    write_city(generate(SyntheticSpec(n_zones=6, n_hours=24 * 9, seed=4)), city_dir)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = run_pipeline(tmp_path / "a", city_dir, monkeypatch)
    second = run_pipeline(tmp_path / "b", city_dir, monkeypatch)
    assert first == second

    rng = np.random.default_rng(1)
    cfg = TINY
    params = M.init_params(cfg)
    for t in params.values():
        t.data += 0.01 * rng.normal(size=t.shape)
    rel = random_relations(rng, 4, cfg.relations)
    TR.save_checkpoint(tmp_path / "ckpt", params, cfg, rel)
    loaded = TR.load_checkpoint(tmp_path / "ckpt")
    x, w = rng.normal(size=(3, 4, cfg.seq_len)), rng.normal(size=(3, cfg.seq_len, cfg.weather_features))
    before = M.stmgt_forward(x, rel, w, params, cfg).data
    after = M.stmgt_forward(x, loaded.relations, w, loaded.params, loaded.config).data
    assert before.tobytes() == after.tobytes()


# -- 9: shapes and equivariance ---------------------------------------------------------------

@pytest.mark.criterion(9, "forward emits N x M for random (N, T, M, k); node-permutation equivariant within 1e-9")
@pytest.mark.parametrize("seed", range(8))
def test_shape_and_equivariance(seed):
    rng = np.random.default_rng(seed)
    n, t, m, k = (int(v) for v in rng.integers(1, 7, size=4))
    cfg = M.ModelConfig(seq_len=t, horizon=m, n_blocks=k, d_model=8, n_heads=2, gcn_hidden=4, gcn_filters=4,
                        weather_dim=3, seed=seed)
    params = M.init_params(cfg)
    rel = random_relations(rng, n, cfg.relations).stack()
    w = rng.normal(size=(t, cfg.weather_features))
    x = rng.normal(size=(n, t))
    out = M.stmgt_forward(x, rel, w, params, cfg).data
    assert out.shape == (n, m)
    perm = rng.permutation(n)
    moved = M.stmgt_forward(x[perm], rel[:, perm][:, :, perm], w, params, cfg).data
    np.testing.assert_allclose(moved, out[perm], rtol=0, atol=1e-9)
