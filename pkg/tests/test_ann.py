import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droughtcast.ann import (
    AnnStageReport,
    Champion,
    Network,
    NetworkArch,
    TrainConfig,
    cell_seed,
    forward,
    gradient,
    hidden_nodes_rule,
    init_network,
    model_inputs,
    run_ann_stage,
    select_champion,
    sse_and_gradient,
    train,
)
from droughtcast.errors import StageError, UsageError
from droughtcast.features import make_split_plan
from droughtcast.metrics import regression_metrics
from droughtcast.model_space import ModelSpec, enumerate_models


def numeric_sse(net, X, y):
    return 0.5 * float(np.sum((forward(net, X) - y) ** 2))


def test_hidden_nodes_rule():
    assert hidden_nodes_rule(3, 1) == (5, 1)
    assert hidden_nodes_rule(27, 1)[1] == 3
    with pytest.raises(ValueError):
        hidden_nodes_rule(0, 1)


def test_arch_and_init():
    arch = NetworkArch(2, (5, 3))
    assert arch.sizes == (2, 5, 3, 1)
    # (5x2 + 5) + (3x5 + 3) + (1x3 + 1)
    assert arch.n_params == 10 + 5 + 15 + 3 + 3 + 1 == 37
    net = init_network(arch, 42)
    assert [w.shape for w in net.weights] == [(5, 2), (3, 5), (1, 3)]
    assert [b.shape for b in net.biases] == [(5,), (3,), (1,)]
    theta = net.flat()
    assert theta.size == 37 and np.all(np.abs(theta) <= 0.5)
    np.testing.assert_array_equal(init_network(arch, 42).flat(), theta)
    assert not np.array_equal(init_network(arch, 43).flat(), theta)
    with pytest.raises(UsageError):
        NetworkArch(0, (5, 3))


def test_flat_round_trip_and_json():
    net = init_network(NetworkArch(3, (5, 3)), 1)
    again = Network.from_flat(net.arch, net.flat(), net.seed)
    np.testing.assert_array_equal(again.flat(), net.flat())
    back = Network.from_dict(json.loads(json.dumps(net.to_dict())))
    np.testing.assert_array_equal(back.flat(), net.flat())
    # layer order input to output, W row-major then b
    assert np.array_equal(net.flat()[:20], np.concatenate([net.weights[0].ravel(), net.biases[0]]))


def test_forward_zero_and_hand_example():
    arch = NetworkArch(2, (5, 3))
    zero = Network.from_flat(arch, np.zeros(37))
    assert forward(zero, np.array([0.3, 0.9])) == 0.0
    # zero hidden weights put every hidden unit at 0.5
    theta = np.zeros(37)
    theta[-4:] = [1.0, 2.0, 3.0, 0.25]  # output weights and bias
    net = Network.from_flat(arch, theta)
    assert forward(net, np.array([0.1, 0.7])) == pytest.approx(0.5 * 6 + 0.25, abs=1e-15)
    with pytest.raises(UsageError):
        forward(net, np.zeros(3))


def test_forward_batch_matches_rows():
    net = init_network(NetworkArch(3, (5, 3)), 5)
    X = np.random.default_rng(0).random((20, 3))
    batch = forward(net, X)
    rows = [forward(net, x) for x in X]
    np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(123)
    worst = 0.0
    for trial in range(100):
        n_in = int(rng.integers(1, 4))
        arch = NetworkArch(n_in, (5, 3))
        net = Network.from_flat(arch, rng.uniform(-2, 2, arch.n_params))
        n = int(rng.integers(1, 30))
        X, y = rng.random((n, n_in)), rng.random(n)
        _, g = sse_and_gradient(net, X, y)
        theta = net.flat()
        h = 1e-5
        for j in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            fd = (numeric_sse(Network.from_flat(arch, tp), X, y)
                  - numeric_sse(Network.from_flat(arch, tm), X, y)) / (2 * h)
            err = abs(g[j] - fd) / max(abs(g[j]), abs(fd), 1e-6)
            worst = max(worst, err)
    assert worst < 1e-4


def test_gradient_linearity_and_perfect_fit():
    net = init_network(NetworkArch(2, (5, 3)), 9)
    X = np.array([[0.1, 0.2], [0.7, 0.4]])
    y = np.array([0.3, 0.8])
    both = sse_and_gradient(net, X, y)[1]
    split = sse_and_gradient(net, X[:1], y[:1])[1] + sse_and_gradient(net, X[1:], y[1:])[1]
    np.testing.assert_allclose(both, split, atol=1e-14)
    perfect = forward(net, X)
    assert np.max(np.abs(sse_and_gradient(net, X, perfect)[1])) < 1e-14
    g = gradient(net, X, y)
    assert isinstance(g, Network)
    np.testing.assert_array_equal(g.flat(), both)


def test_loss_matches_numpy():
    net = init_network(NetworkArch(3, (5, 3)), 2)
    X = np.random.default_rng(1).random((40, 3))
    y = np.random.default_rng(2).random(40)
    assert sse_and_gradient(net, X, y)[0] == pytest.approx(numeric_sse(net, X, y), rel=1e-12)


def test_gd_loss_non_increasing():
    rng = np.random.default_rng(4)
    X = rng.random((60, 2))
    y = 0.3 * X[:, 0] + 0.4 * X[:, 1]
    net = init_network(NetworkArch(2, (5, 3)), 3)
    res = train(net, X, y, TrainConfig(max_steps=100, optimizer="gd", learning_rate=0.005, threshold=1e-12),
                record=100)
    assert res.losses.size == 100
    assert np.all(np.diff(res.losses) <= 1e-15)


def test_toy_regression_converges():
    x = np.linspace(0, 1, 50)[:, None]
    y = 0.5 * x[:, 0]
    res = train(init_network(NetworkArch(1, (5, 3)), 2), x, y)
    assert res.status == "converged" and res.steps == 95
    assert regression_metrics(y, forward(res.network, x)).r2 > 0.99


def test_train_stop_conditions():
    net = init_network(NetworkArch(2, (5, 3)), 0)
    X = np.random.default_rng(0).random((10, 2))
    y = X.sum(axis=1) / 2
    assert train(net, X, y, TrainConfig(max_steps=1)).status == "max_steps_reached"
    res = train(net, X, y, TrainConfig(threshold=1e12))
    assert res.status == "converged" and res.steps == 1
    # the input network is left untouched
    np.testing.assert_array_equal(net.flat(), init_network(NetworkArch(2, (5, 3)), 0).flat())
    with pytest.raises(UsageError):
        TrainConfig(max_steps=0)
    with pytest.raises(UsageError):
        TrainConfig(threshold=0)


def test_train_deterministic():
    net = init_network(NetworkArch(2, (5, 3)), 8)
    X = np.random.default_rng(8).random((30, 2))
    y = np.sin(X[:, 0]) * X[:, 1]
    a = train(net, X, y, TrainConfig(max_steps=3000))
    b = train(net, X, y, TrainConfig(max_steps=3000))
    assert a.steps == b.steps
    np.testing.assert_array_equal(a.network.flat(), b.network.flat())


def test_cell_seed_stable():
    assert cell_seed(2019, "VCI1M_lag1", 0) == cell_seed(2019, "VCI1M_lag1", 0)
    assert len({cell_seed(2019, "VCI1M_lag1", i) for i in range(10)}) == 10
    assert 0 <= cell_seed(1, "x", 0) < 2**64


def test_model_inputs():
    spec = enumerate_models()[0]
    assert model_inputs(spec) == spec.columns + ["month_sine"]


# --------------------------------------------------------------------------
# stage
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def stage(bench_features):
    plan = make_split_plan(bench_features, 24, 3, seed=5)
    wanted = {"VCI1M_lag1", "VCI3M_lag1", "VCI1M_lag1+RFE3M_lag1", "NDVIdekad_lag1"}
    models = [m for m in enumerate_models() if m.id in wanted]
    config = TrainConfig(max_steps=3000)
    return models, plan, config, run_ann_stage(models, bench_features, plan, config=config, seed=7)


def test_stage_counts_and_aggregates(stage):
    models, plan, config, report = stage
    assert report.n_networks == len(models) * plan.k
    for r in report.results:
        assert len(r["cells"]) == plan.k
        for key in ("r2_train", "r2_validation"):
            assert r[key]["min"] <= r[key]["mean"] <= r[key]["max"]
        assert {c["status"] for c in r["cells"]} <= {"converged", "max_steps_reached"}
        assert r["overfit"] == (round(r["overfit_index"], 10) >= 0.03)
    means = [r["r2_validation"]["mean"] for r in report.results]
    assert means == sorted(means, reverse=True)


def test_stage_champion(stage, bench_features):
    models, plan, config, report = stage
    champ = report.champion
    eligible = [r for r in report.results if not r["overfit"]]
    best = max(r["r2_validation"]["mean"] for r in eligible)
    rec = report.by_id()[champ.model_id]
    assert not rec["overfit"] and rec["r2_validation"]["mean"] == best
    assert champ.partition == rec["best_partition"]
    cell = next(c for c in rec["cells"] if c["partition"] == champ.partition)
    assert cell["validation"]["r2"] == rec["r2_validation"]["max"]
    pred = champ.predict(bench_features)
    assert pred.min() >= 0 and pred.max() <= 100


def test_stage_deterministic_and_parallel(stage, bench_features):
    models, plan, config, report = stage
    again = run_ann_stage(models, bench_features, plan, config=config, seed=7, jobs=2)
    assert json.dumps(again.to_dict()) == json.dumps(report.to_dict())
    assert again.champion.to_dict() == report.champion.to_dict()


def test_champion_json_round_trip(stage, bench_features, tmp_path):
    champ = stage[3].champion
    champ.write(tmp_path / "c.json")
    back = Champion.read(tmp_path / "c.json")
    np.testing.assert_array_equal(back.predict(bench_features), champ.predict(bench_features))
    d = json.loads((tmp_path / "c.json").read_text())
    assert {"model", "network", "norm_params", "partition"} <= set(d)


def test_stage_preconditions(stage, bench_features):
    models, plan, config, _ = stage
    with pytest.raises(UsageError):
        run_ann_stage([], bench_features, plan)
    one = make_split_plan(bench_features, 24, 1, seed=5)
    with pytest.raises(UsageError):
        run_ann_stage(models, bench_features, one)


def _spec(model_id):
    return next(m for m in enumerate_models() if m.id == model_id)


def champion_id(rows):
    results = [{"id": rid, "spec": _spec(rid).to_dict(), "n_partitions": 1, "overfit": over,
                "r2_validation": {"min": v, "max": v, "mean": v}, "validation": {"rmse": rmse}}
               for rid, v, rmse, over in rows]
    report = AnnStageReport(results, (5, 3), TrainConfig(), 0, {r[0]: None for r in rows})
    return select_champion(report).model_id


def test_champion_tie_breaks():
    ids = [m.id for m in enumerate_models() if m.lag == 1][:3]
    a, b, c = sorted(ids)
    assert champion_id([(a, 0.7, 5.0, False)]) == a
    assert champion_id([(a, 0.7, 5.0, False), (b, 0.8, 9.0, False)]) == b
    assert champion_id([(a, 0.7, 5.0, False), (b, 0.7, 4.0, False)]) == b
    assert champion_id([(b, 0.7, 4.0, False), (a, 0.7, 4.0, False)]) == a
    assert champion_id([(a, 0.7, 5.0, False), (c, 0.9, 1.0, True)]) == a
    with pytest.raises(StageError):
        champion_id([(a, 0.7, 5.0, True), (b, 0.8, 4.0, True)])
