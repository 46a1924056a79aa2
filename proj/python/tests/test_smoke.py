import math

import pytest

import gatewire as gw

SMALL_NET = {
    "num_classes": 4,
    "head": "softmax",
    "main_blocks": [
        {"kind": "linear", "in": 8, "out": 16},
        {"kind": "linear", "in": 16, "out": 4},
    ],
    "sidenets": [{"attach_index": 0, "input_dim": 16, "hidden_units": 32, "num_classes": 4, "head": "softmax"}],
}


def small_data(seed=3):
    spec = gw.SyntheticSpec()
    spec.num_classes = 4
    spec.per_class_count = 40
    spec.dim = 8
    spec.seed = seed
    return gw.gen_synthetic(spec)


def test_softmax_values():
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    want = [v / sum(e) for v in e]
    got = gw.softmax([[1.0, 2.0, 3.0]])[0]
    assert got == pytest.approx(want, abs=1e-12)


def test_param_counts():
    model = gw.Model.build(SMALL_NET, seed=0)
    assert model.param_count("side0") == 884
    assert model.param_count("main") == 952


def test_bad_spec_raises_validation_error():
    bad = dict(SMALL_NET, main_blocks=[{"kind": "linear", "in": 8, "out": 16}, {"kind": "linear", "in": 15, "out": 4}])
    with pytest.raises(gw.ValidationError):
        gw.Model.build(bad, seed=0)


def test_dataset_csv_roundtrip():
    d = small_data()
    assert len(d) == 160
    assert gw.Dataset.from_csv(d.to_csv()) == d


def test_train_sweep_and_checkpoint(tmp_path):
    s = gw.split(small_data(), [0.5, 0.25, 0.25], seed=1)
    model = gw.Model.build(SMALL_NET, seed=1)
    cfg = gw.TrainConfig()
    cfg.epochs = 3
    cfg.lr_init = 1e-2
    log = gw.train(model, s.train, s.val, cfg)
    assert log.splitlines()[0].startswith("epoch,train_loss")
    assert len(log.splitlines()) == 4

    res = gw.sweep(model, s.test)
    rows = res["rows"]
    assert [r["theta"] for r in rows] == gw.default_theta_grid()
    avg = [r["avg_params"] for r in rows]
    assert all(a <= b for a, b in zip(avg, avg[1:]))
    assert rows[0]["early_exit_fraction"] == 1.0
    assert rows[-1]["early_exit_fraction"] == 0.0

    path = tmp_path / "m.ckpt"
    model.save(path)
    again = gw.Model.load(path)
    assert again.to_bytes() == model.to_bytes()
    x = [s.test.row(i) for i in range(5)]
    assert again.forward(x) == model.forward(x)

    gated = gw.infer_batch(model, s.test, theta=0.0)
    assert all(r["source"] == "side0" for r in gated["results"])


def test_ece_example():
    rep = gw.ece([0.25, 0.55, 0.85, 0.95], [True, False, True, True], bins="paper")
    assert len(rep["bins"]) == 8
    assert rep["ece"] == 0.375
    assert len(gw.ece([0.05, 0.5], [True, False], bins="full")["bins"]) == 10


def test_desk_config_has_defaults():
    cfg = gw.desk_scale_config()
    assert cfg["synthetic"]["dim"] == 16
    assert cfg["thetas"] == gw.default_theta_grid()
