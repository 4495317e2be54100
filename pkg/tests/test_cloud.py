import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfhrc.cloud import (
    ChannelMismatch,
    CloudService,
    ConfusionMatrix,
    LabeledDataset,
    NearestCentroid,
    ReferenceMlp,
    TooFewSamples,
    TrainConfig,
    classify,
    evaluate,
    fusion_gain_report,
    load_model,
    metrics_from_matrix,
    numerical_gradient,
    read_header,
    replay_latency,
    save_model,
    softmax,
    split_dataset,
    train_classifier,
    write_metrics,
)
from mdfhrc.cloud.dataset import InconsistentChannels
from mdfhrc.features import FeatureGrid, minmax_normalize
from mdfhrc.transport.capture import write_capture
from mdfhrc.transport.messages import SchemaViolation, TelemetryMessage


def blobs(n_per_class, k=2, channels=1, sep=3.0, seed=0, size=4):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(k, channels, size, size)) * sep
    x = np.concatenate([c + r.normal(size=(n_per_class, channels, size, size))
                        for c in centers])
    y = np.repeat(np.arange(k), n_per_class)
    return LabeledDataset(x, y, [f"c{i}" for i in range(k)], tuple(range(1, channels + 1)))


def small_config(**kw):
    base = dict(epochs=30, learning_rate=0.05, hidden=(16, 8), batch_size=16, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_split_is_stratified_and_deterministic():
    ds = blobs(10, k=3)
    tr, te = split_dataset(ds, 0.8, seed=5)
    assert np.bincount(tr.y).tolist() == [8, 8, 8]
    assert np.bincount(te.y).tolist() == [2, 2, 2]
    tr2, te2 = split_dataset(ds, 0.8, seed=5)
    assert np.array_equal(tr.window_end, tr2.window_end)
    assert not set(tr.window_end) & set(te.window_end)
    tr3, _ = split_dataset(ds, 0.8, seed=6)
    assert not np.array_equal(tr.window_end, tr3.window_end)


def test_split_small_classes():
    ds = LabeledDataset(np.zeros((3, 1, 2, 2)), [0, 0, 1], ["a", "b"])
    with pytest.raises(TooFewSamples):
        split_dataset(ds)
    ds = LabeledDataset(np.zeros((4, 1, 2, 2)), [0, 0, 1, 1], ["a", "b"])
    tr, te = split_dataset(ds)
    assert sorted(tr.y) == [0, 1] and sorted(te.y) == [0, 1]


def test_dataset_from_grids_checks_channels():
    g1 = FeatureGrid(((1, np.zeros((32, 32))),), 0)
    g2 = FeatureGrid(((1, np.zeros((32, 32))), (2, np.zeros((32, 32)))), 1)
    with pytest.raises(InconsistentChannels):
        LabeledDataset.from_grids([g1, g2], ["a", "a"], ["a"])
    ds = LabeledDataset.from_grids([g1, g1], ["a", "b"], ["a", "b"])
    assert ds.x.shape == (2, 1, 32, 32) and ds.pipelines == (1,)


def test_single_class_predicts_it_everywhere():
    ds = blobs(6, k=1)
    model = train_classifier(ds, small_config(epochs=3))
    r = np.random.default_rng(9)
    assert all(classify(model, r.normal(size=(1, 4, 4)))[0] == 0 for _ in range(10))


def test_separable_blobs_reach_high_accuracy():
    ds = blobs(60, k=2, sep=2.0, seed=4)
    tr, te = split_dataset(ds, seed=1)
    mlp = train_classifier(tr, small_config())
    nc = train_classifier(tr, kind="NearestCentroid")
    assert evaluate(nc, te).accuracy >= 0.99   # oracle
    assert evaluate(mlp, te).accuracy >= 0.99


def test_loss_decreases_first_epochs():
    ds = blobs(40, k=3, sep=2.0, seed=2)
    model = train_classifier(ds, small_config(epochs=5, learning_rate=0.02))
    h = model.history
    assert len(h) == 5
    assert all(b < a for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    ds = blobs(2, k=3, channels=2, seed=seed)
    model = ReferenceMlp.init(32, ds.class_names, (1, 2), small_config(seed=seed))
    r = np.random.default_rng(seed)
    model.params["input_mean"] = r.normal(size=32) * 0.1
    idx = r.choice(len(ds), 3, replace=False)
    x, y = ds.x[idx], ds.y[idx]
    _, grads = model.loss_and_grads(x, y)
    for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
        for _ in range(5):
            index = tuple(r.integers(0, n) for n in model.params[name].shape)
            num = numerical_gradient(model, x, y, name, index)
            ana = grads[name][index]
            assert abs(ana - num) <= 1e-4 * max(abs(ana), abs(num), 1e-6)


def test_training_is_deterministic():
    ds = blobs(10, k=2)
    a = train_classifier(ds, small_config(epochs=3))
    b = train_classifier(ds, small_config(epochs=3))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_classify_tie_and_order():
    class Fixed:
        pipelines = ()

        def __init__(self, p):
            self.p = np.asarray(p)

        def predict_proba(self, x):
            return self.p[None]

    assert classify(Fixed([0.7, 0.2, 0.1]), np.zeros((1, 2, 2)))[0] == 0
    assert classify(Fixed([0.5, 0.5]), np.zeros((1, 2, 2)))[0] == 0
    assert classify(Fixed([0.1, 0.45, 0.45]), np.zeros((1, 2, 2)))[0] == 1


def test_class_relabeling_permutes_outputs():
    ds = blobs(20, k=3, seed=7)
    perm = np.array([2, 0, 1])
    relabeled = LabeledDataset(ds.x, perm[ds.y], [ds.class_names[i] for i in np.argsort(perm)],
                               ds.pipelines)
    a = NearestCentroid.train(ds)
    b = NearestCentroid.train(relabeled)
    pa = a.predict_proba(ds.x)
    pb = b.predict_proba(ds.x)
    assert np.allclose(pb[:, perm], pa)


def test_channel_mismatch():
    ds = blobs(4, k=2, channels=1, size=32)
    model = train_classifier(ds, small_config(epochs=1))
    g = FeatureGrid(((1, np.zeros((32, 32))), (2, np.zeros((32, 32)))), 0)
    with pytest.raises(ChannelMismatch):
        classify(model, g)
    with pytest.raises(ChannelMismatch):
        model.predict_proba(np.zeros((1, 2, 32, 32)))


@settings(max_examples=100)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=10))
def test_softmax_is_probability_vector(z):
    p = softmax(np.asarray(z))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_prediction_stable_under_normalized_rescaling(a, b):
    ds = blobs(10, k=2, size=32, seed=1)
    ds.x[:] = np.array([[minmax_normalize(c) for c in s] for s in ds.x])
    model = train_classifier(ds, small_config(epochs=2))
    raw = np.random.default_rng(0).normal(size=(32, 32))
    g1 = minmax_normalize(raw)[None]
    g2 = minmax_normalize(a * raw + b)[None]
    assert classify(model, g1)[0] == classify(model, g2)[0]


def test_evaluate_examples():
    cm = ConfusionMatrix.from_predictions([0, 1, 1, 0], [0, 1, 1, 0], ["a", "b"])
    assert np.array_equal(cm.counts, np.diag([2, 2]))
    assert cm.metrics()["accuracy"] == 1.0
    m = metrics_from_matrix(np.array([[5, 0], [5, 0]]), ["a", "b"])
    assert m["accuracy"] == 0.5
    assert m["recall"] == {"a": 1.0, "b": 0.0}
    assert m["precision"] == {"a": 0.5, "b": 0.0}


def test_random_model_accuracy_binomial():
    k, n = 5, 5000
    r = np.random.default_rng(11)
    actual = r.integers(0, k, n)
    pred = r.integers(0, k, n)
    acc = ConfusionMatrix.from_predictions(actual, pred, list("abcde")).metrics()["accuracy"]
    se = np.sqrt((1 / k) * (1 - 1 / k) / n)
    assert abs(acc - 1 / k) < 5 * se


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80))
def test_metrics_consistent_with_matrix(pairs):
    actual, pred = zip(*pairs)
    cm = ConfusionMatrix.from_predictions(actual, pred, list("abcd"))
    m = cm.metrics()
    c = cm.counts
    assert m["accuracy"] == np.trace(c) / c.sum()
    assert c.sum(axis=1).tolist() == [m["support"][n] for n in "abcd"]
    for j, name in enumerate("abcd"):
        col = c[:, j].sum()
        assert m["precision"][name] == (c[j, j] / col if col else 0.0)


def test_fusion_gain_report():
    r = fusion_gain_report({"radar": 0.788}, 0.969)
    assert r["gain"]["radar"] == pytest.approx(0.181)
    assert not r["violation"]
    assert fusion_gain_report({"a": 0.8}, 0.8)["gain_over_best"] == 0
    assert fusion_gain_report({"a": 0.9, "b": 0.7}, 0.85)["violation"]
    assert not fusion_gain_report({"a": 0.9}, 0.885)["violation"]


def test_write_metrics(tmp_path):
    ds = blobs(10, k=2)
    ev = evaluate(NearestCentroid.train(ds), ds)
    write_metrics(ev, tmp_path / "m.csv", tmp_path / "m.json")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "class,precision,recall,support"
    assert len(lines) == 3
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["accuracy"] == ev.accuracy


@pytest.mark.parametrize("kind", ["ReferenceMlp", "NearestCentroid"])
def test_model_file_roundtrip(tmp_path, kind):
    ds = blobs(10, k=3, channels=2)
    model = train_classifier(ds, small_config(epochs=2), kind=kind)
    path = tmp_path / "m.bin"
    save_model(model, path, extra={"Z_w_m": 0.0})
    header = read_header(path)
    assert header["kind"] == kind and header["dtype"] == "<f8"
    back = load_model(path)
    assert back.extra == {"Z_w_m": 0.0}
    assert np.array_equal(back.predict_proba(ds.x), model.predict_proba(ds.x))
    # weight block: float64 little-endian directly after the header line
    raw = path.read_bytes()
    blob = raw[raw.index(b"\n") + 1:]
    first = next(iter(header["layout"]))[0]
    n0 = int(np.prod(model.params[first].shape))
    assert np.array_equal(np.frombuffer(blob[:8 * n0], "<f8"), model.params[first].ravel())


def test_model_file_errors(tmp_path):
    with pytest.raises(SchemaViolation):
        load_model(tmp_path / "missing.bin")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(SchemaViolation):
        load_model(bad)
    ds = blobs(4, k=2)
    path = tmp_path / "t.bin"
    save_model(train_classifier(ds, kind="NearestCentroid"), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(SchemaViolation):
        load_model(path)


def grid_msg(t, ingest, size=32, function="motion"):
    g = FeatureGrid(((1, np.full((size, size), 0.5)),), t)
    payload = g.to_json()
    payload.update(function=function, ingest_ms=ingest, window=t // 100)
    return TelemetryMessage(f"fused/c1/{function}", t, "grid", payload)


def test_service_publishes_results_and_latency():
    ds = blobs(4, k=2, size=32)
    model = train_classifier(ds, kind="NearestCentroid")
    sent = []
    svc = CloudService({"motion": model}, publish=sent.append, clock=lambda: 1037.0)
    res = svc.handle(grid_msg(900, 1000.0))
    assert res["label"] in ("c0", "c1")
    assert sent[0].topic == "cloud/c1/motion"
    sent[0].validate()
    assert svc.recorder.samples("motion") == [37.0]
    assert svc.handle(grid_msg(900, 1000.0, function="copresence")) is None


def test_service_ssm_commands():
    ds = LabeledDataset(np.stack([np.zeros((1, 32, 32)), np.ones((1, 32, 32))]), [0, 1],
                        ["A", "6"], (1,))
    model = NearestCentroid.train(ds)
    sent = []
    svc = CloudService({"motion": model}, publish=sent.append, clock=lambda: 0.0,
                       landmarks={"A": (2.05, 1.55), "6": (4.9, 2.0)}, robot=(2.75, 1.0),
                       d_p={"motion": 1.0})
    g = grid_msg(0, 0.0)
    g.payload["channels"] = [np.zeros((32, 32)).tolist()]
    svc.handle(g)
    ssm = [m for m in sent if m.kind == "ssm"]
    # worker at A is 0.89 m from the robot, inside d_p = 1.0 m
    assert ssm and ssm[0].payload["mode"] == "ProtectiveStop"
    assert ssm[0].payload["d_m"] == pytest.approx(np.hypot(0.7, 0.55))
    assert "cloud/c1/ssm" in svc.topics()


def test_replay_latency_uses_capture_stamps(tmp_path):
    ds = blobs(4, k=2, size=32)
    model = train_classifier(ds, kind="NearestCentroid")
    msgs = [grid_msg(1000 * i + 37, 1000.0 * i) for i in range(1, 6)]
    path = tmp_path / "grids.jsonl"
    write_capture(path, msgs)
    svc = CloudService({"motion": model})
    assert replay_latency(path, svc) == 5
    assert svc.recorder.histogram("motion")["mean"] == pytest.approx(37.0)
