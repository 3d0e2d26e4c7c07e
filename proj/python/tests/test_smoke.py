import json

import numpy as np
import pytest

import toolgcn


def tiny_config(path):
    cfg = {
        "model": {"classes": 3, "channels": [4, 4], "strides": [1, 1], "temporal_kernel": 3},
        "train": {"epochs": 2, "lr_step": 1, "batch_size": 8, "window": 20, "train_step": 10},
        "gradcheck": {"max_elements": 0},
    }
    path.write_text(json.dumps(cfg))
    return path


def test_lr_schedule():
    assert toolgcn.lr_at(5) == pytest.approx(0.01, rel=1e-15)
    assert toolgcn.lr_at(15) == pytest.approx(0.001, rel=1e-15)
    assert toolgcn.lr_at(25) == pytest.approx(0.0001, rel=1e-15)


def test_partition_sums_to_adjacency_plus_identity():
    rng = np.random.default_rng(0)
    edges = [(0, 1), (1, 2), (2, 3), (2, 4)]
    a = np.eye(5)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    for _ in range(20):
        p = toolgcn.partition(rng.uniform(-1, 1, size=(5, 2)))
        assert p.shape == (3, 5, 5)
        np.testing.assert_array_equal(p.sum(axis=0), a)


def test_segment_front_pads_with_the_first_frame():
    poses = np.arange(12 * 2 * 5 * 3, dtype=float).reshape(12, 2, 5, 3)
    ends, labels, data = toolgcn.segment(poses, [(0, 5, 1), (6, 11, 0)], window=4, step=3)
    assert ends == [0, 3, 6, 9]
    assert labels == [1, 1, 0, 0]
    assert data.shape == (4, 3, 4, 5, 2)
    # Window ending at frame 0 repeats frame 0.
    for i in range(4):
        np.testing.assert_array_equal(data[0, 0, i, :, 0], poses[0, 0, :, 0])
    np.testing.assert_array_equal(data[3, 1, 3, :, 1], poses[9, 1, :, 1])


def test_bad_input_raises_value_error():
    with pytest.raises(ValueError):
        toolgcn.partition(np.zeros((4, 2)))
    with pytest.raises(toolgcn.ValidationError):
        toolgcn.segment(np.zeros((5, 1, 5, 2)), [(0, 4, 0)])


def test_gradcheck_small_model(tmp_path):
    r = toolgcn.gradcheck(str(tiny_config(tmp_path / "tiny.json")))
    assert r["passed"]
    assert r["max_error"] < 1e-4
    assert not toolgcn.gradcheck(str(tmp_path / "tiny.json"), tol=1e-14)["passed"]


def test_synth_and_crossval(tmp_path):
    info = toolgcn.synth(str(tmp_path / "data"), classes=3, subjects=3, trials=1, min_duration=30, max_duration=40)
    assert info["videos"] == 3
    assert info["subjects"] == ["B", "C", "D"]
    cfg = str(tiny_config(tmp_path / "tiny.json"))
    a = toolgcn.crossval(str(tmp_path / "data"), cfg)
    b = toolgcn.crossval(str(tmp_path / "data"), cfg)
    assert [f["subject"] for f in a["folds"]] == ["B", "C", "D"]
    assert a["average"] == b["average"]
    assert a["average"] == pytest.approx(np.mean([f["accuracy"] for f in a["folds"]]), abs=1e-12)
    assert a["chance"] == pytest.approx(1 / 3)
    one = toolgcn.crossval(str(tmp_path / "data"), cfg, fold="SubjC", epochs=1)
    assert len(one["folds"]) == 1
    with pytest.raises(OSError):
        toolgcn.crossval(str(tmp_path / "missing"))


def test_train_then_predict(tmp_path):
    toolgcn.synth(str(tmp_path / "data"), classes=3, subjects=2, trials=1, min_duration=30, max_duration=40)
    cfg = str(tiny_config(tmp_path / "tiny.json"))
    r = toolgcn.train(str(tmp_path / "data"), str(tmp_path / "params.bin"), cfg, epochs=3)
    assert len(r["losses"]) == 3
    assert 0.0 <= r["train_accuracy"] <= 1.0
    batch = np.random.default_rng(1).uniform(-1, 1, size=(4, 3, 20, 5, 2))
    logits = toolgcn.predict(str(tmp_path / "params.bin"), batch)
    assert logits.shape == (4, 3)
    assert np.all(np.isfinite(logits))
    np.testing.assert_array_equal(logits, toolgcn.predict(str(tmp_path / "params.bin"), batch))


def test_predict_rejects_a_missing_file(tmp_path):
    with pytest.raises(OSError):
        toolgcn.predict(str(tmp_path / "none.bin"), np.zeros((1, 3, 20, 5, 2)))
