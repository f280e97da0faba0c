import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloudrain.canonical import canonicalize
from cloudrain.cloud import PointCloud
from cloudrain.data import reflect, synthetic_split
from cloudrain.errors import InvalidInputError, TrainingError, UsageError
from cloudrain.linalg import random_unit_vector
from cloudrain.model import (SegModel, TrainConfig, cross_entropy, expand_kinds, forward,
                             load_checkpoint, predict_labels, predict_many, save_checkpoint, train)

from conftest import random_cloud

SMALL = dict(encoder=(8, 16), head=(8,))


def test_default_architecture():
    m = SegModel()
    assert [l.fan_in for l in m.layers] == [3, 32, 64, 256, 64]
    assert [l.fan_out for l in m.layers] == [32, 64, 128, 64, 5]
    assert m.kinds == ["quadratic-strict"] + ["quadratic"] * 4
    assert m.is_reflection_invariant and not m.canonicalize
    assert m.layers[-1].activation == "identity"
    assert m.n_params() == sum(p.size for p in m.parameters().values())


def test_expand_kinds():
    assert expand_kinds("conventional", 3) == ["conventional"] * 3
    assert expand_kinds(["quadratic-strict", "conventional"], 2) == ["quadratic-strict", "conventional"]
    with pytest.raises(InvalidInputError):
        expand_kinds(["conventional"], 2)
    with pytest.raises(InvalidInputError):
        expand_kinds("cubic", 2)


def test_width_mismatch(rng):
    m = SegModel(**SMALL)
    with pytest.raises(InvalidInputError):
        forward(m, rng.normal(size=(10, 4)))
    with pytest.raises(InvalidInputError):
        m.forward_batch(rng.normal(size=(10, 3)))
    with pytest.raises(UsageError):
        SegModel(**SMALL).backward(np.zeros((1, 2, 5)))


@given(st.integers(0, 10**6))
def test_point_permutation_permutes_logits(seed):
    rng = np.random.default_rng(seed)
    m = SegModel(**SMALL, kinds="conventional", seed=seed % 7)
    pts = rng.normal(size=(40, 3))
    perm = rng.permutation(40)
    np.testing.assert_allclose(forward(m, pts[perm]), forward(m, pts)[perm], atol=1e-12)


@given(st.sampled_from(["x", "y", "z", "xyz"]), st.integers(0, 10**6))
def test_strict_model_axis_flip_bitwise(axis, seed):
    rng = np.random.default_rng(seed)
    m = SegModel(**SMALL, seed=seed % 5)
    c = PointCloud(rng.normal(size=(30, 3)) * 3)
    assert forward(m, reflect(c, axis)).tobytes() == forward(m, c).tobytes()


def test_conventional_model_is_not_invariant(rng):
    m = SegModel(**SMALL, kinds="conventional")
    c = PointCloud(rng.normal(size=(30, 3)))
    assert not m.is_reflection_invariant
    assert np.abs(forward(m, reflect(c, "z")) - forward(m, c)).max() > 1e-6


def test_end_to_end_reflection_invariance():
    rng = np.random.default_rng(2024)
    m = SegModel(**SMALL, canonicalize=True, seed=3)
    checked = 0
    while checked < 200:
        pts = random_cloud(rng, n=int(rng.integers(20, 80)))
        if canonicalize(pts).degenerate:
            continue
        c = PointCloud(pts)
        moved = reflect(c, random_unit_vector(rng))
        a, b = forward(m, c), forward(m, moved)
        assert np.abs(a - b).max() <= 1e-8
        np.testing.assert_array_equal(predict_labels(m, c), predict_labels(m, moved))
        checked += 1


def test_cross_entropy_examples():
    loss, grad = cross_entropy(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(np.log(5))
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-16)
    logits = np.full((3, 4), -50.0)
    logits[np.arange(3), [1, 2, 3]] = 50.0
    assert cross_entropy(logits, np.array([1, 2, 3]))[0] < 1e-40


def test_cross_entropy_gradient(rng):
    logits, labels = rng.normal(size=(2, 3, 4)) * 3, rng.integers(0, 4, (2, 3))
    _, grad = cross_entropy(logits, labels)
    h = 1e-6
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (cross_entropy(up, labels)[0] - cross_entropy(dn, labels)[0]) / (2 * h)
    assert np.abs(grad - num).max() <= 1e-6


@pytest.mark.parametrize("kinds", ["conventional", "quadratic", "quadratic-strict"])
def test_model_backward_matches_finite_differences(kinds):
    rng = np.random.default_rng(5)
    m = SegModel(encoder=(4, 6), head=(5,), kinds=kinds, num_classes=3, seed=2)
    for layer in m.layers:
        for name, p in layer.params().items():
            if not (getattr(layer, "strict_invariant", False) and name in ("W1", "W2")):
                p[...] = rng.uniform(-0.5, 0.5, p.shape)
    x = rng.normal(size=(2, 7, 3))
    labels = rng.integers(0, 3, (2, 7))

    def loss():
        return cross_entropy(m.forward_batch(x), labels)[0]

    _, dlogits = cross_entropy(m.forward_batch(x), labels)
    grads = m.backward(dlogits)
    params = m.parameters()
    h, worst = 1e-5, 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            dn = loss()
            p[idx] = old
            num = (up - dn) / (2 * h)
            worst = max(worst, abs(num - grads[name][idx]) / max(1.0, abs(num)))
    assert worst <= 1e-6


def test_predict_many_matches_single(rng):
    m = SegModel(**SMALL)
    clouds = [PointCloud(rng.normal(size=(n, 3))) for n in (10, 12, 10, 10)]
    for lg, c in zip(predict_many(m, clouds), clouds):
        np.testing.assert_allclose(lg, forward(m, c), atol=1e-12)


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(lr=0.0), dict(batch_size=0), dict(optimizer="rmsprop")):
        with pytest.raises(InvalidInputError):
            TrainConfig(**bad)


@pytest.fixture(scope="module")
def tiny_data():
    return synthetic_split(6, 2, seed=1, n_points=64, raw_points=600)


def test_training_reduces_loss_and_is_reproducible(tiny_data):
    train_set, _ = tiny_data
    cfg = TrainConfig(epochs=6, batch_size=3, seed=4)
    m1, m2 = SegModel(**SMALL, seed=1), SegModel(**SMALL, seed=1)
    h1, h2 = train(m1, train_set, cfg), train(m2, train_set, cfg)
    assert h1 == h2 and len(h1) == 6 and h1[-1]["loss"] < h1[0]["loss"]
    for k, v in m1.parameters().items():
        assert v.tobytes() == m2.parameters()[k].tobytes()
    strict = m1.layers[0]
    assert not np.any(strict.W1) and not np.any(strict.W2)


def test_sgd_and_reflection_augmentation_run(tiny_data):
    train_set, _ = tiny_data
    cfg = TrainConfig(epochs=2, batch_size=4, optimizer="sgd", lr=1e-2, aug_reflect=True)
    hist = train(SegModel(**SMALL, kinds="conventional"), train_set, cfg)
    assert all(np.isfinite(h["loss"]) for h in hist)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_reports_epoch(tiny_data):
    train_set, _ = tiny_data
    m = SegModel(**SMALL, kinds="conventional")
    m.layers[-1].b[...] = np.inf
    with pytest.raises(TrainingError) as info:
        train(m, train_set, TrainConfig(epochs=2))
    assert info.value.epoch == 0


def test_training_input_validation():
    with pytest.raises(InvalidInputError):
        train(SegModel(**SMALL), [])
    with pytest.raises(InvalidInputError):
        train(SegModel(**SMALL), [PointCloud(np.ones((4, 3)))])


def test_checkpoint_round_trip(tmp_path, rng):
    m = SegModel(**SMALL, kinds=["quadratic-strict", "conventional", "quadratic", "conventional"],
                 canonicalize=True, seed=9)
    path = tmp_path / "m.npz"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.architecture() == m.architecture()
    for k, v in m.parameters().items():
        assert back.parameters()[k].tobytes() == v.tobytes()
    pts = rng.normal(size=(20, 3))
    assert forward(back, pts).tobytes() == forward(m, pts).tobytes()
    with np.load(path) as z:
        assert str(z["__format__"]) == "cloudrain-checkpoint" and int(z["__version__"]) == 1
        assert json.loads(str(z["__architecture__"]))["encoder"] == [8, 16]
        assert z["encoder.0.W3"].shape == (3, 8)


def test_checkpoint_rejects_foreign_files(tmp_path):
    np.savez(tmp_path / "x.npz", __format__=np.array("other"), __version__=np.array(1))
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "x.npz")
    m = SegModel(**SMALL)
    arrays = {"__format__": np.array("cloudrain-checkpoint"), "__version__": np.array(99),
              "__architecture__": np.array(json.dumps(m.architecture()))}
    np.savez(tmp_path / "y.npz", **arrays)
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "y.npz")
