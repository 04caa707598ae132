import json
import math

import numpy as np
import pytest

from flightperf.datapipe import FlightSequence, NormalizationStats, Vocab, one_hot
from flightperf.neural import (
    AdamState,
    Checkpoint,
    CorruptCheckpoint,
    EmptySplit,
    ModelDims,
    NormalizationMismatch,
    PlateauScheduler,
    TrainConfig,
    VersionMismatch,
    adam_step,
    backward,
    class_weights,
    forward,
    init_params,
    load_checkpoint,
    masked_weighted_ce,
    pad_batch,
    predict_proba,
    predict_scores,
    save_checkpoint,
    train,
)
from flightperf.neural.model import AllMasked, ShapeMismatch

from .oracles import adam_reference, central_differences, relative_error

TOY = ModelDims(input_size=5, hidden_size=4, num_layers=4, dense_size=4, n_classes=10)


def toy_batch(rng, B=2, T=3, lengths=None):
    X = rng.normal(size=(B, T, TOY.input_size))
    y = rng.integers(0, 10, size=(B, T))
    Y = np.eye(10)[y]
    M = np.ones((B, T))
    if lengths is not None:
        for b, n in enumerate(lengths):
            M[b, n:] = 0
            X[b, n:] = 0
            Y[b, n:] = 0
    return X, Y, M


@pytest.mark.parametrize("dropout_all", [False, True])
def test_gradients_match_finite_differences(dropout_all):
    rng = np.random.default_rng(0)
    params = init_params(TOY, rng)
    X, Y, M = toy_batch(rng, lengths=[3, 2])
    w = rng.uniform(0.5, 2.0, 10)

    def loss(p):
        probs, _ = forward(p, X, train=True, rng=np.random.default_rng(5), dropout=0.3, dropout_all_layers=dropout_all)
        return masked_weighted_ce(probs, Y, M, w)

    _, cache = forward(params, X, train=True, rng=np.random.default_rng(5), dropout=0.3, dropout_all_layers=dropout_all)
    grads = backward(params, cache, Y, M, w)
    numeric = central_differences(loss, params)
    worst = max(float(relative_error(grads[k], numeric[k]).max()) for k in params)
    assert worst < 1e-4


def test_input_gradient_matches_and_is_zero_on_padding():
    rng = np.random.default_rng(1)
    params = init_params(TOY, rng)
    X, Y, M = toy_batch(rng, B=3, T=4, lengths=[4, 2, 1])
    w = np.ones(10)
    probs, cache = forward(params, X)
    _, dX = backward(params, cache, Y, M, w, return_input_grad=True)
    assert np.all(dX[1, 2:] == 0) and np.all(dX[2, 1:] == 0)
    num = central_differences(lambda p: masked_weighted_ce(forward(params, p["X"])[0], Y, M, w), {"X": X.copy()})
    # entries here are ~1e-6, so differencing noise needs an absolute floor
    assert np.allclose(dX, num["X"], rtol=1e-4, atol=1e-9)


def test_padding_contents_do_not_touch_loss_or_gradients():
    rng = np.random.default_rng(2)
    params = init_params(TOY, rng)
    X, Y, M = toy_batch(rng, B=3, T=5, lengths=[5, 3, 2])
    w = rng.uniform(0.5, 3.0, 10)
    probs, cache = forward(params, X)
    base_loss, base_grads = masked_weighted_ce(probs, Y, M, w), backward(params, cache, Y, M, w)
    X2, Y2 = X.copy(), Y.copy()
    X2[M == 0] = rng.normal(size=(int((M == 0).sum()), TOY.input_size))
    Y2[M == 0] = np.eye(10)[rng.integers(0, 10, int((M == 0).sum()))]
    probs2, cache2 = forward(params, X2)
    assert masked_weighted_ce(probs2, Y2, M, w) == base_loss
    grads2 = backward(params, cache2, Y2, M, w)
    for k in params:
        assert np.array_equal(grads2[k], base_grads[k])


def test_uniform_prediction_loss_is_log_ten():
    rng = np.random.default_rng(3)
    params = init_params(TOY, rng)
    params["Wo"][:] = 0
    params["bo"][:] = 0
    X, Y, M = toy_batch(rng, B=4, T=6, lengths=[6, 1, 3, 5])
    probs, _ = forward(params, X)
    assert abs(masked_weighted_ce(probs, Y, M, rng.uniform(0.1, 5, 10)) - math.log(10)) < 1e-9


def test_loss_errors():
    p = np.full((1, 2, 10), 0.1)
    with pytest.raises(AllMasked):
        masked_weighted_ce(p, np.eye(10)[[[0, 1]]], np.zeros((1, 2)), np.ones(10))
    with pytest.raises(ShapeMismatch):
        masked_weighted_ce(p, np.eye(10)[[[0]]], np.ones((1, 1)), np.ones(10))
    with pytest.raises(ShapeMismatch):
        forward(init_params(TOY, np.random.default_rng(0)), np.zeros((1, 2, 6)))


def test_class_weights_inverse_frequency():
    y = np.array([0] * 6 + [1] * 3 + [9])
    w = class_weights(np.eye(10)[y])
    assert w[0] == pytest.approx(10 / (10 * 6)) and w[1] == pytest.approx(10 / 30) and w[9] == 1.0
    # classes with no samples take the largest present weight
    assert np.all(w[2:9] == 1.0)
    assert np.all(class_weights(np.eye(10)[y], mask=np.zeros(10)) == 1.0)


def test_adam_matches_scalar_reference():
    grads = [0.5, -1.0, 0.25, 3.0, -0.1]
    for wd in (0.0, 1e-2):
        p = {"x": np.array([1.5])}
        st = AdamState()
        for g in grads:
            adam_step(p, {"x": np.array([g])}, st, 0.01, wd)
        assert abs(p["x"][0] - adam_reference(1.5, grads, 0.01, wd)) < 1e-15


def test_adam_first_step_moves_by_lr():
    p = {"x": np.array([0.0, 2.0])}
    adam_step(p, {"x": np.array([3.0, -7.0])}, AdamState(), 0.1)
    assert np.allclose(p["x"], [-0.1, 2.1], atol=1e-8)


def test_plateau_scheduler_arithmetic():
    s = PlateauScheduler(1.0, factor=0.5, patience=2, min_delta=0.0)
    lrs = [s.step(v) for v in [3.0, 2.0, 2.0, 2.5, 2.0, 2.0, 1.0]]
    assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.25, 0.25]


def sign_task(rng, n, dims):
    """Class depends on the sign of the running sum of feature 0: separable by a recurrent net."""
    seqs = []
    for i in range(n):
        T = int(rng.integers(3, 9))
        X = rng.uniform(0, 1, size=(T, dims.input_size))
        y = np.where(np.cumsum(X[:, 0] - 0.5) > 0, 10, 1)
        seqs.append(FlightSequence(f"F{i}", X, one_hot(y)))
    return seqs


def test_training_learns_separable_task():
    dims = ModelDims(input_size=3, hidden_size=8, num_layers=1, dense_size=8, n_classes=10)
    rng = np.random.default_rng(0)
    tr, va = sign_task(rng, 200, dims), sign_task(rng, 60, dims)
    cfg = TrainConfig(lr=0.02, batch_size=32, accumulation_steps=1, max_epochs=40, dropout_rate=0.0, seed=1)
    res = train(tr, va, cfg, dims)
    assert res.log[-1].train_loss < res.log[0].train_loss
    pred = np.concatenate(predict_scores(res.params, va))
    truth = np.concatenate([s.scores for s in va])
    assert (pred == truth).mean() > 0.9
    assert res.best_val_loss == min(e.val_loss for e in res.log)


def test_training_is_seeded():
    dims = ModelDims(input_size=3, hidden_size=4, num_layers=2, dense_size=4)
    rng = np.random.default_rng(1)
    tr, va = sign_task(rng, 40, dims), sign_task(rng, 10, dims)
    cfg = TrainConfig(batch_size=8, accumulation_steps=2, max_epochs=3, seed=4)
    a, b = train(tr, va, cfg, dims), train(tr, va, cfg, dims)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    with pytest.raises(EmptySplit):
        train([], va, cfg, dims)


def test_early_stopping_and_lr_decay_logged():
    dims = ModelDims(input_size=3, hidden_size=4, num_layers=1, dense_size=4)
    rng = np.random.default_rng(2)
    tr, va = sign_task(rng, 20, dims), sign_task(rng, 10, dims)
    cfg = TrainConfig(lr=1e-9, batch_size=8, max_epochs=50, early_stop_patience=3, plateau_patience=1, seed=0)
    res = train(tr, va, cfg, dims)
    assert len(res.log) < 50
    assert res.log[-1].lr < res.log[0].lr


def test_predictions_do_not_depend_on_batch_padding():
    dims = ModelDims(input_size=3, hidden_size=6, num_layers=2, dense_size=5)
    params = init_params(dims, np.random.default_rng(3))
    seqs = sign_task(np.random.default_rng(4), 12, dims)
    together = predict_proba(params, seqs)
    for s, p in zip(seqs, together):
        (alone,) = predict_proba(params, [s])
        assert np.allclose(alone, p, rtol=0, atol=1e-12)
        assert np.allclose(p.sum(axis=1), 1.0)
    with pytest.raises(NormalizationMismatch):
        predict_proba(params, [FlightSequence("x", np.zeros((2, 4)), one_hot([1, 1]))])


def test_pad_batch_layout():
    seqs = [FlightSequence("a", np.ones((3, 2)), one_hot([1, 2, 3])), FlightSequence("b", np.ones((1, 2)), one_hot([4]))]
    b = pad_batch(seqs)
    assert b.inputs.shape == (2, 3, 2) and list(b.lengths) == [3, 1]
    assert b.mask.tolist() == [[1, 1, 1], [1, 0, 0]]
    assert np.all(b.inputs[1, 1:] == 0) and np.all(b.labels[1, 1:] == 0)


@pytest.fixture
def ckpt():
    params = init_params(TOY, np.random.default_rng(7))
    norm = NormalizationStats(np.zeros(5), np.arange(1.0, 6.0))
    vocab = Vocab({"N1": 1}, {"AAA": 1}, {"S0": 1}, {"S0B00": 1})
    return Checkpoint(params, TrainConfig(seed=3), norm, vocab, np.linspace(0.5, 2, 10), 4)


def test_checkpoint_round_trip_is_exact(tmp_path, ckpt):
    path = tmp_path / "c.json"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert all(np.array_equal(back.params[k], ckpt.params[k]) for k in ckpt.params)
    assert back.config == ckpt.config and back.vocab == ckpt.vocab and back.best_epoch == 4
    assert np.array_equal(back.normalization.maximum, ckpt.normalization.maximum)
    save_checkpoint(back, tmp_path / "d.json")
    assert path.read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_truncation_and_version(tmp_path, ckpt):
    path = tmp_path / "c.json"
    save_checkpoint(ckpt, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)
    doc = json.loads(text)
    doc["version"] = "999"
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)
    doc["version"] = "1"
    doc["params"]["Wo"]["data"] = doc["params"]["Wo"]["data"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)
    del doc["version"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_train_config_json():
    cfg = TrainConfig(lr=0.005, max_epochs=7)
    assert TrainConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig(dropout_rate=1.0)
