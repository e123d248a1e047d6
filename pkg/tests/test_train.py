import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialcvae.model import ModelConfig, init_params, zero_params
from socialcvae.scene import SceneError, generate_synthetic_scenes
from socialcvae.train import (Adam, TrainConfig, covers_both_branches, evaluate, evaluate_predictions, min_ade,
                              min_fde, predict_all, train)
from socialcvae.tensor import Tensor

from conftest import linear_track, make_scene

SMALL = dict(d_node=8, d_y=8, d_z=2, d_hidden=16)


def cv_scene(seed=0):
    return generate_synthetic_scenes("constant_velocity", 1, seed)[0]


# -- metrics -----------------------------------------------------------------------

def test_min_ade_example():
    truth = np.zeros((3, 2))
    a = np.array([[1.0, 0], [1, 0], [1, 0]])
    b = np.array([[0.0, 0], [0, 0], [0, 3]])
    assert min_ade([a, b], truth) == 1.0
    assert min_fde([a, b], truth) == 1.0


def test_min_fde_picks_closest_endpoint():
    truth = np.array([[0.0, 0.0], [3.0, 4.0]])
    far = np.array([[0.0, 0.0], [0.0, 0.0]])
    near = np.array([[10.0, 10.0], [3.0, 4.5]])
    assert min_fde([far, near], truth) == 0.5
    assert min_ade([far, near], truth) == pytest.approx(2.5)


def test_metric_errors():
    with pytest.raises(ValueError):
        min_ade([], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        min_fde([np.zeros((2, 2))], np.zeros((3, 2)))


paths = st.integers(1, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(1, 5), st.integers(0, 2**31 - 1)))


@settings(max_examples=100, deadline=None)
@given(paths)
def test_metric_properties(args):
    n, k, seed = args
    r = np.random.default_rng(seed)
    truth = r.normal(size=(n, 2))
    preds = list(r.normal(size=(k, n, 2)))
    ade, fde = min_ade(preds, truth), min_fde(preds, truth)
    # duplicating a sample changes nothing
    assert min_ade(preds + [preds[0]], truth) == ade and min_fde(preds + [preds[-1]], truth) == fde
    # min over samples bounds each sample
    for p in preds:
        errs = np.linalg.norm(p - truth, axis=1)
        assert ade <= errs.mean() + 1e-15
        assert fde <= errs[-1] + 1e-12
    best = min(preds, key=lambda p: np.linalg.norm(p[-1] - truth[-1]))
    assert fde <= np.linalg.norm(best - truth, axis=1).max() + 1e-12
    assert min_ade([truth], truth) == 0.0 and min_fde([truth], truth) == 0.0


def test_covers_both_branches():
    ends = {"left": [0.0, 0.0], "right": [10.0, 0.0]}
    one = [np.array([[0.1, 0.0]])] * 3
    both = one + [np.array([[10.0, 0.4]])]
    assert not covers_both_branches(one, ends)
    assert covers_both_branches(both, ends)


# -- evaluation ----------------------------------------------------------------------

def test_perfect_predictor_scores_zero():
    scenes = generate_synthetic_scenes("fork", 5, 1)
    preds = {s.scene_id: [s.target.as_array()[s.tau:]] for s in scenes}
    m = evaluate_predictions(scenes, preds)
    assert m.min_ade == 0.0 and m.min_fde == 0.0 and m.n_scenes == 5
    # a single true-branch sample never covers the other branch
    assert m.mode_coverage == 0.0


def test_zero_model_stays_at_last_observation():
    scenes = generate_synthetic_scenes("constant_velocity", 6, 4)
    cfg = ModelConfig(tau=8, delta=12, **SMALL)
    m = evaluate(scenes, zero_params(cfg), TrainConfig(k_samples=3), cfg)
    expected = np.mean([np.linalg.norm(s.target.as_array()[-1] - s.target.as_array()[s.tau - 1]) for s in scenes])
    assert m.min_fde == pytest.approx(expected, rel=1e-12)
    assert m.mode_coverage is None


def test_missing_predictions():
    scenes = generate_synthetic_scenes("fork", 2, 1)
    with pytest.raises(KeyError):
        evaluate_predictions(scenes, {scenes[0].scene_id: [np.zeros((12, 2))]})


def test_predict_all_deterministic():
    scenes = generate_synthetic_scenes("fork", 3, 1)
    cfg = ModelConfig(tau=8, delta=12, **SMALL)
    params = init_params(cfg, 0)
    a = predict_all(scenes, params, cfg, 4, seed=5)
    b = predict_all(scenes, params, cfg, 4, seed=5)
    assert list(a) == [s.scene_id for s in scenes]
    assert all(np.array_equal(x, y) for k in a for x, y in zip(a[k], b[k]))


# -- training ----------------------------------------------------------------------

def test_zero_learning_rate_keeps_params_and_loss():
    scene = cv_scene()
    cfg = ModelConfig(tau=8, delta=12, **SMALL)
    params = init_params(cfg, 0)
    # decoder blind to z, so the loss does not depend on the eps draws
    params["dec.0.W"].data[:, :cfg.d_z] = 0.0
    before = {k: v.data.copy() for k, v in params.items()}
    _, history = train([scene], TrainConfig(learning_rate=0.0, epochs=5, beta=0.0), cfg, params=params)
    assert len(set(history)) == 1
    assert all(np.array_equal(before[k], params[k].data) for k in before)


def test_single_scene_overfits():
    _, history = train([cv_scene()], TrainConfig(epochs=2000, seed=0), ModelConfig(tau=8, delta=12))
    assert history[-1] < 1e-3


def test_training_is_deterministic():
    scenes = generate_synthetic_scenes("avoidance", 3, 2)
    cfg = ModelConfig(tau=8, delta=12, **SMALL)
    p1, h1 = train(scenes, TrainConfig(epochs=3, seed=4), cfg)
    p2, h2 = train(scenes, TrainConfig(epochs=3, seed=4), cfg)
    assert h1 == h2
    assert all(p1[k].data.tobytes() == p2[k].data.tobytes() for k in p1)
    _, h3 = train(scenes, TrainConfig(epochs=3, seed=5), cfg)
    assert h3 != h1


def test_inconsistent_scenes_rejected_before_training():
    a = make_scene([linear_track([0, 0], [1, 0], 7)])
    b = make_scene([linear_track([0, 0], [1, 0], 8)], tau=4, delta=4, scene_id="t")
    with pytest.raises(SceneError):
        train([a, b], TrainConfig(epochs=1))


def test_model_window_mismatch_rejected():
    with pytest.raises(ValueError):
        train([cv_scene()], TrainConfig(epochs=1), ModelConfig(tau=6, delta=12, **SMALL))


def test_loss_history_finite_and_decreasing():
    scene = cv_scene(3)
    _, history = train([scene], TrainConfig(epochs=600, beta=0.0, seed=1), ModelConfig(tau=8, delta=12, **SMALL))
    assert len(history) == 600 and np.all(np.isfinite(history))
    windows = np.asarray(history[200:]).reshape(-1, 100).mean(axis=1)
    assert np.all(windows[1:] <= windows[:-1] * 1.05)


def test_adam_first_step_moves_by_lr():
    p = {"w": Tensor([1.0, -1.0], requires_grad=True)}
    p["w"].grad = np.array([0.5, -3.0])
    Adam(p, lr=0.1).step()
    assert np.allclose(p["w"].data, [0.9, -0.9], atol=1e-8)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
