import json

import numpy as np
import pytest

from ritzcad.functional import EnergySpec, EnergyTerm
from ritzcad.geometry import identity_patch
from ritzcad.network import NetworkConfig, predict
from ritzcad.optimizer import (
    AdamState, DivergenceError, adam_step, init_params, load_checkpoint, save_checkpoint,
    schedule_lrs, train,
)
from ritzcad.sampling import SamplePlan, sample_edge


def test_first_step_hand_value():
    s = AdamState.zeros(1)
    theta = adam_step(s, np.zeros(1), np.ones(1), 1e-3)
    assert theta[0] == pytest.approx(-9.99999995e-4, abs=1e-12)
    assert theta[0] == pytest.approx(-1e-3 / np.sqrt(1 + 1e-8), abs=1e-18)


def test_eps_outside_variant():
    s = AdamState.zeros(1, eps_inside=False)
    theta = adam_step(s, np.zeros(1), np.ones(1), 1e-3)
    assert theta[0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)


def test_zero_gradient_is_fixed_point():
    s = AdamState.zeros(3)
    th = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(adam_step(s, th, np.zeros(3), 1e-2), th)


def test_opposite_gradients_give_opposite_steps():
    s = AdamState.zeros(2)
    th = adam_step(s, np.zeros(2), np.array([1.0, -1.0]), 1e-3)
    assert th[0] == -th[1] != 0


def test_bias_correction_after_one_step():
    g = np.array([0.3, -2.0, 5.0])
    s = AdamState.zeros(3)
    adam_step(s, np.zeros(3), g, 1e-3)
    np.testing.assert_allclose(s.m / (1 - s.beta1), g, rtol=1e-15)
    np.testing.assert_allclose(s.v / (1 - s.beta2), g * g, rtol=1e-12)


def test_step_size_bound():
    rng = np.random.default_rng(0)
    s = AdamState.zeros(50)
    th = np.zeros(50)
    bound = 1e-3 * (1 - s.beta1) / np.sqrt(1 - s.beta2)  # worst case for arbitrary histories
    for _ in range(200):
        new = adam_step(s, th, rng.normal(size=50), 1e-3)
        assert np.max(np.abs(new - th)) <= bound * (1 + 1e-12)
        th = new
    # stationary gradients: every step stays within the learning rate
    s = AdamState.zeros(50)
    g = rng.uniform(-3, 3, size=50)
    for _ in range(300):
        new = adam_step(s, th, g, 1e-3)
        assert np.max(np.abs(new - th)) <= 1e-3 * (1 + 1e-6)
        th = new


def test_nonfinite_gradient_raises():
    with pytest.raises(DivergenceError):
        adam_step(AdamState.zeros(2), np.zeros(2), np.array([np.nan, 0.0]), 1e-3)


def test_schedule():
    lrs = schedule_lrs([(2, 1e-3), (3, 1e-4)])
    np.testing.assert_array_equal(lrs, [1e-3, 1e-3, 1e-4, 1e-4, 1e-4])
    with pytest.raises(ValueError):
        schedule_lrs([])
    with pytest.raises(ValueError):
        schedule_lrs([(3, 0.0)])


def toy(target=0.7):
    p = identity_patch(edge_tags={"south": "dirichlet"})
    plan = SamplePlan(boundary={("dirichlet", "a", None): sample_edge(p, "south", 1)})
    cfg = NetworkConfig(1, 4)
    t = EnergyTerm("dirichlet_penalty", ("boundary", "dirichlet", None, None), ("u",), beta=1.0,
                   data=lambda x, n: np.full(len(x), target))
    return EnergySpec([t], {"a": "u"}, {"u": cfg}), plan, cfg


def test_zero_epochs_returns_init():
    spec, plan, cfg = toy()
    res = train(spec, plan, [(0, 1e-3)], seed=5)
    assert res.history.shape == (0, 2)
    np.testing.assert_array_equal(res.params["u"].to_vector(), init_params({"u": cfg}, 5)["u"].to_vector())


def test_convex_toy_converges():
    spec, plan, cfg = toy()
    res = train(spec, plan, [(5000, 1e-3)], seed=0)
    x = plan.boundary[("dirichlet", "a", None)].x
    assert (predict(res.params["u"], cfg, x)[0] - 0.7) ** 2 < 1e-8
    assert res.history[-1, 0] < 1e-8
    assert not res.diverged


def test_history_is_deterministic(tmp_path):
    spec, plan, _ = toy()
    a = train(spec, plan, [(50, 1e-2)], seed=3, checkpoint_every=25, checkpoint_dir=tmp_path)
    b = train(spec, plan, [(50, 1e-2)], seed=3)
    assert a.history.tobytes() == b.history.tobytes()
    assert len(a.checkpoints) == 2
    params, configs, meta = load_checkpoint(a.checkpoints[-1])
    np.testing.assert_array_equal(params["u"].to_vector(), a.params["u"].to_vector())
    assert meta["epoch"] == 50


def test_checkpoint_round_trip(tmp_path):
    cfgs = {"a": NetworkConfig(2, 5), "b": NetworkConfig(1, 3, adaptive_activations=False)}
    ps = init_params(cfgs, 1)
    save_checkpoint(tmp_path / "c.json", ps, cfgs, 10, seed=1)
    back, cfg2, meta = load_checkpoint(tmp_path / "c.json")
    assert cfg2 == cfgs and meta == {"epoch": 10, "seed": 1}
    for n in cfgs:
        assert back[n].to_vector().tobytes() == ps[n].to_vector().tobytes()
    json.loads((tmp_path / "c.json").read_text())


def test_divergence_stops_run():
    spec, plan, _ = toy()
    spec.terms[0].data = lambda x, n: np.full(len(x), np.inf)
    res = train(spec, plan, [(10, 1e-3)])
    assert res.diverged and len(res.history) == 1
