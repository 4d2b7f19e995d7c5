import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ritzcad.autodiff import ExprGraph
from ritzcad.network import (
    GraphNetwork, NetworkConfig, ParamSet, count_parameters, forward, init_xavier,
    load_params, params_from_json, params_to_json, predict, save_params, xavier_bound,
)


@pytest.mark.parametrize("blocks,n,adaptive,expected", [
    (8, 15, True, 3872),
    (15, 15, True, 7246),
    (30, 24, False, 36025),
])
def test_published_counts(blocks, n, adaptive, expected):
    assert count_parameters(NetworkConfig(blocks, n, adaptive_activations=adaptive)) == expected


@given(st.integers(1, 12), st.integers(2, 40), st.booleans())
def test_count_matches_parameter_arrays(blocks, n, adaptive):
    cfg = NetworkConfig(blocks, n, adaptive_activations=adaptive)
    p = init_xavier(cfg, 0)
    assert p.to_vector().size == count_parameters(cfg)
    assert count_parameters(cfg) == 2 * blocks * (n * n + n) + n + 1 + (2 * blocks if adaptive else 0)


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(0, 10)
    with pytest.raises(ValueError):
        NetworkConfig(2, 1)


def test_xavier_bound_and_determinism():
    cfg = NetworkConfig(3, 15)
    assert xavier_bound(15, 15) == pytest.approx(0.44721, abs=1e-5)
    a, b = init_xavier(cfg, 42), init_xavier(cfg, 42)
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    assert all(np.all(np.abs(W) <= xavier_bound(15, 15)) for W in a.weights)
    assert all(np.all(v == 0) for v in a.biases) and a.out_bias == 0.0
    np.testing.assert_array_equal(a.slopes, np.ones(6))
    assert not np.array_equal(init_xavier(cfg, 43).to_vector(), a.to_vector())


def test_vector_round_trip():
    cfg = NetworkConfig(2, 5)
    p = init_xavier(cfg, 1)
    q = ParamSet.from_vector(p.to_vector(), cfg)
    np.testing.assert_array_equal(p.to_vector(), q.to_vector())
    with pytest.raises(ValueError):
        ParamSet.from_vector(np.zeros(3), cfg)


def _zero_params(cfg, out_bias=0.0):
    vec = np.zeros(count_parameters(cfg))
    p = ParamSet.from_vector(vec, cfg)
    if p.slopes is not None:
        p.slopes[:] = 1.0
    p.out_bias = out_bias
    return p


def test_constant_network():
    cfg = NetworkConfig(3, 6)
    p = _zero_params(cfg, out_bias=2.5)
    x = np.random.default_rng(0).uniform(size=(20, 2))
    u, ux, uy = predict(p, cfg, x, need_grad=True)
    np.testing.assert_array_equal(u, 2.5)
    np.testing.assert_array_equal(ux, 0.0)
    np.testing.assert_array_equal(uy, 0.0)
    node, g = forward(p, cfg, x)
    np.testing.assert_array_equal(g.value(node), 2.5)


def test_zero_slopes_give_linear_network():
    cfg = NetworkConfig(3, 6)
    p = init_xavier(cfg, 5)
    p.slopes[:] = 0.0
    p.out_bias = 0.3
    x = np.random.default_rng(1).uniform(-1, 1, size=(50, 2))
    u, ux, uy = predict(p, cfg, x, need_grad=True)
    # skip chain only: u = out_weight[:2] . x + out_bias
    np.testing.assert_allclose(u, x @ p.out_weight[:2] + 0.3, atol=1e-14)
    np.testing.assert_allclose(ux, p.out_weight[0], atol=1e-14)
    np.testing.assert_allclose(uy, p.out_weight[1], atol=1e-14)


def test_zeroed_blocks_are_identity():
    cfg = NetworkConfig(4, 5)
    p = _zero_params(cfg)
    p.out_weight = np.arange(1.0, 6.0)
    x = np.array([[0.3, -0.7]])
    assert predict(p, cfg, x)[0] == pytest.approx(0.3 * 1 - 0.7 * 2)


def test_graph_and_numpy_paths_agree():
    cfg = NetworkConfig(2, 7, input_shift=(0.1, -0.2), input_scale=1.7)
    p = init_xavier(cfg, 9)
    p.biases[1][:] = 0.05
    x = np.random.default_rng(2).uniform(size=(30, 2))
    g = ExprGraph()
    net = GraphNetwork.bind(p, cfg, g)
    u, ux, uy = net.evaluate(x)
    ru, rux, ruy = predict(p, cfg, x, need_grad=True)
    np.testing.assert_allclose(g.value(u), ru, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(g.value(ux), rux, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(g.value(uy), ruy, rtol=1e-12, atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_spatial_gradient_matches_fd(seed):
    cfg = NetworkConfig(2, 6)
    p = init_xavier(cfg, seed)
    x = np.random.default_rng(seed).uniform(size=(5, 2))
    _, ux, uy = predict(p, cfg, x, need_grad=True)
    h = 1e-6
    for k, d in enumerate((ux, uy)):
        e = np.zeros(2)
        e[k] = h
        fd = (predict(p, cfg, x + e) - predict(p, cfg, x - e)) / (2 * h)
        assert np.linalg.norm(d - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)


def test_parameter_gradient_through_spatial_gradient():
    cfg = NetworkConfig(1, 4)  # 47 parameters
    p = init_xavier(cfg, 4)
    x = np.random.default_rng(4).uniform(size=(8, 2))

    def energy(vec):
        q = ParamSet.from_vector(vec, cfg)
        _, ux, uy = predict(q, cfg, x, need_grad=True)
        return float(np.sum(ux**2 + uy**2))

    g = ExprGraph()
    net = GraphNetwork.bind(p, cfg, g)
    _, ux, uy = net.evaluate(x)
    L = g.build("sum", [g.build("add", [g.build("square", [ux]), g.build("square", [uy])])])
    an = net.gradient_to_params(g.gradients(L, net.param_nodes()))
    v = p.to_vector()
    fd = np.array([(energy(v + e) - energy(v - e)) / 2e-6 for e in np.eye(v.size) * 1e-6])
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) <= 1e-5


def test_graph_network_reload_matches_rebuild():
    cfg = NetworkConfig(2, 5)
    a, b = init_xavier(cfg, 0), init_xavier(cfg, 1)
    x = np.random.default_rng(0).uniform(size=(4, 2))
    g = ExprGraph()
    net = GraphNetwork.bind(a, cfg, g)
    u, _, _ = net.evaluate(x, need_grad=False)
    net.load(b)
    g.recompute()
    np.testing.assert_allclose(g.value(u), predict(b, cfg, x), rtol=1e-14)


def test_serialization_round_trip(tmp_path):
    cfg = NetworkConfig(2, 5, adaptive_activations=False, input_shift=(0.5, 0.0), input_scale=2.0)
    p = init_xavier(cfg, 3)
    doc = json.loads(json.dumps(params_to_json(p, cfg)))
    q, cfg2 = params_from_json(doc)
    assert cfg2 == cfg
    np.testing.assert_array_equal(q.to_vector(), p.to_vector())
    save_params(tmp_path / "p.json", p, cfg)
    r, cfg3 = load_params(tmp_path / "p.json")
    assert cfg3 == cfg
    np.testing.assert_array_equal(r.to_vector(), p.to_vector())


def test_outputs_finite_for_random_params():
    cfg = NetworkConfig(8, 15)
    p = init_xavier(cfg, 7)
    x = np.random.default_rng(7).uniform(size=(100, 2))
    assert np.all(np.isfinite(predict(p, cfg, x)))
