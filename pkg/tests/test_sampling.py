import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import qmc

from ritzcad.geometry import (
    GeometryError, Interface, affine_patch, bilinear_patch, identity_patch, match_antiperiodic,
    match_interfaces, quarter_annulus,
)
from ritzcad.problems.pmsm import pmsm_domain
from ritzcad.sampling import (
    Budgets, allocate, build_plan, reflection_x, sample_antiperiodic, sample_edge,
    sample_interface, sample_interior, sobol, write_edge_csv, write_interior_csv,
)


def test_sobol_first_points():
    np.testing.assert_array_equal(sobol(2, 3), [[0.5, 0.5], [0.75, 0.25], [0.25, 0.75]])
    assert sobol(1, 1)[0, 0] == 0.5
    np.testing.assert_array_equal(sobol(2, 1, skip=0), [[0.0, 0.0]])


@pytest.mark.parametrize("dim", [1, 2])
def test_sobol_matches_reference_generator(dim):
    ref = qmc.Sobol(dim, scramble=False).random_base2(11)[1:1025]
    np.testing.assert_array_equal(sobol(dim, 1024), ref)
    pts = sobol(dim, 5000, skip=37)
    assert pts.min() >= 0 and pts.max() < 1


def test_sobol_rejects_bad_arguments():
    with pytest.raises(ValueError):
        sobol(3, 4)
    with pytest.raises(ValueError):
        sobol(2, 0)


def test_identity_patch_weights_are_one():
    s = sample_interior(identity_patch(), 64)
    np.testing.assert_array_equal(s.weight, 1.0)
    f = lambda x: np.sin(3 * x[:, 0]) * x[:, 1]
    # importance estimator == plain uniform mean
    assert np.sum(s.quad * f(s.x)) == pytest.approx(np.mean(f(s.y)), rel=1e-15)


def test_affine_patch_weights_equal_det():
    s = sample_interior(affine_patch(np.array([[2.0, 1.0], [0.0, 1.0]])), 33)
    np.testing.assert_allclose(s.weight, 2.0, rtol=1e-14)


def test_quarter_annulus_area_estimate():
    s = sample_interior(quarter_annulus(0.5, 1.0), 2**14)
    assert abs(np.mean(s.weight) - 0.58905) / 0.58905 <= 5e-3


def test_quarter_circle_arc_length_estimate():
    e = sample_edge(quarter_annulus(0.5, 1.0), "east", 4096)  # u=1: outer arc, radius 1
    np.testing.assert_allclose(np.linalg.norm(e.x, axis=1), 1.0, atol=1e-9)
    assert abs(np.mean(e.speed) - np.pi / 2) / (np.pi / 2) <= 5e-3


def test_unit_edge_weights_are_one():
    e = sample_edge(identity_patch(), "south", 10)
    np.testing.assert_allclose(e.speed, 1.0)
    np.testing.assert_allclose(e.x[:, 1], 0.0)


@pytest.mark.parametrize("g,exact", [
    (lambda x: np.ones(len(x)), np.pi * 0.75 / 4),
    (lambda x: x[:, 0] ** 2 + x[:, 1] ** 2, np.pi / 8 * (1 - 0.5**4)),
    (lambda x: x[:, 0], (1 - 0.125) / 3),
])
def test_qmc_consistency(g, exact):
    s = sample_interior(quarter_annulus(0.5, 1.0), 2**14)
    assert abs(np.sum(s.quad * g(s.x)) - exact) <= 0.01 * abs(exact)


def test_determinism():
    p = quarter_annulus(0.5, 1.0)
    a, b = sample_interior(p, 100, 5), sample_interior(p, 100, 5)
    assert a.x.tobytes() == b.x.tobytes() and a.weight.tobytes() == b.weight.tobytes()


def _two_squares(reversed_):
    left = identity_patch(material="a")
    if reversed_:
        right = bilinear_patch((1, 1), (2, 1), (1, 0), (2, 0), material="b")
    else:
        right = bilinear_patch((1, 0), (2, 0), (1, 1), (2, 1), material="b")
    return match_interfaces([left, right])


@pytest.mark.parametrize("reversed_", [False, True])
def test_interface_pairs_coincide(reversed_):
    d = _two_squares(reversed_)
    assert d.interfaces[0].reversed == reversed_
    pr = sample_interface(d, d.interfaces[0], 50)
    np.testing.assert_allclose(pr.side_k.x, pr.side_l.x, atol=1e-12)
    np.testing.assert_allclose(pr.quad * 50, 1.0)


def test_interface_mismatch_raises():
    d = _two_squares(False)
    bad = Interface(0, "east", 1, "north", False)
    with pytest.raises(GeometryError):
        sample_interface(d, bad, 10)


def test_antiperiodic_pairs_on_sector():
    d = pmsm_domain()
    T = d.symmetry
    np.testing.assert_allclose(T @ T.T, np.eye(2), atol=1e-15)
    for pair in d.antiperiodic:
        s = sample_antiperiodic(d, pair, 40)
        np.testing.assert_allclose(np.linalg.norm(s.side_k.x, axis=1),
                                   np.linalg.norm(s.side_l.x, axis=1), atol=1e-12)
        np.testing.assert_allclose(s.side_k.x @ T.T, s.side_l.x, atol=1e-9)
        np.testing.assert_allclose(s.side_l.x @ np.linalg.inv(T).T, s.side_k.x, atol=1e-12)


def test_reflection_is_involution():
    R = reflection_x()
    x = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(x @ R.T @ R.T, x, atol=1e-12)


def test_antiperiodic_by_reflection():
    left = bilinear_patch((-1, 0), (0, 0), (-1, 1), (0, 1), edge_tags={"west": "antiperiodic_left"})
    right = bilinear_patch((0, 0), (1, 0), (0, 1), (1, 1), edge_tags={"east": "antiperiodic_right"})
    d = match_antiperiodic(match_interfaces([left, right]), reflection_x())
    s = sample_antiperiodic(d, d.antiperiodic[0], 16)
    np.testing.assert_allclose(s.side_l.x, s.side_k.x * [-1, 1], atol=1e-14)


@given(st.integers(1, 5000), st.lists(st.floats(0.01, 10), min_size=1, max_size=20), st.integers(0, 10))
def test_allocate_sums_to_total(total, sizes, minimum):
    c = allocate(total, sizes, minimum)
    assert c.sum() == total
    assert np.all(c >= 0)
    if total >= minimum * len(sizes):
        assert np.all(c >= minimum)


def test_allocate_proportional():
    np.testing.assert_array_equal(allocate(100, [1, 3], 0), [25, 75])


def test_plan_and_csv(tmp_path):
    d = _two_squares(False)
    d.patches[0].edge_tags["west"] = "dirichlet"
    plan = build_plan(d, Budgets(interior=200, dirichlet=20, neumann=0, interface=30, min_per_patch=4))
    assert sum(len(s) for s in plan.interior.values()) == 200
    assert len(plan.boundary_set("dirichlet")) == 20
    assert list(plan.interfaces) == [("a", "b", None)]
    n = write_interior_csv(tmp_path / "i.csv", plan)
    rows = list(csv.reader(open(tmp_path / "i.csv")))
    assert rows[0] == ["patch", "k", "y1", "y2", "x1", "x2", "weight"]
    assert n == len(rows) - 1 == 200
    assert all(float(r[6]) == 1.0 for r in rows[1:])
    m = write_edge_csv(tmp_path / "e.csv", plan)
    assert m == 20 + 30
