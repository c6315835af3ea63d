import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udcantor.ifs import Similarity, attractor, standard_system
from udcantor.invariants import (
    DistortionFunction,
    attractor_report,
    attractor_sample,
    brute_force_ud_oracle,
    cantor_code,
    qss_witness,
    ud_by_chains,
    uniform_disconnectedness_constant,
    uniform_perfectness_constant,
)
from udcantor.metric_core import FinitePointSet, MetricError


def test_up_examples():
    X = FinitePointSet(np.arange(9) / 8)
    assert uniform_perfectness_constant(X).constant == pytest.approx(2.0)
    assert uniform_perfectness_constant(FinitePointSet([0.0, 1.0])).constant == 1.0


def test_ud_examples():
    X = FinitePointSet([0.0, 0.1, 1.0, 1.1])
    assert uniform_disconnectedness_constant(X).constant == pytest.approx(11 / 9)
    assert brute_force_ud_oracle(FinitePointSet([0.0, 1.0])) == 1.0
    for pts in ([0.0, 0.1, 1.0], [0, 2 / 9, 2 / 3, 8 / 9]):
        X = FinitePointSet(pts)
        assert uniform_disconnectedness_constant(X).constant == brute_force_ud_oracle(X)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 9), st.integers(1, 3))
def test_oracle_equivalence(seed, m, dim):
    X = FinitePointSet(np.random.default_rng(seed).random((m, dim)))
    fast = uniform_disconnectedness_constant(X).constant
    assert fast == brute_force_ud_oracle(X)
    assert fast == pytest.approx(ud_by_chains(X), rel=1e-12)


def test_oracle_rejects_large_sets():
    with pytest.raises(MetricError):
        brute_force_ud_oracle(FinitePointSet(np.arange(13.0)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100.0))
def test_scaling_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    pts = rng.random((10, 2))
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    phi = Similarity(lam, q, rng.normal(size=2))
    X, Y = FinitePointSet(pts), FinitePointSet(phi(pts))
    assert uniform_disconnectedness_constant(Y).constant == pytest.approx(
        uniform_disconnectedness_constant(X).constant, rel=1e-10)
    assert uniform_perfectness_constant(Y).constant == pytest.approx(
        uniform_perfectness_constant(X).constant, rel=1e-10)


def test_middle_third_constants():
    mt = standard_system("middle_third")
    ups = []
    for k in range(4, 9):
        rep = attractor_report(mt, k)
        assert rep.ud == pytest.approx(3.0, abs=1e-9)
        ups.append(rep.up)
    assert max(ups[1:]) / min(ups[1:]) - 1 < 0.01


@pytest.mark.parametrize("eps", [1 / 8, 1 / 16, 1 / 32])
def test_epsilon_family_constants(eps):
    rep = attractor_report(standard_system("epsilon_family", eps=eps), 6)
    assert rep.up <= 4
    assert rep.ud >= (1 - eps) / 2 / eps
    assert rep.ud == pytest.approx(1 / eps, abs=1e-6)


def test_report_witness_and_json():
    rep = attractor_report(standard_system("middle_third"), 5)
    d = rep.to_dict()
    assert d["ud"] == rep.ud and d["depth"] == 5 and d["r_min"] > 0
    X, floor = attractor_sample(standard_system("middle_third"), 5)
    assert uniform_perfectness_constant(X, floor).constant == rep.up


def test_distortion_function_algebra():
    eta = DistortionFunction.identity()
    for f in (eta.theta(), eta.psi()):
        assert np.allclose(f(f.t), f.t)
    g = DistortionFunction([0, 1, 2, 4], [0, 0.5, 3, 10])
    assert np.allclose(g.inverse(g(g.t)), g.t, atol=1e-10)
    th = g.theta()
    for t in (1 / 10, 1 / 3, 2.0):  # knots of theta
        assert th(t) == pytest.approx(1 / g.inverse(1 / t))
    with pytest.raises(ValueError):
        DistortionFunction([0, 1, 1], [0, 1, 2])


def test_qss_witness_examples():
    mt = attractor(standard_system("middle_third"), 6, [0.0])
    w = qss_witness(mt, [0.0], 0.2)
    assert w.word == (1, 1) and w.r0 == pytest.approx(1.0)
    assert w.inverse_map(np.array([1 / 9]))[0] == pytest.approx(1.0)
    ident = qss_witness(mt, [0.0], 5.0)
    assert ident.is_identity and ident.r0 == pytest.approx(1.0)
    eps = standard_system("epsilon_family", eps=1 / 8)
    a = attractor(eps, 6, [1.0])
    assert qss_witness(a, [1.0], 0.4).word == (2, 2)
    # phi_w^-1 maps the representatives of X_w onto the depth-(k - |w|) representatives
    idx = a.prefix_indices((2, 2))
    img = np.sort(w.inverse_map(mt.points[mt.prefix_indices((1, 1))])[:, 0])
    assert np.allclose(img, np.sort(attractor(standard_system("middle_third"), 4, [0.0]).points[:, 0]))
    assert len(idx) == 2 ** 4


def test_cantor_code():
    two = cantor_code(FinitePointSet([0.0, 1.0]))
    assert sorted(two.addresses) == ["0", "1"] and sorted(two.images) == pytest.approx([0, 2 / 3])
    mt = attractor(standard_system("middle_third"), 5, [0.0])
    code = cantor_code(mt.point_set())
    assert np.allclose(code.images, mt.points[:, 0], atol=1e-12)
    eps = attractor(standard_system("epsilon_family", eps=1 / 8), 4, [0.0])
    code = cantor_code(eps.point_set())
    assert len(set(code.images.round(14))) == len(eps)
    curve = code.empirical_eta()
    assert all(np.isfinite(v) for _, v in curve)
