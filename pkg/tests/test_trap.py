import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from udcantor.ifs import Similarity
from udcantor.trap import (
    Inversion,
    TrapConfig,
    TrapConfigError,
    TrapMap,
    backward_orbit,
    build_trap_map,
    cell_escape,
    chordal,
    classify_orbit,
    classify_orbit_precise,
    classify_orbits,
    conjugate,
    distortion_estimate,
    expansion_data,
    expansion_scales,
    hausdorff,
    hyperbolicity_report,
    mp_branch_fixed_point,
    polar_doubling,
    preimage_components,
    validate_config,
)


def test_polar_doubling_examples():
    assert np.allclose(polar_doubling([0.0, 1.0]), [-1, 0])
    assert np.allclose(polar_doubling([0.0, -1.0]), [-1, 0])
    assert np.allclose(polar_doubling([-1.0, 0.0]), [1, 0])
    assert np.allclose(polar_doubling([[2.0, 0.0, 5.0], [2.0, 0.0, -3.0]]), [[2, 0, 5], [2, 0, -3]])
    assert np.allclose(polar_doubling([0.0, 0.0, 1.5]), [0, 0, 1.5])


def test_validator_examples():
    names = [v.name for v in validate_config(TrapConfig(2, 0.3, 0.1, 0.06))]
    assert "b < a/2" in names
    names = [v.name for v in validate_config(TrapConfig(2, 0.05, 0.2, 0.01))]
    assert any(n.startswith("constraint (i)") for n in names)
    bad = validate_config(TrapConfig(2, 0.3, 0.1, 0.04))
    assert bad and all(v.witness is not None for v in bad)
    with pytest.raises(TrapConfigError):
        build_trap_map(2, 0.3, 0.1, 0.06)


def test_default_config_validates(trap2, trap3):
    for G in (trap2, trap3):
        assert (G.cfg.r0, G.cfg.a, G.cfg.b) == (0.3, 0.1, 0.03)
        assert validate_config(G.cfg) == []
        assert preimage_components(G.cfg) == 2


def test_special_points(trap2):
    G = trap2
    assert G.apply_point(G.p[1]) is None
    assert G.apply_point(G.p[2]) is None
    assert np.allclose(G.apply_point(None), G.p[0])
    assert np.allclose(G.inverse_branch(1, np.zeros((1, 2)), np.array([True]))[0], G.p[1])
    with pytest.raises(ValueError):
        G.inverse_branch(1, G.p[0][None])


@pytest.mark.parametrize("fixture", ["trap2", "trap3"])
def test_branch_consistency_and_trap_invariance(fixture, request):
    G = request.getfixturevalue(fixture)
    rng = np.random.default_rng(0)
    y = rng.uniform(-3, 3, size=(10_000, G.n))
    y = y[np.linalg.norm(y - G.p[0], axis=1) > G.cfg.b * 1.01]
    for i in (1, 2):
        x = G.inverse_branch(i, y)
        assert np.all(np.linalg.norm(x - G.p[i], axis=1) < G.cfg.b)
        gx, ginf = G.apply(x)
        assert chordal(gx, ginf, y, np.zeros(len(y), bool)).max() < 1e-9
    u = rng.normal(size=(10_000, G.n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = G.p[0] + G.cfg.b * rng.random((10_000, 1)) ** (1 / G.n) * u
    gx, ginf = G.apply(x)
    assert G.in_trap(gx, ginf).all()


def test_classify_orbit_examples(trap2):
    G = trap2
    assert str(classify_orbit(G, G.p[0], 5)) == "Trapped(0)"
    far = classify_orbit(G, [3.0, 3.0], 50)
    assert far.kind == "Trapped" and far.step <= 50
    assert classify_orbit(G, None, 5).kind == "Trapped"
    with pytest.raises(ValueError):
        classify_orbit(G, [0.0, 0.0], 0)


def test_fixed_point_persists_in_high_precision(trap2):
    G = trap2
    x = mp_branch_fixed_point(G, 1, 250)
    assert np.allclose([float(v) for v in x], G.branch_fixed_point(1), atol=1e-12)
    assert classify_orbit_precise(G, x, 50).kind == "Persisting"
    rng = np.random.default_rng(2)
    for s in rng.normal(size=(20, 2)):
        a, b = classify_orbit(G, s, 30), classify_orbit_precise(G, s, 30)
        assert (a.kind, a.step) == (b.kind, b.step)


def test_dichotomy_grid(trap2, julia2):
    G = trap2
    t = np.linspace(-2, 2, 100)
    xx, yy = np.meshgrid(t, t)
    seeds = np.stack([xx.ravel(), yy.ravel()], axis=1)
    kind, step = classify_orbits(G, seeds, 200)
    assert not np.any(kind == 2)
    persisting = seeds[kind == 1]
    if len(persisting):
        d = np.min(np.linalg.norm(persisting[:, None] - julia2.points[None], axis=2), axis=1)
        assert d.max() <= 2 * julia2.resolution


def test_backward_orbit_structure(trap2, julia2):
    G, J = trap2, julia2
    assert len(J) == 4096
    assert G.in_b_balls(J.points, np.zeros(len(J), bool)).all()
    assert np.all(np.linalg.norm(J.points - G.p[0], axis=1) > G.cfg.b)
    J11 = backward_orbit(G, 11)
    assert np.array_equal(np.concatenate([G.inverse_branch(1, J11.points), G.inverse_branch(2, J11.points)]),
                          J.points)
    half = np.linalg.norm(J.points - G.p[1], axis=1) < G.cfg.b
    assert half.sum() == 2048
    for i in (1, 2):
        img = G.inverse_branch(i, J.points)
        assert np.all(np.linalg.norm(img - G.p[i], axis=1) < G.cfg.b)


@pytest.mark.parametrize("fixture", ["trap2", "trap3"])
@pytest.mark.parametrize("h", [1e-3, 1e-5])
def test_cell_escape_matches_backward_orbit(fixture, h, request):
    G = request.getfixturevalue(fixture)
    J = backward_orbit(G, 12 if G.n == 2 else 10)
    C = cell_escape(G, h)
    assert len(C) > 0 and C.resolution <= h
    assert hausdorff(C.points, J.points) <= 2 * C.resolution


def test_csv_export(trap2, tmp_path):
    J = backward_orbit(trap2, 3)
    path = tmp_path / "j.csv"
    J.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "x,y,z,word,method" and len(rows) == 9
    assert rows[1].split(",")[3] == "111"


def test_distortion_of_moebius_region(trap2):
    G = trap2
    rng = np.random.default_rng(0)
    u = rng.normal(size=(500, 2))
    x = G.p[0] + G.cfg.b / 2 * rng.random((500, 1)) * u / np.linalg.norm(u, axis=1, keepdims=True)
    est = distortion_estimate(G, x, 1)
    assert est.K_estimate >= 1 and abs(est.K_estimate - 1) < 1e-3
    # away from the inner balls g doubles the angle, a distortion of exactly 2
    assert distortion_estimate(G, [[0.3, 1.7]], 1).K_estimate == pytest.approx(2.0, rel=1e-5)


@pytest.fixture(scope="module")
def report2(trap2, julia2):
    return hyperbolicity_report(trap2, julia2)


def test_hyperbolicity_report(report2):
    rep = report2
    assert rep.margin["margin"] > 0 and rep.hyperbolic
    assert rep.absorption_N is not None and rep.absorption_N >= 1
    assert rep.injectivity_radius > 0
    assert len(rep.distortion) == 15
    for row in rep.distortion:
        assert abs(row["trap"] - 1) <= 1e-3
        assert row["near_J"] <= 1.05 * rep.K_global
    assert json.loads(rep.to_json())["hyperbolic"]


def test_expansion_sandwich(trap2, julia2, report2):
    G, J = trap2, julia2
    scales = expansion_scales(G, J, report2)
    assert 0 < scales.delta < scales.r2
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = J.points[rng.integers(len(J))]
        r = scales.delta / 2 * 10 ** rng.uniform(-9, 0)
        E = expansion_data(G, x, r, scales)
        assert E.M >= 1
        assert scales.delta <= E.L[-1] <= scales.r2
        assert E.L[-2] < scales.delta
    assert expansion_data(G, J.points[0], scales.delta, scales).M == 0
    E = expansion_data(G, G.branch_fixed_point(1), scales.delta / 8, scales)
    assert E.sandwich and E.M >= 1


@pytest.mark.parametrize("fixture", ["trap2", "trap3"])
def test_conjugation(fixture, request):
    G = request.getfixturevalue(fixture)
    n = G.n
    J = backward_orbit(G, 10)
    R = Rotation.random(random_state=4).as_matrix()[:n, :n] if n == 3 else np.array([[0.6, -0.8], [0.8, 0.6]])
    shift = np.zeros(n)
    shift[0] = 5.0
    for F in (Similarity.scaling(2.0, n), Similarity(1.0, R, np.arange(n) + 1.0), Similarity.translation_by(shift)):
        C = conjugate(G, F)
        JC = C.backward_orbit(10)
        assert hausdorff(JC.points, F(J.points)) <= 2 * JC.resolution
    T = conjugate(G, Similarity.translation_by(shift)).backward_orbit(10)
    assert np.allclose(T.points, J.points + shift, atol=1e-14)
    x = np.random.default_rng(0).normal(size=(100, n))
    ident = conjugate(G, Similarity.identity(n))
    assert np.array_equal(ident.apply(x)[0], G.apply(x)[0])
    inv = conjugate(G, Inversion(np.r_[3.0, np.zeros(n - 1)], 1.5))
    JI = inv.backward_orbit(10)
    assert hausdorff(JI.points, inv.fwd(J.points)[0]) <= 2 * JI.resolution
    with pytest.raises(TypeError):
        conjugate(G, np.eye(n))
