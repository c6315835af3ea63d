import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from udcantor.linking import linking_number, linking_number_along
from udcantor.necklace import (
    NecklaceError,
    ball_levels,
    build_chain,
    chain_margins,
    check_ball_levels,
    interleaved_attractor,
    interleaved_points,
    is_ball_level,
    link_report,
    separated_pair,
    torus_mesh_ply,
    word_similarity,
)


def test_small_chains_rejected():
    with pytest.raises(NecklaceError):
        build_chain(2)
    with pytest.raises(NecklaceError) as err:
        build_chain(8)
    assert any("link_inside_T" in v for v in err.value.violations)


def test_chain_margins_positive(chain):
    assert all(v > 0 for v in chain.margins.values())
    links = chain.links()
    diams = {round(2 * (L.radius + L.tube), 12) for L in links}
    assert len(diams) == 1


def test_chain_linking_structure(chain):
    n = chain.n
    cores = [L.core() for L in chain.links()]
    for i in range(n):
        for j in range(i + 1, n):
            lk = linking_number(cores[i], cores[j])
            adjacent = (j - i) % n in (1, n - 1)
            assert (abs(lk) == 1) if adjacent else (lk == 0)


def test_linking_stable_under_motions_and_projections(chain):
    cores = [L.core() for L in chain.links()]
    pairs = [(0, 1), (0, 2), (3, 4), (0, 10)]
    base = {p: linking_number(cores[p[0]], cores[p[1]]) for p in pairs}
    rng = np.random.default_rng(1)
    for seed in range(20):
        R = Rotation.random(random_state=seed).as_matrix()
        t = rng.normal(size=3)
        for i, j in pairs:
            assert linking_number(cores[i].transformed(R, t), cores[j].transformed(R, t)) == base[(i, j)]
            val = linking_number_along(cores[i], cores[j], rng.normal(size=3))
            assert val is None or val == base[(i, j)]


def test_schedule():
    assert ball_levels(20) == [1, 2, 4, 8, 16]
    assert [is_ball_level(k) for k in range(1, 6)] == [True, True, False, True, False]


def test_word_similarity_follows_schedule(chain):
    w = (3, 5, 7)
    phi = word_similarity(chain, w)
    expect = chain.ball_maps[2].compose(chain.ball_maps[4]).compose(chain.torus_maps[6])
    assert phi.scale == pytest.approx(expect.scale)
    assert np.allclose(phi.translation, expect.translation)


def test_interleaved_points(chain):
    att = interleaved_attractor(chain, 2)
    assert len(att.points) == 400 and att.ball_level_flags == [True, True]
    p = np.array([chain.geometry.core_radius, 0, 0])
    assert np.allclose(att.points[21], word_similarity(chain, (2, 2))(p))
    with pytest.raises(ValueError):
        att.core_curve((1, 2))
    att3 = interleaved_attractor(chain, 3)
    assert att3.core_curve((1, 1, 1)).vertices.shape == (64, 3)


def test_ball_levels_disjoint(chain):
    gaps = check_ball_levels(chain, 4)
    assert set(gaps) == {1, 2, 4} and all(g > 0 for g in gaps.values())


def test_link_report(chain):
    rep = link_report(chain, (1, 1))
    assert rep.consistent and len(rep.entries) == 190
    m = rep.matrix(20)
    assert set(np.unique(m)) <= {-1, 0, 1}
    assert all(abs(m[i, (i + 1) % 20]) == 1 for i in range(20))
    assert json.loads(rep.to_json())["consistent"]
    with pytest.raises(ValueError):
        link_report(chain, (1,))


def test_separated_pair(chain):
    e = separated_pair(chain, (1, 1, 1), (1, 2, 1))
    assert e.reason == "unlinked by ball separation" and e.linking == 0
    with pytest.raises(ValueError):
        separated_pair(chain, (1, 1, 1), (1, 1, 2))


def test_exports(chain, tmp_path):
    data = json.loads(chain.to_json())
    assert data["n"] == 20 and len(data["torus_maps"]) == 20
    path = tmp_path / "t.ply"
    torus_mesh_ply(chain.torus, path)
    assert path.read_text().startswith("ply")
