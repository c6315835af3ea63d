import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udcantor.metric_core import (
    AmbientPoint,
    Dendrogram,
    FinitePointSet,
    MetricError,
    MetricKind,
    component_chain,
    distance,
    set_separation,
    single_linkage_dendrogram,
)

CH = MetricKind.CHORDAL
coord = st.floats(-50, 50, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-6)


def test_chordal_examples():
    x = AmbientPoint((0.3, -2.0))
    assert distance(x, x, CH) == 0
    assert distance(AmbientPoint((0.0, 0.0)), AmbientPoint.infinity(2), CH) == pytest.approx(2.0)
    assert distance(AmbientPoint((1.0, 0.0)), AmbientPoint((-1.0, 0.0)), CH) == pytest.approx(2.0)


def test_distance_errors():
    with pytest.raises(MetricError):
        distance(AmbientPoint((0.0,)), AmbientPoint((0.0, 1.0)))
    with pytest.raises(MetricError):
        distance(AmbientPoint((0.0, 0.0)), AmbientPoint.infinity(2), MetricKind.EUCLIDEAN)


@settings(max_examples=200)
@given(st.lists(st.tuples(coord, coord, coord), min_size=3, max_size=3),
       st.sampled_from([MetricKind.EUCLIDEAN, CH]))
def test_triangle_inequality(pts, metric):
    a, b, c = (AmbientPoint(p) for p in pts)
    ab, bc, ac = distance(a, b, metric), distance(b, c, metric), distance(a, c, metric)
    assert ac <= (ab + bc) * (1 + 1e-12) + 1e-15
    if metric is CH:
        assert 0 <= ab <= 2 + 1e-12


def _invert(p: AmbientPoint) -> AmbientPoint:
    if p.at_infinity:
        return AmbientPoint((0.0,) * p.dim)
    v = p.array()
    r2 = float(v @ v)
    if r2 == 0:
        return AmbientPoint.infinity(p.dim)
    return AmbientPoint(tuple(v / r2))


@settings(max_examples=200)
@given(st.tuples(coord, coord), st.tuples(coord, coord))
def test_chordal_inversion_invariance(p, q):
    a, b = AmbientPoint(p), AmbientPoint(q)
    for u, v in [(a, b), (a, AmbientPoint.infinity(2)), (AmbientPoint((0.0, 0.0)), b)]:
        assert distance(_invert(u), _invert(v), CH) == pytest.approx(distance(u, v, CH), abs=1e-10)


def test_point_set_diameter_and_duplicates():
    X = FinitePointSet([[0.0], [0.25], [1.0]])
    assert X.cached_diameter == X.recompute_diameter() == 1.0
    with pytest.raises(MetricError):
        FinitePointSet([[0.0], [1e-13]])
    with pytest.raises(MetricError):
        FinitePointSet([[0.0, 0.0], [1.0, 1.0]], at_infinity=[False, True])


def test_point_set_with_infinity_chordal():
    X = FinitePointSet([[0.0, 0.0], [0.0, 0.0]], at_infinity=[False, True], metric=CH)
    assert X.cached_diameter == pytest.approx(2.0)


def test_csv_roundtrip(tmp_path):
    X = FinitePointSet([[0.0, 1.0], [2.0, 3.5]], metric=CH)
    X.to_csv(tmp_path / "p.csv")
    Y = FinitePointSet.from_csv(tmp_path / "p.csv", metric=CH)
    assert np.array_equal(X.coords, Y.coords)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x,y,z,inf"


def _merges(X):
    dg = single_linkage_dendrogram(X)
    return dg, [(dg.nodes[i].height, dg.nodes[i].diam) for i in range(len(X), len(dg.nodes))]


def test_dendrogram_examples():
    _, m = _merges(FinitePointSet([[0.0], [1.0]]))
    assert m == [(1.0, 1.0)]
    _, m = _merges(FinitePointSet([[0.0], [0.1], [1.0]]))
    assert m[0] == pytest.approx((0.1, 0.1)) and m[1] == pytest.approx((0.9, 1.0))
    _, m = _merges(FinitePointSet([[0.0], [2 / 9], [2 / 3], [8 / 9]]))
    assert [h for h, _ in m] == pytest.approx([2 / 9, 2 / 9, 4 / 9])


def test_dendrogram_requires_two_points():
    with pytest.raises(MetricError):
        single_linkage_dendrogram(FinitePointSet([[0.0]]))


def test_component_chain_examples():
    dg = single_linkage_dendrogram(FinitePointSet([[0.0], [1.0]]))
    chain = component_chain(dg, 0)
    assert [(c.diameter, c.separation) for c in chain] == [(0.0, 1.0), (1.0, None)]
    dg = single_linkage_dendrogram(FinitePointSet([[0.0], [0.1], [1.0]]))
    chain = component_chain(dg, 0)
    assert [c.diameter for c in chain] == pytest.approx([0.0, 0.1, 1.0])
    assert [c.separation for c in chain[:-1]] == pytest.approx([0.1, 0.9])
    with pytest.raises(IndexError):
        component_chain(dg, 5)


def test_component_chain_depth3_middle_third():
    pts = sorted(sum(2 * a * 3.0 ** -(k + 1) for k, a in enumerate(w))
                 for w in itertools.product([0, 1], repeat=3))
    X = FinitePointSet(np.array(pts)[:, None])
    dg = single_linkage_dendrogram(X)
    chain = component_chain(dg, 0)
    assert len(chain) == 4
    d = X.distance_matrix()
    # oracle: exhaustive separation of each chain component
    for link in chain[:-1]:
        assert set_separation(d, dg.leaves_of(link.node)) == link.separation
    assert [c.separation for c in chain[:-1]] == pytest.approx([2 / 27, 4 / 27, 10 / 27])


def test_chain_collapses_simultaneous_merges():
    # four equally spaced points merge at one height: chain is leaf -> root
    X = FinitePointSet([[0.0], [1.0], [2.0], [3.0]])
    dg = single_linkage_dendrogram(X)
    chain = component_chain(dg, 0)
    assert len(chain) == 2 and chain[0].separation == 1.0


def _random_set(rng, n, dim=2):
    return FinitePointSet(rng.random((n, dim)) * rng.choice([1, 10, 0.01]))


@pytest.mark.parametrize("seed", range(10))
def test_merge_height_is_separation_on_all_subsets(seed):
    rng = np.random.default_rng(seed)
    X = _random_set(rng, int(rng.integers(2, 11)))
    d = X.distance_matrix()
    dg = single_linkage_dendrogram(X)
    for v in range(len(dg.nodes) - 1):
        assert set_separation(d, dg.leaves_of(v)) == dg.nodes[int(dg.parent[v])].height
    # any separated set contains the tree component of each of its points below its separation
    n = len(X)
    for mask in range(1, 2 ** n - 1):
        members = [i for i in range(n) if mask >> i & 1]
        sep = set_separation(d, members)
        v = members[0]
        while dg.parent[v] >= 0 and dg.nodes[int(dg.parent[v])].height < sep:
            v = int(dg.parent[v])
        comp = dg.leaves_of(v)
        assert set(comp) <= set(members)
        assert set_separation(d, comp) >= sep


@pytest.mark.parametrize("seed", range(5))
def test_dendrogram_monotone_and_diameters(seed):
    rng = np.random.default_rng(100 + seed)
    X = _random_set(rng, 60, 3)
    dg = single_linkage_dendrogram(X)
    d = X.distance_matrix()
    for node in dg.nodes[dg.n_leaves:]:
        for c in node.children:
            assert dg.nodes[c].height <= node.height
            assert dg.nodes[c].diam <= node.diam
        leaves = dg.leaves_of(node.id)
        assert node.diam == d[np.ix_(leaves, leaves)].max()
    for x in range(len(X)):
        seps = [c.separation for c in component_chain(dg, x)[:-1]]
        assert all(a < b for a, b in zip(seps, seps[1:]))


def test_dendrogram_json_roundtrip():
    dg = single_linkage_dendrogram(FinitePointSet([[0.0], [0.1], [1.0], [1.5]]))
    data = json.loads(dg.to_json())
    assert {"id", "children", "height", "diam"} <= set(data["nodes"][0])
    back = Dendrogram.from_json(dg.to_json())
    assert [n.height for n in back.nodes] == [n.height for n in dg.nodes]
    assert list(back.parent) == list(dg.parent)
