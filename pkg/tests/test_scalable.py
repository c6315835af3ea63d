import numpy as np
import pytest

from udcantor.ifs import standard_system
from udcantor.invariants import ud_from_dendrogram, uniform_perfectness_constant
from udcantor.metric_core import FinitePointSet, single_linkage_dendrogram
from udcantor.scalable import KdTree, hierarchical_ud, up_constant_tree


@pytest.mark.parametrize("seed", range(10))
def test_tree_up_matches_dense(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((200, 1 + seed % 3)) ** 2
    X = FinitePointSet(pts)
    for floor in (0.0, 0.02):
        dense = uniform_perfectness_constant(X, floor).constant
        assert up_constant_tree(pts, scale_floor=floor).constant == pytest.approx(dense, rel=1e-12)


def test_tree_up_centers_is_subset_maximum():
    pts = np.random.default_rng(4).random((300, 2))
    full = up_constant_tree(pts)
    parts = [up_constant_tree(pts, centers=c).constant for c in np.array_split(np.arange(300), 3)]
    assert max(parts) == full.constant
    assert up_constant_tree(pts, centers=[full.point]).constant == full.constant


def test_kdtree_queries():
    rng = np.random.default_rng(3)
    pts = rng.random((500, 3))
    tree = KdTree.build(pts)
    x = pts[7]
    d = np.sort(np.linalg.norm(pts - x, axis=1))
    assert tree.far_within(x, 0.3) == d[d <= 0.3].max()
    assert tree.near_beyond(x, 0.3) == d[d > 0.3].min()
    assert tree.near_beyond(x, 10.0) == np.inf


@pytest.mark.parametrize("name,params,depth", [("middle_third", {}, 4), ("epsilon_family", {"eps": 0.125}, 4),
                                               ("c_n", {"n": 3}, 3), ("c_n", {"n": 2}, 4)])
def test_hierarchical_ud_matches_dense(name, params, depth):
    sys_ = standard_system(name, **params)
    p = np.zeros(sys_.dim)
    pts = p[None]
    for _ in range(depth):
        pts = np.concatenate([m(pts) for m in sys_.maps])
    dense = ud_from_dendrogram(single_linkage_dendrogram(FinitePointSet(pts))).constant
    assert hierarchical_ud([sys_.maps] * depth, p) == pytest.approx(dense, rel=1e-12)


def test_interleaved_hierarchical_ud_matches_dense(chain):
    from udcantor.necklace import interleaved_points, is_ball_level

    p = np.array([chain.geometry.core_radius, 0.0, 0.0])
    for depth in (2, 3):
        pts = interleaved_points(chain, depth, p)
        dense = ud_from_dendrogram(single_linkage_dendrogram(FinitePointSet(pts))).constant
        maps = [chain.ball_maps if is_ball_level(k) else chain.torus_maps for k in range(1, depth + 1)]
        assert hierarchical_ud(maps, p) == pytest.approx(dense, rel=1e-12)
