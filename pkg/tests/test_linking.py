import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from udcantor.linking import (
    CurveError,
    PolyCurve,
    circle_curve,
    gauss_linking_integral,
    linking_number,
    linking_number_along,
)


def hopf():
    return circle_curve([0, 0, 0], [0, 0, 1], 1.0), circle_curve([1, 0, 0], [0, 1, 0], 1.0)


def test_hopf_and_split_links():
    a, b = hopf()
    assert abs(linking_number(a, b)) == 1
    assert linking_number(a, b) == linking_number(b, a)
    far = circle_curve([5, 0, 0], [0, 0, 1], 1.0)
    assert linking_number(a, far) == 0
    assert round(gauss_linking_integral(a, b)) == linking_number(a, b)
    assert abs(gauss_linking_integral(a, b) - linking_number(a, b)) < 0.1


def test_rigid_motion_and_projection_invariance():
    a, b = hopf()
    lk = linking_number(a, b)
    rng = np.random.default_rng(0)
    for seed in range(20):
        R = Rotation.random(random_state=seed).as_matrix()
        t = rng.normal(size=3)
        s = rng.uniform(0.1, 10)
        assert linking_number(a.transformed(s * R, t), b.transformed(s * R, t)) == lk
        d = rng.normal(size=3)
        val = linking_number_along(a, b, d)
        assert val is None or val == lk


def test_curve_validation():
    with pytest.raises(CurveError):
        PolyCurve(np.zeros((4, 3)))
    a = circle_curve([0, 0, 0], [0, 0, 1], 1.0)
    with pytest.raises(CurveError):
        linking_number(a, a)
