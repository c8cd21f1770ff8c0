import math

import numpy as np
import pytest

from cwbnlw.errors import SupportExceeded
from cwbnlw.lattice import (FourierField, LatticeIndex, ProblemParams, apply_fractional, bracket,
                            convolve, gevrey_weighted_sum, one_norm, pointwise_cube, project_N,
                            project_P, project_Q, resonant_modes, resonant_set)

from _oracles import triple_loop_cube


@pytest.mark.parametrize("xi, expected", [
    (LatticeIndex((2, -1), 3), 6),
    (LatticeIndex((0, 0), 0), 0),
    (LatticeIndex((5,), -5), 10),
])
def test_one_norm(xi, expected):
    assert one_norm(xi) == expected


def test_resonant_set_1d():
    p = ProblemParams(1, (1,), math.sqrt(2), 0.05, 1e-3)
    assert resonant_set(p) == {(1, 1), (1, -1), (-1, 1), (-1, -1)}
    assert len(resonant_modes(p)) == 2


def test_resonant_set_circle():
    p = ProblemParams(2, (1, 0), math.sqrt(2), 0.05, 1e-3)
    assert len(resonant_set(p)) == 8
    assert len(resonant_modes(p)) == 4
    assert resonant_modes(p)[0] == (1, 0)


def test_resonant_set_radius_sqrt5():
    p = ProblemParams(2, (2, 1), math.sqrt(2), 0.05, 1e-3)
    brute = {(a, b) for a in range(-3, 4) for b in range(-3, 4) if a * a + b * b == 5}
    assert set(resonant_modes(p)) == brute
    assert len(brute) == 8
    assert len(resonant_set(p)) == 16


def test_problem_params_validation():
    with pytest.raises(ValueError):
        ProblemParams(2, (1,), 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ProblemParams(1, (0,), 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ProblemParams(1, (1,), -1.0, 0.0, 0.0)


def test_fractional_single_pair():
    f = FourierField.from_items(2, {(1, 0, 0): 0.5})
    g = apply_fractional(f, 1.0)
    assert g[(1, 0, 0)] == pytest.approx(math.sqrt(2) / 2, rel=1e-15)
    assert g[(-1, 0, 0)] == pytest.approx(math.sqrt(2) / 2, rel=1e-15)


def test_fractional_identity_and_cosine():
    f = FourierField.cosine((1,), 1, 1.0)
    assert apply_fractional(f, 0.0).allclose(f, rtol=0)
    g = apply_fractional(f, 0.05)
    for key in ((1, 1), (-1, -1)):
        assert g[key] == pytest.approx(0.5 * 2 ** 0.025, rel=1e-15)


def test_cube_of_cosine():
    # cos^3 = 3/4 cos + 1/4 cos 3
    f = FourierField.from_items(1, {(1, 0): 0.5})
    g = pointwise_cube(f)
    assert g[(1, 0)] == pytest.approx(3 / 8, abs=1e-16)
    assert g[(3, 0)] == pytest.approx(1 / 8, abs=1e-16)
    others = {k: v for k, v in g.items() if abs(k[0]) not in (1, 3) or k[1] != 0}
    assert all(abs(v) < 1e-16 for v in others.values())


def test_cube_of_zero():
    assert pointwise_cube(FourierField.zeros(1, 2)).sup() == 0.0


def test_cube_matches_triple_loop():
    items = {(1, 0): 0.5, (-1, 0): 0.5, (2, 0): 0.05, (-2, 0): 0.05}
    g = pointwise_cube(FourierField.from_items(1, items))
    ref = triple_loop_cube(items)
    for k, v in ref.items():
        assert g[k] == pytest.approx(v, rel=1e-14, abs=1e-16)
    assert g.support_radius <= 3 * 2


def test_cube_direct_and_fft_agree():
    rng = np.random.default_rng(3)
    items = {}
    for _ in range(30):
        k = tuple(int(x) for x in rng.integers(-4, 5, size=3))
        items[k] = float(rng.normal())
        items[tuple(-x for x in k)] = items[k]
    f = FourierField.from_items(2, items)
    a = pointwise_cube(f, method="direct")
    b = pointwise_cube(f, method="fft")
    scale = a.sup()
    assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-12 * scale


def test_support_cap():
    f = FourierField.from_items(1, {(3, 3): 1.0})
    with pytest.raises(SupportExceeded):
        pointwise_cube(f, max_radius=10)


def test_convolve_dimension_mismatch():
    with pytest.raises(ValueError):
        convolve(FourierField.zeros(1), FourierField.zeros(2))


def test_from_items_rejects_asymmetric():
    with pytest.raises(ValueError):
        FourierField.from_items(1, {(1, 0): 1.0, (-1, 0): 2.0})


def test_gevrey_sum_examples(ref_params):
    assert gevrey_weighted_sum(FourierField.zeros(1, 3), 0.5) == 0.0
    arr = np.zeros((5, 5))
    arr[3, 3] = 0.5  # the single site (1, 1); the raw array skips the mirror
    single = FourierField(1, arr)
    assert gevrey_weighted_sum(single, 0.5) == pytest.approx(0.5 * math.exp(math.sqrt(2)), rel=1e-15)
    u0 = FourierField.cosine((1,), 1, 1.0)
    assert gevrey_weighted_sum(u0, 0.1, exclude=resonant_set(ref_params)) == 0.0


def test_projections(ref_params):
    S = resonant_set(ref_params)
    u0 = FourierField.cosine((1,), 1, 1.0)
    assert project_P(u0, S).sup() == 0.0
    f = FourierField.from_items(1, {(0, 0): 2.0, (1, 0): 1.0, (2, 1): 0.5})
    g = project_N(f, S, 1)
    assert dict(g.items()) == {(0, 0): 2.0}
    assert (project_P(f + u0, S) + project_Q(f + u0, S)).allclose(f + u0, rtol=0)


def test_bracket():
    assert bracket((1,)) == pytest.approx(math.sqrt(2))
    assert bracket((2, 1)) == pytest.approx(math.sqrt(6))


def test_json_roundtrip():
    f = FourierField.from_items(2, {(1, -2, 3): 0.25, (0, 0, 1): -1.5})
    g = FourierField.from_json_dict(f.to_json_dict())
    assert g.allclose(f, rtol=0)
    recs = f.to_json_dict()["coeffs"]
    assert len(recs) == 2
    assert {"m", "n", "value"} == set(recs[0])


def test_resized_refuses_to_drop():
    f = FourierField.from_items(1, {(2, 0): 1.0})
    with pytest.raises(SupportExceeded):
        f.resized(1)
