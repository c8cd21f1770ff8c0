import itertools
import math

import numpy as np
import pytest

from cwbnlw.arithmetic import (GdcSpec, _l1_vectors, check_gdc_poly, check_rho_condition, coefficient_vectors,
                               excluded_fraction, excluded_measure_estimate, export_measure_csv, gdc_scores,
                               max_degree, monomial_values, poly_eval, sample_points, sublevel_measure_bruteforce)
from cwbnlw.outputs import read_csv


def test_rho_integer_fails_at_1():
    ok, (n, k, score) = check_rho_condition(3.0, 0.01, 100)
    assert not ok and n == 1 and score == 0.0


def test_rho_sqrt2_passes():
    ok, worst = check_rho_condition(math.sqrt(2), 0.01, 10_000)
    assert ok
    assert worst[2] > 0.01


def test_rho_half_fails_at_2():
    ok, (n, k, score) = check_rho_condition(0.5, 0.01, 100)
    assert not ok and n == 2 and k == 1 and score == 0.0


def test_l1_vectors_against_bruteforce():
    for dim, K in ((1, 5), (2, 4), (3, 3), (5, 2)):
        got = {tuple(v) for v in _l1_vectors(dim, K).tolist()}
        want = set()
        for v in itertools.product(range(-K, K + 1), repeat=dim):
            s = sum(abs(x) for x in v)
            if 0 < s <= K and next(x for x in v if x) > 0:
                want.add(v)
        assert got == want
        norms = np.abs(_l1_vectors(dim, K)).sum(axis=1)
        assert np.all(np.diff(norms) >= 0)


def test_lambda0_with_transcendental_rho_passes():
    lam0 = math.sqrt(1 + math.pi)
    ok, w, partial = check_gdc_poly([lam0], GdcSpec(1, 4, 1e-3, 4.0, 20))
    assert ok and not partial
    assert w.ratio > 1


def test_lambda0_with_rho_sqrt2_is_algebraic():
    lam0 = math.sqrt(1 + math.sqrt(2))
    ok, w, _ = check_gdc_poly([lam0], GdcSpec(1, 4, 1e-3, 4.0, 20))
    assert not ok
    assert abs(poly_eval(w.coeffs, lam0)) < 1e-12


@pytest.mark.parametrize("p, q", [(3, 2), (5, 3), (7, 4)])
def test_rational_fails_at_degree_one(p, q):
    ok, w, _ = check_gdc_poly([p / q], GdcSpec(1, 1, 1e-3, 1.0, p + q))
    assert not ok
    assert w.value == pytest.approx(0.0, abs=1e-14)
    assert set(np.abs(w.coeffs)) == {p, q}


def test_constant_polynomial():
    assert poly_eval([1], 0.37) == 1.0
    ok, w, _ = check_gdc_poly([0.5], GdcSpec(1, 1, 0.4, 1.0, 1))
    assert ok and w.coeffs == (0, 1)


def test_spec_validation_and_degree_cap():
    with pytest.raises(ValueError):
        GdcSpec(1, 2, 0.0, 1.0)
    with pytest.raises(ValueError):
        GdcSpec(1, 2, 0.1, -1.0)
    assert max_degree(2) == 20
    assert GdcSpec(2, 3, 0.1, 1.0).exponent == pytest.approx(1 / 6)


def test_budget_flags_partial():
    spec = GdcSpec(1, 4, 1e-3, 4.0, 20)
    A, partial = coefficient_vectors(spec, budget=100)
    assert partial and len(A) == 100
    _, _, partial = check_gdc_poly([1.7], spec, budget=100)
    assert partial


def test_witness_reproduces_ratio():
    rng = np.random.default_rng(5)
    spec = GdcSpec(2, 2, 1e-2, 1.5, 6)
    for x in rng.uniform(1, 2, size=(20, 2)):
        ok, w, _ = check_gdc_poly(x, spec)
        P = float(monomial_values(x[None, :], 2, 2)[0] @ np.array(w.coeffs, dtype=float))
        ratio = abs(P) * w.height ** spec.tau / spec.gamma
        assert ratio == pytest.approx(w.ratio, rel=1e-12, abs=1e-300)
        assert ok == (w.ratio > 1)


def test_pass_set_monotone():
    x = sample_points(GdcSpec(1, 2, 1.0, 1.0), (1, 2), 2000, seed=2)
    def passing(**kw):
        base = dict(b_tilde=1, degree=2, gamma=1e-2, tau=1.0, coeff_bound=8)
        base.update(kw)
        spec = GdcSpec(**base)
        s, _, _ = gdc_scores(x, spec)
        return s > spec.gamma
    assert np.all(passing(gamma=2e-2) <= passing(gamma=1e-2))
    assert np.all(passing(tau=0.5) <= passing(tau=1.0))
    assert np.all(passing(coeff_bound=10) <= passing(coeff_bound=8))


def test_excluded_fraction_gamma_zero_and_monotone():
    spec = GdcSpec(1, 2, 1e-2, 1.0, 10)
    est = excluded_measure_estimate(spec, (1, 2), 5000, gammas=[0.0, 1e-3, 5e-4, 2.5e-4], seed=1)
    assert est.fractions[0] == 0.0
    f = est.fractions[1:]
    assert f[0] >= f[1] >= f[2]
    with pytest.raises(ValueError):
        excluded_measure_estimate(spec, (1, 2), 10)


def test_sharded_sampling_is_deterministic():
    spec = GdcSpec(1, 2, 1e-2, 1.0, 10)
    a = sample_points(spec, (1, 2), 3001, seed=9, shards=4)
    b = sample_points(spec, (1, 2), 3001, seed=9, shards=4)
    assert np.array_equal(a, b) and a.shape == (3001, 1)


def test_measure_slope():
    spec = GdcSpec(1, 2, 1e-2, 1.0, 10)
    est = excluded_measure_estimate(spec, (1.0, 2.0), 100_000, gammas=[1e-2, 1e-3, 1e-4], seed=0)
    assert est.slope >= spec.exponent - 0.1
    assert all(f <= e + 1e-15 for f, e in zip(est.fractions, est.envelope))


def test_measure_csv(tmp_path):
    spec = GdcSpec(1, 2, 1e-2, 1.0, 5)
    est = excluded_measure_estimate(spec, (1.0, 2.0), 1000, gammas=[1e-2, 1e-3])
    path = tmp_path / "m.csv"
    export_measure_csv(path, spec, est, "x")
    rows = read_csv(path)
    assert list(rows[0]) == ["gamma", "tau", "degree", "coeff_bound", "samples", "excluded_fraction", "envelope"]
    assert float(rows[1]["gamma"]) == 1e-3


def test_sublevel_examples():
    assert sublevel_measure_bruteforce([0, 1], 0.1, (-1, 1)) == pytest.approx(0.2, abs=1e-9)
    assert sublevel_measure_bruteforce([0, 0, 1], 0.01, (-1, 1)) == pytest.approx(0.2, abs=1e-9)
    with pytest.raises(ValueError):
        sublevel_measure_bruteforce([0, 0], 0.1, (-1, 1))


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("eps", [1e-1, 1e-3])
def test_sublevel_power_closed_form(k, eps):
    P = [0] * k + [1]
    assert sublevel_measure_bruteforce(P, eps, (-1, 1)) == pytest.approx(2 * eps ** (1 / k), abs=1e-6)


def _roots_measure(P, eps, a, b):
    """Measure of {|P| < eps} from the real roots of P -+ eps."""
    cuts = [a, b]
    for shift in (eps, -eps):
        Q = np.array(P, dtype=float)
        Q[0] -= shift
        for r in np.roots(Q[::-1]):
            if abs(r.imag) < 1e-9 and a < r.real < b:
                cuts.append(r.real)
    cuts = sorted(cuts)
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        if abs(np.polyval(np.array(P[::-1], dtype=float), 0.5 * (lo + hi))) < eps:
            total += hi - lo
    return total


def test_random_quartics_envelope():
    rng = np.random.default_rng(11)
    consts = []
    for _ in range(100):
        P = [int(x) for x in rng.integers(-5, 6, size=5)]
        if P[4] == 0:
            P[4] = 1
        for eps in (1e-2, 1e-3):
            m = sublevel_measure_bruteforce(P, eps, (-1, 1))
            assert m == pytest.approx(_roots_measure(P, eps, -1, 1), abs=1e-6)
            consts.append(m / eps ** 0.25)
    assert max(consts) <= 10


def test_excluded_fraction_counts_ties():
    assert excluded_fraction(np.array([0.0, 1.0, 2.0]), 1.0) == pytest.approx(2 / 3)
