import math
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab.covering_engine import (
    CoveringError, CoveringSet, build_covering_set, build_P_N, covering_size, rational_advisory, search_km,
    search_simultaneous, verify_covering,
)
from blab.cycle_model import ref1

THETA = math.log(2) / math.log(3)
TARGET = math.log(0.5) / math.log(3)


def naive_search(theta, target, tol, k_max, parity="any"):
    out = []
    for k in range(1, k_max + 1):
        c = k * theta + target
        for m in range(max(1, math.floor(c - tol) - 1), math.ceil(c + tol) + 2):
            if parity == "even" and (k % 2 or m % 2):
                continue
            if abs(m - k * theta - target) < tol:
                out.append((k, m))
    return out


def test_search_finds_reference_pair():
    r = search_km(THETA, TARGET, 0.05, 50, "even")
    assert (20, 12) in [p.pair for p in r]
    assert all(p.k % 2 == 0 and p.m % 2 == 0 for p in r)


@pytest.mark.parametrize("k_max,tol", [(50, 0.05), (400, 0.01), (1000, 0.002)])
def test_search_matches_double_loop(k_max, tol):
    got = [p.pair for p in search_km(THETA, TARGET, tol, k_max)]
    assert got == naive_search(THETA, TARGET, tol, k_max)


def test_search_even_matches_double_loop():
    got = [p.pair for p in search_km(THETA, TARGET, 0.02, 1000, "even")]
    assert got == naive_search(THETA, TARGET, 0.02, 1000, "even")


def test_search_million_is_fast():
    t0 = time.perf_counter()
    r = search_km(THETA, TARGET, 0.05, 10**6)
    assert time.perf_counter() - t0 < 1.5
    assert len(r) == 100000


def test_empty_search_reports_best():
    r = search_km(THETA, TARGET, 1e-3, 30)
    assert list(r) == []
    assert r.best[:2] == (20, 12)
    assert r.best[2] == pytest.approx(abs(12 - 20 * THETA - TARGET), rel=1e-12)


def test_rational_theta_advisory():
    with pytest.warns(UserWarning, match="rational"):
        r = search_km(0.5, 0.3, 0.01, 100)
    assert r == [] and "not dense" in r.advisory
    assert rational_advisory(0.5) == Fraction(1, 2)
    assert rational_advisory(THETA) is None


def test_relative_tolerance_with_gamma():
    r = search_km(THETA, TARGET, 0.05, 50, gamma=3.0)
    for p in r:
        assert abs(p.value / 0.5 - 1) < 0.06


def test_P_N_contents():
    pairs = [p.pair for p in build_P_N(ref1(), N=10, k_max=60)]
    assert (20, 12) in pairs and (39, 24) in pairs
    assert (20, 12) not in [p.pair for p in build_P_N(ref1(), N=25, k_max=60)]
    with pytest.raises(ValueError, match="alpha"):
        build_P_N(ref1(b=2.0), N=10)


def test_P_N_pairs_are_balanced():
    p = ref1()
    bound = (2 / 3) * (1 - p.alpha) * p.delta
    for pr in build_P_N(p, N=10, k_max=100):
        assert abs(p.a * p.b * pr.value * p.x_plus[0] - p.b * p.u_minus[0]) <= bound


def test_reference_cover_shape():
    c = build_covering_set(ref1())
    assert c.n == 9 == covering_size(0.5)
    np.testing.assert_allclose(c.rho, np.linspace(-0.1, 0.1, 9), atol=1e-16)
    rep = verify_covering(c)
    assert rep.passed
    assert all(float(hi - lo) >= 0.005 for lo, hi in c.intervals)
    assert all(float(o) > 0.0025 for o in rep.overlaps)
    assert rep.required_overlap == Fraction(c.delta_prime) * Fraction(c.alpha) / 2
    assert float(rep.required_overlap) == pytest.approx(0.0025, rel=1e-12)


def test_alpha_point_nine_needs_six():
    c = build_covering_set(ref1(b=1.8))
    assert c.n == 6
    assert verify_covering(c).passed


def test_reversed_cover():
    c = build_covering_set(ref1(u_minus=[2.5]), orientation="cu", k_max=400)
    assert c.orientation == "cu" and verify_covering(c).passed
    with pytest.raises(ValueError):
        build_covering_set(ref1(u_minus=[2.5]), orientation="cs")


def test_thinning_opens_a_real_gap():
    c = build_covering_set(ref1())
    while verify_covering(c).covered:
        c = c.without(c.n // 2)
    rep = verify_covering(c)
    lo, hi = rep.gap_location
    mid = (lo + hi) / 2
    assert not any(a < mid < b for a, b in c.intervals)
    assert rep.max_gap > 0 and "gap" in rep.summary()


def test_small_k_max_fails():
    with pytest.raises(CoveringError):
        build_covering_set(ref1(), k_max=20)


def test_single_wide_interval():
    assert verify_covering(CoveringSet.from_intervals([(-0.02, 0.02)], 0.25, 0.01, 0.5)).passed
    assert not verify_covering(CoveringSet.from_intervals([(-0.01, 0.02)], 0.25, 0.01, 0.5)).covered


def test_cover_json_endpoints_exact():
    c = build_covering_set(ref1())
    d = c.to_dict()
    for entry, (lo, hi) in zip(d["pairs"], c.intervals):
        assert Fraction(entry["interval"][0]) == lo
        assert Fraction(entry["interval"][1]) == hi


def test_simultaneous_search():
    r = search_simultaneous([(math.sqrt(2), 0.0, 1e-2), (math.sqrt(3), 0.0, 1e-2)], 5000)
    assert r[0] == (1463, 2069, 2534)
    for k, n1, n2 in r:
        assert abs(k * math.sqrt(2) - n1) < 1e-2 and abs(k * math.sqrt(3) - n2) < 1e-2
    empty = search_simultaneous([(math.sqrt(2), 0.0, 1e-6)], 100)
    assert empty == [] and empty.best is not None
    with pytest.raises(ValueError):
        search_simultaneous([], 10)


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 400), st.integers(10, 400), st.floats(0.005, 0.1))
def test_search_monotone_in_k_max(k1, k2, tol):
    lo, hi = sorted((k1, k2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = {p.pair for p in search_km(THETA, TARGET, tol, lo)}
        b = {p.pair for p in search_km(THETA, TARGET, tol, hi)}
    assert a <= b


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.02, 0.02), st.floats(0.0, 0.02)), min_size=1, max_size=6))
def test_verify_covering_agrees_with_grid(raw):
    ivs = [(a, a + w) for a, w in raw]
    rep = verify_covering(CoveringSet.from_intervals(ivs, 0.25, 0.01, 0.5))
    grid = np.linspace(-0.01, 0.01, 2001)
    grid_ok = all(any(lo < x < hi for lo, hi in ivs) for x in grid)
    if rep.covered:
        assert grid_ok
