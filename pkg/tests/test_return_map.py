import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab.covering_engine import build_P_N
from blab.cycle_model import ChartEscapeError, TailSpec, ref1, ref_df, ref_sf
from blab.return_map import (
    BoxViolationError, Coding, CrossMap, LiteralReturn, NearParabolicError, NormalFormBatch, compose_T_km,
    cross_map_T_km, fixed_point, return_coeffs, solve_coding,
)

A_20_12 = Fraction(3**12, 2**20)


def affine(k, m, p=None):
    c = return_coeffs(p or ref1(), k, m)
    return c.A_km, c.B_km


def test_return_coeffs_exact_rational():
    c = return_coeffs(ref1(), 20, 12)
    assert Fraction(c.A_km) == A_20_12
    assert c.A_km == pytest.approx(0.5068216, abs=1e-7)
    assert Fraction(c.B_km) == A_20_12 - Fraction(1, 2)


def test_negative_lambda_parity():
    p = ref1(lam=-0.5, P2=[[0.2]])
    assert math.copysign(1, return_coeffs(p, 21, 12).A_km) == -math.copysign(1, return_coeffs(p, 20, 12).A_km)
    even = return_coeffs(p, 20, 12).A_km
    assert even == abs(even) == return_coeffs(ref1(), 20, 12).A_km


def test_saddle_focus_phases():
    c = return_coeffs(ref_sf(), 5, 3)
    assert c.eta1 == pytest.approx(math.atan2(1, 0.5), abs=1e-15)
    assert c.eta1 == pytest.approx(1.10715, abs=1e-5)
    assert c.eta2 == pytest.approx(1.37340, abs=1e-5)
    assert c.A == pytest.approx(math.sqrt(1.25), rel=1e-15)
    assert c.B == pytest.approx(math.sqrt(1.04), rel=1e-15)
    p = ref_sf()
    lg = 0.5**5 * 3.0**3
    assert c.A_km == pytest.approx(lg * c.A * math.sin(5 * p.omega + c.eta1), rel=1e-14)


def test_literal_composition_at_origin():
    A, B = affine(20, 12)
    out = compose_T_km(ref1(), 20, 12)(np.zeros(3))
    assert out[0] == pytest.approx(B, abs=1e-13)
    assert out[0] == pytest.approx(0.0068216, abs=1e-7)


def test_chart_escape_named():
    lit = compose_T_km(ref1(), 1, 1)
    with pytest.raises(ChartEscapeError, match="chart"):
        lit.forward([0.9, 0.9, 0.9])


def test_tails_move_output_slightly():
    p = ref1(tails=TailSpec(c_g=1e-3))
    A, B = affine(20, 12)
    pts = np.random.default_rng(2).uniform(-0.1, 0.1, (50, 3))
    out = compose_T_km(p, 20, 12)(pts)
    assert np.max(np.abs(out[:, 0] - (A * pts[:, 0] + B))) <= 1e-4


def test_cross_map_skeleton_values():
    cm = cross_map_T_km(ref1(), 20, 12)
    out = cm([0.01, 0.0, 0.0])
    assert out[0] == pytest.approx(float(A_20_12) * 0.01 + float(A_20_12 - Fraction(1, 2)), abs=1e-15)
    assert out[0] == pytest.approx(0.0118898, abs=1e-7)
    # Y and Zbar vanish to leading order; exactly they are the heteroclinic
    # offsets carried through the strong blocks (P1^-k y-, Q1^m v+)
    assert out[1] == pytest.approx(2.0**-20, rel=1e-12)
    assert out[2] == pytest.approx(0.3**12, rel=1e-9)
    A, B = affine(20, 12)
    assert abs(cm([-B / A, 0.0, 0.0])[0]) < 1e-16
    assert cm.balanced


def test_cross_map_box_violation():
    with pytest.raises(BoxViolationError):
        cross_map_T_km(ref1(), 20, 12)([0.2, 0.0, 0.0])


def test_double_focus_tangent_guard():
    eta3 = -math.atan(0.3)
    p = ref_df(omega2=math.pi / 2 - 1e-9 - eta3)
    with pytest.raises(ValueError, match="tangent"):
        cross_map_T_km(p, 3, 1)


def test_constant_coding_fixed_point():
    A, B = affine(20, 12)
    orb = solve_coding(ref1(), Coding(((20, 12),), periodic=True))
    assert orb.points[0, 0] == pytest.approx(B / (1 - A), abs=1e-12)
    assert orb.points[0, 0] == pytest.approx(0.0138320, abs=1e-7)
    assert orb.points[0, 1] == pytest.approx(2.0**-20, rel=1e-9)
    assert orb.points[0, 2] == pytest.approx(0.3**12, rel=1e-9)


def test_period_two_coding():
    A1, B1 = affine(20, 12)
    A2, B2 = affine(22, 13)
    orb = solve_coding(ref1(), Coding(((20, 12), (22, 13)), periodic=True))
    assert orb.points[0, 0] == pytest.approx((A2 * B1 + B2) / (1 - A1 * A2), abs=1e-12)
    assert orb.points[1, 0] == pytest.approx(A1 * orb.points[0, 0] + B1, abs=1e-12)


def test_empty_coding():
    with pytest.raises(ValueError, match="empty"):
        solve_coding(ref1(), Coding(()))


def test_coding_json_round_trip():
    c = Coding(((20, 12), (39, 24)), periodic=True)
    assert Coding.from_json(c.to_json()) == c


def test_window_coding_reinserted():
    p = ref1(tails=TailSpec(c_g=1e-3, c_t=1e-3))
    coding = Coding(((20, 12), (39, 24), (20, 12), (28, 17)))
    orb = solve_coding(p, coding, tol=1e-13)
    assert orb.residual < 1e-12
    lit = {pair: compose_T_km(p, *pair) for pair in set(coding.pairs)}
    for s, pair in enumerate(coding.pairs):
        a, b = orb.points[s], orb.points[s + 1]
        out = lit[pair](np.concatenate([[a[0]], b[1:2], a[2:]]))
        np.testing.assert_allclose(out, [b[0], a[1], b[2]], atol=1e-12)


def test_fixed_point_and_multiplier():
    A, B = affine(20, 12)
    fp = fixed_point(ref1(), 20, 12)
    assert fp.point[0] == pytest.approx(B / (1 - A), abs=1e-12)
    assert fp.multiplier == pytest.approx(A, abs=1e-12)
    assert fp.multiplier_fd == pytest.approx(A, abs=1e-7)


def test_near_parabolic_guard():
    p = ref1(gamma=2.0 ** (5.0 / 3.0))
    with pytest.raises(NearParabolicError):
        fixed_point(p, 20, 12)


def test_fixed_point_under_small_tails():
    base = fixed_point(ref1(), 20, 12)
    fp = fixed_point(ref1(tails=TailSpec(c_g=1e-4)), 20, 12)
    assert np.max(np.abs(fp.point - base.point)) <= 1e-4
    assert abs(fp.multiplier - base.multiplier) <= 1e-3
    assert abs(fp.multiplier - fp.multiplier_fd) < 1e-6


def test_residual_decreases_along_P_N():
    # local tails give the o(1) part of the residual; transition tails add an O(delta^2) floor
    p = ref1(tails=TailSpec(c_g=1e-3))
    chosen = build_P_N(ref1(), N=5, k_max=40)
    assert [(q.k, q.m) for q in chosen] == [(20, 12), (28, 17), (39, 24)]
    pts = np.random.default_rng(3).uniform(-0.1, 0.1, (64, 3))
    res = []
    for pr in chosen:
        A, B = affine(pr.k, pr.m)
        out = compose_T_km(p, pr.k, pr.m)(pts)
        res.append(float(np.max(np.abs(out[:, 0] - (A * pts[:, 0] + B)))))
    assert res[0] > res[1] > res[2]


def test_batch_normal_form_matches_cross_map():
    p = ref1(tails=TailSpec(c_t=1e-3))
    pts = np.random.default_rng(4).uniform(-0.1, 0.1, (30, 3))
    ks = np.array([20, 39])
    ms = np.array([12, 24])
    sel = np.arange(30) % 2
    batch = NormalFormBatch(p, ks, ms).cross(pts, sel)
    for i in range(30):
        ref = CrossMap(p, ks[sel[i]], ms[sel[i]])(pts[i])
        np.testing.assert_allclose(batch[i], ref, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=3, max_size=3))
def test_cross_form_equals_literal(pt):
    p = ref1()
    a = CrossMap(p, 20, 12)(pt)
    b = LiteralReturn(p, 20, 12)(pt)
    assert np.max(np.abs(a - b)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.1, 0.1), st.sampled_from([(20, 12), (39, 24), (28, 17)]))
def test_zero_tail_cross_is_affine(X, pair):
    A, B = affine(*pair)
    assert CrossMap(ref1(), *pair)([X, 0.0, 0.0])[0] == pytest.approx(A * X + B, abs=1e-15)
