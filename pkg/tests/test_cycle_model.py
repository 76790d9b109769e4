import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab.cycle_model import (
    ChartEscapeError, CycleParams, MultiplierCase, TailSpec, local_map_F1, local_map_F1_inverse, local_map_F2,
    local_map_F2_inverse, ref1, ref_df, ref_sf, transition_F12, transition_F21, validate_nondegeneracy,
)

small = st.floats(-0.2, 0.2, allow_nan=False)


def test_ref1_defaults():
    p = ref1()
    assert p.theta == pytest.approx(math.log(2) / math.log(3), abs=1e-15)
    assert p.alpha == 0.5
    assert p.delta_prime == pytest.approx(0.01)
    assert p.d2 == 2


def test_F1_linear_block_action():
    p = ref1()
    out = local_map_F1([0.2, 0.0, 0.1], p)
    np.testing.assert_allclose(out, [0.1, 0.0, 0.02], atol=0, rtol=1e-15)


def test_F1_unstable_manifold_invariant():
    p = ref1(tails=TailSpec(c_g=0.3))
    out = local_map_F1([0.0, 0.4, 0.0], p)
    np.testing.assert_array_equal(out, [0.0, 0.8, 0.0])


def test_F1_tail_value():
    # 0.5*0.2 + 0.01*0.2^2*1
    p = ref1(tails=TailSpec(c_g=0.01))
    assert local_map_F1([0.2, 1.0, 0.0], p)[0] == pytest.approx(0.1004, abs=1e-15)


def test_F2_linear_and_stable_manifold():
    p = ref1()
    np.testing.assert_allclose(local_map_F2([0.1, 0.0, 0.0], p), [0.3, 0.0, 0.0], rtol=1e-15)
    p = ref1(tails=TailSpec(c_g=0.2))
    np.testing.assert_array_equal(local_map_F2([0.0, 0.5, 0.0], p), [0.0, 0.15, 0.0])


def test_F2_double_focus_rotation():
    p = ref_df()
    out = local_map_F2([0.1, 0.0, 0.0], p)
    np.testing.assert_allclose(out[:2], [0.2 * math.cos(1.0), -0.2 * math.sin(1.0)], atol=1e-15)
    assert out[0] == pytest.approx(0.10806, abs=1e-5)
    assert out[1] == pytest.approx(-0.16829, abs=1e-5)


def test_F12_maps_heteroclinic_points():
    p = ref1()
    np.testing.assert_allclose(transition_F12(p.M1_minus, p), p.M2_plus, atol=1e-15)
    p = ref1(mu=0.001)
    assert transition_F12(p.M1_minus, p)[0] == pytest.approx(0.001, abs=1e-15)


def test_F12_affine_value():
    p = ref1()
    pt = p.M1_minus + np.array([0.05, 0.0, 0.0])
    assert transition_F12(pt, p)[0] == pytest.approx(0.05, abs=1e-15)


def test_F21_heteroclinic_and_affine():
    p = ref1()
    np.testing.assert_allclose(transition_F21(p.M2_minus, p), p.M1_plus, atol=1e-15)
    pt = p.M2_minus + np.array([0.01, 0.0, 0.0])
    assert transition_F21(pt, p)[0] == pytest.approx(1.01, abs=1e-14)


def test_nondegeneracy_ref1_and_failures():
    rep = validate_nondegeneracy(ref1())
    assert rep.passed
    assert rep.quantities["alpha"] == 0.5
    assert not validate_nondegeneracy(ref1(x_plus=[0.0])).conditions["C3"]
    # b direction parallel to x+: b11/b21 = x1/x2
    sf = ref_sf(b_ij={"b21": [[0.2]], "b22": [[1.0]], "b33": [[1.0]]})
    assert not validate_nondegeneracy(sf).conditions["C4.2"]
    assert validate_nondegeneracy(ref_sf()).passed


def test_invalid_fields_are_named():
    with pytest.raises(ValueError, match="gamma"):
        ref1(gamma=0.9)
    with pytest.raises(ValueError, match="omega"):
        ref_sf(omega=math.pi)
    with pytest.raises(ValueError, match="delta"):
        ref1(delta=0.5)
    with pytest.raises(ValueError, match="a24"):
        ref1(a_ij={"a24": [[1.0]]})


def test_chart_escape():
    with pytest.raises(ChartEscapeError):
        local_map_F1([2.0, 0.0, 0.0], ref1())


@pytest.mark.parametrize("builder", [ref1, ref_sf, ref_df])
def test_json_round_trip_bit_exact(builder):
    p = builder(mu=1.0 / 3.0, tails=TailSpec(c_g=math.pi * 1e-4, c_t=1e-3))
    q = CycleParams.from_json(p.to_json())
    assert q.to_dict() == p.to_dict()
    assert json.dumps(q.to_dict()) == json.dumps(p.to_dict())


def test_missing_field_named():
    d = ref1().to_dict()
    del d["gamma"]
    with pytest.raises(ValueError, match="gamma"):
        CycleParams.from_dict(d)


@settings(max_examples=60, deadline=None)
@given(small, small, small)
def test_F1_on_stable_manifold_is_lambda(x, y, z):
    p = ref1()
    out = local_map_F1([x, 0.0, z], p)
    assert out[0] == 0.5 * x
    assert out[1] == 0.0


@settings(max_examples=60, deadline=None)
@given(small, small, small, st.floats(0, 0.5))
def test_local_manifolds_invariant_for_any_tail(x, y, z, c_g):
    p = ref1(tails=TailSpec(c_g=c_g))
    s = local_map_F1([x, 0.0, z], p)
    assert s[1] == 0.0
    u = local_map_F1([0.0, y, 0.0], p)
    assert u[0] == 0.0 and u[2] == 0.0
    v = local_map_F2([x, 0.0, z], p)
    assert v[1] == 0.0
    w = local_map_F2([0.0, y, 0.0], p)
    assert w[0] == 0.0 and w[2] == 0.0


@settings(max_examples=40, deadline=None)
@given(small, small, small, st.floats(0, 0.2))
def test_F1_inverse_round_trip(x, y, z, c_g):
    p = ref1(tails=TailSpec(c_g=c_g))
    pt = np.array([x, y * 0.4, z])
    np.testing.assert_allclose(local_map_F1_inverse(local_map_F1(pt, p), p), pt, atol=1e-12)
    np.testing.assert_allclose(local_map_F2_inverse(local_map_F2(pt * 0.3, p), p), pt * 0.3, atol=1e-12)


def test_stable_restriction_batch_exact():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, (1000, 3))
    pts[:, 1] = 0.0
    out = local_map_F1(pts, ref1())
    np.testing.assert_array_equal(out[:, 0], 0.5 * pts[:, 0])
    sf = ref_sf()
    pts = rng.uniform(-0.3, 0.3, (1000, 3))
    pts[:, 2] = 0.0
    out = local_map_F1(pts, sf)
    expect = pts[:, :2] @ sf.central_matrix_1().T
    np.testing.assert_allclose(out[:, :2], expect, atol=1e-16)


def test_case_enum_accepts_strings():
    d = ref1().to_dict()
    assert CycleParams.from_dict(d).case is MultiplierCase.SADDLE
