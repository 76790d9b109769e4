import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab.cone_checker import ConeReport, ConeSpec, Orientation, check_all_cones, check_cone_invariance, jacobian
from blab.covering_engine import build_P_N
from blab.cycle_model import TailSpec, ref1
from blab.return_map import CrossMap, ModelChain, return_coeffs


@pytest.fixture(scope="module")
def ref1_cones():
    return check_all_cones(ref1(), 20, 12, K=0.1, samples=4000)


def test_identity_jacobian():
    np.testing.assert_allclose(jacobian(lambda v: v, np.array([0.1, -0.2, 0.3]), 1e-6), np.eye(3), atol=1e-10)


def test_cross_map_jacobian_is_block_diagonal():
    A = return_coeffs(ref1(), 20, 12).A_km
    J = jacobian(CrossMap(ref1(), 20, 12), np.zeros(3), 1e-7)
    assert J[0, 0] == pytest.approx(A, abs=1e-8)
    assert np.max(np.abs(J[0, 1:])) < 1e-8
    assert np.max(np.abs(J[1:, 0])) < 1e-8


def test_step_halving_error_ratio():
    p = ref1(tails=TailSpec(c_g=0.05, c_t=0.05))
    chain = ModelChain(p, ["F1"] * 3 + ["F12"])
    pt = np.array([0.3, 0.125, 0.3])
    exact = chain.jacobian(pt)
    e1 = np.max(np.abs(jacobian(chain, pt, 4e-3) - exact))
    e2 = np.max(np.abs(jacobian(chain, pt, 2e-3) - exact))
    assert e1 / e2 == pytest.approx(4.0, abs=0.05)


def test_all_four_cones_pass_with_margin(ref1_cones):
    for name, rep in ref1_cones.items():
        assert rep.pass_fraction == 1.0, name
        assert rep.worst_margin >= 0.5, name


def test_ss_contraction_and_cs_rate(ref1_cones):
    assert ref1_cones["ss"].forward_factor_max < 1e-3
    A = return_coeffs(ref1(), 20, 12).A_km
    assert ref1_cones["cs"].forward_factor_max == pytest.approx(A, abs=1e-2)
    # backward, the central component grows by about 1/A
    assert ref1_cones["cs"].growth_min > 1.0


def test_cu_expands_when_alpha_large():
    p = ref1(u_minus=[2.5])
    pair = build_P_N(p, N=10, k_max=60)[0]
    rep = check_all_cones(p, pair.k, pair.m, samples=1000)
    assert rep["cu"].forward_factor_min > 1.0
    assert rep["cs"].pass_fraction == 1.0


def test_margins_do_not_degrade_along_P_N():
    p = ref1(tails=TailSpec(c_g=1e-2, c_t=1e-2))
    margins = []
    for k, m in [(20, 12), (28, 17), (39, 24)]:
        rep = check_all_cones(p, k, m, samples=1000)
        margins.append(min(r.worst_margin for r in rep.values()))
    assert margins[0] <= margins[1] + 1e-9 <= margins[2] + 2e-9


def test_strong_tails_wide_cone_is_data_not_error():
    p = ref1(tails=TailSpec(c_t=0.1))
    rep = check_all_cones(p, 20, 12, K=0.99, samples=500)
    assert all(0.0 <= r.pass_fraction <= 1.0 for r in rep.values())


class Rotation:
    delta = 0.1

    def __call__(self, v):
        c, s = math.cos(1.0), math.sin(1.0)
        return np.array([c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]])


def test_failing_invariance_is_reported():
    cone = ConeSpec.for_box(3, 1, 0.99, Orientation.CU)
    rep = check_cone_invariance(Rotation(), cone, samples=512)
    assert rep.pass_fraction < 1.0
    assert rep.worst_margin < 0.0


def test_no_valid_points():
    class Away:
        delta = 0.1

        def __call__(self, v):
            return v + 1.0

    with pytest.raises(ValueError, match="no valid sample points"):
        check_cone_invariance(Away(), ConeSpec.for_box(3, 1, 0.1, "cu"), samples=64)


def test_report_merge_and_json():
    a = ConeReport(1.0, 0.6, 0.5, 2.0, 10)
    b = ConeReport(0.5, 0.2, 0.4, 3.0, 30)
    m = a.merge(b)
    assert m.samples == 40
    assert m.pass_fraction == pytest.approx((10 + 15) / 40)
    assert (m.worst_margin, m.growth_min, m.growth_max) == (0.2, 0.4, 3.0)
    assert {"pass_fraction", "worst_margin", "growth_min", "growth_max", "samples"} <= set(m.to_dict())


def test_cone_spec_guards():
    with pytest.raises(ValueError):
        ConeSpec.for_box(3, 1, 1.0, "ss")
    with pytest.raises(ValueError):
        ConeSpec((0,), (1,), (3,), 0.1, "ss")


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(list(Orientation)), st.floats(0.01, 0.95), st.integers(0, 2**31 - 1))
def test_sampled_vectors_lie_in_cone(orient, K, seed):
    cone = ConeSpec.for_box(4, 2, K, orient)
    u = np.random.default_rng(seed).uniform(size=(64, 5))
    v = cone.sample(u)
    assert np.all(cone.ratio(v) <= 1.0 + 1e-12)
    assert np.all(cone.ratio(cone.extreme_rays()) <= 1.0 + 1e-12)
