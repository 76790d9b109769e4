import math
import random

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from blab.cycle_analysis import (
    DegenerateCycleError, PreconditionError, activation_intervals, compute_moduli, cycle_type, focus_sequences,
    interval_s, interval_u, rational_theta_check, regime_report, secondary_cycle_mu, sweep_mu, theorem_side,
    theta_prime_estimate,
)
from blab.cycle_model import ref1, ref2, ref_df, ref_sf
from blab.return_map import focus_phases


def test_reference_moduli():
    theta, alpha, kind = compute_moduli(ref1())
    assert theta == pytest.approx(0.6309298, abs=1e-7)
    assert theta == math.log(2) / math.log(3)
    assert (alpha, kind) == (0.5, "I")
    assert cycle_type(ref1(a=-1.0)) == "II"
    assert cycle_type(ref1(lam=-0.5, P2=[[0.2]])) == "III"


def test_degenerate_type():
    with pytest.raises(DegenerateCycleError):
        compute_moduli(ref1(x_plus=[0.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(-6, 6), st.integers(-6, 6))
def test_alpha_invariant_under_rescaling(ex, eu):
    cx, cu = 2.0**ex, 2.0**eu
    p = ref1(b=0.7, x_plus=[0.9], u_minus=[0.45])
    q = p.with_updates(b=p.b * cx / cu, x_plus=[cx * 0.9], u_minus=[cu * 0.45])
    assert q.alpha == p.alpha


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_alpha_invariant_under_any_rescaling(cx, cu):
    p = ref1(b=0.7, x_plus=[0.9], u_minus=[0.45])
    q = p.with_updates(b=p.b * cx / cu, x_plus=[cx * 0.9], u_minus=[cu * 0.45])
    assert q.alpha == pytest.approx(p.alpha, rel=4e-16)


def test_type_under_heteroclinic_images():
    p = ref1()
    q = p.with_updates(x_plus=[p.lam * p.x_plus[0]], u_minus=[p.gamma * p.u_minus[0]])
    assert cycle_type(q) == cycle_type(p) == "I"
    n = ref1(lam=-0.5, P2=[[0.2]])
    # with a negative central multiplier the sign of a x+ u- flips at each step
    signs = []
    x = n.x_plus[0]
    for _ in range(3):
        signs.append(math.copysign(1, n.a * x * n.u_minus[0]))
        x *= n.lam
    assert signs == [1, -1, 1]


def test_rational_reference_fails_rare1():
    rep = rational_theta_check(ref2())
    assert rep.rational and rep.approximant == (1, 2)
    assert rep.rare1.applicable and rep.rare1.passed is False
    assert rep.rare1.nearest["s"] == 0 and rep.rare1.distance == 0.0


def test_rational_reference_passes_rare1_off_lattice():
    rep = rational_theta_check(ref2(b=1.3))
    assert rep.rare1.passed
    assert rep.rare1.distance == pytest.approx(0.3, abs=1e-12)


def test_irrational_best_approximant():
    rep = rational_theta_check(ref1(), max_den=20)
    assert not rep.rational
    assert rep.approximant == (12, 19)
    assert rep.approximant_error == pytest.approx(abs(12 / 19 - math.log(2) / math.log(3)), rel=1e-12)
    assert rep.approximant_error == pytest.approx(6.49e-4, abs=1e-6)
    assert not rep.rare1.applicable and not rep.rare2.applicable


def test_activation_endpoints():
    u = interval_u(ref1(), 5)
    assert u.lo == pytest.approx(0.5 / 243 - 0.5 * 0.01 / 243, rel=1e-15)
    assert u.hi == pytest.approx(0.5 / 243 + 0.5 * 0.01 / 243, rel=1e-15)
    s = interval_s(ref1(), 5)
    assert s.centre == pytest.approx(-0.03125, abs=1e-17)
    assert s.half_width == pytest.approx(1.5625e-4, rel=1e-12)


def test_activation_hits():
    idx = range(1, 20)
    assert [(h.family, h.index) for h in activation_intervals(ref1(), idx, mu=2.05e-3)["hits"]] == [("u", 5)]
    assert [(h.family, h.index) for h in activation_intervals(ref1(), idx, mu=-0.03125)["hits"]] == [("s", 5)]
    assert activation_intervals(ref1(), idx, mu=0.0)["hits"] == []


def test_interval_families_disjoint():
    for fam in (interval_u, interval_s):
        ivs = sorted((fam(ref1(), i) for i in range(1, 25)), key=lambda v: v.lo)
        assert all(a.hi < b.lo for a, b in zip(ivs, ivs[1:]))


def test_theorem_sides():
    assert theorem_side(ref1(), -0.01) == "Wu(L1)-leaves-U"
    assert theorem_side(ref1(), 0.01) == "no-heterodimensional-dynamics"


def test_sweep_negative_side_and_hits():
    rows = sweep_mu(ref1(), (-0.05, -1e-6), resolution=101)
    assert all(r.theorem_side == "Wu(L1)-leaves-U" for r in rows)
    hit = sweep_mu(ref1(), [2.05e-3, -0.03125])
    assert [(r.hit_family, r.index) for r in hit] == [("u", 5), ("s", 5)]


def test_sweep_labels_independent_of_order():
    mus = [(-1) ** i * 10.0 ** (-1 - i / 7) for i in range(60)] + [2.05e-3, -0.03125]
    base = {r.mu: (r.label, r.theorem_side, r.hit_family) for r in sweep_mu(ref1(), mus)}
    shuffled = mus[:]
    random.Random(5).shuffle(shuffled)
    again = {r.mu: (r.label, r.theorem_side, r.hit_family) for r in sweep_mu(ref1(), shuffled)}
    assert base == again


def test_secondary_cycle_values():
    rows = secondary_cycle_mu(ref1(a=-1.0), [(20, 12), (39, 24)])
    r0, r1 = rows
    assert r0.mu_a == pytest.approx(2.0**-20, rel=1e-14)
    assert r0.mu_b == pytest.approx(9.40838e-7, rel=1e-5)
    assert r0.relative_discrepancy == pytest.approx(0.01346, abs=1e-4)
    # the two closed forms agree only to the o(1) set by the pair's balance error
    assert r1.relative_discrepancy > r0.relative_discrepancy


def test_secondary_cycle_guards():
    with pytest.raises(PreconditionError, match="not within"):
        secondary_cycle_mu(ref1(a=-1.0), [(10, 3)])
    with pytest.raises(PreconditionError, match="type-II"):
        secondary_cycle_mu(ref1(), [(20, 12)])


def test_theta_prime():
    t = theta_prime_estimate(ref1(a=-1.0), 10)
    assert t.leading == pytest.approx(0.06309, abs=1e-5)
    assert t.gamma_prime == pytest.approx(-0.5 * 3.0**10, rel=1e-15)
    assert t.direct == pytest.approx(math.log(2) / math.log(0.5 * 3**10), rel=1e-14)
    one = theta_prime_estimate(ref1(a=-1.0, u_minus=[1.5 / 3.0]), 1)
    assert abs(one.gamma_prime) == pytest.approx(1.5) and one.direct > 0
    with pytest.raises(PreconditionError):
        theta_prime_estimate(ref1(a=-1.0), 0)
    with pytest.raises(PreconditionError, match="too small"):
        theta_prime_estimate(ref1(a=-1.0, u_minus=[0.1]), 1)


def test_saddle_focus_sequence_reverified():
    p = ref_sf()
    seq = focus_sequences(p, bound=10_000)
    assert seq.indices
    ph = focus_phases(p)
    with mpmath.workdps(40):
        w = mpmath.mpf(p.omega)
        for k in seq.indices:
            r = ph["B"] * mpmath.sin(k * w + ph["eta2"]) / (ph["A"] * mpmath.sin(k * w + ph["eta1"]))
            assert abs(r) < p.q * p.delta / 2


def test_double_focus_sequence():
    seq = focus_sequences(ref_df(), bound=10_000, tol=0.05)
    assert len(seq.indices) > 10
    assert all(abs(v) < 0.05 for v in seq.values)


def test_double_focus_pole_target():
    seq = focus_sequences(ref_df(u_minus=[0.5, 0.0]), bound=2000, tol=0.05)
    assert any("pole" in n for n in seq.notes)
    assert all(abs(v) < 0.05 for v in seq.values)


def test_rational_rotation_advisory():
    seq = focus_sequences(ref_sf(omega=2 * math.pi / 3), bound=100)
    assert "1/3" in seq.advisory
    assert len({k % 3 for k in seq.indices}) <= 3


def test_regime_report_json():
    rep = regime_report(ref1())
    d = rep.to_dict()
    assert d["type"] == "I" and d["alpha"] == 0.5 and not d["theta_rational"]
    assert rep.to_json() == regime_report(ref1()).to_json()
