import json

import numpy as np
import pytest

from blab.blender_verifier import (
    Disc, PreimageError, disc_cone, is_proper_crossing, perturb_transitions, preimage_step, verify_blender,
    wu_membership,
)
from blab.covering_engine import build_covering_set, verify_covering
from blab.cycle_model import TailSpec, ref1
from blab.return_map import return_coeffs


@pytest.fixture(scope="module")
def setup():
    p = ref1()
    return p, build_covering_set(p, k_max=150)


@pytest.fixture(scope="module")
def cert(setup):
    p, c = setup
    return verify_blender(p, c, trials=3, depth=30, seed=1)


def test_constant_disc_is_proper(setup):
    p, c = setup
    rep = is_proper_crossing(Disc.constant(0.005, [0.0], p.delta, 1), (c.delta_prime, p.delta), disc_cone(p))
    assert rep.proper and rep.max_slope == 0.0
    assert rep.margin == pytest.approx(p.q * p.alpha / 4)


def test_steep_disc_is_not_proper(setup):
    p, c = setup
    steep = Disc.from_function(lambda Z: np.column_stack([0.5 * Z[:, 0], 0 * Z[:, 0]]), p.delta, 1)
    rep = is_proper_crossing(steep, (c.delta_prime, p.delta), disc_cone(p))
    assert not rep.proper
    assert rep.max_slope == pytest.approx(0.5, abs=1e-8)


def test_preimage_of_constant_disc(setup):
    p, c = setup
    res = preimage_step(Disc.constant(0.005, [0.0], p.delta, 1), c, p)
    assert res.pair == (20, 12)
    co = return_coeffs(p, 20, 12)
    X = (0.005 - co.B_km) / co.A_km
    assert X == pytest.approx(-0.0035942, abs=1e-7)
    np.testing.assert_allclose(res.disc.values[:, 0], X, atol=1e-12)
    assert res.proper.proper
    assert res.z_rate < 1e-3


def test_thinned_cover_reports_margin(setup):
    p, c = setup
    thin = c.without(4).without(4)
    assert not verify_covering(thin).passed
    with pytest.raises(PreimageError, match="margin"):
        preimage_step(Disc.constant(0.0, [0.0], p.delta, 1), thin, p)


def test_reference_certificate(cert):
    assert cert.passed and cert.pass_count == 3
    for r in cert.records:
        D = np.array(r.log10_diameters)
        steps = np.diff(D)
        assert np.all(steps < 0)
        assert np.all(steps <= -2.0)
        assert D[-1] < -10
        assert r.membership


def test_depth_zero_flagged(setup):
    p, c = setup
    z = verify_blender(p, c, trials=2, depth=0)
    assert not z.passed
    assert "no refinement" in z.flags


def test_witness_membership(setup, cert):
    p, _ = setup
    r = cert.records[0]
    assert wu_membership(r.witness, r.pairs, p).member
    w = np.array(r.witness)
    w[0] += 0.002
    moved = wu_membership(w, r.pairs, p)
    assert not moved.member and moved.failing_step is not None
    out = wu_membership([0.05, 0.0, 0.0], [(20, 12)] * 5, p)
    assert not out.member and out.failing_step == 1 and not out.start_in_box


def test_certificate_deterministic(setup):
    p, c = setup
    a = verify_blender(p, c, trials=1, depth=15, seed=7)
    b = verify_blender(p, c, trials=1, depth=15, seed=7)
    assert a.to_json() == b.to_json()
    assert a.diameters_csv() == b.diameters_csv()
    assert json.loads(a.to_json())["passed"] == a.passed


def test_transition_tails_and_literal_replay():
    p = ref1(tails=TailSpec(c_t=0.05))
    c = build_covering_set(p, k_max=150)
    cert = verify_blender(p, c, trials=2, depth=30, literal_checks=1)
    assert cert.passed
    assert cert.records[0].literal_discrepancy < 1e-12


def test_perturbed_transitions_reuse_cover(setup):
    p, c = setup
    q = perturb_transitions(p, 1e-3, seed=0)
    assert q.a != p.a
    assert verify_blender(q, c, trials=2, depth=30, seed=0).passed


def test_diameters_csv_shape(cert):
    lines = cert.diameters_csv().splitlines()
    assert lines[0] == "trial,step,k,m,log10_diameter,z_rate"
    assert len(lines) == 1 + 3 * 31
