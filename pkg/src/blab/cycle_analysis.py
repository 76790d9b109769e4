"""Invariants of a cycle and the regime predictions that follow from them.

Everything here is closed-form evaluation: the moduli theta and alpha, the
sign type, arithmetic conditions for rational theta, the mu-intervals where
the unstable manifold of O1 or the stable manifold of O2 is pushed across the
box, and index sequences for the focus cases.  Labels are predictions read off
the sign analysis, not verified dynamics, unless a blender certificate is
attached.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from .covering_engine import rational_advisory
from .cycle_model import CycleParams, MultiplierCase, focus_phases, validate_nondegeneracy

VIOLATION_TOL = 1e-9
RARE2_GRID = 64

LABEL_TRIVIAL = "hyperbolic-trivial"
LABEL_O1 = "O1-related"
LABEL_O2 = "O2-related"
LABEL_ROBUST = "robust-heterodimensional-candidate"
LABEL_CERTIFIED = "robust-heterodimensional-certified"
LABEL_UNCLASSIFIED = "unclassified"


class DegenerateCycleError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# moduli


def compute_moduli(params: CycleParams) -> tuple[float, float | None, str | None]:
    """(theta, alpha, type).  alpha and type are defined for real central multipliers only."""
    report = validate_nondegeneracy(params)
    if not report.passed:
        failed = [k for k, v in report.conditions.items() if not v]
        raise DegenerateCycleError(f"cycle is degenerate: {', '.join(failed)} failed")
    theta = params.theta
    if params.case is not MultiplierCase.SADDLE:
        return theta, None, None
    return float(theta), float(params.alpha), cycle_type(params)


def cycle_type(params: CycleParams) -> str:
    if params.lam < 0 or params.gamma < 0:
        return "III"
    sign = params.a * params.x_plus[0] * params.u_minus[0]
    if sign == 0:
        raise DegenerateCycleError("a * x+ * u- vanishes; the type is undefined")
    return "I" if sign > 0 else "II"


# ---------------------------------------------------------------------------
# rational theta


@dataclass
class RareVerdict:
    applicable: bool
    passed: bool | None
    distance: float | None
    nearest: dict[str, Any] | None = None
    note: str = ""


@dataclass
class RareReport:
    theta: float
    approximant: tuple[int, int]
    approximant_error: float
    rational: bool
    rare1: RareVerdict
    rare2: RareVerdict
    max_den: int

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["approximant"] = list(self.approximant)
        return d


def rational_theta_check(params: CycleParams, max_den: int = 10**6) -> RareReport:
    """Best p/q for theta with q <= max_den, and both arithmetic conditions when theta is rational.

    theta counts as rational when p/q reproduces it to 16 ulps.  rare1 scans
    the finitely many s with |gamma|^(s/q) near |ab|; rare2 scans l, n <= 64
    together with the closure families l -> oo, n -> oo and both.
    """
    theta = params.theta
    frac = Fraction(theta).limit_denominator(max_den)
    err = abs(float(frac) - theta)
    exact = rational_advisory(theta, max_den)
    if exact is None:
        na = RareVerdict(False, None, None, note="theta is irrational at working precision")
        return RareReport(theta, (frac.numerator, frac.denominator), err, False, na, na, max_den)
    if params.case is not MultiplierCase.SADDLE:
        na = RareVerdict(False, None, None, note="conditions are stated for real central multipliers")
        return RareReport(theta, (exact.numerator, exact.denominator), 0.0, True, na, na, max_den)
    q = exact.denominator
    g = abs(params.gamma)
    ab = abs(params.a * params.b)
    step = g ** (1.0 / q)
    # rare1: |gamma|^(s/q) inside [|ab| / step, |ab| * step]
    s_mid = math.log(ab) / math.log(step)
    cands = range(math.floor(s_mid) - 1, math.ceil(s_mid) + 2)
    vals = [(abs(ab - step ** s), s) for s in cands]
    d1, s1 = min(vals)
    d1 = float(d1)
    rare1 = RareVerdict(True, d1 >= VIOLATION_TOL, d1, {"s": int(s1), "value": float(step ** s1)},
                        "violated at tolerance" if d1 < VIOLATION_TOL else "")
    rare2 = _rare2(params, step, q)
    return RareReport(theta, (exact.numerator, exact.denominator), 0.0, True, rare1, rare2, max_den)


def _rare2(params: CycleParams, step: float, q: int) -> RareVerdict:
    lam, gam = params.lam, params.gamma
    target = float(abs(params.u_minus[0] / (params.a * params.x_plus[0])))
    ls = np.arange(1, RARE2_GRID + 1, dtype=float)
    ns = np.arange(1, RARE2_GRID + 1, dtype=float)
    num = 1.0 - lam ** ls
    den = 1.0 - gam ** (-ns)
    factors = {"grid": (num[:, None] / den[None, :]).ravel(),
               "l->oo": 1.0 / den,
               "n->oo": num,
               "l,n->oo": np.array([1.0])}
    labels = {"grid": [(int(l), int(n)) for l in ls for n in ns],
              "l->oo": [(None, int(n)) for n in ns],
              "n->oo": [(int(l), None) for l in ls],
              "l,n->oo": [(None, None)]}
    best = (math.inf, None)
    for fam, f in factors.items():
        ok = f > 0
        if not np.any(ok):
            continue
        # s with step^s * f near the target
        s_mid = np.log(target / f[ok]) / math.log(step)
        for shift in (-1, 0, 1):
            s = np.round(s_mid) + shift
            val = step ** s * f[ok]
            dist = np.abs(val - target)
            i = int(np.argmin(dist))
            if dist[i] < best[0]:
                idx = np.nonzero(ok)[0][i]
                l, n = labels[fam][idx]
                best = (float(dist[i]), {"family": fam, "s": int(s[i]), "l": l, "n": n, "value": float(val[i])})
    d, where = best
    return RareVerdict(True, d >= VIOLATION_TOL, d, where,
                       f"grid l, n <= {RARE2_GRID} plus closure families"
                       + ("; violated at tolerance" if d < VIOLATION_TOL else ""))


# ---------------------------------------------------------------------------
# activation intervals


@dataclass(frozen=True)
class ActivationInterval:
    family: str          # "u": I^u_m, "s": I^s_k
    index: int
    lo: float
    hi: float

    @property
    def centre(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, mu: float, kappa: float = 0.0) -> bool:
        """Membership in the interval shrunk by kappa half-widths from each end."""
        r = (1.0 - kappa) * self.half_width
        return abs(mu - self.centre) < r

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "index": self.index, "lo": self.lo, "hi": self.hi}


def interval_u(params: CycleParams, m: int) -> ActivationInterval:
    g = params.gamma ** (-m)
    c = float(g * params.u_minus[0])
    h = float(0.5 * abs(g / params.b) * params.delta_prime)
    return ActivationInterval("u", m, c - h, c + h)


def interval_s(params: CycleParams, k: int) -> ActivationInterval:
    lk = params.a * params.lam ** k
    c = float(-lk * params.x_plus[0])
    h = float(0.5 * abs(lk) * params.delta_prime)
    return ActivationInterval("s", k, c - h, c + h)


def activation_intervals(params: CycleParams, indices: Iterable[int] | int, mu: float | None = None
                         ) -> dict[str, Any]:
    """I^u_m and I^s_k for the given indices (an int n means 1..n), with the ones containing mu."""
    if params.case is not MultiplierCase.SADDLE:
        raise PreconditionError("activation intervals are defined for real central multipliers")
    idx = list(range(1, indices + 1)) if isinstance(indices, int) else [int(i) for i in indices]
    mu = params.mu if mu is None else mu
    Iu = [interval_u(params, m) for m in idx]
    Is = [interval_s(params, k) for k in idx]
    hits = [iv for iv in Iu + Is if iv.contains(mu)]
    return {"u": Iu, "s": Is, "mu": mu, "hits": hits}


def _nearest_index(params: CycleParams, mu: float, family: str) -> int:
    if family == "u":
        scale, base = abs(params.u_minus[0]), abs(params.gamma)
        e = math.log(scale / abs(mu)) / math.log(base)
    else:
        scale, base = abs(params.a * params.x_plus[0]), abs(params.lam)
        e = math.log(abs(mu) / scale) / math.log(base)
    return max(1, int(round(e)))


def _hits_at(params: CycleParams, mu: float, kappa: float = 0.0) -> list[ActivationInterval]:
    if mu == 0.0:
        return []
    out = []
    for fam, make in (("u", interval_u), ("s", interval_s)):
        n0 = _nearest_index(params, mu, fam)
        for i in range(max(1, n0 - 1), n0 + 2):
            iv = make(params, i)
            if iv.contains(mu, kappa):
                out.append(iv)
    return out


# ---------------------------------------------------------------------------
# regime labels


def theorem_side(params: CycleParams, mu: float) -> str:
    """Which alternative of the sign dichotomy for type-I cycles with positive multipliers mu falls on."""
    if params.case is not MultiplierCase.SADDLE or cycle_type(params) != "I":
        return "not-applicable"
    u_side = math.copysign(1.0, params.u_minus[0])
    if abs(params.alpha) < 1:
        if mu != 0 and math.copysign(1.0, mu) == u_side:
            return "no-heterodimensional-dynamics"
        return "Wu(L1)-leaves-U"
    if mu != 0 and math.copysign(1.0, mu) == -u_side:
        return "no-heterodimensional-dynamics"
    return "Ws(L2)-leaves-U"


def regime_label(params: CycleParams, hits: Sequence[ActivationInterval], theta_rational: bool,
                 rare_hold: bool, certified: bool = False, mu: float | None = None) -> str:
    """Prediction from the sign pattern, the interval hits and the arithmetic of theta."""
    mu = params.mu if mu is None else mu
    if theta_rational and rare_hold:
        return LABEL_TRIVIAL
    if params.case is not MultiplierCase.SADDLE or cycle_type(params) != "I":
        return LABEL_UNCLASSIFIED
    small = abs(params.alpha) < 1
    fams = {iv.family for iv in hits}
    if not theta_rational:
        related, other = ("u", "s") if small else ("s", "u")
        if related in fams:
            return LABEL_O1 if small else LABEL_O2
        if other in fams:
            return LABEL_CERTIFIED if certified else LABEL_ROBUST
    if theorem_side(params, mu) == "no-heterodimensional-dynamics":
        return LABEL_TRIVIAL
    return LABEL_UNCLASSIFIED


@dataclass
class RegimeReport:
    theta: float
    approximant: tuple[int, int]
    approximant_error: float
    theta_rational: bool
    alpha: float | None
    type: str | None
    rare1: dict[str, Any]
    rare2: dict[str, Any]
    mu: float
    hits: list[dict[str, Any]]
    label: str
    theorem_side: str
    certified: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["approximant"] = list(self.approximant)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def regime_report(params: CycleParams, max_den: int = 10**6, certified: bool = False, kappa: float = 0.1
                  ) -> RegimeReport:
    theta, alpha, kind = compute_moduli(params)
    rare = rational_theta_check(params, max_den)
    notes = []
    if params.case is MultiplierCase.SADDLE:
        hits = _hits_at(params, params.mu, kappa)
        rare_hold = bool(rare.rare1.passed and rare.rare2.passed)
        label = regime_label(params, hits, rare.rational, rare_hold, certified)
        side = theorem_side(params, params.mu)
    else:
        hits, label, side = [], LABEL_UNCLASSIFIED, "not-applicable"
        notes.append("focus case: see focus_sequences for the index sequences")
    if not certified and label == LABEL_ROBUST:
        notes.append("label is a prediction from the sign analysis; no blender certificate attached")
    return RegimeReport(theta, rare.approximant, rare.approximant_error, rare.rational, alpha, kind,
                        asdict(rare.rare1), asdict(rare.rare2), params.mu, [iv.to_dict() for iv in hits],
                        label, side, certified, notes)


# ---------------------------------------------------------------------------
# mu sweep


@dataclass
class SweepRow:
    mu: float
    hit_family: str
    index: int
    rescaled_value: float
    label: str
    theorem_side: str


SWEEP_COLUMNS = ("mu", "hit_family", "index", "rescaled_value", "label", "theorem_side")


def sweep_mu(params: CycleParams, mu_range: tuple[float, float] | Sequence[float], resolution: int = 201,
             kappa: float = 0.0, certified: bool = False, max_den: int = 10**6) -> list[SweepRow]:
    """Regime table over mu: interval hits, rescaled coordinate and label for each sample.

    ``mu_range`` is a tuple (lo, hi) sampled at ``resolution`` points; a list
    or array is taken as the explicit sample values.
    """
    if params.case is not MultiplierCase.SADDLE:
        raise PreconditionError("mu sweeps are defined for real central multipliers")
    if isinstance(mu_range, tuple):
        if len(mu_range) != 2:
            raise ValueError("a mu range tuple must be (lo, hi)")
        mus = np.linspace(float(mu_range[0]), float(mu_range[1]), resolution)
    else:
        mus = np.asarray(mu_range, dtype=float)
    rare = rational_theta_check(params, max_den)
    rare_hold = bool(rare.rare1.passed and rare.rare2.passed)
    rows = []
    for mu in mus:
        mu = float(mu)
        hits = _hits_at(params, mu, kappa)
        label = regime_label(params, hits, rare.rational, rare_hold, certified, mu=mu)
        side = theorem_side(params, mu)
        if hits:
            iv = hits[0]
            fam = "both" if len({h.family for h in hits}) > 1 else iv.family
            index = iv.index
            family = iv.family
        else:
            fam = "none"
            family = "u" if mu != 0 and math.copysign(1.0, mu) == math.copysign(1.0, params.u_minus[0]) else "s"
            index = _nearest_index(params, mu, family) if mu != 0 else 0
        if mu == 0:
            rescaled = 0.0
        elif family == "u":
            rescaled = mu * params.gamma ** index
        else:
            rescaled = mu * params.lam ** (-index)
        rows.append(SweepRow(mu, fam, int(index), float(rescaled), label, side))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([f"{r.mu:.17g}", r.hit_family, r.index, f"{r.rescaled_value:.17g}", r.label, r.theorem_side])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# type-II estimates


@dataclass
class SecondaryMu:
    k: int
    m: int
    mu_a: float
    mu_b: float
    discrepancy: float
    relative_discrepancy: float
    limit_error: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def secondary_cycle_mu(params: CycleParams, pairs: Iterable[Any], rel_tol: float = 0.05) -> list[SecondaryMu]:
    """Both leading-order values of mu at which the secondary cycle of pair (k, m) appears.

    mu_a = -a x+ lambda^k and mu_b = u- gamma^(-m); they agree in the limit
    a b lambda^k gamma^m -> -alpha, which each pair must satisfy to
    ``rel_tol``.
    """
    if params.case is not MultiplierCase.SADDLE or cycle_type(params) != "II":
        raise PreconditionError("secondary-cycle values need type-II data (a x+ u- < 0)")
    al = params.alpha
    out = []
    for pair in pairs:
        k, m = (pair.k, pair.m) if hasattr(pair, "k") else (int(pair[0]), int(pair[1]))
        prod = params.a * params.b * params.lam ** k * params.gamma ** m
        lim = abs(prod + al) / abs(al)
        if lim > rel_tol:
            raise PreconditionError(f"pair ({k}, {m}): a b lambda^k gamma^m = {prod:.6g} is not within "
                                    f"{rel_tol:g} of -alpha = {-al:.6g}")
        mu_a = -params.a * params.x_plus[0] * params.lam ** k
        mu_b = params.u_minus[0] * params.gamma ** (-m)
        mu_a, mu_b = float(mu_a), float(mu_b)
        out.append(SecondaryMu(k, m, mu_a, mu_b, abs(mu_a - mu_b), abs(mu_a - mu_b) / abs(mu_a), float(lim)))
    return out


@dataclass
class ThetaPrime:
    m_star: int
    leading: float
    gamma_prime: float
    direct: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def theta_prime_estimate(params: CycleParams, m_star: int) -> ThetaPrime:
    """theta/m* and -ln|lambda| / ln|gamma'| with gamma' = -(b u- / x+) gamma^m*."""
    if m_star < 1:
        raise PreconditionError("m_star must be at least 1")
    if params.case is not MultiplierCase.SADDLE:
        raise PreconditionError("the estimate is stated for real central multipliers")
    gp = -(params.b * params.u_minus[0] / params.x_plus[0]) * params.gamma ** m_star
    if abs(gp) <= 1.0:
        raise PreconditionError(f"|gamma'| = {abs(gp):.6g} <= 1: m_star = {m_star} is too small")
    gp = float(gp)
    return ThetaPrime(m_star, params.theta / m_star, gp, -math.log(abs(params.lam)) / math.log(abs(gp)))


# ---------------------------------------------------------------------------
# focus cases


@dataclass
class FocusSequence:
    kind: str
    indices: list[int]
    values: list[float]
    bound: int
    threshold: float
    advisory: str = ""
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _rotation_advisory(omega: float) -> str:
    frac = rational_advisory(omega / (2 * math.pi), max_den=1000, tol=1e-12)
    if frac is None:
        return ""
    return (f"omega/2pi = {frac.numerator}/{frac.denominator} is rational: the phases take at most "
            f"{frac.denominator} values and the sequence is periodic or empty")


def focus_sequences(params: CycleParams, bound: int = 10_000, tol: float = 0.05) -> FocusSequence:
    """Indices <= bound that put the focus preimages/images inside the box.

    Saddle-focus: k with |B sin(k w + eta2) / (A sin(k w + eta1))| < q delta / 2.
    Double-focus: m with |tan(m w2 + eta3) + u1- / u2-| < tol; when u2- = 0
    the target is a pole and |cot(m w2 + eta3)| < tol is used instead.
    """
    ph = focus_phases(params)
    notes: list[str] = []
    if params.case is MultiplierCase.SADDLE_FOCUS:
        thr = params.q * params.delta / 2
        k = np.arange(1, bound + 1)
        s1 = np.sin(k * params.omega + ph["eta1"])
        s2 = np.sin(k * params.omega + ph["eta2"])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = ph["B"] * s2 / (ph["A"] * s1)
        ok = (np.abs(s1) > 1e-12) & (np.abs(ratio) < thr)
        idx = [int(v) for v in k[ok]]
        vals = []
        for kk in idx:
            # re-evaluate each hit with scalar sines
            r = ph["B"] * math.sin(kk * params.omega + ph["eta2"]) / (ph["A"] * math.sin(kk * params.omega + ph["eta1"]))
            if not abs(r) < thr:
                raise AssertionError(f"k = {kk} fails scalar re-verification")
            vals.append(r)
        adv = _rotation_advisory(params.omega)
        if not idx:
            adv = (adv + "; " if adv else "") + "no index up to the bound meets the threshold"
        return FocusSequence("saddle-focus k", idx, vals, bound, thr, adv, notes)
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        u1, u2 = params.u_minus[0], params.u_minus[1]
        m = np.arange(1, bound + 1)
        phase = m * params.omega2 + ph["eta3"]
        c, s = np.cos(phase), np.sin(phase)
        if u2 == 0.0:
            notes.append("u2- = 0: the target of tan is a pole; |cot| < tol is used instead")
            ok = (np.abs(s) > 1e-6) & (np.abs(c / np.where(s == 0, 1.0, s)) < tol)
            vals = c[ok] / s[ok]
        else:
            ok = (np.abs(c) > 1e-6) & (np.abs(s / np.where(c == 0, 1.0, c) + u1 / u2) < tol)
            vals = s[ok] / c[ok] + u1 / u2
        adv = _rotation_advisory(params.omega2)
        if not np.any(ok):
            adv = (adv + "; " if adv else "") + "no index up to the bound meets the tolerance"
        return FocusSequence("double-focus m", [int(v) for v in m[ok]], [float(v) for v in vals], bound, tol,
                             adv, notes)
    raise PreconditionError("focus sequences need a focus case")
