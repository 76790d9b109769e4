"""Arithmetic core: (k, m) pairs realising prescribed values of lambda^k gamma^m.

Everything that certifies a covering is done on exact rationals: floating
inputs are read as the binary rationals they are, interval endpoints are
``Fraction`` objects, and enumeration hits that sit within rounding distance
of a tolerance are re-decided with mpmath at 40 digits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Any, Iterable, Sequence

import mpmath
import numpy as np

from .cycle_model import CycleParams, MultiplierCase

_LD = np.longdouble
_BORDER = 1e-12   # relative closeness to a tolerance that triggers exact re-verification
_MP_DPS = 40


class CoveringError(RuntimeError):
    pass


RATIONAL_ULPS = 16


def rational_advisory(value: float, max_den: int = 10**6, tol: float | None = None) -> Fraction | None:
    """The fraction p/q (q <= max_den) that ``value`` equals to within ``tol``, if any.

    The default tolerance is 16 ulps of ``value``: with denominators up to 1e6
    the convergents of a generic irrational already come within ~1e-12.
    """
    if tol is None:
        tol = RATIONAL_ULPS * float(np.spacing(abs(value)))
    frac = Fraction(value).limit_denominator(max_den)
    return frac if abs(float(frac) - value) <= tol else None


def _exact_decimal(fr: Fraction) -> str:
    """Exact decimal expansion of a dyadic rational (every binary float endpoint is one)."""
    if fr == 0:
        return "0"
    den = fr.denominator
    twos = (den & -den).bit_length() - 1
    if den != 1 << twos:
        raise ValueError("not a dyadic rational")
    with localcontext() as ctx:
        ctx.prec = max(50, 2 * twos + len(str(abs(fr.numerator))) + 5)
        dec = Decimal(fr.numerator) / Decimal(den)
    text = format(dec, "f")
    return text.rstrip("0").rstrip(".") if "." in text else text


# ---------------------------------------------------------------------------
# pairs


@dataclass(frozen=True)
class KmPair:
    """A pair (k, m) with the signed value lambda^k gamma^m in extended precision.

    ``exponent`` is m - k*theta, so that |lambda^k gamma^m| = |gamma|^exponent.
    """

    k: int
    m: int
    value: float | None = None
    value_ld: Any = None
    exponent: float | None = None

    @property
    def k_even(self) -> bool:
        return self.k % 2 == 0

    @property
    def m_even(self) -> bool:
        return self.m % 2 == 0

    @property
    def pair(self) -> tuple[int, int]:
        return (self.k, self.m)

    def to_dict(self) -> dict[str, Any]:
        return {"k": self.k, "m": self.m, "value": self.value, "exponent": self.exponent,
                "k_even": self.k_even, "m_even": self.m_even}


def lam_gamma_mp(lam: float, gamma: float, k: int, m: int) -> mpmath.mpf:
    with mpmath.workdps(_MP_DPS):
        return mpmath.mpf(lam) ** k * mpmath.mpf(gamma) ** m


def make_pair(lam: float, gamma: float, k: int, m: int, theta: float | None = None) -> KmPair:
    val = lam_gamma_mp(lam, gamma, k, m)
    with mpmath.workdps(_MP_DPS):
        ld = _LD(mpmath.nstr(val, 25, min_fixed=-mpmath.inf, max_fixed=mpmath.inf))
    if theta is None:
        theta = -math.log(abs(lam)) / math.log(abs(gamma))
    return KmPair(int(k), int(m), float(val), ld, float(m - k * theta))


class KmList(list):
    """List of KmPair with the search diagnostics attached."""

    best: tuple[int, int, float] | None = None
    advisory: str | None = None


# ---------------------------------------------------------------------------
# searches


def _convergents(x: float, count: int = 40) -> list[Fraction]:
    out, a_terms, y = [], [], Fraction(x)
    for _ in range(count):
        a = math.floor(y)
        a_terms.append(a)
        h0, h1, k0, k1 = 0, 1, 1, 0
        for t in a_terms:
            h0, h1 = h1, t * h1 + h0
            k0, k1 = k1, t * k1 + k0
        out.append(Fraction(h1, k1))
        frac = y - a
        if frac == 0:
            break
        y = 1 / frac
    return out


def search_km(theta: float, target: float, tol: float, k_max: int, parity: str = "any", *,
              gamma: float | None = None) -> KmList:
    """All (k, m), 1 <= k <= k_max, m >= 1, with |m - k theta - target| < tol'.

    tol' = tol when ``gamma`` is None (the tolerance is in exponent units);
    tol' = tol / ln|gamma| otherwise, i.e. a relative tolerance on
    lambda^k gamma^m.  ``parity='even'`` keeps pairs with both entries even.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if parity not in ("any", "even"):
        raise ValueError("parity must be 'any' or 'even'")
    width = tol / math.log(abs(gamma)) if gamma is not None else tol
    out = KmList()
    frac = rational_advisory(theta)
    if frac is not None:
        out.advisory = (f"theta = {frac} is rational at working precision: the values k*theta - m form a "
                        f"lattice of spacing 1/{frac.denominator} and are not dense")
        warnings.warn(out.advisory, stacklevel=2)
    ks = np.arange(1, k_max + 1, dtype=np.int64)
    # float64 bulk pass; anything within the rounding band of the tolerance is re-decided exactly
    centre = ks * theta + target
    band = 8.0 * float(np.spacing(max(abs(k_max * theta) + abs(target), 1.0))) + _BORDER * max(width, 1.0)
    m_lo = np.maximum(np.ceil(centre - width - band).astype(np.int64), 1)
    m_hi = np.floor(centre + width + band).astype(np.int64)
    span = int(np.max(m_hi - m_lo, initial=-1)) + 1
    hits: list[tuple[int, int]] = []
    for off in range(max(span, 0)):
        ms = m_lo + off
        ok = ms <= m_hi
        if not np.any(ok):
            continue
        kk, mm = ks[ok], ms[ok]
        resid = np.abs(mm - centre[ok])
        good = resid < width
        for i in np.nonzero(np.abs(resid - width) <= band)[0]:
            good[i] = _exact_check(theta, target, width, int(kk[i]), int(mm[i]))
        hits.extend(zip(kk[good].tolist(), mm[good].tolist()))
    hits.sort()
    for kk, mm in hits:
        if parity == "even" and (kk % 2 or mm % 2):
            continue
        pair = KmPair(kk, mm, exponent=float(mm - kk * theta))
        if gamma is not None:
            with mpmath.workdps(_MP_DPS):
                pair = replace(pair, value=float(mpmath.power(abs(gamma), mm - kk * mpmath.mpf(theta))))
        out.append(pair)
    if not out:
        out.best = _best_approximation(theta, target, k_max, parity)
    return out


def _exact_check(theta: float, target: float, width: float, k: int, m: int) -> bool:
    with mpmath.workdps(_MP_DPS):
        return bool(abs(mpmath.mpf(m) - k * mpmath.mpf(theta) - mpmath.mpf(target)) < mpmath.mpf(width))


def _best_approximation(theta: float, target: float, k_max: int, parity: str) -> tuple[int, int, float]:
    """Best (k, m) within the bound; convergents of theta give the homogeneous case directly."""
    if target == 0.0:
        for c in reversed(_convergents(theta)):
            if 1 <= c.denominator <= k_max and (parity == "any" or (c.denominator % 2 == 0 and c.numerator % 2 == 0)):
                return c.denominator, c.numerator, float(abs(c.numerator - c.denominator * theta))
    ks = np.arange(1, k_max + 1, dtype=np.int64)
    centre = ks.astype(_LD) * _LD(theta) + _LD(target)
    ms = np.maximum(np.rint(centre).astype(np.int64), 1)
    if parity == "even":
        ms = np.where(ms % 2 == 0, ms, np.where(centre > ms, ms + 1, ms - 1))
        ms = np.maximum(ms, 2)
        mask = ks % 2 == 0
    else:
        mask = np.ones_like(ks, dtype=bool)
    err = np.where(mask, np.abs(ms.astype(_LD) - centre), np.inf)
    i = int(np.argmin(err))
    return int(ks[i]), int(ms[i]), float(err[i])


@dataclass(frozen=True)
class SimTarget:
    """Linear form k*coefficient - n with target offset and tolerance."""

    coefficient: float
    target: float
    tol: float


class SimList(list):
    best: tuple[int, ...] | None = None
    best_error: float | None = None
    advisory: str | None = None


def search_simultaneous(targets: Sequence[SimTarget | tuple[float, float, float]], k_max: int,
                        k_min: int = 1) -> SimList:
    """Tuples (k, n_1, ..., n_r) with |k c_i - n_i - tau_i| < tol_i for every target i.

    n_i is the nearest integer to k c_i - tau_i, so the search is linear in k_max.
    """
    tg = [t if isinstance(t, SimTarget) else SimTarget(*t) for t in targets]
    if not 1 <= len(tg) <= 3:
        raise ValueError("between one and three simultaneous targets are supported")
    if any(t.tol <= 0 for t in tg):
        raise ValueError("tolerances must be positive")
    out = SimList()
    notes = []
    for i, t in enumerate(tg):
        frac = rational_advisory(t.coefficient)
        if frac is not None:
            notes.append(f"coefficient {i} = {frac} is rational: its fractional parts take only "
                         f"{frac.denominator} values, so some targets are unreachable")
    if notes:
        out.advisory = "; ".join(notes)
        warnings.warn(out.advisory, stacklevel=2)
    chunk = 1 << 20
    best_err, best = math.inf, None
    for start in range(k_min, k_max + 1, chunk):
        ks = np.arange(start, min(start + chunk, k_max + 1), dtype=np.int64)
        kl = ks.astype(_LD)
        ok = np.ones(ks.shape, dtype=bool)
        ns, errs, scaled = [], [], np.zeros(ks.shape, dtype=_LD)
        for t in tg:
            val = kl * _LD(t.coefficient) - _LD(t.target)
            n = np.rint(val)
            err = np.abs(val - n)
            ns.append(n.astype(np.int64))
            errs.append(err)
            ok &= err < _LD(t.tol) * (1 + _LD(_BORDER))
            scaled = np.maximum(scaled, err / _LD(t.tol))
        i = int(np.argmin(scaled))
        if scaled[i] < best_err:
            best_err, best = float(scaled[i]), (int(ks[i]),) + tuple(int(n[i]) for n in ns)
        for idx in np.nonzero(ok)[0]:
            k = int(ks[idx])
            tup = (k,) + tuple(int(n[idx]) for n in ns)
            if all(_sim_exact(t, k, n) for t, n in zip(tg, tup[1:])):
                out.append(tup)
    if not out:
        out.best, out.best_error = best, best_err
    return out


def _sim_exact(t: SimTarget, k: int, n: int) -> bool:
    with mpmath.workdps(_MP_DPS):
        return bool(abs(k * mpmath.mpf(t.coefficient) - n - mpmath.mpf(t.target)) < mpmath.mpf(t.tol))


# ---------------------------------------------------------------------------
# P_N


def _saddle_only(params: CycleParams, what: str) -> None:
    if params.case is not MultiplierCase.SADDLE:
        raise ValueError(f"{what} applies to the saddle case")


def default_parity(params: CycleParams) -> str:
    return "even" if params.lam < 0 or params.gamma < 0 else "any"


def _central_values(params: CycleParams, lg: mpmath.mpf) -> tuple[mpmath.mpf, mpmath.mpf]:
    a, b = mpmath.mpf(params.a), mpmath.mpf(params.b)
    xp, um = mpmath.mpf(params.x_plus[0]), mpmath.mpf(params.u_minus[0])
    A = a * b * lg
    return A, A * xp - b * um


def pn_bound(params: CycleParams) -> float:
    """Balance tolerance on the central constant term defining P_N."""
    al = abs(params.alpha)
    return (2.0 / 3.0) * (1.0 - al) * params.delta if al < 1 else (2.0 / 3.0) * (1.0 - 1.0 / al) * params.delta


def build_P_N(params: CycleParams, N: int, k_max: int = 200, parity: str | None = None) -> list[KmPair]:
    """All N < k <= k_max, m > N with |a b lambda^k gamma^m x+ - b u-| <= (2/3)(1 - |alpha|) delta.

    For |alpha| > 1 the same balance is imposed on the reversed central map
    (coefficients 1/A, -B/A), whose contraction rate is 1/|alpha|.
    """
    _saddle_only(params, "build_P_N")
    al = params.alpha
    if not math.isfinite(al) or abs(abs(al) - 1.0) < 1e-12:
        raise ValueError("build_P_N requires |alpha| != 1 (condition C4.1)")
    parity = parity or default_parity(params)
    eps = pn_bound(params)
    lam, gam = params.lam, params.gamma
    llam, lgam = math.log(abs(lam)), math.log(abs(gam))
    scale = params.a * params.b * params.x_plus[0]
    centre = params.b * params.u_minus[0] / scale    # required lambda^k gamma^m
    out: list[KmPair] = []
    if centre <= 0 and lam > 0 and gam > 0:
        return out
    # generous m-window per k; membership is decided exactly below
    lo_v, hi_v = abs(centre) / 4.0, abs(centre) * 4.0
    for k in range(N + 1, k_max + 1):
        m_lo = max(N + 1, math.ceil((math.log(lo_v) - k * llam) / lgam))
        m_hi = math.floor((math.log(hi_v) - k * llam) / lgam)
        for m in range(m_lo, m_hi + 1):
            if parity == "even" and (k % 2 or m % 2):
                continue
            lg = lam_gamma_mp(lam, gam, k, m)
            A, B = _central_values(params, lg)
            with mpmath.workdps(_MP_DPS):
                measure = abs(B) if abs(al) < 1 else abs(B / A)
                if measure <= eps:
                    out.append(make_pair(lam, gam, k, m, params.theta))
    return out


# ---------------------------------------------------------------------------
# covering sets


@dataclass(frozen=True)
class CoveringSet:
    """Pairs (k_j, m_j) whose central images E_j = R_j([-d', d']) cover [-d', d'].

    ``orientation`` 'cs' uses R(X) = A X + B; 'cu' uses the reversed central
    map R'(X) = X/A - B/A.  Endpoints are exact rationals (after inward
    guard bands of two ulps).
    """

    pairs: tuple[KmPair, ...]
    A: tuple[float, ...]
    B: tuple[float, ...]
    intervals: tuple[tuple[Fraction, Fraction], ...]
    rho: tuple[float, ...]
    delta: float
    delta_prime: float
    alpha: float
    orientation: str = "cs"

    @property
    def n(self) -> int:
        return len(self.pairs)

    def without(self, j: int) -> "CoveringSet":
        keep = [i for i in range(self.n) if i != j]
        pick = lambda seq: tuple(seq[i] for i in keep)
        return replace(self, pairs=pick(self.pairs), A=pick(self.A), B=pick(self.B),
                       intervals=pick(self.intervals), rho=pick(self.rho))

    def to_dict(self) -> dict[str, Any]:
        return {
            "orientation": self.orientation,
            "n": self.n,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "alpha": self.alpha,
            "pairs": [
                {"k": p.k, "m": p.m, "value": p.value, "A": a, "B": b, "rho": r,
                 "interval": [_exact_decimal(lo), _exact_decimal(hi)]}
                for p, a, b, r, (lo, hi) in zip(self.pairs, self.A, self.B, self.rho, self.intervals)
            ],
        }

    @classmethod
    def from_intervals(cls, intervals: Iterable[tuple[float, float]], delta: float, delta_prime: float,
                       alpha: float) -> "CoveringSet":
        iv = tuple((Fraction(lo), Fraction(hi)) for lo, hi in intervals)
        n = len(iv)
        return cls(tuple(KmPair(0, 0) for _ in iv), (math.nan,) * n, (math.nan,) * n, iv,
                   (math.nan,) * n, delta, delta_prime, alpha)


def _guarded_interval(A: float, B: float, dp: float) -> tuple[Fraction, Fraction]:
    half = Fraction(abs(A)) * Fraction(dp)
    lo, hi = Fraction(B) - half, Fraction(B) + half
    g_lo = Fraction(2 * float(np.spacing(abs(float(lo)))))
    g_hi = Fraction(2 * float(np.spacing(abs(float(hi)))))
    return lo + g_lo, hi - g_hi


def covering_size(alpha: float) -> int:
    return math.ceil(Fraction(4) / abs(Fraction(alpha)) + 1)


def build_covering_set(params: CycleParams, N: int = 10, k_max: int = 400, orientation: str = "cs",
                       parity: str | None = None) -> CoveringSet:
    """The covering family on the grid rho_j = -q + (j-1) 2q/(n-1), n = ceil(4/|alpha| + 1).

    For each rho_j the pair with N < k <= k_max minimising |B' - delta rho_j|
    is chosen, B' being the constant term of the (possibly reversed) central
    map.  Raises if the result does not verify.
    """
    _saddle_only(params, "build_covering_set")
    al = params.alpha
    if orientation == "cs" and not abs(al) < 1:
        raise ValueError("cs covering requires |alpha| < 1")
    if orientation == "cu" and not abs(al) > 1:
        raise ValueError("cu covering requires |alpha| > 1")
    if orientation not in ("cs", "cu"):
        raise ValueError("orientation must be 'cs' or 'cu'")
    parity = parity or default_parity(params)
    eff_alpha = al if orientation == "cs" else 1.0 / al
    n = covering_size(eff_alpha)
    q, delta, dp = params.q, params.delta, params.delta_prime
    rho = [-q + (j * 2.0 * q / (n - 1)) for j in range(n)] if n > 1 else [0.0]
    lam, gam = params.lam, params.gamma
    llam, lgam = math.log(abs(lam)), math.log(abs(gam))
    a, b, xp, um = params.a, params.b, params.x_plus[0], params.u_minus[0]
    pairs, As, Bs, ivs = [], [], [], []
    for j, r in enumerate(rho):
        if orientation == "cs":
            want = (b * um + delta * r) / (a * b * xp)
        else:
            want = b * um / (a * b * (xp + delta * r))
        if want <= 0 and lam > 0 and gam > 0:
            raise CoveringError(f"target for rho_{j + 1} = {r} is not a positive power product")
        best = None
        for k in range(N + 1, k_max + 1):
            mc = (math.log(abs(want)) - k * llam) / lgam
            for m in (math.floor(mc), math.ceil(mc)):
                if m <= N or (parity == "even" and (k % 2 or m % 2)):
                    continue
                lg = lam_gamma_mp(lam, gam, k, m)
                Amp, Bmp = _central_values(params, lg)
                with mpmath.workdps(_MP_DPS):
                    Bc = Bmp if orientation == "cs" else -Bmp / Amp
                    err = abs(Bc - delta * r)
                if best is None or err < best[0]:
                    best = (err, k, m, Amp, Bmp)
        if best is None:
            raise CoveringError(f"no pair realises rho_{j + 1} = {r} within k_max = {k_max}")
        _, k, m, Amp, Bmp = best
        if orientation == "cs":
            A_use, B_use = float(Amp), float(Bmp)
        else:
            with mpmath.workdps(_MP_DPS):
                A_use, B_use = float(1 / Amp), float(-Bmp / Amp)
        pairs.append(make_pair(lam, gam, k, m, params.theta))
        As.append(A_use)
        Bs.append(B_use)
        ivs.append(_guarded_interval(A_use, B_use, dp))
    cover = CoveringSet(tuple(pairs), tuple(As), tuple(Bs), tuple(ivs), tuple(rho), delta, dp, eff_alpha,
                        orientation)
    report = verify_covering(cover)
    if not report.passed:
        raise CoveringError(f"constructed family fails verification (k_max = {k_max}): {report.summary()}")
    return cover


@dataclass
class CoverReport:
    covered: bool
    overlaps_ok: bool
    min_overlap: Fraction | None
    max_gap: Fraction
    gap_location: tuple[Fraction, Fraction] | None
    overlaps: list[Fraction] = field(default_factory=list)
    required_overlap: Fraction = Fraction(0)

    @property
    def passed(self) -> bool:
        return self.covered and self.overlaps_ok

    def summary(self) -> str:
        if self.passed:
            return "covered with the required overlaps"
        parts = []
        if not self.covered:
            lo, hi = self.gap_location
            parts.append(f"gap of length {float(self.max_gap):.3g} at [{float(lo):.6g}, {float(hi):.6g}]")
        if not self.overlaps_ok:
            parts.append(f"minimal consecutive overlap {float(self.min_overlap):.3g} "
                         f"<= required {float(self.required_overlap):.3g}")
        return "; ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        fl = lambda v: None if v is None else float(v)
        return {
            "covered": self.covered, "overlaps_ok": self.overlaps_ok, "passed": self.passed,
            "min_overlap": fl(self.min_overlap), "max_gap": float(self.max_gap),
            "gap_location": None if self.gap_location is None else [float(v) for v in self.gap_location],
            "required_overlap": float(self.required_overlap),
        }


def verify_covering(cover: CoveringSet) -> CoverReport:
    """Exact check that the open intervals cover [-d', d'] and consecutive overlaps exceed d'|alpha|/2."""
    dp = Fraction(cover.delta_prime)
    need = dp * abs(Fraction(cover.alpha)) / 2
    ivs = sorted(cover.intervals)
    covered_so_far = False
    gaps: list[tuple[Fraction, Fraction]] = []
    # sweep: the closed target [-d', d'] is covered by open intervals iff no point is left uncovered
    point = -dp
    for lo, hi in ivs:
        if hi <= point:
            continue
        if lo >= point:
            gaps.append((point, lo))
        point = max(point, hi)
        if point > dp:
            covered_so_far = True
            break
    if not covered_so_far:
        gaps.append((point, dp))
    gaps = [(max(lo, -dp), min(hi, dp)) for lo, hi in gaps]
    max_gap = max((hi - lo for lo, hi in gaps), default=Fraction(0))
    gap_loc = max(gaps, key=lambda g: g[1] - g[0]) if gaps else None
    covered = not gaps
    ordered = list(cover.intervals)
    overlaps = [min(h1, h2) - max(l1, l2) for (l1, h1), (l2, h2) in zip(ordered, ordered[1:])]
    min_ov = min(overlaps) if overlaps else None
    ok = all(o > need for o in overlaps)
    return CoverReport(covered, ok, min_ov, max(max_gap, Fraction(0)), gap_loc, overlaps, need)
