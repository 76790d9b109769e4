"""Sampled certificate that a family of returns T_{k_j,m_j} forms a blender.

Discs are graphs over the strong-stable cube of the box: for a cs-blender a
disc is {(s_X(Z), s_Y(Z), Z)}, and its preimage under a chosen return is
again such a graph.  A cu-blender is handled by the same code applied to the
inverse return, in which Y and Z trade places (``_ReversedSystem``).

All maps here are cross-form normal maps (``NormalFormBatch``) evaluated for
every trial at once; the literal composition is used only for an optional
cross-check of witness orbits.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .cone_checker import ConeSpec, Orientation
from .covering_engine import CoveringSet, build_covering_set
from .cycle_model import _F12_LAYOUT, _F21_LAYOUT, _block_size, CycleParams, MultiplierCase
from .return_map import LiteralReturn, NormalFormBatch

GRID_POINTS = 17
BISECTION_TOL = 1e-14
TINY_RATE = np.finfo(float).tiny
_CSTEP = 1e-20


class BlenderError(RuntimeError):
    pass


class PreimageError(BlenderError):
    pass


# ---------------------------------------------------------------------------
# discs


def _base_grid(delta: float, nz: int) -> np.ndarray:
    ticks = np.linspace(-delta, delta, GRID_POINTS)
    if nz == 0:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*([ticks] * nz), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _interp(table: np.ndarray, Zq: np.ndarray, delta: float) -> np.ndarray:
    """Multilinear interpolation on the tensor grid.

    table: (T, G, ...) per-trial grid data; Zq: (T, N, nz).  Returns (T, N, ...).
    """
    T, N, nz = Zq.shape
    if nz == 0:
        return np.repeat(table[:, :1], N, axis=1)
    h = 2.0 * delta / (GRID_POINTS - 1)
    t = (np.clip(Zq, -delta, delta) + delta) / h
    i0 = np.clip(np.floor(t).astype(int), 0, GRID_POINTS - 2)
    w = t - i0
    out = 0.0
    tail = table.shape[2:]
    rows = np.arange(T)[:, None]
    for corner in itertools.product((0, 1), repeat=nz):
        c = np.array(corner)
        idx = i0 + c
        flat = np.zeros((T, N), dtype=int)
        weight = np.ones((T, N))
        for j in range(nz):
            flat = flat * GRID_POINTS + idx[:, :, j]
            weight = weight * np.where(c[j] == 1, w[:, :, j], 1.0 - w[:, :, j])
        out = out + table[rows, flat] * weight.reshape((T, N) + (1,) * len(tail))
    return out


def _sup_operator(mats: np.ndarray) -> np.ndarray:
    """Operator norm induced by sup norms: maximal absolute row sum."""
    if mats.shape[-1] == 0:
        return np.zeros(mats.shape[:-2])
    return np.max(np.sum(np.abs(mats), axis=-1), axis=-1)


@dataclass
class Disc:
    """Graph Z -> (X, Y) over the cube [-delta, delta]^nz, stored on a 17-point tensor grid.

    ``slopes`` holds the derivative of the graph at each grid point, shape
    (G, 1 + ny, nz).  ``exact`` optionally evaluates the graph (and its
    derivative) anywhere; otherwise values are interpolated.
    """

    delta: float
    values: np.ndarray
    slopes: np.ndarray
    orientation: str = "ss"
    exact: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def nz(self) -> int:
        return self.slopes.shape[2]

    @property
    def ny(self) -> int:
        return self.values.shape[1] - 1

    @property
    def grid(self) -> np.ndarray:
        return _base_grid(self.delta, self.nz)

    @property
    def lipschitz(self) -> float:
        return float(np.max(_sup_operator(self.slopes), initial=0.0))

    def evaluate(self, Z: Any) -> tuple[np.ndarray, np.ndarray]:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.exact is not None:
            return self.exact(Z)
        vals = _interp(self.values[None], Z[None], self.delta)[0]
        slopes = _interp(self.slopes[None], Z[None], self.delta)[0]
        return vals, slopes

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], delta: float, nz: int,
                      orientation: str = "ss", derivative: Callable[[np.ndarray], np.ndarray] | None = None
                      ) -> "Disc":
        """Disc from a graph function Z (N, nz) -> (N, 1 + ny); slopes by central differences if not given."""
        h = 1e-6 * delta

        def both(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            vals = np.atleast_2d(np.asarray(fn(Z), dtype=float))
            if derivative is not None:
                return vals, np.asarray(derivative(Z), dtype=float).reshape(vals.shape + (nz,))
            cols = []
            for j in range(nz):
                e = np.zeros(nz)
                e[j] = h
                cols.append((np.asarray(fn(Z + e), dtype=float) - np.asarray(fn(Z - e), dtype=float)) / (2 * h))
            return vals, np.stack(cols, axis=-1) if cols else np.zeros(vals.shape + (0,))

        grid = _base_grid(delta, nz)
        vals, slopes = both(grid)
        return cls(delta, vals, slopes, orientation, both)

    @classmethod
    def constant(cls, x: float, y: Any, delta: float, nz: int, orientation: str = "ss") -> "Disc":
        y = np.atleast_1d(np.asarray(y, dtype=float))
        row = np.concatenate([[x], y])
        return cls.from_function(lambda Z: np.tile(row, (Z.shape[0], 1)), delta, nz, orientation,
                                 derivative=lambda Z: np.zeros((Z.shape[0], row.size, nz)))

    def to_dict(self) -> dict[str, Any]:
        return {"delta": self.delta, "orientation": self.orientation, "lipschitz": self.lipschitz,
                "grid_values": self.values.tolist()}


@dataclass
class ProperReport:
    proper: bool
    margin: float
    range_slack: float
    max_slope: float
    budget: float

    def __bool__(self) -> bool:
        return self.proper

    def to_dict(self) -> dict[str, Any]:
        return {"proper": self.proper, "margin": self.margin, "range_slack": self.range_slack,
                "max_slope": self.max_slope, "budget": self.budget}


def is_proper_crossing(disc: Disc, cube: tuple[float, float], cone: ConeSpec) -> ProperReport:
    """Whether ``disc`` crosses the box properly and its tangents lie in ``cone``.

    ``cube`` is (delta', delta): the central half-width and the half-width of
    the other blocks.  The slope budget is the cone opening K; ``margin`` is
    the slope slack K - max slope, and ``range_slack`` the distance of the
    graph values from the box faces.
    """
    dp, delta = cube
    if disc.delta + 1e-15 < delta:
        return ProperReport(False, -math.inf, -math.inf, math.nan, cone.K)
    vals = disc.values
    slack_x = dp - float(np.max(np.abs(vals[:, 0])))
    slack_y = delta - float(np.max(np.abs(vals[:, 1:]), initial=0.0))
    slope = disc.lipschitz
    margin = cone.K - slope
    range_slack = min(slack_x, slack_y)
    return ProperReport(bool(range_slack >= 0 and margin >= 0), float(margin), float(range_slack),
                        float(slope), float(cone.K))


def disc_cone(params: CycleParams, orientation: str = "cs") -> ConeSpec:
    """The strong cone whose tangents a proper disc must follow: opening q|alpha_eff|/4."""
    al = params.alpha if orientation == "cs" else 1.0 / params.alpha
    K = params.q * abs(al) / 4.0
    dm = params.dims
    if orientation == "cs":
        return ConeSpec.for_box(params.d, dm.ny, K, Orientation.SS)
    return ConeSpec.for_box(params.d, dm.ny, K, Orientation.UU)


# ---------------------------------------------------------------------------
# cross systems: the direct return (cs) and the inverse return with Y, Z swapped (cu)


class _DirectSystem:
    def __init__(self, params: CycleParams, ks: np.ndarray, ms: np.ndarray, A: np.ndarray):
        self.params = params
        self.nf = NormalFormBatch(params, ks, ms)
        self.ny, self.nz = params.dims.ny, params.dims.nz
        self.A = np.asarray(A, dtype=float)
        self.delta, self.delta_prime = params.delta, params.delta_prime

    def cross(self, pts: np.ndarray, sel: np.ndarray) -> np.ndarray:
        return self.nf.cross(pts, sel)

    def central_solve(self, sel: np.ndarray, target: np.ndarray, Ybar: np.ndarray, Z: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        """X with Xbar(X, Ybar, Z) = target by a chord iteration with slope A."""
        X = np.zeros_like(target)
        for _ in range(60):
            out = self.cross(np.column_stack([X, Ybar, Z]), sel)
            step = (out[:, 0] - target) / self.A[sel]
            X = X - step
            if np.all(np.abs(step) <= 1e-16 * (1.0 + np.abs(X))) or not np.all(np.isfinite(X)):
                break
        return X, self.cross(np.column_stack([X, Ybar, Z]), sel)

    def preimage(self, sel: np.ndarray, Z: np.ndarray, evaluate: Callable, tol: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Solve Xbar = s_X(Zbar), Ybar = s_Y(Zbar) for X in [-d', d'] by bisection."""
        n, ny = Z.shape[0], self.ny
        dp = self.delta_prime
        Ybar = evaluate(np.zeros((n, self.nz)))[0][:, 1:]

        def resid(X: np.ndarray, Yb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            out = self.cross(np.column_stack([X, Yb, Z]), sel)
            vals = evaluate(out[:, 1 + ny:])[0]
            return out[:, 0] - vals[:, 0], vals[:, 1:], out

        lo = np.full(n, -dp)
        hi = np.full(n, dp)
        for _ in range(2):
            f_lo, Ybar, _o = resid(lo, Ybar)
        f_hi, Ybar, _o = resid(hi, Ybar)
        bad = np.sign(f_lo) == np.sign(f_hi)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise PreimageError(f"sign condition violated at grid point {i}: residuals {f_lo[i]:.3g} and "
                                f"{f_hi[i]:.3g} at the faces X = -+{dp}; the tails are too large for this delta")
        rising = f_hi > 0
        while np.max(hi - lo) > BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            f_mid, Ybar, _o = resid(mid, Ybar)
            up = (f_mid > 0) == rising
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        X = 0.5 * (lo + hi)
        for _ in range(20):
            f, Ynew, out = resid(X, Ybar)
            change = np.max(np.abs(Ynew - Ybar), initial=0.0)
            Ybar = Ynew
            if change <= 1e-17:
                break
        f, Ycheck, out = resid(X, Ybar)
        res = np.maximum(np.abs(f), np.max(np.abs(Ycheck - Ybar), axis=1, initial=0.0))
        if np.any(res > tol / 10):
            raise PreimageError(f"preimage residual {float(np.max(res)):.3g} exceeds tol/10 = {tol / 10:.3g}")
        return X, Ybar, out


class _ReversedSystem:
    """Inverse return in coordinates (X', Y', Z') = (X, Z, Y); its cross form is built from the direct one."""

    def __init__(self, params: CycleParams, ks: np.ndarray, ms: np.ndarray, A: np.ndarray):
        self.params = params
        self.nf = NormalFormBatch(params, ks, ms)
        self.ny, self.nz = params.dims.nz, params.dims.ny
        self._ny0 = params.dims.ny
        self.A_direct = 1.0 / np.asarray(A, dtype=float)
        self.delta, self.delta_prime = params.delta, params.delta_prime

    def _direct(self, X: np.ndarray, Ybar0: np.ndarray, Z0: np.ndarray, sel: np.ndarray) -> np.ndarray:
        return self.nf.cross(np.column_stack([X, Ybar0, Z0]), sel)

    def _split_out(self, out: np.ndarray, X: np.ndarray) -> np.ndarray:
        ny0 = self._ny0
        return np.column_stack([X, out[:, 1 + ny0:], out[:, 1:1 + ny0]])

    def cross(self, pts: np.ndarray, sel: np.ndarray) -> np.ndarray:
        Xp, Ybp, Zp = pts[:, 0], pts[:, 1:1 + self.ny], pts[:, 1 + self.ny:]
        X = (Xp - 0.0) * 0.0
        for _ in range(60):
            out = self._direct(X, Zp, Ybp, sel)
            step = (out[:, 0] - Xp) / self.A_direct[sel]
            X = X - step
            if np.all(np.abs(step) <= 1e-16 * (1.0 + np.abs(X))):
                break
        return self._split_out(self._direct(X, Zp, Ybp, sel), X)

    def central_solve(self, sel: np.ndarray, target: np.ndarray, Ybar: np.ndarray, Z: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        out = self._direct(target, Z, Ybar, sel)
        return out[:, 0], self._split_out(out, target)

    def preimage(self, sel: np.ndarray, Z: np.ndarray, evaluate: Callable, tol: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Fixed point (X, Ybar') = s(Zbar'); the central input X' is then explicit."""
        n = Z.shape[0]
        vals = evaluate(np.zeros((n, self.nz)))[0]
        X, Ybar = vals[:, 0], vals[:, 1:]
        for _ in range(100):
            out = self._direct(X, Z, Ybar, sel)
            new = evaluate(out[:, 1:1 + self._ny0])[0]
            change = max(np.max(np.abs(new[:, 0] - X)), np.max(np.abs(new[:, 1:] - Ybar), initial=0.0))
            X, Ybar = new[:, 0], new[:, 1:]
            if change <= 1e-17:
                break
        out = self._direct(X, Z, Ybar, sel)
        Xp = out[:, 0]
        outside = np.abs(Xp) > self.delta_prime
        if np.any(outside):
            i = int(np.argmax(outside))
            raise PreimageError(f"sign condition violated at grid point {i}: central preimage {Xp[i]:.6g} "
                                f"is outside [-{self.delta_prime}, {self.delta_prime}]")
        check = evaluate(out[:, 1:1 + self._ny0])[0]
        res = np.maximum(np.abs(check[:, 0] - X), np.max(np.abs(check[:, 1:] - Ybar), axis=1, initial=0.0))
        if np.any(res > tol / 10):
            raise PreimageError(f"preimage residual {float(np.max(res)):.3g} exceeds tol/10 = {tol / 10:.3g}")
        return Xp, Ybar, self._split_out(out, X)


def _cross_partials(system: Any, pts: np.ndarray, sel: np.ndarray) -> np.ndarray:
    """Jacobian of the cross form (rows Xbar, Y, Zbar; columns X, Ybar, Z) by complex steps."""
    n, d = pts.shape
    cols = []
    for i in range(d):
        q = pts.astype(complex)
        q[:, i] += _CSTEP * 1j
        cols.append(system.cross(q, sel).imag / _CSTEP)
    return np.stack(cols, axis=2)


def _graph_derivatives(system: Any, sel: np.ndarray, X: np.ndarray, Ybar: np.ndarray, Z: np.ndarray,
                       prev_slopes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slopes of the preimage graph and the Z-rate dZbar/dZ along it (implicit differentiation)."""
    ny, nz = system.ny, system.nz
    J = _cross_partials(system, np.column_stack([X, Ybar, Z]), sel)
    ix, iy, iz = slice(0, 1), slice(1, 1 + ny), slice(1 + ny, 1 + ny + nz)
    n = X.shape[0]
    S = prev_slopes
    upper = np.zeros((n, 1 + ny, 1 + ny))
    upper[:, 0, 0] = J[:, 0, 0]
    upper[:, 0, 1:] = J[:, 0, iy]
    upper[:, 1:, 1:] = np.eye(ny)
    zin = np.concatenate([J[:, iz, ix], J[:, iz, iy]], axis=2)
    Gu = upper - np.einsum("nij,njk->nik", S, zin)
    GZ = np.zeros((n, 1 + ny, nz))
    GZ[:, 0, :] = J[:, 0, iz]
    GZ = GZ - np.einsum("nij,njk->nik", S, J[:, iz, iz])
    up = -np.linalg.solve(Gu, GZ)
    Xp, Ybp = up[:, :1], up[:, 1:]
    rate = (np.einsum("nij,njk->nik", J[:, iz, ix], Xp) + np.einsum("nij,njk->nik", J[:, iz, iy], Ybp)
            + J[:, iz, iz])
    Yp = (np.einsum("nij,njk->nik", J[:, iy, ix], Xp) + np.einsum("nij,njk->nik", J[:, iy, iy], Ybp)
          + J[:, iy, iz])
    return np.concatenate([Xp, Yp], axis=1), rate


def _make_system(params: CycleParams, cover: CoveringSet) -> Any:
    ks = np.array([p.k for p in cover.pairs])
    ms = np.array([p.m for p in cover.pairs])
    if cover.orientation == "cs":
        return _DirectSystem(params, ks, ms, np.array(cover.A))
    return _ReversedSystem(params, ks, ms, np.array(cover.A))


# ---------------------------------------------------------------------------
# pair selection and one preimage step


def _select_pairs(cover: CoveringSet, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the covering pair whose interval contains [lo, hi] with the widest margin.

    Ties go to the smaller k, then the smaller m.  Returns (indices, margins);
    an index is -1 when no interval contains the range with margin d'|alpha|/8.
    """
    need = cover.delta_prime * abs(cover.alpha) / 8.0
    E = np.array([[float(a), float(b)] for a, b in cover.intervals])
    margins = np.minimum(lo[:, None] - E[None, :, 0], E[None, :, 1] - hi[:, None])
    order = sorted(range(cover.n), key=lambda j: (cover.pairs[j].k, cover.pairs[j].m))
    best = np.full(lo.shape[0], -1)
    best_margin = np.full(lo.shape[0], -np.inf)
    for j in order:
        better = margins[:, j] > best_margin
        best = np.where(better, j, best)
        best_margin = np.where(better, margins[:, j], best_margin)
    best = np.where(best_margin >= need, best, -1)
    return best, best_margin


@dataclass
class PreimageResult:
    disc: Disc
    pair: tuple[int, int]
    margin: float
    residual: float
    z_rate: float
    proper: ProperReport


def preimage_step(disc: Disc, cover: CoveringSet, params: CycleParams, tol: float = 1e-10) -> PreimageResult:
    """The preimage of a proper disc under the best-fitting return of the covering family."""
    system = _make_system(params, cover)
    res = _StackedDiscs.single(disc)
    step = res.step(system, cover, np.zeros(1, dtype=bool), tol)
    if step.failure[0]:
        raise PreimageError(step.failure[0])
    j = int(step.choice[0])
    new = Disc(disc.delta, res.values[0], res.slopes[0], disc.orientation)
    cone = disc_cone(params, cover.orientation)
    cone = ConeSpec(cone.x_idx, cone.y_idx, cone.z_idx, cone.K, cone.orientation)
    proper = is_proper_crossing(new, (cover.delta_prime, params.delta), cone)
    return PreimageResult(new, (cover.pairs[j].k, cover.pairs[j].m), float(step.margin[0]),
                          float(step.residual[0]), float(step.rate[0]), proper)


@dataclass
class _StepOutcome:
    choice: np.ndarray
    margin: np.ndarray
    residual: np.ndarray
    rate: np.ndarray
    failure: list[str]


class _StackedDiscs:
    """Discs of all trials at one level: grid values and slopes, or the level-0 exact family."""

    def __init__(self, delta: float, values: np.ndarray, slopes: np.ndarray,
                 exact: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None):
        self.delta, self.values, self.slopes, self.exact = delta, values, slopes, exact
        self.nz = slopes.shape[3]
        self.grid = _base_grid(delta, self.nz)

    @classmethod
    def single(cls, disc: Disc) -> "_StackedDiscs":
        exact = None
        if disc.exact is not None:
            exact = lambda rows, Z: disc.exact(Z)  # noqa: E731
        return cls(disc.delta, disc.values[None], disc.slopes[None], exact)

    def evaluate(self, rows: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Graph values and slopes; ``rows`` gives the trial of each query point."""
        if self.exact is not None:
            return self.exact(rows, Z)
        vals = _interp(self.values[rows], Z[:, None, :], self.delta)[:, 0]
        slopes = _interp(self.slopes[rows], Z[:, None, :], self.delta)[:, 0]
        return vals, slopes

    def range_x(self) -> tuple[np.ndarray, np.ndarray]:
        pad = 0.0
        if self.exact is None:
            h = 2.0 * self.delta / (GRID_POINTS - 1)
            pad = 0.5 * h * np.max(np.abs(self.slopes[:, :, 0, :]).sum(axis=2), axis=1)
        return np.min(self.values[:, :, 0], axis=1) - pad, np.max(self.values[:, :, 0], axis=1) + pad

    def step(self, system: Any, cover: CoveringSet, dead: np.ndarray, tol: float) -> _StepOutcome:
        """Replace every live disc by its preimage; returns the pair choices and diagnostics."""
        T = self.values.shape[0]
        G = self.grid.shape[0]
        lo, hi = self.range_x()
        choice, margin = _select_pairs(cover, lo, hi)
        failure = [""] * T
        for t in range(T):
            if not dead[t] and choice[t] < 0:
                failure[t] = (f"no covering interval contains the disc's central range "
                              f"[{lo[t]:.6g}, {hi[t]:.6g}] with margin {cover.delta_prime * abs(cover.alpha) / 8:.3g}")
        live = np.array([not dead[t] and not failure[t] for t in range(T)])
        new_vals = self.values.copy()
        new_slopes = self.slopes.copy()
        residual = np.full(T, np.nan)
        rate = np.full(T, np.nan)
        if np.any(live):
            trials = np.nonzero(live)[0]
            rows = np.repeat(trials, G)
            sel = choice[rows]
            Z = np.tile(self.grid, (trials.size, 1))
            ev = lambda Zq: self.evaluate(rows, Zq)  # noqa: E731
            try:
                X, Ybar, out = system.preimage(sel, Z, ev, tol)
            except PreimageError as exc:
                for t in trials:
                    failure[t] = str(exc)
                return _StepOutcome(choice, margin, residual, rate, failure)
            ny = system.ny
            prev_slopes = self.evaluate(rows, out[:, 1 + ny:])[1]
            slopes, zrate = _graph_derivatives(system, sel, X, Ybar, Z, prev_slopes)
            vals = np.column_stack([X, out[:, 1:1 + ny]])
            check = self.evaluate(rows, out[:, 1 + ny:])[0]
            res = np.max(np.abs(check - np.column_stack([out[:, 0], Ybar])), axis=1)
            new_vals[trials] = vals.reshape(trials.size, G, -1)
            new_slopes[trials] = slopes.reshape(trials.size, G, *slopes.shape[1:])
            residual[trials] = res.reshape(trials.size, G).max(axis=1)
            rate[trials] = _sup_operator(zrate).reshape(trials.size, G).max(axis=1)
        self.values, self.slopes, self.exact = new_vals, new_slopes, None
        return _StepOutcome(choice, margin, residual, rate, failure)


# ---------------------------------------------------------------------------
# random initial discs


class _SineFamily:
    """s_c(Z) = c_c + sum_j g_cj sin(w_cj Z_j + phi_cj) for each trial, with a prescribed slope budget."""

    def __init__(self, rng: np.random.Generator, trials: int, ny: int, nz: int, delta: float, dp: float,
                 budget: float):
        C = 1 + ny
        self.w = rng.uniform(1.0, 8.0, (trials, C, nz)) / delta
        self.phi = rng.uniform(0.0, 2 * np.pi, (trials, C, nz))
        share = rng.uniform(0.2, 1.0, (trials, C, nz)) * rng.choice([-1.0, 1.0], (trials, C, nz))
        self.g = share * 0.8 * budget / (max(nz, 1) * self.w)
        amp = np.sum(np.abs(self.g), axis=2)
        self.c = np.empty((trials, C))
        self.c[:, 0] = rng.uniform(-1.0, 1.0, trials) * 0.9 * (dp - amp[:, 0])
        self.c[:, 1:] = rng.uniform(-0.5, 0.5, (trials, ny)) * delta
        self.lipschitz = np.max(np.sum(np.abs(self.g * self.w), axis=2), axis=1)

    def __call__(self, rows: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        arg = self.w[rows] * Z[:, None, :] + self.phi[rows]
        vals = self.c[rows] + np.sum(self.g[rows] * np.sin(arg), axis=2)
        slopes = self.g[rows] * self.w[rows] * np.cos(arg)
        return vals, slopes

    def row(self, t: int) -> dict[str, Any]:
        return {"offset": self.c[t].tolist(), "amplitude": self.g[t].tolist(), "frequency": self.w[t].tolist(),
                "phase": self.phi[t].tolist()}


# ---------------------------------------------------------------------------
# unstable-set membership


@dataclass
class MembershipResult:
    member: bool
    start_in_box: bool
    failing_step: int | None
    z_mismatch: float
    orbit: np.ndarray

    def __bool__(self) -> bool:
        return self.member


def _membership(system: Any, choices: np.ndarray, W0: np.ndarray, tol: float, max_sweeps: int = 50
                ) -> list[MembershipResult]:
    """Backward orbits along the recorded pairs: X and Y backward, Z forward from Z = 0 at the far end."""
    T, depth = choices.shape
    ny, nz = system.ny, system.nz
    dp, delta = system.delta_prime, system.delta
    X = np.zeros((depth + 1, T))
    Y = np.zeros((depth + 1, T, ny))
    Z = np.zeros((depth + 1, T, nz))
    X[0], Y[0], Z[0] = W0[:, 0], W0[:, 1:1 + ny], W0[:, 1 + ny:]
    z0_calc = Z[0].copy()
    fail = np.full(T, -1)
    start_ok = (np.abs(W0[:, 0]) <= dp) & (np.max(np.abs(W0[:, 1:]), axis=1, initial=0.0) <= delta)
    for _ in range(max_sweeps):
        oldX, oldY, oldZ = X.copy(), Y.copy(), Z.copy()
        fail[:] = -1
        for l in range(1, depth + 1):
            Xl, out = system.central_solve(choices[:, l - 1], X[l - 1], Y[l - 1], Z[l])
            Yl = out[:, 1:1 + ny]
            bad = (~np.isfinite(Xl)) | (np.abs(Xl) > dp) | (np.max(np.abs(Yl), axis=1, initial=0.0) > delta)
            fail = np.where((fail < 0) & bad, l, fail)
            X[l] = np.clip(np.nan_to_num(Xl), -dp, dp)
            Y[l] = np.clip(np.nan_to_num(Yl), -delta, delta)
        for l in range(depth, 0, -1):
            out = system.cross(np.column_stack([X[l], Y[l - 1], Z[l]]), choices[:, l - 1])
            zbar = out[:, 1 + ny:]
            if l > 1:
                bad = np.max(np.abs(zbar), axis=1, initial=0.0) > delta
                fail = np.where((fail < 0) & bad, l - 1, fail)
                Z[l - 1] = np.clip(zbar, -delta, delta)
            else:
                z0_calc = zbar
        change = max(np.max(np.abs(X - oldX)), np.max(np.abs(Y - oldY), initial=0.0),
                     np.max(np.abs(Z[1:] - oldZ[1:]), initial=0.0))
        if change <= 1e-16:
            break
    mismatch = np.max(np.abs(z0_calc - W0[:, 1 + ny:]), axis=1, initial=0.0)
    results = []
    for t in range(T):
        orbit = np.concatenate([X[:, t, None], Y[:, t], Z[:, t]], axis=1)
        ok = bool(start_ok[t] and fail[t] < 0 and mismatch[t] <= tol)
        results.append(MembershipResult(ok, bool(start_ok[t]), None if fail[t] < 0 else int(fail[t]),
                                        float(mismatch[t]), orbit))
    return results


def wu_membership(point: Any, pairs: list[tuple[int, int]], params: CycleParams, depth: int | None = None,
                  orientation: str = "cs", tol: float = 1e-10) -> MembershipResult:
    """Whether the backward orbit of ``point`` along ``pairs`` stays in the box (and Z matches).

    For 'cu' the point and the test refer to the inverse return, with Y and Z swapped.
    """
    depth = len(pairs) if depth is None else depth
    if depth > len(pairs):
        raise ValueError("depth exceeds the length of the pair sequence")
    uniq = sorted(set(pairs[:depth])) or [(1, 1)]
    index = {p: i for i, p in enumerate(uniq)}
    ks = np.array([p[0] for p in uniq])
    ms = np.array([p[1] for p in uniq])
    A = np.array([params.a * params.b * params.lam ** k * params.gamma ** m for k, m in uniq])
    system = (_DirectSystem(params, ks, ms, A) if orientation == "cs"
              else _ReversedSystem(params, ks, ms, 1.0 / A))
    choices = np.array([[index[p] for p in pairs[:depth]]], dtype=int).reshape(1, depth)
    W0 = np.atleast_2d(np.asarray(point, dtype=float))
    return _membership(system, choices, W0, tol)[0]


# ---------------------------------------------------------------------------
# the certificate


@dataclass
class TrialRecord:
    trial: int
    disc: dict[str, Any]
    pairs: list[tuple[int, int]]
    log10_diameters: list[float]
    z_rates: list[float]
    margins: list[float]
    residuals: list[float]
    proper_margins: list[float]
    witness: list[float] | None
    witness_residual: float | None
    membership: bool
    membership_step: int | None
    literal_discrepancy: float | None
    passed: bool
    failure: str

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["pairs"] = [list(p) for p in self.pairs]
        return d


@dataclass
class BlenderCertificate:
    orientation: str
    depth: int
    trials: int
    tol: float
    seed: int
    covering: dict[str, Any]
    cone: dict[str, Any]
    records: list[TrialRecord]
    flags: list[str] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def passed(self) -> bool:
        return self.depth >= 1 and bool(self.records) and all(r.passed for r in self.records)

    @property
    def pass_count(self) -> int:
        return sum(r.passed for r in self.records)

    def to_dict(self) -> dict[str, Any]:
        return {"orientation": self.orientation, "depth": self.depth, "trials": self.trials, "tol": self.tol,
                "seed": self.seed, "covering": self.covering, "cone": self.cone, "flags": list(self.flags),
                "passed": self.passed, "pass_count": self.pass_count,
                "records": [r.to_dict() for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, default=_json_default)

    def diameters_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "step", "k", "m", "log10_diameter", "z_rate"])
        for r in self.records:
            for i, D in enumerate(r.log10_diameters):
                k, m = r.pairs[i - 1] if i >= 1 else ("", "")
                rate = r.z_rates[i - 1] if i >= 1 else ""
                w.writerow([r.trial, i, k, m, f"{D:.17g}", f"{rate:.17g}" if rate != "" else ""])
        return buf.getvalue()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj)}")


def default_orientation(params: CycleParams) -> str:
    return "cs" if abs(params.alpha) < 1 else "cu"


def verify_blender(params: CycleParams, cover: CoveringSet | None = None, trials: int = 100, depth: int = 30,
                   seed: int = 0, tol: float = 1e-10, literal_checks: int = 0, N: int = 10,
                   k_max: int | None = None) -> BlenderCertificate:
    """Refine random proper discs ``depth`` times along the covering family and certify the limit point.

    A trial passes when every step finds a covering pair and a proper
    preimage, the bound on the diameter of the nested forward images
    decreases at every step to below ``tol``, the witness (the forward image
    of the centre of the deepest disc) lies on the initial disc, and the
    backward orbit of the witness along the recorded pairs stays in the box.
    """
    import time

    if params.case is not MultiplierCase.SADDLE:
        raise ValueError("blender verification is implemented for the saddle case only")
    t_start = time.perf_counter()
    if cover is None:
        orientation = default_orientation(params)
        if k_max is None:
            k_max = 150 if orientation == "cs" else 400
        cover = build_covering_set(params, N=N, k_max=k_max, orientation=orientation)
    orientation = cover.orientation
    system = _make_system(params, cover)
    ny, nz = system.ny, system.nz
    delta, dp = params.delta, params.delta_prime
    cone = disc_cone(params, orientation)
    # proper-crossing cone in the system's own coordinates
    sys_cone = ConeSpec.for_box(1 + ny + nz, ny, cone.K, Orientation.SS)
    rng = np.random.default_rng(seed)
    family = _SineFamily(rng, trials, ny, nz, delta, dp, cone.K)
    grid = _base_grid(delta, nz)
    G = grid.shape[0]
    rows0 = np.repeat(np.arange(trials), G)
    v0, s0 = family(rows0, np.tile(grid, (trials, 1)))
    stack = _StackedDiscs(delta, v0.reshape(trials, G, -1), s0.reshape(trials, G, 1 + ny, nz), family)
    flags: list[str] = []
    if depth == 0:
        flags.append("no refinement")

    lip0 = family.lipschitz
    logD = [list([math.log10(2 * delta * max(1.0, float(lip0[t])))]) for t in range(trials)]
    rates: list[list[float]] = [[] for _ in range(trials)]
    margins: list[list[float]] = [[] for _ in range(trials)]
    residuals: list[list[float]] = [[] for _ in range(trials)]
    proper: list[list[float]] = [[] for _ in range(trials)]
    failures = [""] * trials
    choices = np.zeros((trials, depth), dtype=int)
    levels: list[_StackedDiscs] = [_StackedDiscs(delta, stack.values.copy(), stack.slopes.copy(), family)]
    for level in range(depth):
        dead = np.array([bool(f) for f in failures])
        out = stack.step(system, cover, dead, tol)
        choices[:, level] = np.maximum(out.choice, 0)
        for t in range(trials):
            if dead[t]:
                continue
            if out.failure[t]:
                failures[t] = f"step {level + 1}: {out.failure[t]}"
                continue
            margins[t].append(float(out.margin[t]))
            residuals[t].append(float(out.residual[t]))
            rates[t].append(float(out.rate[t]))
            logD[t].append(logD[t][-1] + math.log10(max(float(out.rate[t]), TINY_RATE)))
            disc = Disc(delta, stack.values[t], stack.slopes[t], orientation)
            rep = is_proper_crossing(disc, (dp, delta), sys_cone)
            proper[t].append(rep.margin if rep.range_slack >= 0 else -math.inf)
            if not rep.proper:
                failures[t] = (f"step {level + 1}: preimage disc is not proper "
                               f"(slope slack {rep.margin:.3g}, range slack {rep.range_slack:.3g})")
        levels.append(_StackedDiscs(delta, stack.values.copy(), stack.slopes.copy()))

    # witness: centre of the deepest disc pushed forward level by level
    alive = np.array([not f for f in failures])
    witness = np.full((trials, 1 + ny + nz), np.nan)
    w_resid = np.full(trials, np.nan)
    link_points: list[np.ndarray] = []
    if depth >= 1 and np.any(alive):
        idx = np.nonzero(alive)[0]
        Zc = np.zeros((idx.size, nz))
        for level in range(depth, 0, -1):
            prev = levels[level - 1]
            sel = choices[idx, level - 1]
            try:
                X, Ybar, out = system.preimage(sel, Zc, lambda Zq, p=prev: p.evaluate(idx, Zq), tol)
            except PreimageError as exc:
                for t in idx:
                    failures[t] = f"witness push at level {level}: {exc}"
                idx = np.array([], dtype=int)
                break
            link_points.append(np.column_stack([X, Ybar, Zc]))
            Zc = out[:, 1 + ny:]
            if level == 1:
                witness[idx] = np.column_stack([out[:, 0], Ybar, Zc])
                vals = prev.evaluate(idx, Zc)[0]
                w_resid[idx] = np.max(np.abs(vals - np.column_stack([out[:, 0], Ybar])), axis=1)
    member = [None] * trials
    if depth >= 1:
        ok = np.array([not f and np.all(np.isfinite(witness[t])) for t, f in enumerate(failures)])
        if np.any(ok):
            idx = np.nonzero(ok)[0]
            res = _membership(system, choices[idx], witness[idx], tol)
            for t, r in zip(idx, res):
                member[t] = r

    literal = [None] * trials
    if literal_checks and depth >= 1:
        for t in range(min(literal_checks, trials)):
            if member[t] is not None:
                literal[t] = _literal_discrepancy(params, cover, choices[t], member[t].orbit, orientation)

    records = []
    for t in range(trials):
        pairs = [(cover.pairs[j].k, cover.pairs[j].m) for j in choices[t, :len(rates[t])]]
        fail = failures[t]
        mem = member[t]
        if not fail and depth >= 1:
            D = logD[t]
            if not all(b < a for a, b in zip(D, D[1:])):
                fail = "diameter bound is not strictly decreasing"
            elif D[-1] >= math.log10(tol):
                fail = f"final diameter bound 1e{D[-1]:.1f} is not below tol"
            elif not (w_resid[t] <= tol):
                fail = f"witness misses the initial disc by {w_resid[t]:.3g}"
            elif mem is None or not mem.member:
                step = None if mem is None else mem.failing_step
                fail = f"witness backward orbit leaves the box at step {step}" if step else \
                    "witness is not recovered by the backward orbit"
        if depth == 0:
            fail = "no refinement"
        records.append(TrialRecord(
            trial=t, disc=family.row(t), pairs=pairs, log10_diameters=logD[t], z_rates=rates[t],
            margins=margins[t], residuals=residuals[t], proper_margins=proper[t],
            witness=None if not np.all(np.isfinite(witness[t])) else witness[t].tolist(),
            witness_residual=None if not np.isfinite(w_resid[t]) else float(w_resid[t]),
            membership=bool(mem.member) if mem is not None else False,
            membership_step=None if mem is None else mem.failing_step,
            literal_discrepancy=literal[t], passed=not fail, failure=fail))
    cone_info = {"orientation": cone.orientation.value, "K": cone.K}
    return BlenderCertificate(orientation, depth, trials, tol, seed, cover.to_dict(), cone_info, records, flags,
                              time.perf_counter() - t_start)


def _literal_discrepancy(params: CycleParams, cover: CoveringSet, choices: np.ndarray, orbit: np.ndarray,
                         orientation: str) -> float:
    """Largest mismatch when the witness orbit links are replayed through the literal composition."""
    ny = params.dims.ny
    worst = 0.0
    for l in range(1, orbit.shape[0]):
        pair = cover.pairs[int(choices[l - 1])]
        lit = LiteralReturn(params, pair.k, pair.m, check_box=False)
        cur, prev = orbit[l], orbit[l - 1]
        if orientation == "cs":
            # cross input (X_l, Y_{l-1}, Z_l) -> (X_{l-1}, Y_l, Z_{l-1})
            inp = np.concatenate([cur[:1], prev[1:1 + ny], cur[1 + ny:]])
            want = np.concatenate([prev[:1], cur[1:1 + ny], prev[1 + ny:]])
        else:
            nz0 = params.dims.nz
            # reversed coordinates (X', Y'=Z, Z'=Y); the direct return maps the older point to the newer one
            Xd, Zd, Yd = prev[0], prev[1:1 + nz0], prev[1 + nz0:]
            Xo, Zo, Yo = cur[0], cur[1:1 + nz0], cur[1 + nz0:]
            inp = np.concatenate([[Xd], Yo, Zd])
            want = np.concatenate([[Xo], Yd, Zo])
        got = lit(inp)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst


# ---------------------------------------------------------------------------
# robustness


def transition_coefficient_names(params: CycleParams) -> list[str]:
    names = []
    for layout in (_F12_LAYOUT[params.case], _F21_LAYOUT[params.case]):
        for i, o in enumerate(layout.outs):
            for j, name_in in enumerate(layout.ins):
                if (i, j) == (0, 0):
                    continue
                if _block_size(o, params.dims) and _block_size(name_in, params.dims):
                    names.append(f"{layout.prefix}{i + 1}{j + 1}")
    return names


def perturb_transitions(params: CycleParams, magnitude: float, seed: int = 0) -> CycleParams:
    """Copy of ``params`` with uniform noise of the given size added to every transition coefficient."""
    rng = np.random.default_rng(seed)
    a = params.a + rng.uniform(-magnitude, magnitude)
    b = params.b + rng.uniform(-magnitude, magnitude)
    a_ij, b_ij = dict(params.a_ij), dict(params.b_ij)
    for name in transition_coefficient_names(params):
        block = params.coeff(name)
        noisy = block + rng.uniform(-magnitude, magnitude, block.shape)
        (a_ij if name[0] == "a" else b_ij)[name] = noisy
    return params.with_updates(a=a, b=b, a_ij=a_ij, b_ij=b_ij)
