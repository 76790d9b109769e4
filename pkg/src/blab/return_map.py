"""First-return maps T_{k,m} = F21 o F2^m o F12 o F1^k near the heteroclinic point M1+.

Two evaluators are provided.  ``compose_T_km`` is the literal composition of
the model maps (including every nonlinear tail); ``cross_map_T_km`` is the
cross-form normal map, which replaces the local iterates by their linear parts
in closed form.  Both work in box coordinates (X, Y, Z) centred at M1+, and
both are naturally evaluated in cross form (X, Ybar, Z) -> (Xbar, Y, Zbar),
because Y is expanded by the return and cannot be prescribed forward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .cycle_model import (
    LOCAL_REACH,
    CHART_RADIUS,
    ChartEscapeError,
    CycleParams,
    MultiplierCase,
    _f12_relation,
    _f21_relation,
    focus_phases,
    local_jacobian_F1,
    local_jacobian_F2,
    local_map_F1,
    local_map_F2,
    transition_F12,
    transition_F21,
    transition_jacobian_F12,
    transition_jacobian_F21,
)


class BoxViolationError(ValueError):
    """An input point lies outside the box Pi where the cross form is asserted."""


class NonContractionError(RuntimeError):
    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


class NonConvergenceError(RuntimeError):
    pass


class NearParabolicError(ValueError):
    pass


def _need_saddle(params: CycleParams, what: str) -> None:
    if params.case is not MultiplierCase.SADDLE:
        raise NotImplementedError(f"{what} is implemented for the saddle case only")


_TINY = 2.2250738585072014e-308


def lam_gamma_power(params: CycleParams, k: int, m: int) -> float:
    """lambda^k gamma^m with sign bookkeeping; log space only when a direct power would under/overflow."""
    try:
        lk, gm = abs(params.lam) ** k, abs(params.gamma) ** m
        mag = lk * gm
    except OverflowError:
        mag = 0.0
    if not (lk >= _TINY and math.isfinite(gm) and _TINY <= mag < math.inf):
        mag = math.exp(k * math.log(abs(params.lam)) + m * math.log(abs(params.gamma)))
    sign = (-1.0 if params.lam < 0 and k % 2 else 1.0) * (-1.0 if params.gamma < 0 and m % 2 else 1.0)
    return sign * mag


# ---------------------------------------------------------------------------
# return coefficients


@dataclass(frozen=True)
class ReturnCoeffs:
    """Affine skeleton Xbar = A_km X + B_km of the central return dynamics (at mu = 0).

    ``mu_shift`` is the exact additive effect of the splitting parameter on the
    central output (b gamma^m mu in the saddle and saddle-focus cases).
    """

    k: int
    m: int
    case: MultiplierCase
    A_km: float
    B_km: float
    lam_gamma: float
    mu_shift: float = 0.0
    A: float | None = None
    B: float | None = None
    C: float | None = None
    D: float | None = None
    eta1: float | None = None
    eta2: float | None = None
    eta3: float | None = None

    @property
    def B_mu(self) -> float:
        return self.B_km + self.mu_shift

    def R(self, X: Any) -> Any:
        """Central affine map R_km(X) = A_km X + B_km (mu = 0)."""
        return self.A_km * np.asarray(X) + self.B_km

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in ("k", "m", "A_km", "B_km", "lam_gamma", "mu_shift",
                                              "A", "B", "C", "D", "eta1", "eta2", "eta3")}
        out["case"] = self.case.value
        return out


def return_coeffs(params: CycleParams, k: int, m: int) -> ReturnCoeffs:
    if k < 1 or m < 1:
        raise ValueError("k and m must be positive")
    lg = lam_gamma_power(params, k, m)
    gm = math.copysign(math.exp(m * math.log(abs(params.gamma))), 1.0 if params.gamma > 0 or m % 2 == 0 else -1.0)
    if params.case is MultiplierCase.SADDLE:
        a, b = params.a, params.b
        A_km = a * b * lg
        B_km = A_km * params.x_plus[0] - b * params.u_minus[0]
        return ReturnCoeffs(k, m, params.case, A_km, float(B_km), lg, mu_shift=b * gm * params.mu)
    ph = focus_phases(params)
    if params.case is MultiplierCase.SADDLE_FOCUS:
        w = params.omega
        A_km = lg * ph["A"] * math.sin(k * w + ph["eta1"])
        B_km = lg * ph["B"] * math.sin(k * w + ph["eta2"]) - params.b * params.u_minus[0]
        return ReturnCoeffs(k, m, params.case, A_km, B_km, lg, mu_shift=params.b * gm * params.mu,
                            A=ph["A"], B=ph["B"], eta1=ph["eta1"], eta2=ph["eta2"])
    w1 = params.omega1
    norm = math.sqrt(1.0 + float(params.coeff("a14")[0, 0]) ** 2)
    A_km = lg * ph["C"] / norm * math.sin(k * w1 + ph["eta1"])
    B_km = lg * ph["D"] / norm * math.sin(k * w1 + ph["eta2"]) - params.u_minus[0] / norm
    return ReturnCoeffs(k, m, params.case, A_km, B_km, lg, A=ph["A"], B=ph["B"], C=ph["C"], D=ph["D"],
                        eta1=ph["eta1"], eta2=ph["eta2"], eta3=ph["eta3"])


# ---------------------------------------------------------------------------
# box coordinates near M1+ (saddle)


class BoxChart:
    """Coordinates (X, Y, Z) near M1+ in which F21(W^u_loc(O2)) is {Z = 0}.

    X = x - x+ - b13 y,  Y = y,  Z = z - z+ - zeta(X, y), where zeta is the
    z-offset of the image of {v~ = 0} under F21.
    """

    def __init__(self, params: CycleParams):
        _need_saddle(params, "BoxChart")
        self.p = params
        dm = params.dims
        self.ny, self.nz = dm.ny, dm.nz
        self.b = params.b
        self.b13 = params.coeff("b13")[0]          # (ny,)
        self.b31 = params.coeff("b31")[:, 0]       # (nz,)
        self.b33 = params.coeff("b33")             # (nz, ny)
        self.c_t = params.tails.c_t
        self.x_plus = params.x_plus[0]
        self.z_plus = params.z_plus

    def _du(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        # solve b du + c_t (du^2 + |Y|^2) = X for the branch through du = X/b
        r = X - self.c_t * np.sum(Y * Y, axis=1)
        if self.c_t == 0.0:
            return r / self.b
        disc = self.b * self.b + 4.0 * self.c_t * r
        if np.any(disc < 0):
            raise ChartEscapeError("box chart: point outside the domain of the central coordinate")
        return 2.0 * r / (self.b + math.copysign(1.0, self.b) * np.sqrt(disc))

    def zeta(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        du = self._du(X, Y)
        tail = self.c_t * (du * du + np.sum(Y * Y, axis=1))
        return du[:, None] * self.b31 + Y @ self.b33.T + tail[:, None]

    def _zeta_derivs(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        du = self._du(X, Y)
        denom = self.b + 2.0 * self.c_t * du
        ddu_dX = 1.0 / denom
        ddu_dY = -2.0 * self.c_t * Y / denom[:, None]
        dz_ddu = self.b31[None, :] + 2.0 * self.c_t * du[:, None]         # (N, nz)
        zX = dz_ddu * ddu_dX[:, None]
        zY = dz_ddu[:, :, None] * ddu_dY[:, None, :] + self.b33[None] + 2.0 * self.c_t * Y[:, None, :]
        return zX, zY

    def to_box(self, pts: np.ndarray) -> np.ndarray:
        x, y, z = pts[:, :1], pts[:, 1:1 + self.ny], pts[:, 1 + self.ny:]
        X = x[:, 0] - self.x_plus - y @ self.b13
        Z = z - self.z_plus - self.zeta(X, y)
        return np.column_stack([X, y, Z])

    def from_box(self, box: np.ndarray) -> np.ndarray:
        X, Y, Z = box[:, 0], box[:, 1:1 + self.ny], box[:, 1 + self.ny:]
        x = X + self.x_plus + Y @ self.b13
        z = Z + self.z_plus + self.zeta(X, Y)
        return np.column_stack([x, Y, z])

    def jac_from_box(self, box: np.ndarray) -> np.ndarray:
        X, Y = box[:, 0], box[:, 1:1 + self.ny]
        n, d, ny = box.shape[0], box.shape[1], self.ny
        zX, zY = self._zeta_derivs(X, Y)
        J = np.zeros((n, d, d))
        J[:, 0, 0] = 1.0
        J[:, 0, 1:1 + ny] = self.b13
        J[:, 1:1 + ny, 1:1 + ny] = np.eye(ny)
        J[:, 1 + ny:, 0] = zX
        J[:, 1 + ny:, 1:1 + ny] = zY
        J[:, 1 + ny:, 1 + ny:] = np.eye(self.nz)
        return J

    def jac_to_box(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.jac_from_box(self.to_box(pts)))


# ---------------------------------------------------------------------------
# orbit boundary-value problem shared by the literal and normal-form evaluators


@dataclass
class ReturnOrbit:
    """Orbit pieces of a return, batched over N points.

    xs, ys, zs: (k+1, N, .) local orbit near O1 (index 0 is the entry point);
    us, vs, ws: (m+1, N, .) local orbit near O2; ``exit`` the image near M1+.
    """

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    us: np.ndarray
    vs: np.ndarray
    ws: np.ndarray
    exit: np.ndarray
    sweeps: int


def _tail_forward(c: np.ndarray, s: np.ndarray, f: np.ndarray, lin_c: np.ndarray, lin_f: np.ndarray,
                  c_g: float) -> tuple[np.ndarray, np.ndarray]:
    r2 = np.sum(c * c, axis=1, keepdims=True)
    c_new = c @ lin_c.T + c_g * r2 * s[:, :1]
    f_new = f @ lin_f.T + c_g * r2 * s[:, :1] if f.shape[1] else f
    return c_new, f_new


class _SaddleReturnSolver:
    def __init__(self, params: CycleParams, k: int, m: int, literal: bool):
        _need_saddle(params, "the return-orbit solver")
        if k < 1 or m < 1:
            raise ValueError("k and m must be positive")
        self.p, self.k, self.m, self.literal = params, int(k), int(m), literal
        self.chart = BoxChart(params)
        self.rel12, self.rel21 = _f12_relation(params), _f21_relation(params)
        dm = params.dims
        self.ny, self.nz, self.nv, self.nw = dm.ny, dm.nz, dm.nv, dm.nw
        self.c_g = params.tails.c_g
        self.P1inv_k = np.linalg.matrix_power(np.linalg.inv(params.P1), self.k)
        self.P2_k = np.linalg.matrix_power(params.P2, self.k) if self.nz else params.P2
        self.Q1_m = np.linalg.matrix_power(params.Q1, self.m) if self.nv else params.Q1
        self.Q2inv_m = np.linalg.matrix_power(np.linalg.inv(params.Q2), self.m) if self.nw else params.Q2
        self.Q2inv = np.linalg.inv(params.Q2) if self.nw else params.Q2
        self.lam_k = params.lam ** self.k
        self.gam_m = params.gamma ** self.m

    def solve(self, X: np.ndarray, Ybar: np.ndarray, Z: np.ndarray, tol: float = 1e-15,
              max_sweeps: int = 200) -> ReturnOrbit:
        p, k, m = self.p, self.k, self.m
        n = X.shape[0]
        y0 = np.zeros((n, self.ny))
        w0 = np.zeros((n, self.nw))
        ys = np.zeros((k + 1, n, self.ny))
        ws = np.zeros((m + 1, n, self.nw))
        lam = np.array([[p.lam]])
        gam = np.array([[p.gamma]])
        for sweep in range(1, max_sweeps + 1):
            entry = self.chart.from_box(np.column_stack([X, y0, Z]))
            x0, z0 = entry[:, :1], entry[:, 1 + self.ny:]
            if self.literal:
                xs = np.empty((k + 1, n, 1))
                zs = np.empty((k + 1, n, self.nz))
                xs[0], zs[0] = x0, z0
                for i in range(k):
                    xs[i + 1], zs[i + 1] = _tail_forward(xs[i], ys[i], zs[i], lam, p.P2, self.c_g)
                xk, zk = xs[k], zs[k]
            else:
                xk, zk = self.lam_k * x0, z0 @ self.P2_k.T
            o12 = self.rel12.evaluate({"xt": xk, "w": w0, "zt": zk})
            u0, v0, yk = o12["u"], o12["v"], o12["yt"]
            if self.literal:
                us = np.empty((m + 1, n, 1))
                vs = np.empty((m + 1, n, self.nv))
                us[0], vs[0] = u0, v0
                for j in range(m):
                    r2 = us[j] ** 2
                    us[j + 1] = us[j] * p.gamma + self.c_g * r2 * vs[j][:, :1]
                    vs[j + 1] = vs[j] @ p.Q1.T + self.c_g * r2 * vs[j]
                um, vm = us[m], vs[m]
            else:
                um, vm = self.gam_m * u0, v0 @ self.Q1_m.T
            o21 = self.rel21.evaluate({"du": um - p.u_minus[0], "vt": vm, "y": Ybar})
            wm = o21["wt"]
            if self.literal:
                ws_new = np.empty_like(ws)
                ws_new[m] = wm
                for j in range(m - 1, -1, -1):
                    r2 = us[j] ** 2
                    ws_new[j] = (ws_new[j + 1] - self.c_g * r2 * vs[j][:, :1]) @ self.Q2inv.T
                ys_new = np.empty_like(ys)
                ys_new[k] = yk
                for i in range(k - 1, -1, -1):
                    r2 = np.sum(xs[i] ** 2, axis=1)
                    if self.ny == 1:
                        ys_new[i] = ys_new[i + 1] / (p.P1[0, 0] + self.c_g * r2[:, None])
                    else:
                        mats = p.P1[None] + self.c_g * r2[:, None, None] * np.eye(self.ny)
                        ys_new[i] = np.linalg.solve(mats, ys_new[i + 1][..., None])[..., 0]
                w_new, y_new = ws_new[0], ys_new[0]
                change = max(np.max(np.abs(ws_new - ws), initial=0.0), np.max(np.abs(ys_new - ys), initial=0.0))
                ws, ys = ws_new, ys_new
            else:
                w_new = wm @ self.Q2inv_m.T
                y_new = yk @ self.P1inv_k.T
                change = max(np.max(np.abs(w_new - w0), initial=0.0), np.max(np.abs(y_new - y0), initial=0.0))
            w0, y0 = w_new, y_new
            if not np.all(np.isfinite(w0)) or not np.all(np.isfinite(y0)):
                raise ChartEscapeError("return orbit diverged while solving the boundary-value problem")
            if change <= tol * (1.0 + max(np.max(np.abs(w0), initial=0.0), np.max(np.abs(y0), initial=0.0))):
                break
        else:
            raise NonConvergenceError(f"return orbit for (k, m) = ({k}, {m}) did not converge")
        # final consistent pass with converged unknowns
        entry = self.chart.from_box(np.column_stack([X, y0, Z]))
        if self.literal:
            xs = np.empty((k + 1, n, 1))
            zs = np.empty((k + 1, n, self.nz))
            xs[0], zs[0] = entry[:, :1], entry[:, 1 + self.ny:]
            for i in range(k):
                xs[i + 1], zs[i + 1] = _tail_forward(xs[i], ys[i], zs[i], lam, p.P2, self.c_g)
        else:
            xs = np.stack([entry[:, :1], self.lam_k * entry[:, :1]])
            zs = np.stack([entry[:, 1 + self.ny:], entry[:, 1 + self.ny:] @ self.P2_k.T])
            ys = np.stack([y0, y0 @ np.linalg.inv(self.P1inv_k).T])
        o12 = self.rel12.evaluate({"xt": xs[-1], "w": w0, "zt": zs[-1]})
        if self.literal:
            us = np.empty((m + 1, n, 1))
            vs = np.empty((m + 1, n, self.nv))
            us[0], vs[0] = o12["u"], o12["v"]
            for j in range(m):
                r2 = us[j] ** 2
                us[j + 1] = us[j] * p.gamma + self.c_g * r2 * vs[j][:, :1]
                vs[j + 1] = vs[j] @ p.Q1.T + self.c_g * r2 * vs[j]
        else:
            us = np.stack([o12["u"], self.gam_m * o12["u"]])
            vs = np.stack([o12["v"], o12["v"] @ self.Q1_m.T])
            ws = np.stack([w0, w0 @ np.linalg.inv(self.Q2inv_m).T if self.nw else w0])
        o21 = self.rel21.evaluate({"du": us[-1] - p.u_minus[0], "vt": vs[-1], "y": Ybar})
        exit_pt = np.column_stack([o21["x"], Ybar, o21["z"]])
        orbit = ReturnOrbit(xs, ys, zs, us, vs, ws, exit_pt, sweep)
        self._check_orbit(orbit)
        return orbit

    def _check_orbit(self, orb: ReturnOrbit) -> None:
        p = self.p

        def far(pts: np.ndarray, centre: np.ndarray, radius: float) -> bool:
            return bool(np.any(np.max(np.abs(pts - centre), axis=-1) > radius) or not np.all(np.isfinite(pts)))

        side1 = np.concatenate([orb.xs, orb.ys, orb.zs], axis=2)
        side2 = np.concatenate([orb.us, orb.vs, orb.ws], axis=2)
        if far(side1[0], p.M1_plus, CHART_RADIUS):
            raise ChartEscapeError("return orbit: entry point is outside the chart around M1+")
        for i in range(1, side1.shape[0] - 1):
            if far(side1[i], 0.0, LOCAL_REACH):
                raise ChartEscapeError(f"return orbit: F1 iterate {i} of {self.k} left the chart of O1")
        if far(side1[-1], p.M1_minus, CHART_RADIUS):
            raise ChartEscapeError(f"return orbit: F1 iterate {self.k} is outside the chart around M1-")
        if far(side2[0], p.M2_plus, CHART_RADIUS):
            raise ChartEscapeError("return orbit: F12 image is outside the chart around M2+")
        for j in range(1, side2.shape[0] - 1):
            if far(side2[j], 0.0, LOCAL_REACH):
                raise ChartEscapeError(f"return orbit: F2 iterate {j} of {self.m} left the chart of O2")
        if far(side2[-1], p.M2_minus, CHART_RADIUS):
            raise ChartEscapeError(f"return orbit: F2 iterate {self.m} is outside the chart around M2-")
        if far(orb.exit, p.M1_plus, CHART_RADIUS):
            raise ChartEscapeError("return orbit: F21 image is outside the chart around M1+")


def _as_batch(point: Any, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(point, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {arr.shape[1]}")
    return arr, single


def _check_box(arr: np.ndarray, delta: float, what: str) -> None:
    excess = np.max(np.abs(arr), axis=1)
    if np.any(excess > delta * (1.0 + 1e-12)):
        i = int(np.argmax(excess))
        raise BoxViolationError(f"{what}: point {i} has sup-norm {excess[i]:.6g} > delta = {delta}")


class _CrossEvaluator:
    def __init__(self, params: CycleParams, k: int, m: int, literal: bool, check_box: bool):
        self.params, self.k, self.m = params, int(k), int(m)
        self.coeffs = return_coeffs(params, k, m)
        self.balanced = abs(self.coeffs.B_mu) < params.delta
        self.tag = "balanced" if self.balanced else "unbalanced"
        self._solver = _SaddleReturnSolver(params, k, m, literal)
        self.check_box = check_box

    def _split(self, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ny = self.params.dims.ny
        return arr[:, 0], arr[:, 1:1 + ny], arr[:, 1 + ny:]

    def orbit(self, cross_point: Any) -> ReturnOrbit:
        arr, _ = _as_batch(cross_point, self.params.d)
        if self.check_box:
            _check_box(arr, self.params.delta, f"T_({self.k},{self.m}) cross input")
        X, Ybar, Z = self._split(arr)
        return self._solver.solve(X, Ybar, Z)

    def __call__(self, cross_point: Any) -> np.ndarray:
        """(X, Ybar, Z) -> (Xbar, Y, Zbar); accepts one point or a batch (N, d)."""
        arr, single = _as_batch(cross_point, self.params.d)
        orb = self.orbit(arr)
        box_out = self._solver.chart.to_box(orb.exit)
        out = np.column_stack([box_out[:, 0], orb.ys[0], box_out[:, 1 + self.params.dims.ny:]])
        return out[0] if single else out


class CrossMap(_CrossEvaluator):
    """Cross-form normal map of T_{k,m}: linear local iterates, exact transition maps."""

    def __init__(self, params: CycleParams, k: int, m: int, check_box: bool = True):
        super().__init__(params, k, m, literal=False, check_box=check_box)


class NormalFormBatch:
    """Cross-form normal map with a separate pair (k, m) for every point.

    Same relations as ``CrossMap``; the local iterates are the closed-form
    linear powers, gathered per point, so one call serves a whole batch of
    orbits that follow different return pairs.
    """

    def __init__(self, params: CycleParams, ks: Any, ms: Any):
        _need_saddle(params, "NormalFormBatch")
        ks = np.atleast_1d(np.asarray(ks, dtype=int))
        ms = np.atleast_1d(np.asarray(ms, dtype=int))
        ks, ms = np.broadcast_arrays(ks, ms)
        if np.any(ks < 1) or np.any(ms < 1):
            raise ValueError("k and m must be positive")
        self.params, self.ks, self.ms = params, ks.copy(), ms.copy()
        self.chart = BoxChart(params)
        self.rel12, self.rel21 = _f12_relation(params), _f21_relation(params)
        dm = params.dims
        self.ny, self.nz, self.nv, self.nw = dm.ny, dm.nz, dm.nv, dm.nw
        self.lam_k = (params.lam ** ks.astype(float))[:, None]
        self.gam_m = (params.gamma ** ms.astype(float))[:, None]
        self.P1_k = self._powers(params.P1, ks)
        self.P2_k = self._powers(params.P2, ks)
        self.Q1_m = self._powers(params.Q1, ms)
        self.Q2_m = self._powers(params.Q2, ms)
        self.P1inv_k = np.linalg.inv(self.P1_k)
        self.Q2inv_m = np.linalg.inv(self.Q2_m) if self.nw else self.Q2_m

    @staticmethod
    def _powers(mat: np.ndarray, exps: np.ndarray) -> np.ndarray:
        n = mat.shape[0]
        if n == 0:
            return np.zeros((exps.size, 0, 0))
        uniq, inv = np.unique(exps, return_inverse=True)
        table = np.stack([np.linalg.matrix_power(mat, int(e)) for e in uniq])
        return table[inv]

    def _take(self, sel: np.ndarray | None, *arrs: np.ndarray) -> list[np.ndarray]:
        return [a if sel is None else a[sel] for a in arrs]

    def _orbit(self, X: np.ndarray, Ybar: np.ndarray, Z: np.ndarray, sel: np.ndarray | None,
               tol: float = 1e-15, max_sweeps: int = 200) -> dict[str, np.ndarray]:
        p = self.params
        lam_k, gam_m, P1inv, P2, Q1, Q2inv = self._take(sel, self.lam_k, self.gam_m, self.P1inv_k,
                                                       self.P2_k, self.Q1_m, self.Q2inv_m)
        n = X.shape[0]
        y0 = np.zeros((n, self.ny))
        w0 = np.zeros((n, self.nw))
        mv = lambda mats, vecs: np.einsum("nij,nj->ni", mats, vecs)  # noqa: E731
        for sweep in range(max_sweeps):
            entry = self.chart.from_box(np.column_stack([X, y0, Z]))
            xk = lam_k * entry[:, :1]
            zk = mv(P2, entry[:, 1 + self.ny:])
            o12 = self.rel12.evaluate({"xt": xk, "w": w0, "zt": zk})
            um = gam_m * o12["u"]
            vm = mv(Q1, o12["v"])
            o21 = self.rel21.evaluate({"du": um - p.u_minus[0], "vt": vm, "y": Ybar})
            w_new = mv(Q2inv, o21["wt"])
            y_new = mv(P1inv, o12["yt"])
            # elementwise relative test: tiny components (and complex-step parts) must settle too
            settled = (np.all(np.abs(w_new - w0) <= tol * np.abs(w_new) + 1e-300)
                       and np.all(np.abs(y_new - y0) <= tol * np.abs(y_new) + 1e-300))
            w0, y0 = w_new, y_new
            if not (np.all(np.isfinite(w0)) and np.all(np.isfinite(y0))):
                raise ChartEscapeError("normal-form return orbit diverged")
            if settled and sweep >= 1:
                break
        else:
            raise NonConvergenceError("normal-form return orbit did not converge")
        entry = self.chart.from_box(np.column_stack([X, y0, Z]))
        xk = lam_k * entry[:, :1]
        zk = mv(P2, entry[:, 1 + self.ny:])
        o12 = self.rel12.evaluate({"xt": xk, "w": w0, "zt": zk})
        um = gam_m * o12["u"]
        vm = mv(Q1, o12["v"])
        o21 = self.rel21.evaluate({"du": um - p.u_minus[0], "vt": vm, "y": Ybar})
        exit_pt = np.column_stack([o21["x"], Ybar, o21["z"]])
        return {"entry": entry, "side1": np.column_stack([xk, o12["yt"], zk]),
                "side2": np.column_stack([um, vm, o21["wt"]]), "exit": exit_pt, "y0": y0}

    def cross(self, pts: np.ndarray, sel: np.ndarray | None = None) -> np.ndarray:
        """(X, Ybar, Z) -> (Xbar, Y, Zbar) for a batch; ``sel`` picks which stored pairs apply to the rows."""
        pts = np.atleast_2d(np.asarray(pts))
        if not np.iscomplexobj(pts):
            pts = pts.astype(float)
        ny = self.ny
        if sel is None and pts.shape[0] != self.ks.size:
            if self.ks.size != 1:
                raise ValueError("number of points does not match the number of pairs")
            sel = np.zeros(pts.shape[0], dtype=int)
        orb = self._orbit(pts[:, 0], pts[:, 1:1 + ny], pts[:, 1 + ny:], sel)
        Xbar, Zbar = self._exit_box(orb, pts[:, 1:1 + ny])
        return np.column_stack([Xbar, orb["y0"], Zbar])

    def _exit_box(self, orb: dict[str, np.ndarray], Ybar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Box coordinates of the exit point, with Zbar written as a multiple of v~.

        Subtracting the graph zeta(Xbar, Y) from z directly cancels two terms
        of the size of du and loses every digit of Zbar below ~1e-16 |du|.
        """
        p, chart = self.params, self.chart
        du = orb["side2"][:, :1] - p.u_minus[0]
        vt = orb["side2"][:, 1:1 + self.nv]
        c_t = chart.c_t
        Xbar = orb["exit"][:, 0] - chart.x_plus - Ybar @ chart.b13
        b12 = p.coeff("b12")
        b32 = p.coeff("b32")
        v2 = np.sum(vt * vt, axis=1, keepdims=True)
        r = vt @ b12.T + c_t * v2
        lead = chart.b + 2.0 * c_t * du
        if c_t == 0.0:
            shift = r / lead
        else:
            root = np.sqrt(lead * lead + 4.0 * c_t * r)
            sgn = np.where(np.real(lead) >= 0, 1.0, -1.0)
            shift = 2.0 * r / (lead + sgn * root)
        Zbar = (-shift * chart.b31[None, :] + vt @ b32.T
                + c_t * (v2 - shift * (2.0 * du + shift)) * np.ones((1, self.nz)))
        return Xbar, Zbar

    def jacobian(self, pts: np.ndarray, sel: np.ndarray | None = None, inverse: bool = False
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Box-coordinate Jacobian of the forward normal-form return (or its inverse)."""
        p = self.params
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ny = self.ny
        if sel is None and pts.shape[0] != self.ks.size:
            sel = np.zeros(pts.shape[0], dtype=int)
        orb = self._orbit(pts[:, 0], pts[:, 1:1 + ny], pts[:, 1 + ny:], sel)
        lam_k, gam_m, P1, P2, Q1, Q2 = self._take(sel, self.lam_k, self.gam_m, self.P1_k,
                                                 self.P2_k, self.Q1_m, self.Q2_m)
        n = pts.shape[0]
        d = p.d

        def blockdiag(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
            out = np.zeros((n, d, d))
            out[:, 0, 0] = c[:, 0]
            na = a.shape[1]
            out[:, 1:1 + na, 1:1 + na] = a
            out[:, 1 + na:, 1 + na:] = b
            return out

        L1 = blockdiag(lam_k, P1, P2)
        L2 = blockdiag(gam_m, Q1, Q2)
        J12 = transition_jacobian_F12(orb["side1"], p)
        J21 = transition_jacobian_F21(orb["side2"], p)
        start_box = self.chart.to_box(orb["entry"])
        end_box = self.chart.to_box(orb["exit"])
        d_in = self.chart.jac_from_box(start_box)
        d_out = self.chart.jac_to_box(orb["exit"])
        mats = [d_in, L1, J12, L2, J21, d_out]
        if inverse:
            acc = np.broadcast_to(np.eye(d), (n, d, d)).copy()
            for mat in mats:
                acc = np.einsum("nij,njk->nik", acc, np.linalg.inv(mat))
        else:
            acc = np.broadcast_to(np.eye(d), (n, d, d)).copy()
            for mat in mats:
                acc = np.einsum("nij,njk->nik", mat, acc)
        return start_box, end_box, acc


class LiteralReturn(_CrossEvaluator):
    """Literal T_{k,m} = F21 o F2^m o F12 o F1^k with every tail, in box coordinates.

    ``__call__`` evaluates the cross form by solving the orbit boundary-value
    problem; ``forward`` composes the maps forward; ``jacobian`` gives the
    analytic chain-rule derivative of the forward map in box coordinates.
    """

    def __init__(self, params: CycleParams, k: int, m: int, check_box: bool = True):
        super().__init__(params, k, m, literal=True, check_box=check_box)
        self.chain = ModelChain(params, ["F1"] * self.k + ["F12"] + ["F2"] * self.m + ["F21"])

    def forward_model(self, point: Any) -> np.ndarray:
        """Forward composition on model coordinates (x, y, z) near M1+."""
        return self.chain(point)

    def forward(self, box_point: Any) -> np.ndarray:
        """Forward composition on box coordinates (X, Y, Z) -> (Xbar, Ybar, Zbar)."""
        arr, single = _as_batch(box_point, self.params.d)
        chart = self._solver.chart
        out = chart.to_box(self.chain(chart.from_box(arr)))
        return out[0] if single else out

    def jacobian(self, cross_point: Any, inverse: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Box-coordinate Jacobian of the forward map along the orbit through a cross point.

        Returns (box point, image box point, DT) or, with ``inverse``, DT^{-1}
        assembled as the product of per-step inverses.
        """
        arr, single = _as_batch(cross_point, self.params.d)
        orb = self.orbit(arr)
        chart = self._solver.chart
        start_model = np.concatenate([orb.xs[0], orb.ys[0], orb.zs[0]], axis=1)
        start_box = chart.to_box(start_model)
        end_box = chart.to_box(orb.exit)
        steps = _orbit_step_jacobians(self.params, orb)
        d_in = chart.jac_from_box(start_box)
        d_out = chart.jac_to_box(orb.exit)
        if not inverse:
            acc = d_in
            for jac in steps:
                acc = np.einsum("nij,njk->nik", jac, acc)
            total = np.einsum("nij,njk->nik", d_out, acc)
        else:
            acc = np.linalg.inv(d_out)
            for jac in reversed(steps):
                acc = np.einsum("nij,njk->nik", np.linalg.inv(jac), acc)
            total = np.einsum("nij,njk->nik", np.linalg.inv(d_in), acc)
        if single:
            return start_box[0], end_box[0], total[0]
        return start_box, end_box, total


def _orbit_step_jacobians(params: CycleParams, orb: ReturnOrbit) -> list[np.ndarray]:
    side1 = np.concatenate([orb.xs, orb.ys, orb.zs], axis=2)
    side2 = np.concatenate([orb.us, orb.vs, orb.ws], axis=2)
    k, m = side1.shape[0] - 1, side2.shape[0] - 1
    steps = [local_jacobian_F1(side1[i], params) for i in range(k)]
    steps.append(transition_jacobian_F12(side1[k], params))
    steps.extend(local_jacobian_F2(side2[j], params) for j in range(m))
    steps.append(transition_jacobian_F21(side2[m], params))
    return steps


def compose_T_km(params: CycleParams, k: int, m: int, check_box: bool = False) -> LiteralReturn:
    """Literal first-return map T_{k,m}; the oracle for every normal-form claim."""
    return LiteralReturn(params, k, m, check_box=check_box)


class FocusCrossMap:
    """Leading-order cross form in the focus cases: Xbar = A_km X + B_km, other outputs zero.

    The double-focus version evaluates the central relation with the tangent
    factors and refuses (k, m) where cos(m omega2 + eta3) or
    1 + b41 tan(m omega2 + eta3) is too close to zero.
    """

    COS_GUARD = 1e-6

    def __init__(self, params: CycleParams, k: int, m: int, check_box: bool = True):
        self.params, self.k, self.m = params, int(k), int(m)
        self.coeffs = return_coeffs(params, k, m)
        self.check_box = check_box
        self.tag = "leading-order"
        if params.case is MultiplierCase.DOUBLE_FOCUS:
            phase = m * params.omega2 + self.coeffs.eta3
            c = math.cos(phase)
            if abs(c) < self.COS_GUARD:
                raise ValueError(f"cos(m*omega2 + eta3) = {c:.3g} is below the guard {self.COS_GUARD}: "
                                 "tangent singularity")
            self._tan = math.tan(phase)
            b41 = float(params.coeff("b41")[0, 0])
            self._den = 1.0 + b41 * self._tan
            if abs(self._den) < self.COS_GUARD:
                raise ValueError("1 + b41 tan(m*omega2 + eta3) vanishes for this m")
            self._cos = c
        self.balanced = abs(self._central(np.zeros(1))[0]) < params.delta

    def _central(self, X: np.ndarray) -> np.ndarray:
        p, c = self.params, self.coeffs
        if p.case is MultiplierCase.SADDLE_FOCUS:
            return c.A_km * X + c.B_mu
        ph_k = self.k * p.omega1
        norm = math.sqrt(1.0 + float(p.coeff("a14")[0, 0]) ** 2)
        num = c.lam_gamma * (c.C * math.sin(ph_k + c.eta1) * X + c.D * math.sin(ph_k + c.eta2))
        rhs = num / (norm * self._cos) - p.u_minus[0] - self._tan * p.u_minus[1]
        return rhs / self._den

    def __call__(self, cross_point: Any) -> np.ndarray:
        arr, single = _as_batch(cross_point, self.params.d)
        if self.check_box:
            _check_box(arr, self.params.delta, f"T_({self.k},{self.m}) cross input")
        out = np.zeros_like(arr)
        out[:, 0] = self._central(arr[:, 0])
        return out[0] if single else out


def cross_map_T_km(params: CycleParams, k: int, m: int, check_box: bool = True) -> CrossMap | FocusCrossMap:
    """Cross-form evaluator (X, Ybar, Z) -> (Xbar, Y, Zbar) of T_{k,m}."""
    if params.case is MultiplierCase.SADDLE:
        return CrossMap(params, k, m, check_box=check_box)
    return FocusCrossMap(params, k, m, check_box=check_box)


# ---------------------------------------------------------------------------
# generic chains of model maps


class ModelChain:
    """Composition of model maps given as a word over {F1, F2, F12, F21} (applied left to right)."""

    def __init__(self, params: CycleParams, word: Sequence[str], check_charts: bool = True):
        self.params, self.word, self.check = params, list(word), check_charts
        valid = {"F1", "F2", "F12", "F21"}
        bad = [w for w in self.word if w not in valid]
        if bad:
            raise ValueError(f"unknown map names {bad}")
        dims = params.dims
        side = None
        for w in self.word:
            src = {"F1": 1, "F12": 1, "F2": 2, "F21": 2}[w]
            if side is not None and side != src:
                raise ValueError("map word is not composable: coordinate sides do not match")
            side = {"F1": 1, "F12": 2, "F2": 2, "F21": 1}[w]
        first = self.word[0] if self.word else "F1"
        self.dim_in = dims.n1 if first in ("F1", "F12") else dims.n2

    def _apply(self, name: str, pts: np.ndarray, index: int) -> np.ndarray:
        fn = {"F1": local_map_F1, "F2": local_map_F2, "F12": transition_F12, "F21": transition_F21}[name]
        try:
            if name in ("F12", "F21"):
                return fn(pts, self.params, check_chart=self.check)
            return fn(pts, self.params)
        except ChartEscapeError as exc:
            raise ChartEscapeError(f"step {index} ({name}) of the composition: {exc}") from None

    def orbit(self, point: Any) -> list[np.ndarray]:
        arr, _ = _as_batch(point, self.dim_in)
        pts = [arr]
        for i, name in enumerate(self.word):
            pts.append(self._apply(name, pts[-1], i))
        return pts

    def __call__(self, point: Any) -> np.ndarray:
        single = np.asarray(point).ndim == 1
        out = self.orbit(point)[-1]
        return out[0] if single else out

    def jacobian(self, point: Any) -> np.ndarray:
        single = np.asarray(point).ndim == 1
        pts = self.orbit(point)
        jac_fn = {"F1": local_jacobian_F1, "F2": local_jacobian_F2,
                  "F12": transition_jacobian_F12, "F21": transition_jacobian_F21}
        acc = None
        for name, pt in zip(self.word, pts[:-1]):
            j = jac_fn[name](pt, self.params)
            acc = j if acc is None else np.einsum("nij,njk->nik", j, acc)
        if acc is None:
            acc = np.broadcast_to(np.eye(self.dim_in), (pts[0].shape[0], self.dim_in, self.dim_in)).copy()
        return acc[0] if single else acc


# ---------------------------------------------------------------------------
# codings and their orbits


@dataclass(frozen=True)
class Coding:
    pairs: tuple[tuple[int, int], ...]
    periodic: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((int(k), int(m)) for k, m in self.pairs))
        if any(k < 1 or m < 1 for k, m in self.pairs):
            raise ValueError("coding entries must be positive integer pairs")

    def to_json(self) -> str:
        return json.dumps({"pairs": [list(p) for p in self.pairs], "periodic": self.periodic})

    @classmethod
    def from_json(cls, text: str) -> "Coding":
        data = json.loads(text)
        if isinstance(data, list):
            return cls(tuple(tuple(p) for p in data))
        return cls(tuple(tuple(p) for p in data["pairs"]), bool(data.get("periodic", False)))


@dataclass
class CodingOrbit:
    """Points M_s = (X_s, Y_s, Z_s) with M_{s+1} = T_{k_s,m_s}(M_s).

    For a periodic coding of length L there are L points (M_L = M_0); for a
    finite window there are L + 1.
    """

    coding: Coding
    points: np.ndarray
    sweeps: int
    residual: float
    contraction_estimate: float

    def to_csv(self, ny: int = 1) -> str:
        d = self.points.shape[1]
        nz = d - 1 - ny
        header = ["s", "k", "m", "X"] + [f"Y{i + 1}" for i in range(ny)] + [f"Z{i + 1}" for i in range(nz)]
        rows = [",".join(header)]
        for s, pt in enumerate(self.points):
            k, m = self.coding.pairs[s] if s < len(self.coding.pairs) else ("", "")
            rows.append(",".join([str(s), str(k), str(m)] + [repr(float(v)) for v in pt]))
        return "\n".join(rows) + "\n"


def solve_coding(params: CycleParams, coding: Coding, tol: float = 1e-12, max_sweeps: int = 10_000,
                 literal: bool = True) -> CodingOrbit:
    """Orbit with prescribed coding by contraction on sequence space.

    X and Z are swept forward along the window and Y backward (X backward
    instead when the central coefficients expand).  Non-periodic windows use
    the boundary data X_0 = Z_0 = 0 and Y_L = 0.
    """
    _need_saddle(params, "solve_coding")
    if not coding.pairs:
        raise ValueError("empty coding")
    L = len(coding.pairs)
    d, ny = params.d, params.dims.ny
    maker = LiteralReturn if literal else CrossMap
    links = {pair: maker(params, *pair, check_box=False) for pair in set(coding.pairs)}
    coeffs = [return_coeffs(params, *pair) for pair in coding.pairs]
    expanding = all(abs(c.A_km) > 1.0 for c in coeffs)
    npts = L if coding.periodic else L + 1
    pts = np.zeros((npts, d))

    def idx(s: int) -> int:
        return s % L if coding.periodic else s

    def link_eval(s: int, X: float, Ybar: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return links[coding.pairs[s]](np.concatenate([[X], Ybar, Z]))

    diffs: list[float] = []
    for sweep in range(1, max_sweeps + 1):
        old = pts.copy()
        for s in range(L):
            a, b = idx(s), idx(s + 1)
            out = link_eval(s, pts[a, 0], pts[b, 1:1 + ny], pts[a, 1 + ny:])
            if not expanding:
                pts[b, 0] = out[0]
            pts[b, 1 + ny:] = out[1 + ny:]
            pts[a, 1:1 + ny] = out[1:1 + ny]
        for s in range(L - 1, -1, -1):
            a, b = idx(s), idx(s + 1)
            if expanding:
                pts[a, 0] = _invert_central(link_eval, s, pts[b, 0], pts[b, 1:1 + ny], pts[a, 1 + ny:],
                                            coeffs[s], pts[a, 0])
            out = link_eval(s, pts[a, 0], pts[b, 1:1 + ny], pts[a, 1 + ny:])
            pts[a, 1:1 + ny] = out[1:1 + ny]
        if not coding.periodic:
            pts[L, 1:1 + ny] = 0.0
            if expanding:
                pts[L, 0] = 0.0
            else:
                pts[0, 0] = 0.0
            pts[0, 1 + ny:] = 0.0
        diff = float(np.max(np.abs(pts - old)))
        diffs.append(diff)
        if not np.all(np.isfinite(pts)) or np.max(np.abs(pts)) > 10.0:
            raise NonContractionError("coding iteration diverged", _ratio(diffs))
        if diff < tol:
            break
        if sweep >= 8 and diffs[-1] > 0 and _ratio(diffs) >= 1.0:
            raise NonContractionError(
                f"coding iteration is not contracting (measured Lipschitz estimate {_ratio(diffs):.4g})",
                _ratio(diffs))
    else:
        raise NonConvergenceError(f"coding iteration did not converge within {max_sweeps} sweeps")
    residual = 0.0
    for s in range(L):
        a, b = idx(s), idx(s + 1)
        out = link_eval(s, pts[a, 0], pts[b, 1:1 + ny], pts[a, 1 + ny:])
        target = np.concatenate([[pts[b, 0]], pts[a, 1:1 + ny], pts[b, 1 + ny:]])
        residual = max(residual, float(np.max(np.abs(out - target))))
    return CodingOrbit(coding, pts, sweep, residual, _ratio(diffs))


def _ratio(diffs: list[float]) -> float:
    tail = [v for v in diffs[-6:] if v > 0]
    if len(tail) < 2:
        return 0.0
    return float((tail[-1] / tail[0]) ** (1.0 / (len(tail) - 1)))


def _invert_central(link_eval: Callable, s: int, target: float, Ybar: np.ndarray, Z: np.ndarray,
                    coeff: ReturnCoeffs, guess: float) -> float:
    X = (target - coeff.B_mu) / coeff.A_km if coeff.A_km else guess
    for _ in range(50):
        f0 = link_eval(s, X, Ybar, Z)[0] - target
        h = 1e-7
        slope = (link_eval(s, X + h, Ybar, Z)[0] - link_eval(s, X - h, Ybar, Z)[0]) / (2 * h)
        step = f0 / slope
        X -= step
        if abs(step) < 1e-16 + 1e-15 * abs(X):
            break
    return X


@dataclass(frozen=True)
class FixedPoint:
    point: np.ndarray
    multiplier: float
    multiplier_fd: float
    coeffs: ReturnCoeffs


def fixed_point(params: CycleParams, k: int, m: int, tol: float = 1e-12, parabolic_tol: float = 1e-6) -> FixedPoint:
    """Fixed point of T_{k,m} and its central multiplier dXbar/dX.

    The multiplier comes from the analytic Jacobian along the orbit and is
    cross-checked against a central difference of the cross map.
    """
    coeffs = return_coeffs(params, k, m)
    if abs(1.0 - coeffs.A_km) < parabolic_tol:
        raise NearParabolicError(f"|1 - A_km| = {abs(1.0 - coeffs.A_km):.3g} below {parabolic_tol}: near-parabolic")
    orbit = solve_coding(params, Coding(((k, m),), periodic=True), tol=tol)
    point = orbit.points[0]
    lit = LiteralReturn(params, k, m, check_box=False)
    cross_pt = point.copy()
    _, _, jac = lit.jacobian(cross_pt)
    h = 1e-6 * params.delta
    e = np.zeros(params.d)
    e[0] = h
    fd = (lit(cross_pt + e)[0] - lit(cross_pt - e)[0]) / (2 * h)
    return FixedPoint(point, float(jac[0, 0]), float(fd), coeffs)
