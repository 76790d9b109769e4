"""Sampled certification of the four cone fields of a return map.

Cones live in box coordinates split as (X | Y | Z), central / unstable /
strong stable.  Norms inside a block are sup norms.

    cu: ||dZ|| <= K (|dX| + ||dY||)        uu: max(|dX|, ||dZ||) <= K ||dY||
    cs: ||dY|| <= K (|dX| + ||dZ||)        ss: max(|dX|, ||dY||) <= K ||dZ||

cu and uu are checked forward (DT maps the cone into itself), cs and ss
backward (DT^{-1} does).
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from typing import Any, Callable

import numpy as np
from scipy.stats import qmc

from .cycle_model import ChartEscapeError
from .return_map import BoxViolationError, LiteralReturn


class Orientation(str, enum.Enum):
    CU = "cu"
    UU = "uu"
    CS = "cs"
    SS = "ss"


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class ConeSpec:
    """Cone of opening K over a split of coordinates into X, Y, Z index blocks."""

    x_idx: tuple[int, ...]
    y_idx: tuple[int, ...]
    z_idx: tuple[int, ...]
    K: float
    orientation: Orientation

    def __post_init__(self) -> None:
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        if not 0.0 < self.K < 1.0:
            raise ValueError(f"cone opening K must lie in (0, 1), got {self.K}")
        allidx = sorted(self.x_idx + self.y_idx + self.z_idx)
        if allidx != list(range(len(allidx))):
            raise ValueError("cone blocks must partition the coordinates 0..d-1")

    @classmethod
    def for_box(cls, d: int, ny: int, K: float, orientation: Orientation | str, nx: int = 1) -> "ConeSpec":
        return cls(tuple(range(nx)), tuple(range(nx, nx + ny)), tuple(range(nx + ny, d)), K, Orientation(orientation))

    @property
    def dim(self) -> int:
        return len(self.x_idx) + len(self.y_idx) + len(self.z_idx)

    def _blocks(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        def norm(idx: tuple[int, ...]) -> np.ndarray:
            return np.max(np.abs(v[:, list(idx)]), axis=1) if idx else np.zeros(v.shape[0])

        return norm(self.x_idx), norm(self.y_idx), norm(self.z_idx)

    def ratio(self, v: np.ndarray) -> np.ndarray:
        """Cone ratio normalised by K: a vector lies in the cone iff the ratio is <= 1."""
        v = np.atleast_2d(v)
        nx, ny, nz = self._blocks(v)
        o = self.orientation
        with np.errstate(divide="ignore", invalid="ignore"):
            if o is Orientation.CU:
                num, den = nz, nx + ny
            elif o is Orientation.UU:
                num, den = np.maximum(nx, nz), ny
            elif o is Orientation.CS:
                num, den = ny, nx + nz
            else:
                num, den = np.maximum(nx, ny), nz
            r = num / (self.K * den)
        return np.where(num == 0.0, 0.0, np.where(den == 0.0, np.inf, r))

    def contains(self, v: np.ndarray) -> np.ndarray:
        return self.ratio(v) <= 1.0

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Vectors in the cone from uniform numbers u of shape (N, dim + 1); sup norm of the axis part is 1."""
        n = u.shape[0]
        d = self.dim
        o = self.orientation
        axis = {Orientation.CU: self.x_idx + self.y_idx, Orientation.UU: self.y_idx,
                Orientation.CS: self.x_idx + self.z_idx, Orientation.SS: self.z_idx}[o]
        side = tuple(i for i in range(d) if i not in axis)
        v = np.zeros((n, d))
        base = 2.0 * u[:, :len(axis)] - 1.0
        peak = np.argmax(np.abs(base), axis=1)
        base[np.arange(n), peak] = np.sign(base[np.arange(n), peak]) + (base[np.arange(n), peak] == 0)
        v[:, list(axis)] = base
        if side:
            t = u[:, -1]
            dirs = 2.0 * u[:, len(axis):len(axis) + len(side)] - 1.0
            scale = np.max(np.abs(dirs), axis=1, keepdims=True)
            dirs = np.divide(dirs, scale, out=np.zeros_like(dirs), where=scale > 0)
            if o is Orientation.CU:
                budget = self.K * (np.max(np.abs(v[:, list(self.x_idx)]), axis=1, initial=0.0)
                                   + np.max(np.abs(v[:, list(self.y_idx)]), axis=1, initial=0.0))
            elif o is Orientation.CS:
                budget = self.K * (np.max(np.abs(v[:, list(self.x_idx)]), axis=1, initial=0.0)
                                   + np.max(np.abs(v[:, list(self.z_idx)]), axis=1, initial=0.0))
            else:
                budget = self.K * np.ones(n)
            v[:, list(side)] = dirs * (t * budget)[:, None]
        return v

    def extreme_rays(self) -> np.ndarray:
        """Pure axis directions of the cone's core block plus boundary rays tilted to full opening."""
        d = self.dim
        o = self.orientation
        axis = {Orientation.CU: self.x_idx + self.y_idx, Orientation.UU: self.y_idx,
                Orientation.CS: self.x_idx + self.z_idx, Orientation.SS: self.z_idx}[o]
        side = [i for i in range(d) if i not in axis]
        rays = []
        for i in axis:
            e = np.zeros(d)
            e[i] = 1.0
            rays.append(e)
            for j in side:
                f = e.copy()
                f[j] = self.K
                rays.append(f)
        return np.array(rays)


@dataclass
class ConeReport:
    pass_fraction: float
    worst_margin: float
    growth_min: float
    growth_max: float
    samples: int
    forward_factor_min: float | None = None
    forward_factor_max: float | None = None
    orientation: str = ""
    direction: str = ""

    def merge(self, other: "ConeReport") -> "ConeReport":
        total = self.samples + other.samples

        def opt(f: Callable, a: float | None, b: float | None) -> float | None:
            vals = [v for v in (a, b) if v is not None]
            return f(vals) if vals else None

        return ConeReport(
            (self.pass_fraction * self.samples + other.pass_fraction * other.samples) / total,
            min(self.worst_margin, other.worst_margin),
            min(self.growth_min, other.growth_min), max(self.growth_max, other.growth_max), total,
            opt(min, self.forward_factor_min, other.forward_factor_min),
            opt(max, self.forward_factor_max, other.forward_factor_max),
            self.orientation, self.direction)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def jacobian(fn: Callable[[np.ndarray], np.ndarray], point: Any, step: float, richardson: bool = False
             ) -> np.ndarray | tuple[np.ndarray, float]:
    """Central finite-difference Jacobian of ``fn`` at ``point``.

    With ``richardson`` the result is paired with the difference between the
    steps h and h/2, an estimate of the truncation error.
    """
    x = np.asarray(point, dtype=float)

    def central(h: float) -> np.ndarray:
        cols = []
        try:
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                cols.append((np.asarray(fn(x + e), dtype=float) - np.asarray(fn(x - e), dtype=float)) / (2 * h))
        except (ChartEscapeError, BoxViolationError) as exc:
            raise ValueError(f"domain violation within one step of the point: {exc}") from None
        return np.stack(cols, axis=-1)

    jac = central(step)
    if not richardson:
        return jac
    half = central(step / 2)
    return half + (half - jac) / 3.0, float(np.max(np.abs(half - jac)))


def _vector_norm(v: np.ndarray) -> np.ndarray:
    return np.max(np.abs(v), axis=1)


def check_cone_invariance(tmap: Any, cone_in: ConeSpec, cone_out: ConeSpec | None = None,
                          direction: Direction | str | None = None, samples: int = 10_000, seed: int = 0,
                          fd_step: float | None = None) -> ConeReport:
    """Fraction of sampled (point, tangent vector) pairs whose image vector lies in the output cone.

    ``tmap`` is either a return map with an analytic ``jacobian`` (a
    ``LiteralReturn``), or a callable on box points whose Jacobian is then
    taken by finite differences.  Points are drawn by a scrambled Sobol
    sequence over the cross coordinates of the box and kept when the
    orbit starts and ends in the box.
    """
    cone_out = cone_out or cone_in
    if direction is None:
        direction = Direction.FORWARD if cone_in.orientation in (Orientation.CU, Orientation.UU) else Direction.BACKWARD
    direction = Direction(direction)
    d = cone_in.dim
    params = getattr(tmap, "params", None)
    delta = params.delta if params is not None else getattr(tmap, "delta", 0.1)
    sob = qmc.Sobol(d=2 * d + 1, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(samples, 2))))
    u = sob.random_base2(m)[:samples]
    cross_pts = delta * (2.0 * u[:, :d] - 1.0)

    if isinstance(tmap, LiteralReturn):
        start, end, jac = tmap.jacobian(cross_pts, inverse=direction is Direction.BACKWARD)
    else:
        step = fd_step if fd_step is not None else 1e-6 * delta
        start = cross_pts
        end = np.array([tmap(p) for p in cross_pts])
        jac = np.array([jacobian(tmap, p, step) for p in cross_pts])
        if direction is Direction.BACKWARD:
            jac = np.linalg.inv(jac)
    keep = (np.max(np.abs(start), axis=1) <= delta) & (np.max(np.abs(end), axis=1) <= delta)
    if not np.any(keep):
        raise ValueError("no valid sample points: the map never returns sampled points to the box")
    jac = jac[keep]
    u_vec = u[keep, d:]
    vecs = cone_in.sample(u_vec)
    rays = cone_in.extreme_rays()
    n_rays = min(len(rays), jac.shape[0])
    jac_all = np.concatenate([jac, jac[:n_rays].repeat(len(rays), axis=0)]) if n_rays else jac
    vec_all = np.concatenate([vecs, np.tile(rays, (n_rays, 1))]) if n_rays else vecs
    images = np.einsum("nij,nj->ni", jac_all, vec_all)
    ratios = cone_out.ratio(images)
    in_norm = _vector_norm(vec_all)
    out_norm = _vector_norm(images)
    growth = out_norm / in_norm
    report = ConeReport(
        pass_fraction=float(np.mean(ratios <= 1.0)),
        worst_margin=float(1.0 - np.max(ratios)),
        growth_min=float(np.min(growth)),
        growth_max=float(np.max(growth)),
        samples=int(vec_all.shape[0]),
        orientation=cone_in.orientation.value,
        direction=direction.value,
    )
    if direction is Direction.BACKWARD:
        fwd = in_norm / out_norm
        report.forward_factor_min = float(np.min(fwd))
        report.forward_factor_max = float(np.max(fwd))
    else:
        report.forward_factor_min = report.growth_min
        report.forward_factor_max = report.growth_max
    return report


def check_all_cones(params: Any, k: int, m: int, K: float = 0.1, samples: int = 10_000, seed: int = 0
                    ) -> dict[str, ConeReport]:
    """All four cone checks for the literal return map T_{k,m}."""
    tmap = LiteralReturn(params, k, m, check_box=False)
    d, ny = params.d, params.dims.ny
    out = {}
    for o in Orientation:
        cone = ConeSpec.for_box(d, ny, K, o)
        out[o.value] = check_cone_invariance(tmap, cone, cone, samples=samples, seed=seed)
    return out
