"""Model diffeomorphism pieces for a coindex-1 heterodimensional cycle.

Two hyperbolic periodic points O1 (index d1) and O2 (index d1 + 1) are
represented by their local maps F1, F2 in adapted coordinates, and the two
heteroclinic orbits by the transition maps F12 (near M1- to near M2+) and
F21 (near M2- to near M1+).  Transition maps are specified in cross form: a
subset of the coordinates is an explicit affine-plus-quadratic function of
the complementary subset, which is exactly how the local normal forms are
usually written down.

Coordinates near O1 are (x, y, z): x central stable (1 real or 2 for a
complex pair), y unstable, z strong stable.  Near O2 they are (u, v, w):
u central unstable (1 or 2), v stable, w strong unstable.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

CHART_RADIUS = 1.0
# Local maps accept points slightly beyond the unit chart so that boxes of
# half-width up to MAX_DELTA around heteroclinic points on its boundary fit.
MAX_DELTA = 0.25
LOCAL_REACH = CHART_RADIUS + MAX_DELTA


class MultiplierCase(str, enum.Enum):
    SADDLE = "Saddle"
    SADDLE_FOCUS = "SaddleFocus"
    DOUBLE_FOCUS = "DoubleFocus"


class ChartEscapeError(ValueError):
    """A point or an orbit iterate left the chart where a map is defined."""


@dataclass(frozen=True)
class TailSpec:
    """Coefficients of the polynomial nonlinear tails.

    ``c_g`` scales the local-map tails (g = c_g * |x|^2 * y_1 and analogues),
    ``c_t`` scales the quadratic tails of the transition maps.
    """

    c_g: float = 0.0
    c_t: float = 0.0

    def __post_init__(self) -> None:
        for name in ("c_g", "c_t"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"TailSpec.{name} must be a finite non-negative number, got {value!r}")


@dataclass(frozen=True)
class Dims:
    nx: int
    ny: int
    nz: int
    nu: int
    nv: int
    nw: int

    @property
    def n1(self) -> int:
        return self.nx + self.ny + self.nz

    @property
    def n2(self) -> int:
        return self.nu + self.nv + self.nw


def block_dims(case: MultiplierCase, d: int, d1: int) -> Dims:
    if case is MultiplierCase.SADDLE:
        return Dims(1, d1, d - d1 - 1, 1, d - d1 - 1, d1)
    if case is MultiplierCase.SADDLE_FOCUS:
        return Dims(2, d1, d - d1 - 2, 1, d - d1 - 1, d1)
    return Dims(2, d1, d - d1 - 2, 2, d - d1 - 1, d1 - 1)


# Cross-form layouts of the transition maps.  ``ins`` are the free variables,
# ``outs`` the explicit ones; coefficient (i, j) is named <prefix><i+1><j+1>.
# ``hidden`` inputs belong to the image side and are recovered from the
# ``source_outs`` equations when the map is evaluated directly.
@dataclass(frozen=True)
class _Layout:
    prefix: str
    outs: tuple[str, ...]
    ins: tuple[str, ...]
    hidden: tuple[str, ...]
    source_outs: tuple[str, ...]


_F12_LAYOUT = {
    MultiplierCase.SADDLE: _Layout("a", ("u", "v", "yt"), ("xt", "w", "zt"), ("w",), ("yt",)),
    MultiplierCase.SADDLE_FOCUS: _Layout("a", ("u", "v", "yt"), ("xt1", "xt2", "zt", "w"), ("w",), ("yt",)),
    MultiplierCase.DOUBLE_FOCUS: _Layout(
        "a", ("u1", "v", "yt"), ("xt1", "xt2", "zt", "u2", "w"), ("u2", "w"), ("yt",)
    ),
}
_F21_LAYOUT = {
    MultiplierCase.SADDLE: _Layout("b", ("x", "wt", "z"), ("du", "vt", "y"), ("y",), ("wt",)),
    MultiplierCase.SADDLE_FOCUS: _Layout("b", ("x1", "x2", "wt", "z"), ("du", "vt", "y"), ("y",), ("wt",)),
    MultiplierCase.DOUBLE_FOCUS: _Layout(
        "b", ("x1", "x2", "z", "u2t", "wt"), ("du", "vt", "y"), ("y",), ("u2t", "wt")
    ),
}


def _block_size(name: str, dims: Dims) -> int:
    sizes = {
        "u": 1, "u1": 1, "u2": 1, "u2t": 1, "du": 1,
        "x": 1, "x1": 1, "x2": 1, "xt": 1, "xt1": 1, "xt2": 1,
        "v": dims.nv, "vt": dims.nv,
        "w": dims.nw, "wt": dims.nw,
        "y": dims.ny, "yt": dims.ny,
        "z": dims.nz, "zt": dims.nz,
    }
    return sizes[name]


def _as_matrix(value: Any, shape: tuple[int, int], name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.size == 0 and 0 in shape:
        # JSON cannot tell a 0x3 block from a 0x0 one
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ValueError(f"field {name!r} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_vector(value: Any, size: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.array(value, dtype=float))
    if arr.shape != (size,):
        raise ValueError(f"field {name!r} must be a vector of length {size}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class CycleParams:
    """All data defining a model heterodimensional cycle.

    ``lam`` serializes under the key ``"lambda"``.  In every case ``a`` is the
    leading F12 coefficient a11 and ``b`` the leading F21 coefficient b11; the
    remaining coefficients live in ``a_ij`` / ``b_ij`` keyed by name
    (``"a12"``, ``"b23"``, ...), absent entries meaning zero blocks.
    """

    case: MultiplierCase
    d: int
    d1: int
    lam: float
    gamma: float
    P1: np.ndarray
    P2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    a: float
    b: float
    x_plus: np.ndarray
    z_plus: np.ndarray
    y_minus: np.ndarray
    v_plus: np.ndarray
    u_minus: np.ndarray
    w_minus: np.ndarray
    a_ij: Mapping[str, np.ndarray] = field(default_factory=dict)
    b_ij: Mapping[str, np.ndarray] = field(default_factory=dict)
    omega: float | None = None
    omega1: float | None = None
    omega2: float | None = None
    mu: float = 0.0
    delta: float = 0.1
    q: float = 0.1
    tails: TailSpec = field(default_factory=TailSpec)

    def __post_init__(self) -> None:
        case = MultiplierCase(self.case)
        object.__setattr__(self, "case", case)
        if not (isinstance(self.d, (int, np.integer)) and isinstance(self.d1, (int, np.integer))):
            raise ValueError("fields 'd' and 'd1' must be integers")
        if self.d < 3:
            raise ValueError(f"field 'd' must be >= 3, got {self.d}")
        if not (1 <= self.d1 <= self.d - 2):
            raise ValueError(f"field 'd1' must satisfy 1 <= d1 <= d-2, got d1={self.d1}, d={self.d}")
        dims = block_dims(case, self.d, self.d1)

        lam, gamma = float(self.lam), float(self.gamma)
        if not (0.0 < abs(lam) < 1.0):
            raise ValueError(f"field 'lambda' must satisfy 0 < |lambda| < 1, got {lam}")
        if not abs(gamma) > 1.0:
            raise ValueError(f"field 'gamma' must satisfy |gamma| > 1, got {gamma}")
        if case is not MultiplierCase.SADDLE and lam <= 0:
            raise ValueError("in the focus cases 'lambda' is the (positive) modulus of the complex pair")
        if case is MultiplierCase.DOUBLE_FOCUS and gamma <= 0:
            raise ValueError("in the double-focus case 'gamma' is the (positive) modulus of the complex pair")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gamma", gamma)

        for name in ("omega", "omega1", "omega2"):
            needed = (case is MultiplierCase.SADDLE_FOCUS and name == "omega") or (
                case is MultiplierCase.DOUBLE_FOCUS and name in ("omega1", "omega2")
            )
            value = getattr(self, name)
            if needed:
                if value is None or not (0.0 < float(value) < math.pi):
                    raise ValueError(f"field {name!r} must lie in (0, pi) for case {case.value}")
                object.__setattr__(self, name, float(value))
            elif value is not None:
                object.__setattr__(self, name, float(value))

        object.__setattr__(self, "P1", _as_matrix(self.P1, (dims.ny, dims.ny), "P1"))
        object.__setattr__(self, "P2", _as_matrix(self.P2, (dims.nz, dims.nz), "P2"))
        object.__setattr__(self, "Q1", _as_matrix(self.Q1, (dims.nv, dims.nv), "Q1"))
        object.__setattr__(self, "Q2", _as_matrix(self.Q2, (dims.nw, dims.nw), "Q2"))
        for name, size in (
            ("x_plus", dims.nx), ("z_plus", dims.nz), ("y_minus", dims.ny),
            ("v_plus", dims.nv), ("u_minus", dims.nu), ("w_minus", dims.nw),
        ):
            object.__setattr__(self, name, _as_vector(getattr(self, name), size, name))

        self._check_spectra(dims)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "a_ij", self._coerce_coeffs(self.a_ij, _F12_LAYOUT[case], dims))
        object.__setattr__(self, "b_ij", self._coerce_coeffs(self.b_ij, _F21_LAYOUT[case], dims))

        if not self.delta > 0 or self.delta > MAX_DELTA:
            raise ValueError(f"field 'delta' must lie in (0, 0.25], got {self.delta}")
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"field 'q' must lie in (0, 1), got {self.q}")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "q", float(self.q))
        if isinstance(self.tails, Mapping):
            object.__setattr__(self, "tails", TailSpec(**self.tails))

    def _check_spectra(self, dims: Dims) -> None:
        lam, gamma = abs(self.lam), abs(self.gamma)

        def radii(mat: np.ndarray) -> np.ndarray:
            return np.abs(np.linalg.eigvals(mat)) if mat.size else np.array([])

        r = radii(self.P1)
        if r.size and r.min() <= 1.0:
            raise ValueError("spectrum of P1 must lie outside the unit circle")
        r = radii(self.P2)
        if r.size and r.max() >= lam:
            raise ValueError("spectrum of P2 must lie strictly inside the circle of radius |lambda|")
        r = radii(self.Q1)
        if r.size and r.max() >= 1.0:
            raise ValueError("spectrum of Q1 must lie inside the unit circle")
        r = radii(self.Q2)
        if r.size and r.min() <= gamma:
            raise ValueError("spectrum of Q2 must lie strictly outside the circle of radius |gamma|")

    @staticmethod
    def _coerce_coeffs(raw: Mapping[str, Any], layout: _Layout, dims: Dims) -> dict[str, np.ndarray]:
        valid = {}
        for i, out in enumerate(layout.outs):
            for j, inp in enumerate(layout.ins):
                valid[f"{layout.prefix}{i + 1}{j + 1}"] = (_block_size(out, dims), _block_size(inp, dims))
        lead = f"{layout.prefix}11"
        out: dict[str, np.ndarray] = {}
        for name, value in dict(raw).items():
            if name == lead:
                raise ValueError(f"coefficient {lead!r} is given by the scalar field {layout.prefix!r}")
            if name not in valid:
                raise ValueError(f"unknown transition coefficient {name!r}; expected one of {sorted(valid)}")
            out[name] = _as_matrix(value, valid[name], name)
        return out

    # -- derived quantities -------------------------------------------------
    @property
    def dims(self) -> Dims:
        return block_dims(self.case, self.d, self.d1)

    @property
    def delta_prime(self) -> float:
        return self.q * self.delta

    @property
    def d2(self) -> int:
        return self.d1 + 1

    @property
    def M1_plus(self) -> np.ndarray:
        return np.concatenate([self.x_plus, np.zeros(self.dims.ny), self.z_plus])

    @property
    def M1_minus(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.dims.nx), self.y_minus, np.zeros(self.dims.nz)])

    @property
    def M2_plus(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.dims.nu), self.v_plus, np.zeros(self.dims.nw)])

    @property
    def M2_minus(self) -> np.ndarray:
        return np.concatenate([self.u_minus, np.zeros(self.dims.nv), self.w_minus])

    @property
    def theta(self) -> float:
        return -math.log(abs(self.lam)) / math.log(abs(self.gamma))

    @property
    def alpha(self) -> float:
        """b u- / x+ (saddle case); NaN when x+ vanishes or in the focus cases."""
        if self.case is not MultiplierCase.SADDLE or self.x_plus[0] == 0.0:
            return math.nan
        return self.b * self.u_minus[0] / self.x_plus[0]

    def coeff(self, name: str) -> np.ndarray:
        """Transition coefficient block by name; zero if not specified."""
        layout = _F12_LAYOUT[self.case] if name[0] == "a" else _F21_LAYOUT[self.case]
        i, j = int(name[1]) - 1, int(name[2]) - 1
        shape = (_block_size(layout.outs[i], self.dims), _block_size(layout.ins[j], self.dims))
        if (i, j) == (0, 0):
            return np.full(shape, self.a if name[0] == "a" else self.b)
        table = self.a_ij if name[0] == "a" else self.b_ij
        if name in table:
            return table[name]
        return np.zeros(shape)

    def central_matrix_1(self) -> np.ndarray:
        if self.case is MultiplierCase.SADDLE:
            return np.array([[self.lam]])
        angle = self.omega if self.case is MultiplierCase.SADDLE_FOCUS else self.omega1
        return self.lam * _rotation(angle)

    def central_matrix_2(self) -> np.ndarray:
        if self.case is MultiplierCase.DOUBLE_FOCUS:
            return self.gamma * _rotation(self.omega2)
        return np.array([[self.gamma]])

    def with_updates(self, **changes: Any) -> "CycleParams":
        return replace(self, **changes)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        def mat(m: np.ndarray) -> list:
            return [[float(v) for v in row] for row in m]

        return {
            "case": self.case.value,
            "d": int(self.d),
            "d1": int(self.d1),
            "lambda": self.lam,
            "gamma": self.gamma,
            "omega": self.omega,
            "omega1": self.omega1,
            "omega2": self.omega2,
            "P1": mat(self.P1),
            "P2": mat(self.P2),
            "Q1": mat(self.Q1),
            "Q2": mat(self.Q2),
            "a": self.a,
            "a_ij": {k: mat(v) for k, v in sorted(self.a_ij.items())},
            "b": self.b,
            "b_ij": {k: mat(v) for k, v in sorted(self.b_ij.items())},
            "x_plus": [float(v) for v in self.x_plus],
            "z_plus": [float(v) for v in self.z_plus],
            "y_minus": [float(v) for v in self.y_minus],
            "v_plus": [float(v) for v in self.v_plus],
            "u_minus": [float(v) for v in self.u_minus],
            "w_minus": [float(v) for v in self.w_minus],
            "mu": self.mu,
            "delta": self.delta,
            "q": self.q,
            "tails": {"c_g": self.tails.c_g, "c_t": self.tails.c_t},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CycleParams":
        required = (
            "case", "d", "d1", "lambda", "gamma", "P1", "P2", "Q1", "Q2", "a", "b",
            "x_plus", "z_plus", "y_minus", "v_plus", "u_minus", "w_minus",
        )
        for key in required:
            if key not in data:
                raise ValueError(f"missing field {key!r}")
        known = set(required) | {"omega", "omega1", "omega2", "a_ij", "b_ij", "mu", "delta", "q", "tails"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown field(s) {unknown}")
        kwargs = {k: v for k, v in data.items() if k != "lambda"}
        kwargs["lam"] = data["lambda"]
        try:
            kwargs["case"] = MultiplierCase(data["case"])
        except ValueError as exc:
            raise ValueError(f"field 'case' must be one of {[c.value for c in MultiplierCase]}") from exc
        kwargs["tails"] = TailSpec(**data.get("tails", {}))
        kwargs.setdefault("a_ij", {})
        kwargs.setdefault("b_ij", {})
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CycleParams":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# local maps


def _batch(p: Any, n: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != n:
        raise ValueError(f"{what}: expected points of dimension {n}, got {arr.shape[-1]}")
    return arr, single


def _local_step(c: np.ndarray, s: np.ndarray, f: np.ndarray, lin_c: np.ndarray, lin_s: np.ndarray,
                lin_f: np.ndarray, c_g: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One step of a local map with tails c_g*|c|^2*s_1 (central, fast) and c_g*|c|^2*s (slow)."""
    r2 = np.sum(c * c, axis=1, keepdims=True)
    s1 = s[:, :1]
    c_new = c @ lin_c.T + c_g * r2 * s1
    s_new = s @ lin_s.T + c_g * r2 * s
    f_new = f @ lin_f.T + c_g * r2 * s1 if f.shape[1] else f.copy()
    return c_new, s_new, f_new


def _local_jacobian(c: np.ndarray, s: np.ndarray, f: np.ndarray, lin_c: np.ndarray, lin_s: np.ndarray,
                    lin_f: np.ndarray, c_g: float) -> np.ndarray:
    n = c.shape[0]
    nc, ns, nf = c.shape[1], s.shape[1], f.shape[1]
    dim = nc + ns + nf
    jac = np.zeros((n, dim, dim))
    r2 = np.sum(c * c, axis=1)
    s1 = s[:, 0]
    two_c = 2.0 * c
    ic, is_, if_ = slice(0, nc), slice(nc, nc + ns), slice(nc + ns, dim)
    jac[:, ic, ic] = lin_c + c_g * s1[:, None, None] * two_c[:, None, :]
    jac[:, ic, nc] += c_g * r2[:, None]
    jac[:, is_, ic] = c_g * s[:, :, None] * two_c[:, None, :]
    jac[:, is_, is_] = lin_s + c_g * r2[:, None, None] * np.eye(ns)
    if nf:
        jac[:, if_, ic] = c_g * s1[:, None, None] * two_c[:, None, :]
        jac[:, if_, nc] += c_g * r2[:, None]
        jac[:, if_, if_] = lin_f
    return jac


def _split1(params: CycleParams, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dm = params.dims
    return arr[:, : dm.nx], arr[:, dm.nx: dm.nx + dm.ny], arr[:, dm.nx + dm.ny:]


def _split2(params: CycleParams, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dm = params.dims
    return arr[:, : dm.nu], arr[:, dm.nu: dm.nu + dm.nv], arr[:, dm.nu + dm.nv:]


def _check_chart(arr: np.ndarray, centre: Any, what: str, radius: float = CHART_RADIUS) -> None:
    excess = np.max(np.abs(arr - centre), axis=1) if arr.shape[1] else np.zeros(arr.shape[0])
    if np.any(excess > radius) or not np.all(np.isfinite(arr)):
        raise ChartEscapeError(f"{what}: point outside the chart of radius {radius}")


def local_map_F1(p: Any, params: CycleParams) -> np.ndarray:
    """F1 near O1 on points (x, y, z); accepts one point or a batch (N, d)."""
    arr, single = _batch(p, params.dims.n1, "local_map_F1")
    _check_chart(arr, 0.0, "local_map_F1", LOCAL_REACH)
    x, y, z = _split1(params, arr)
    xn, yn, zn = _local_step(x, y, z, params.central_matrix_1(), params.P1, params.P2, params.tails.c_g)
    out = np.concatenate([xn, yn, zn], axis=1)
    return out[0] if single else out


def local_map_F2(p: Any, params: CycleParams) -> np.ndarray:
    """F2 near O2 on points (u, v, w); the tails mirror those of F1 with v in the role of y."""
    arr, single = _batch(p, params.dims.n2, "local_map_F2")
    _check_chart(arr, 0.0, "local_map_F2", LOCAL_REACH)
    u, v, w = _split2(params, arr)
    un, vn, wn = _local_step(u, v, w, params.central_matrix_2(), params.Q1, params.Q2, params.tails.c_g)
    out = np.concatenate([un, vn, wn], axis=1)
    return out[0] if single else out


def local_jacobian_F1(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n1, "local_jacobian_F1")
    x, y, z = _split1(params, arr)
    jac = _local_jacobian(x, y, z, params.central_matrix_1(), params.P1, params.P2, params.tails.c_g)
    return jac[0] if single else jac


def local_jacobian_F2(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n2, "local_jacobian_F2")
    u, v, w = _split2(params, arr)
    jac = _local_jacobian(u, v, w, params.central_matrix_2(), params.Q1, params.Q2, params.tails.c_g)
    return jac[0] if single else jac


def _newton_inverse(target: np.ndarray, forward, jacobian, lin: np.ndarray, tol: float = 1e-15,
                    max_iter: int = 50) -> np.ndarray:
    guess = target @ np.linalg.inv(lin).T
    for _ in range(max_iter):
        resid = forward(guess) - target
        step = np.linalg.solve(jacobian(guess), resid[..., None])[..., 0]
        guess = guess - step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(guess))):
            return guess
    raise RuntimeError("Newton inversion of the local map did not converge")


def _block_diag(*blocks: np.ndarray) -> np.ndarray:
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    i = 0
    for blk in blocks:
        k = blk.shape[0]
        out[i:i + k, i:i + k] = blk
        i += k
    return out


def local_map_F1_inverse(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n1, "local_map_F1_inverse")
    lin = _block_diag(params.central_matrix_1(), params.P1, params.P2)
    x, y, z = _split1(params, arr)
    fwd = lambda q: np.concatenate(_local_step(*_split1(params, q), params.central_matrix_1(), params.P1,
                                               params.P2, params.tails.c_g), axis=1)
    jac = lambda q: local_jacobian_F1(q, params)
    out = _newton_inverse(arr, fwd, jac, lin)
    return out[0] if single else out


def local_map_F2_inverse(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n2, "local_map_F2_inverse")
    lin = _block_diag(params.central_matrix_2(), params.Q1, params.Q2)
    fwd = lambda q: np.concatenate(_local_step(*_split2(params, q), params.central_matrix_2(), params.Q1,
                                               params.Q2, params.tails.c_g), axis=1)
    jac = lambda q: local_jacobian_F2(q, params)
    out = _newton_inverse(arr, fwd, jac, lin)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# transition maps


class _CrossRelation:
    """outs = offset + sum_j C_ij ins_j + quadratic tail, in batched form."""

    def __init__(self, params: CycleParams, layout: _Layout, offsets: dict[str, np.ndarray]):
        dims = params.dims
        self.layout = layout
        self.sizes = {n: _block_size(n, dims) for n in layout.outs + layout.ins}
        self.coef = {
            (o, i): params.coeff(f"{layout.prefix}{oi + 1}{ii + 1}")
            for oi, o in enumerate(layout.outs)
            for ii, i in enumerate(layout.ins)
        }
        self.offsets = offsets
        self.c_t = params.tails.c_t
        self.known = tuple(i for i in layout.ins if i not in layout.hidden)
        self.targets = tuple(o for o in layout.outs if o not in layout.source_outs)

    def _tail(self, out: str, ins: Mapping[str, np.ndarray]) -> np.ndarray:
        names = self.known if out in self.layout.source_outs else self.layout.ins
        n = next(iter(ins.values())).shape[0]
        total = np.zeros((n, 1))
        for name in names:
            total = total + np.sum(ins[name] ** 2, axis=1, keepdims=True)
        return self.c_t * total * np.ones((1, self.sizes[out]))

    def evaluate(self, ins: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        outs = {}
        for o in self.layout.outs:
            val = self.offsets[o] + self._tail(o, ins)
            for i in self.layout.ins:
                if self.sizes[i]:
                    val = val + ins[i] @ self.coef[(o, i)].T
            outs[o] = val
        return outs

    def hidden_matrix(self) -> np.ndarray:
        rows = [np.hstack([self.coef[(o, h)] for h in self.layout.hidden]) for o in self.layout.source_outs]
        return np.vstack(rows)

    def solve_hidden(self, known: Mapping[str, np.ndarray], source: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        n = next(iter(known.values())).shape[0]
        rhs_parts = []
        for o in self.layout.source_outs:
            val = source[o] - self.offsets[o] - self._tail(o, known)
            for i in self.known:
                if self.sizes[i]:
                    val = val - known[i] @ self.coef[(o, i)].T
            rhs_parts.append(val)
        rhs = np.hstack(rhs_parts)
        mat = self.hidden_matrix()
        sol = np.linalg.solve(mat, rhs.T).T if mat.size else np.zeros((n, 0))
        out, k = {}, 0
        for h in self.layout.hidden:
            out[h] = sol[:, k:k + self.sizes[h]]
            k += self.sizes[h]
        return out

    def jacobian_direct(self, known: Mapping[str, np.ndarray], hidden: Mapping[str, np.ndarray],
                        known_order: tuple[str, ...], source_order: tuple[str, ...],
                        target_order: tuple[str, ...]) -> np.ndarray:
        """d(target blocks)/d(domain blocks) with domain = known_order + source_order (as column groups)."""
        ins = {**known, **hidden}
        n = next(iter(ins.values())).shape[0]

        def dtail(out: str, wrt: str) -> np.ndarray:
            names = self.known if out in self.layout.source_outs else self.layout.ins
            if wrt not in names:
                return np.zeros((n, self.sizes[out], self.sizes[wrt]))
            return self.c_t * 2.0 * np.ones((1, self.sizes[out], 1)) * ins[wrt][:, None, :]

        def d_out(out: str, wrt: str) -> np.ndarray:
            return self.coef[(out, wrt)][None] + dtail(out, wrt)

        hid_inv = np.linalg.inv(self.hidden_matrix()) if self.hidden_matrix().size else np.zeros((0, 0))
        # dH/dK and dH/dS
        dh_dk = {}
        for kname in self.known:
            rows = np.concatenate([-d_out(o, kname) for o in self.layout.source_outs], axis=1)
            dh_dk[kname] = np.einsum("ij,njk->nik", hid_inv, rows)
        dh_ds = {}
        col = 0
        for sname in self.layout.source_outs:
            size = self.sizes[sname]
            dh_ds[sname] = np.broadcast_to(hid_inv[:, col:col + size], (n,) + hid_inv[:, col:col + size].shape)
            col += size

        def hidden_rows(name: str, block: np.ndarray) -> np.ndarray:
            start = 0
            for h in self.layout.hidden:
                if h == name:
                    return block[:, start:start + self.sizes[h], :]
                start += self.sizes[h]
            raise KeyError(name)

        groups = list(known_order) + list(source_order)
        row_blocks = []
        for t in target_order:
            cols = []
            for g in groups:
                if t in self.layout.hidden:
                    src = dh_dk[g] if g in dh_dk else dh_ds[g]
                    cols.append(hidden_rows(t, src))
                    continue
                direct = d_out(t, g) if g in self.known else np.zeros((n, self.sizes[t], self.sizes[g]))
                via = np.zeros_like(direct)
                for h in self.layout.hidden:
                    src = dh_dk[g] if g in dh_dk else dh_ds[g]
                    via = via + np.einsum("nij,njk->nik", d_out(t, h), hidden_rows(h, src))
                cols.append(direct + via)
            row_blocks.append(np.concatenate(cols, axis=2))
        return np.concatenate(row_blocks, axis=1)


def _f12_relation(params: CycleParams) -> _CrossRelation:
    layout = _F12_LAYOUT[params.case]
    first = layout.outs[0]
    return _CrossRelation(params, layout, {
        first: np.array([[params.mu]]),
        "v": params.v_plus[None, :],
        "yt": params.y_minus[None, :],
    })


def _f21_relation(params: CycleParams) -> _CrossRelation:
    layout = _F21_LAYOUT[params.case]
    offs: dict[str, np.ndarray] = {"wt": params.w_minus[None, :], "z": params.z_plus[None, :]}
    if params.case is MultiplierCase.SADDLE:
        offs["x"] = params.x_plus[None, :1]
    else:
        offs["x1"] = params.x_plus[None, :1]
        offs["x2"] = params.x_plus[None, 1:2]
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        offs["u2t"] = params.u_minus[None, 1:2]
    return _CrossRelation(params, layout, offs)


def _f12_known(params: CycleParams, arr: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    x, y, z = _split1(params, arr)
    if params.dims.nx == 1:
        known = {"xt": x, "zt": z}
    else:
        known = {"xt1": x[:, :1], "xt2": x[:, 1:2], "zt": z}
    return known, {"yt": y}


def _f21_known(params: CycleParams, arr: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    u, v, w = _split2(params, arr)
    known = {"du": u[:, :1] - params.u_minus[:1], "vt": v}
    source = {"wt": w}
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        source["u2t"] = u[:, 1:2]
    return known, source


def _f12_target(params: CycleParams, outs: Mapping[str, np.ndarray], hidden: Mapping[str, np.ndarray]) -> np.ndarray:
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        u = np.hstack([outs["u1"], hidden["u2"]])
    else:
        u = outs["u"]
    return np.hstack([u, outs["v"], hidden["w"]])


def _f21_target(params: CycleParams, outs: Mapping[str, np.ndarray], hidden: Mapping[str, np.ndarray]) -> np.ndarray:
    x = outs["x"] if params.case is MultiplierCase.SADDLE else np.hstack([outs["x1"], outs["x2"]])
    return np.hstack([x, hidden["y"], outs["z"]])


def transition_F12(p: Any, params: CycleParams, check_chart: bool = True) -> np.ndarray:
    """F12 from a neighbourhood of M1- = (0, y-, 0) to a neighbourhood of M2+ = (0, v+, 0)."""
    arr, single = _batch(p, params.dims.n1, "transition_F12")
    if check_chart:
        _check_chart(arr, params.M1_minus, "transition_F12")
    rel = _f12_relation(params)
    known, source = _f12_known(params, arr)
    hidden = rel.solve_hidden(known, source)
    out = _f12_target(params, rel.evaluate({**known, **hidden}), hidden)
    return out[0] if single else out


def transition_F21(p: Any, params: CycleParams, check_chart: bool = True) -> np.ndarray:
    """F21 from a neighbourhood of M2- = (u-, 0, w-) to a neighbourhood of M1+ = (x+, 0, z+)."""
    arr, single = _batch(p, params.dims.n2, "transition_F21")
    if check_chart:
        _check_chart(arr, params.M2_minus, "transition_F21")
    rel = _f21_relation(params)
    known, source = _f21_known(params, arr)
    hidden = rel.solve_hidden(known, source)
    out = _f21_target(params, rel.evaluate({**known, **hidden}), hidden)
    return out[0] if single else out


def transition_F12_cross(params: CycleParams, **ins: Any) -> dict[str, np.ndarray]:
    """Evaluate the F12 cross relations directly: free inputs by block name, e.g. xt, w, zt."""
    rel = _f12_relation(params)
    n = max(np.atleast_2d(np.asarray(v, dtype=float)).shape[0] for v in ins.values()) if ins else 1
    full = {}
    for name in rel.layout.ins:
        val = ins.get(name, np.zeros(rel.sizes[name]))
        full[name] = np.broadcast_to(np.atleast_2d(np.asarray(val, dtype=float)), (n, rel.sizes[name]))
    return rel.evaluate(full)


def transition_F21_cross(params: CycleParams, **ins: Any) -> dict[str, np.ndarray]:
    """Evaluate the F21 cross relations directly: inputs du (= u~ - u-), vt, y."""
    rel = _f21_relation(params)
    n = max(np.atleast_2d(np.asarray(v, dtype=float)).shape[0] for v in ins.values()) if ins else 1
    full = {}
    for name in rel.layout.ins:
        val = ins.get(name, np.zeros(rel.sizes[name]))
        full[name] = np.broadcast_to(np.atleast_2d(np.asarray(val, dtype=float)), (n, rel.sizes[name]))
    return rel.evaluate(full)


def transition_jacobian_F12(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n1, "transition_jacobian_F12")
    rel = _f12_relation(params)
    known, source = _f12_known(params, arr)
    hidden = rel.solve_hidden(known, source)
    if params.dims.nx == 1:
        cols_k = ("xt",)
    else:
        cols_k = ("xt1", "xt2")
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        target = ("u1", "u2", "v", "w")
    else:
        target = ("u", "v", "w")
    # columns come out grouped as (x, z, y); reorder to (x, y, z)
    jac_k = rel.jacobian_direct(known, hidden, cols_k + ("zt",), ("yt",), target)
    nx, ny, nz = params.dims.nx, params.dims.ny, params.dims.nz
    reordered = np.concatenate([jac_k[:, :, :nx], jac_k[:, :, nx + nz:], jac_k[:, :, nx:nx + nz]], axis=2)
    return reordered[0] if single else reordered


def transition_jacobian_F21(p: Any, params: CycleParams) -> np.ndarray:
    arr, single = _batch(p, params.dims.n2, "transition_jacobian_F21")
    rel = _f21_relation(params)
    known, source = _f21_known(params, arr)
    hidden = rel.solve_hidden(known, source)
    target = ("x",) if params.case is MultiplierCase.SADDLE else ("x1", "x2")
    target = target + ("y", "z")
    if params.case is MultiplierCase.DOUBLE_FOCUS:
        # domain order (u1, u2, v, w): known du, vt; source u2t, wt
        jac = rel.jacobian_direct(known, hidden, ("du", "vt"), ("u2t", "wt"), target)
        nv = params.dims.nv
        jac = np.concatenate([jac[:, :, :1], jac[:, :, 1 + nv:2 + nv], jac[:, :, 1:1 + nv], jac[:, :, 2 + nv:]], axis=2)
    else:
        jac = rel.jacobian_direct(known, hidden, ("du", "vt"), ("wt",), target)
    return jac[0] if single else jac


# ---------------------------------------------------------------------------
# non-degeneracy


@dataclass(frozen=True)
class NondegeneracyReport:
    conditions: dict[str, bool]
    quantities: dict[str, Any]
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(self.conditions.values())

    def to_dict(self) -> dict[str, Any]:
        return {"conditions": dict(self.conditions), "quantities": dict(self.quantities), "notes": list(self.notes),
                "passed": self.passed}


def focus_phases(params: CycleParams) -> dict[str, float]:
    """Amplitudes and phases of the focus-case return coefficients.

    Saddle-focus: A, B, eta1, eta2.  Double focus: C, D, eta1, eta2, eta3,
    with A and B also filled in as C and D scaled by 1/sqrt(1 + a14^2).
    """
    if params.case is MultiplierCase.SADDLE:
        raise ValueError("phases are defined only in the focus cases")
    a11, a12 = params.a, float(params.coeff("a12")[0, 0])
    b11, b21 = params.b, float(params.coeff("b21")[0, 0])
    x1, x2 = (float(v) for v in params.x_plus)
    amp_a = math.hypot(a11, a12)
    first = math.sqrt((a11 * a11 + a12 * a12) * (b11 * b11 + b21 * b21))
    eta1 = math.atan2(a11 * b11 + a12 * b21, a11 * b21 - a12 * b11)
    out: dict[str, float] = {"eta1": eta1}
    if params.case is MultiplierCase.SADDLE_FOCUS:
        sg = math.copysign(1.0, b11)
        out["A"] = first
        out["B"] = abs(b11) * math.hypot(x1, x2) * amp_a
        out["eta2"] = math.atan2(sg * (a11 * x1 + a12 * x2), sg * (a11 * x2 - a12 * x1))
        return out
    a14 = float(params.coeff("a14")[0, 0])
    norm = math.sqrt(1.0 + a14 * a14)
    out["C"] = first
    out["D"] = math.hypot(x1, x2) * amp_a
    out["eta2"] = math.atan2(a11 * x1 + a12 * x2, a11 * x2 - a12 * x1)
    out["eta3"] = math.atan2(-a14, 1.0)
    out["A"] = first / norm
    out["B"] = out["D"] / norm
    return out


def _det(mat: np.ndarray) -> float:
    return float(np.linalg.det(mat)) if mat.size else 1.0


def validate_nondegeneracy(params: CycleParams, tol: float = 1e-12) -> NondegeneracyReport:
    """Check the simplicity/transversality conditions and C4; degeneracy is reported, never raised."""
    rel12, rel21 = _f12_relation(params), _f21_relation(params)
    det12, det21 = _det(rel12.hidden_matrix()), _det(rel21.hidden_matrix())
    x_norm, u_norm = float(np.linalg.norm(params.x_plus)), float(np.linalg.norm(params.u_minus))
    q: dict[str, Any] = {
        "a": params.a, "b": params.b, "det_F12_hidden_block": det12, "det_F21_hidden_block": det21,
        "x_plus": params.x_plus.tolist(), "u_minus": params.u_minus.tolist(),
    }
    cond: dict[str, bool] = {}
    notes = []
    if params.case is MultiplierCase.SADDLE:
        cond["C1"] = abs(params.a) > tol and abs(det12) > tol
        cond["C2"] = abs(params.b) > tol and abs(det21) > tol
        cond["C3"] = x_norm > tol and u_norm > tol
        alpha = float(params.b * params.u_minus[0] / params.x_plus[0]) if abs(params.x_plus[0]) > tol else math.nan
        q["alpha"] = alpha
        cond["C4.1"] = bool(math.isfinite(alpha) and abs(abs(alpha) - 1.0) > tol)
        notes.append("saddle case reports the central-contraction condition under the label C4.1")
    else:
        a11, a12 = params.a, float(params.coeff("a12")[0, 0])
        b11, b21 = params.b, float(params.coeff("b21")[0, 0])
        cond["C1"] = a11 * a11 + a12 * a12 > tol and abs(det12) > tol
        cond["C2"] = abs(b11) > tol and abs(det21) > tol
        cond["C3"] = x_norm > tol and u_norm > tol
        cross = float(b11 * params.x_plus[1] - b21 * params.x_plus[0])
        q["b_direction_cross_x_plus"] = cross
        ph = focus_phases(params)
        q.update({"eta1": ph["eta1"], "eta2": ph["eta2"], "tan_eta1": math.tan(ph["eta1"]),
                  "tan_eta2": math.tan(ph["eta2"])})
        ok = abs(cross) > tol and x_norm > tol
        if params.case is MultiplierCase.DOUBLE_FOCUS:
            b41 = float(params.coeff("b41")[0, 0])
            u1, u2 = (float(v) for v in params.u_minus)
            q["b41"] = b41
            ok = ok and abs(u2 - b41 * u1) > tol
            cond["u1_minus_nonzero"] = bool(abs(u1) > tol)
        cond["C4.2"] = bool(ok)
        notes.append("focus cases report the non-parallelism condition under the label C4.2")
    return NondegeneracyReport(cond, q, tuple(notes))


# ---------------------------------------------------------------------------
# reference parameter sets


def ref1(**changes: Any) -> CycleParams:
    """Saddle reference cycle: d=3, lambda=0.5, gamma=3, alpha=0.5, zero tails.

    The identity couplings a23, a32, b23, b32 are the minimal choice making
    both transition maps diffeomorphisms; every other off-leading block is zero.
    """
    base = CycleParams(
        case=MultiplierCase.SADDLE, d=3, d1=1, lam=0.5, gamma=3.0,
        P1=[[2.0]], P2=[[0.2]], Q1=[[0.3]], Q2=[[4.0]],
        a=1.0, b=1.0,
        a_ij={"a23": [[1.0]], "a32": [[1.0]]},
        b_ij={"b23": [[1.0]], "b32": [[1.0]]},
        x_plus=[1.0], z_plus=[0.2], y_minus=[1.0], v_plus=[1.0], u_minus=[0.5], w_minus=[0.3],
        mu=0.0, delta=0.1, q=0.1,
    )
    return replace(base, **changes) if changes else base


def ref2(**changes: Any) -> CycleParams:
    """Rational-modulus variant of ref1: gamma=4 so that theta = 1/2 exactly."""
    base = ref1(gamma=4.0, Q2=[[5.0]])
    return replace(base, **changes) if changes else base


def ref_sf(**changes: Any) -> CycleParams:
    """Saddle-focus reference: complex stable pair at O1 with omega/2pi = sqrt(2) - 1."""
    base = CycleParams(
        case=MultiplierCase.SADDLE_FOCUS, d=3, d1=1, lam=0.5, gamma=3.0,
        omega=2.0 * math.pi * (math.sqrt(2.0) - 1.0),
        P1=[[2.0]], P2=np.zeros((0, 0)), Q1=[[0.3]], Q2=[[4.0]],
        a=1.0, b=1.0,
        a_ij={"a22": [[1.0]], "a34": [[1.0]]},
        b_ij={"b21": [[0.5]], "b22": [[1.0]], "b33": [[1.0]]},
        x_plus=[1.0, 0.2], z_plus=[], y_minus=[1.0], v_plus=[1.0], u_minus=[0.5], w_minus=[0.3],
        mu=0.0, delta=0.1, q=0.1,
    )
    return replace(base, **changes) if changes else base


def ref_df(**changes: Any) -> CycleParams:
    """Double-focus reference: complex pairs at both points, gamma=2, omega2=1."""
    base = CycleParams(
        case=MultiplierCase.DOUBLE_FOCUS, d=3, d1=1, lam=0.5, gamma=2.0,
        omega1=2.0 * math.pi * (math.sqrt(2.0) - 1.0), omega2=1.0,
        P1=[[2.0]], P2=np.zeros((0, 0)), Q1=[[0.3]], Q2=np.zeros((0, 0)),
        a=1.0, b=1.0,
        a_ij={"a14": [[0.3]], "a22": [[1.0]], "a34": [[1.0]]},
        b_ij={"b21": [[0.5]], "b22": [[1.0]], "b41": [[0.2]], "b43": [[1.0]]},
        x_plus=[1.0, 0.2], z_plus=[], y_minus=[1.0], v_plus=[1.0], u_minus=[0.5, 0.3], w_minus=[],
        mu=0.0, delta=0.1, q=0.1,
    )
    return replace(base, **changes) if changes else base
