"""Jump-diffusion models with level- and time-dependent coefficients.

A model is the triple (beta, phi, lambda) together with the jump-label
measure ``m`` and the lower-bound constant ``gamma``:

    dX = beta(X(t-), t) dW + int phi(X(t-), t, z) (v - lambda(t) dt m(dz))

All specs are frozen dataclasses whose ``__call__`` accepts numpy arrays and
broadcasts, so the same objects feed the Monte Carlo and finite-difference
code without per-point Python loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

__all__ = [
    "DomainError",
    "Zero", "Constant", "Proportional", "Power", "PiecewiseLinearInX",
    "BumpInX", "PiecewiseLinearInT", "TimeModulated", "Tabulated",
    "AffineZ", "TabulatedZ",
    "ZeroJump", "RelativeConstant", "RelativeOfZ", "Separable", "BumpJump",
    "TabulatedXZ",
    "LebesgueUnit", "Density", "Atoms",
    "Model", "ConditionEntry", "ConditionReport",
    "evaluate", "check_conditions", "counterexample_model", "truncate_model",
    "coefficient_from_dict", "jump_from_dict", "measure_from_dict",
    "model_from_dict", "model_to_dict", "jump_compensator",
]


class DomainError(ValueError):
    """An argument lies outside the domain of the model or payoff."""


def _arr(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


def _strictly_increasing(values, what: str) -> None:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 1 or np.any(np.diff(v) <= 0):
        raise ValueError(f"{what} must be strictly increasing")


def _interp_flat(grid: np.ndarray, values: np.ndarray, q) -> np.ndarray:
    """Piecewise-linear interpolation with flat extrapolation, any shape of q."""
    q = _arr(q)
    if grid.size == 1:
        return np.full(q.shape, values[0])
    return np.interp(q, grid, values)


def _bracket(grid: np.ndarray, q: np.ndarray):
    """Left index and weight for linear interpolation, clamped to the grid."""
    if grid.size == 1:
        return np.zeros(q.shape, dtype=int), np.zeros(q.shape)
    qc = np.clip(q, grid[0], grid[-1])
    i = np.clip(np.searchsorted(grid, qc, side="right") - 1, 0, grid.size - 2)
    w = (qc - grid[i]) / (grid[i + 1] - grid[i])
    return i, w


# --------------------------------------------------------------------------
# coefficients in (x, t)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Zero:
    kind = "zero"

    def __call__(self, x, t):
        return np.zeros(np.broadcast(_arr(x), _arr(t)).shape)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Constant:
    c: float
    kind = "constant"

    def __call__(self, x, t):
        return np.full(np.broadcast(_arr(x), _arr(t)).shape, float(self.c))

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class Proportional:
    """``c * x``."""

    c: float
    kind = "proportional"

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        return self.c * x

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class Power:
    """``c * x**p``."""

    c: float
    p: float
    kind = "power"

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        return self.c * np.power(x, self.p)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "p": self.p}


@dataclass(frozen=True)
class PiecewiseLinearInX:
    knots: tuple[tuple[float, float], ...]
    kind = "piecewise_x"

    def __post_init__(self):
        knots = tuple((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", knots)
        _strictly_increasing([k[0] for k in knots], "piecewise_x knots")

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        xs = np.array([k[0] for k in self.knots])
        vs = np.array([k[1] for k in self.knots])
        return _interp_flat(xs, vs, x)

    def to_dict(self):
        return {"kind": self.kind, "knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class BumpInX:
    """Trapezoid: 0 up to x_lo, ramps to ``height`` on [x_lo, x_rise], flat to
    x_fall, ramps back to 0 at x_hi, 0 afterwards."""

    x_lo: float
    x_rise: float
    x_fall: float
    x_hi: float
    height: float
    kind = "bump_x"

    def __post_init__(self):
        if not (self.x_lo < self.x_rise <= self.x_fall < self.x_hi):
            raise ValueError("bump knots must satisfy x_lo < x_rise <= x_fall < x_hi")

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        up = (x - self.x_lo) / (self.x_rise - self.x_lo)
        down = (self.x_hi - x) / (self.x_hi - self.x_fall)
        shape = np.clip(np.minimum(up, down), 0.0, 1.0)
        return self.height * shape

    @property
    def lipschitz(self) -> float:
        return abs(self.height) * max(1.0 / (self.x_rise - self.x_lo),
                                      1.0 / (self.x_hi - self.x_fall))

    def to_dict(self):
        return {"kind": self.kind, "x_lo": self.x_lo, "x_rise": self.x_rise,
                "x_fall": self.x_fall, "x_hi": self.x_hi, "height": self.height}


@dataclass(frozen=True)
class PiecewiseLinearInT:
    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", knots)
        _strictly_increasing([k[0] for k in knots], "time-factor knots")

    def __call__(self, t):
        ts = np.array([k[0] for k in self.knots])
        vs = np.array([k[1] for k in self.knots])
        return _interp_flat(ts, vs, t)

    def to_dict(self):
        return {"knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class TimeModulated:
    base: Any
    factor: PiecewiseLinearInT
    kind = "time_modulated"

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        return self.base(x, t) * self.factor(t)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(),
                "factor": self.factor.to_dict()}


@dataclass(frozen=True)
class Tabulated:
    """Bilinear interpolation on an (x, t) table, flat outside the grid."""

    x_grid: tuple[float, ...]
    t_grid: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]  # values[i][j] at (x_i, t_j)
    kind = "tabulated"

    def __post_init__(self):
        object.__setattr__(self, "x_grid", tuple(map(float, self.x_grid)))
        object.__setattr__(self, "t_grid", tuple(map(float, self.t_grid)))
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.x_grid), len(self.t_grid)):
            raise ValueError("tabulated values must have shape (len(x_grid), len(t_grid))")
        object.__setattr__(self, "values", tuple(map(tuple, vals.tolist())))
        _strictly_increasing(self.x_grid, "tabulated x_grid")
        _strictly_increasing(self.t_grid, "tabulated t_grid")

    def __call__(self, x, t):
        x, t = np.broadcast_arrays(_arr(x), _arr(t))
        xg, tg = np.array(self.x_grid), np.array(self.t_grid)
        v = np.array(self.values)
        i, wx = _bracket(xg, x)
        j, wt = _bracket(tg, t)
        i1 = np.minimum(i + 1, xg.size - 1)
        j1 = np.minimum(j + 1, tg.size - 1)
        return ((1 - wx) * (1 - wt) * v[i, j] + wx * (1 - wt) * v[i1, j]
                + (1 - wx) * wt * v[i, j1] + wx * wt * v[i1, j1])

    def to_dict(self):
        return {"kind": self.kind, "x": list(self.x_grid), "t": list(self.t_grid),
                "values": [list(r) for r in self.values]}


def coefficient_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "zero":
        return Zero()
    if kind == "constant":
        return Constant(float(d["c"]))
    if kind == "proportional":
        return Proportional(float(d["c"]))
    if kind == "power":
        return Power(float(d["c"]), float(d["p"]))
    if kind == "piecewise_x":
        return PiecewiseLinearInX(tuple(map(tuple, d["knots"])))
    if kind == "bump_x":
        return BumpInX(float(d["x_lo"]), float(d["x_rise"]), float(d["x_fall"]),
                       float(d["x_hi"]), float(d["height"]))
    if kind == "time_modulated":
        return TimeModulated(coefficient_from_dict(d["base"]),
                             PiecewiseLinearInT(tuple(map(tuple, d["factor"]["knots"]))))
    if kind == "tabulated":
        return Tabulated(tuple(d["x"]), tuple(d["t"]), tuple(map(tuple, d["values"])))
    raise ValueError(f"unknown coefficient kind {kind!r}")


# --------------------------------------------------------------------------
# functions of the jump label z
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineZ:
    """``a + b*z``."""

    a: float
    b: float = 0.0
    kind = "affine"

    def __call__(self, z):
        return self.a + self.b * _arr(z)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class TabulatedZ:
    z_grid: tuple[float, ...]
    values: tuple[float, ...]
    kind = "tabulated"

    def __post_init__(self):
        object.__setattr__(self, "z_grid", tuple(map(float, self.z_grid)))
        object.__setattr__(self, "values", tuple(map(float, self.values)))
        _strictly_increasing(self.z_grid, "zeta z_grid")
        if len(self.values) != len(self.z_grid):
            raise ValueError("zeta values and z_grid differ in length")

    def __call__(self, z):
        return _interp_flat(np.array(self.z_grid), np.array(self.values), z)

    def to_dict(self):
        return {"kind": self.kind, "z": list(self.z_grid), "values": list(self.values)}


def _zeta_from_dict(d: dict):
    if d.get("kind") == "affine":
        return AffineZ(float(d["a"]), float(d.get("b", 0.0)))
    if d.get("kind") == "tabulated":
        return TabulatedZ(tuple(d["z"]), tuple(d["values"]))
    raise ValueError(f"unknown zeta kind {d.get('kind')!r}")


def _zeta_sign(zeta, z) -> np.ndarray:
    return np.sign(zeta(z))


def _coefficient_sign(c) -> int | None:
    """Constant sign of a coefficient over x > 0, or None when unknown."""
    if isinstance(c, Zero):
        return 0
    if isinstance(c, (Constant, Proportional, Power)):
        return int(np.sign(c.c))
    if isinstance(c, BumpInX):
        return int(np.sign(c.height))
    if isinstance(c, TimeModulated):
        s = _coefficient_sign(c.base)
        f = np.array([k[1] for k in c.factor.knots])
        if s is None or (np.any(f > 0) and np.any(f < 0)):
            return None
        return s if np.all(f >= 0) else -s
    return None


# --------------------------------------------------------------------------
# jump sizes in (x, t, z)
# --------------------------------------------------------------------------

MIXED = 2  # sign code for "changes sign"


@dataclass(frozen=True)
class ZeroJump:
    kind = "zero"
    depends_on_z = False

    def __call__(self, x, t, z):
        return np.zeros(np.broadcast(_arr(x), _arr(t), _arr(z)).shape)

    def declared_sign(self, z):
        return np.zeros(np.shape(z), dtype=int)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class RelativeConstant:
    """``phi = c*x`` for every label."""

    c: float
    kind = "relative_constant"
    depends_on_z = False

    def __call__(self, x, t, z):
        x, t, z = np.broadcast_arrays(_arr(x), _arr(t), _arr(z))
        return self.c * x

    def declared_sign(self, z):
        return np.full(np.shape(z), int(np.sign(self.c)))

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class RelativeOfZ:
    """``phi = x * zeta(z)``."""

    zeta: Any
    kind = "relative_of_z"
    depends_on_z = True

    def __call__(self, x, t, z):
        x, t, z = np.broadcast_arrays(_arr(x), _arr(t), _arr(z))
        return x * self.zeta(z)

    def declared_sign(self, z):
        return _zeta_sign(self.zeta, z).astype(int)

    def to_dict(self):
        return {"kind": self.kind, "zeta": self.zeta.to_dict()}


@dataclass(frozen=True)
class Separable:
    """``phi = psi(x, t) * zeta(z)``."""

    psi: Any
    zeta: Any
    kind = "separable"
    depends_on_z = True

    def __call__(self, x, t, z):
        x, t, z = np.broadcast_arrays(_arr(x), _arr(t), _arr(z))
        return self.psi(x, t) * self.zeta(z)

    def declared_sign(self, z):
        s = _coefficient_sign(self.psi)
        zs = _zeta_sign(self.zeta, z).astype(int)
        if s is None:
            return np.where(zs == 0, 0, MIXED)
        return s * zs

    def to_dict(self):
        return {"kind": self.kind, "psi": self.psi.to_dict(), "zeta": self.zeta.to_dict()}


@dataclass(frozen=True)
class BumpJump:
    """Label-independent trapezoidal jump size."""

    bump: BumpInX
    kind = "bump"
    depends_on_z = False

    def __call__(self, x, t, z):
        x, t, z = np.broadcast_arrays(_arr(x), _arr(t), _arr(z))
        return self.bump(x, t)

    def declared_sign(self, z):
        return np.full(np.shape(z), int(np.sign(self.bump.height)))

    def to_dict(self):
        return {"kind": self.kind, "bump": self.bump.to_dict()}


@dataclass(frozen=True, eq=False)
class TabulatedXZ:
    """Jump size tabulated on an (x, z) grid for each time slice.

    Linear in x with linear extrapolation from the end segments, linear in z,
    zero for labels outside ``[z_grid[0], z_grid[-1]]``, linear in t with flat
    extrapolation. ``values[k][i][j]`` is the value at (t_k, x_i, z_j).
    """

    x_grid: tuple[float, ...]
    z_grid: tuple[float, ...]
    t_grid: tuple[float, ...]
    values: tuple
    kind = "tabulated_xz"
    depends_on_z = True

    def __post_init__(self):
        object.__setattr__(self, "x_grid", tuple(map(float, self.x_grid)))
        object.__setattr__(self, "z_grid", tuple(map(float, self.z_grid)))
        object.__setattr__(self, "t_grid", tuple(map(float, self.t_grid)))
        vals = np.asarray(self.values, dtype=float)
        want = (len(self.t_grid), len(self.x_grid), len(self.z_grid))
        if vals.shape != want:
            raise ValueError(f"tabulated_xz values must have shape {want}, got {vals.shape}")
        if len(self.x_grid) < 2:
            raise ValueError("tabulated_xz needs at least two x nodes")
        _strictly_increasing(self.x_grid, "tabulated_xz x_grid")
        _strictly_increasing(self.z_grid, "tabulated_xz z_grid")
        _strictly_increasing(self.t_grid, "tabulated_xz t_grid")
        object.__setattr__(self, "_table", vals)

    @property
    def table(self) -> np.ndarray:
        return self._table

    def _slice_xz(self, k, x, z):
        xg, zg = np.array(self.x_grid), np.array(self.z_grid)
        v = self._table[k]
        # x: linear with end-segment extrapolation
        i = np.clip(np.searchsorted(xg, x, side="right") - 1, 0, xg.size - 2)
        wx = (x - xg[i]) / (xg[i + 1] - xg[i])
        j, wz = _bracket(zg, z)
        j1 = np.minimum(j + 1, zg.size - 1)
        col_j = (1 - wx) * v[i, j] + wx * v[i + 1, j]
        col_j1 = (1 - wx) * v[i, j1] + wx * v[i + 1, j1]
        out = (1 - wz) * col_j + wz * col_j1
        inside = (z >= zg[0]) & (z <= zg[-1])
        return np.where(inside, out, 0.0)

    def __call__(self, x, t, z):
        x, t, z = np.broadcast_arrays(_arr(x), _arr(t), _arr(z))
        tg = np.array(self.t_grid)
        if tg.size == 1:
            return self._slice_xz(0, x, z)
        k, wt = _bracket(tg, t)
        out = np.zeros(x.shape)
        for kk in np.unique(k):
            m = k == kk
            lo = self._slice_xz(kk, x[m], z[m])
            hi = self._slice_xz(min(kk + 1, tg.size - 1), x[m], z[m])
            out[m] = (1 - wt[m]) * lo + wt[m] * hi
        return out

    def declared_sign(self, z):
        z = _arr(z)
        zg = np.array(self.z_grid)
        j, _ = _bracket(zg, z)
        cols = np.concatenate([self._table[:, :, j], self._table[:, :, np.minimum(j + 1, zg.size - 1)]],
                              axis=1)
        pos = np.any(cols > 0, axis=(0, 1))
        neg = np.any(cols < 0, axis=(0, 1))
        code = np.where(pos & neg, MIXED, np.where(pos, 1, np.where(neg, -1, 0)))
        inside = (z >= zg[0]) & (z <= zg[-1])
        return np.where(inside, code, 0)

    def to_dict(self):
        return {"kind": self.kind, "x": list(self.x_grid), "z": list(self.z_grid),
                "t": list(self.t_grid), "values": self._table.tolist()}


def jump_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "zero":
        return ZeroJump()
    if kind == "relative_constant":
        return RelativeConstant(float(d["c"]))
    if kind == "relative_of_z":
        return RelativeOfZ(_zeta_from_dict(d["zeta"]))
    if kind == "separable":
        return Separable(coefficient_from_dict(d["psi"]), _zeta_from_dict(d["zeta"]))
    if kind == "bump":
        return BumpJump(coefficient_from_dict({"kind": "bump_x", **d["bump"]}))
    if kind == "tabulated_xz":
        return TabulatedXZ(tuple(d["x"]), tuple(d["z"]), tuple(d.get("t", [0.0])), d["values"])
    raise ValueError(f"unknown jump kind {kind!r}")


# --------------------------------------------------------------------------
# label measures
# --------------------------------------------------------------------------

def _simpson_weights(n_intervals: int) -> np.ndarray:
    n = n_intervals + (n_intervals % 2)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


@dataclass(frozen=True)
class LebesgueUnit:
    """Lebesgue measure on the label space [0, 1]."""

    kind = "lebesgue_unit"
    finite = True

    def contains(self, z) -> np.ndarray:
        z = _arr(z)
        return (z >= 0.0) & (z <= 1.0)

    def quadrature(self, n_nodes: int = 64):
        """Composite Simpson nodes and weights on [0, 1]."""
        w = _simpson_weights(max(2, n_nodes))
        n = w.size - 1
        return np.linspace(0.0, 1.0, n + 1), w / n

    def total_mass(self) -> float:
        return 1.0

    def sampler(self):
        return lambda u: _arr(u)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Density:
    """Absolutely continuous label measure on (0, inf).

    The density is either parametric, ``c * z**(-1-alpha) * exp(-kappa*z)``,
    or tabulated (log-linear interpolation, zero outside the table).
    ``support`` restricts the measure to a compact window; ``window`` is the
    quadrature hint used when the measure is unrestricted.
    """

    c: float = 1.0
    alpha: float = 0.5
    kappa: float = 1.0
    z_table: tuple[float, ...] | None = None
    d_table: tuple[float, ...] | None = None
    support: tuple[float, float] | None = None
    window: tuple[float, float] = (1e-8, 1e3)
    kind = "density"

    def __post_init__(self):
        if self.z_table is not None:
            object.__setattr__(self, "z_table", tuple(map(float, self.z_table)))
            object.__setattr__(self, "d_table", tuple(map(float, self.d_table)))
            _strictly_increasing(self.z_table, "density z_table")
            if min(self.z_table) <= 0 or min(self.d_table) < 0:
                raise ValueError("tabulated density needs z > 0 and nonnegative values")
        elif self.c < 0:
            raise ValueError("density scale must be nonnegative")
        if self.support is not None:
            lo, hi = map(float, self.support)
            if not (0 < lo < hi < math.inf):
                raise ValueError("density support must be a compact window in (0, inf)")
            object.__setattr__(self, "support", (lo, hi))
        object.__setattr__(self, "window", tuple(map(float, self.window)))

    def __call__(self, z) -> np.ndarray:
        z = _arr(z)
        if self.z_table is not None:
            zt, dt = np.log(self.z_table), np.array(self.d_table)
            with np.errstate(divide="ignore"):
                lz = np.log(np.where(z > 0, z, np.nan))
            d = np.interp(lz, zt, dt)
            d = np.where((z >= self.z_table[0]) & (z <= self.z_table[-1]), d, 0.0)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                d = self.c * np.power(z, -1.0 - self.alpha) * np.exp(-self.kappa * z)
            d = np.where(z > 0, d, 0.0)
        if self.support is not None:
            d = np.where((z >= self.support[0]) & (z <= self.support[1]), d, 0.0)
        return d

    def contains(self, z) -> np.ndarray:
        return _arr(z) > 0

    def restrict(self, lo: float, hi: float) -> "Density":
        if self.support is not None:
            lo, hi = max(lo, self.support[0]), min(hi, self.support[1])
        return replace(self, support=(lo, hi))

    def _range(self):
        if self.support is not None:
            return self.support
        lo, hi = self.window
        if self.z_table is not None:
            lo, hi = max(lo, self.z_table[0]), min(hi, self.z_table[-1])
        return lo, hi

    def mass_on(self, lo: float, hi: float, n: int = 2048) -> float:
        """Mass of ``[lo, hi]`` by Simpson's rule in log z."""
        s = np.linspace(math.log(lo), math.log(hi), n + 1)
        z = np.exp(s)
        w = _simpson_weights(n) * (s[1] - s[0])
        return float(np.sum(w * self(z) * z))

    @property
    def finite(self) -> bool:
        if self.support is not None or self.z_table is not None:
            return True
        if self.alpha < 0:
            return True
        lo, hi = self.window
        base = self.mass_on(lo, hi)
        wider = self.mass_on(lo * 1e-3, hi)
        return bool(abs(wider - base) <= 1e-6 * max(base, 1e-300))

    def quadrature(self, n_nodes: int = 64):
        """Composite Simpson in log z over the (restricted) support."""
        lo, hi = self._range()
        w = _simpson_weights(max(2, n_nodes))
        n = w.size - 1
        s = np.linspace(math.log(lo), math.log(hi), n + 1)
        z = np.exp(s)
        return z, w * (s[1] - s[0]) * z * self(z)

    def total_mass(self) -> float:
        lo, hi = self._range()
        return self.mass_on(lo, hi)

    def sampler(self, n: int = 8192):
        """Inverse-CDF sampler of the normalized measure on its support."""
        lo, hi = self._range()
        s = np.linspace(math.log(lo), math.log(hi), n + 1)
        z = np.exp(s)
        dens = self(z) * z
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
        if cdf[-1] <= 0:
            raise DomainError("density has zero mass on its support")
        cdf /= cdf[-1]
        return lambda u: np.exp(np.interp(_arr(u), cdf, s))

    def to_dict(self):
        d = {"kind": self.kind, "window": list(self.window)}
        if self.z_table is not None:
            d.update(z=list(self.z_table), d=list(self.d_table))
        else:
            d.update(c=self.c, alpha=self.alpha, kappa=self.kappa)
        if self.support is not None:
            d["support"] = list(self.support)
        return d


@dataclass(frozen=True)
class Atoms:
    z: tuple[float, ...]
    mass: tuple[float, ...]
    kind = "atoms"
    finite = True

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(map(float, self.z)))
        object.__setattr__(self, "mass", tuple(map(float, self.mass)))
        if len(self.z) != len(self.mass) or not self.z:
            raise ValueError("atoms need matching, nonempty z and mass lists")
        if min(self.z) <= 0 or min(self.mass) < 0:
            raise ValueError("atoms need z > 0 and nonnegative masses")

    def contains(self, z) -> np.ndarray:
        return _arr(z) > 0

    def quadrature(self, n_nodes: int = 64):
        return np.array(self.z), np.array(self.mass)

    def total_mass(self) -> float:
        return float(sum(self.mass))

    def restrict(self, lo: float, hi: float) -> "Atoms":
        keep = [(z, m) for z, m in zip(self.z, self.mass) if lo <= z <= hi]
        if not keep:
            keep = [(lo, 0.0)]
        return Atoms(tuple(k[0] for k in keep), tuple(k[1] for k in keep))

    def sampler(self):
        z = np.array(self.z)
        cdf = np.cumsum(self.mass)
        cdf = cdf / cdf[-1]
        return lambda u: z[np.minimum(np.searchsorted(cdf, _arr(u), side="right"), z.size - 1)]

    def to_dict(self):
        return {"kind": self.kind, "z": list(self.z), "mass": list(self.mass)}


def measure_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "lebesgue_unit":
        return LebesgueUnit()
    if kind == "density":
        kw: dict = {"window": tuple(d.get("window", (1e-8, 1e3)))}
        if "z" in d:
            kw.update(z_table=tuple(d["z"]), d_table=tuple(d["d"]))
        else:
            kw.update(c=float(d.get("c", 1.0)), alpha=float(d.get("alpha", 0.5)),
                      kappa=float(d.get("kappa", 1.0)))
        if d.get("support") is not None:
            kw["support"] = tuple(d["support"])
        return Density(**kw)
    if kind == "atoms":
        return Atoms(tuple(d["z"]), tuple(d["mass"]))
    raise ValueError(f"unknown measure kind {kind!r}")


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

def _check_intensity(lam) -> None:
    if isinstance(lam, Zero):
        return
    if isinstance(lam, Constant):
        if lam.c < 0:
            raise ValueError("jump intensity must be nonnegative")
        return
    if isinstance(lam, TimeModulated) and isinstance(lam.base, (Zero, Constant)):
        _check_intensity(lam.base)
        if any(v < 0 for _, v in lam.factor.knots):
            raise ValueError("jump intensity must be nonnegative")
        return
    raise ValueError("lambda must depend on t only: zero, constant or time_modulated(constant)")


@dataclass(frozen=True)
class Model:
    beta: Any = field(default_factory=Zero)
    phi: Any = field(default_factory=ZeroJump)
    lam: Any = field(default_factory=lambda: Constant(1.0))
    measure: Any = field(default_factory=LebesgueUnit)
    gamma: float = -0.5
    label: str = "model"

    def __post_init__(self):
        if not self.gamma > -1:
            raise ValueError("gamma must exceed -1")
        _check_intensity(self.lam)

    @property
    def finite_activity(self) -> bool:
        return bool(self.measure.finite)

    def intensity(self, t) -> np.ndarray:
        return self.lam(0.0, t)

    def quadrature(self, n_nodes: int = 64):
        """Label nodes and weights for integrals against ``m(dz)``.

        Label-independent jump sizes collapse to one node carrying the full
        mass, which keeps jump integrals exact for them.
        """
        if not self.measure.finite:
            raise DomainError(
                f"model {self.label!r} has infinite jump activity; truncate it first")
        if not self.phi.depends_on_z:
            z, w = self.measure.quadrature(n_nodes)
            return z[:1], np.array([float(np.sum(w))])
        return self.measure.quadrature(n_nodes)

    def jump_mass(self, n_nodes: int = 64) -> float:
        return float(np.sum(self.quadrature(n_nodes)[1]))

    def with_(self, **kw) -> "Model":
        return replace(self, **kw)


def model_to_dict(model: Model) -> dict:
    return {"label": model.label, "gamma": model.gamma, "lambda": model.lam.to_dict(),
            "beta": model.beta.to_dict(), "phi": model.phi.to_dict(),
            "measure": model.measure.to_dict()}


def model_from_dict(d: dict) -> Model:
    try:
        return Model(beta=coefficient_from_dict(d["beta"]), phi=jump_from_dict(d["phi"]),
                     lam=coefficient_from_dict(d["lambda"]),
                     measure=measure_from_dict(d["measure"]),
                     gamma=float(d["gamma"]), label=str(d.get("label", "model")))
    except KeyError as exc:
        raise ValueError(f"model JSON is missing field {exc.args[0]!r}") from None


def evaluate(model: Model, x, t, z, T: float | None = None):
    """Coefficient values ``(beta, phi, lambda)`` at one point."""
    if not x > 0:
        raise DomainError(f"x must be positive, got {x}")
    if t < 0 or (T is not None and t > T):
        raise DomainError(f"t={t} outside [0, {T}]")
    if not bool(model.measure.contains(z)):
        raise DomainError(f"jump label z={z} outside the label space of {model.measure.kind}")
    return (float(model.beta(x, t)), float(model.phi(x, t, z)), float(model.intensity(t)))


def counterexample_model() -> Model:
    """Pure-jump model ``dX = phi(X(t-)) (dN - dt)`` with a trapezoidal bump.

    phi vanishes outside (1/2, 3/4) and equals 1.2 > 1 on [0.55, 0.70].
    """
    bump = BumpInX(0.5, 0.55, 0.70, 0.75, 1.2)
    return Model(beta=Zero(), phi=BumpJump(bump), lam=Constant(1.0),
                 measure=LebesgueUnit(), gamma=-0.5, label="counterexample")


# --------------------------------------------------------------------------
# structural conditions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionEntry:
    name: str
    status: str  # "pass" | "fail" | "not-applicable"
    constant: float | None = None
    witness: tuple[float, float, float] | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "status": self.status, "constant": self.constant,
                "witness": list(self.witness) if self.witness is not None else None,
                "detail": self.detail}


@dataclass(frozen=True)
class ConditionReport:
    entries: dict[str, ConditionEntry]
    resolution: dict[str, Any]
    tolerance: float

    def __getitem__(self, name: str) -> ConditionEntry:
        return self.entries[name]

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.entries.items() if e.status == "fail"]

    def to_dict(self):
        return {"entries": {k: e.to_dict() for k, e in self.entries.items()},
                "resolution": self.resolution, "tolerance": self.tolerance}


def _second_differences(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Three-point second derivative on a nonuniform grid, along the last axis."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    return 2.0 * ((f[..., 2:] - f[..., 1:-1]) / hp - (f[..., 1:-1] - f[..., :-2]) / hm) / (hm + hp)


def _roundoff_scale(x: np.ndarray, f: np.ndarray, rel: float) -> np.ndarray:
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    mag = np.abs(f[..., :-2]) + 2 * np.abs(f[..., 1:-1]) + np.abs(f[..., 2:])
    return rel * mag / (hm * hp) + 1e-300


def check_conditions(model: Model, x_samples, t_samples, z_samples,
                     rel_tol: float = 1e-9, n_quad: int = 256) -> ConditionReport:
    """Probe the structural conditions on a sample cloud.

    Growth conditions report the smallest constant fitting the cloud, and fail
    when the same ratio keeps growing at probe points one decade beyond the
    sampled x-range. Convexity conditions use three-point second differences.
    """
    x = np.unique(_arr(x_samples))
    t = np.unique(_arr(t_samples))
    z = np.unique(_arr(z_samples))
    if x.size == 0 or t.size == 0 or z.size == 0:
        raise ValueError("sample lists must be nonempty")
    if np.any(x <= 0):
        raise DomainError("x samples must be positive")
    if np.any(t < 0):
        raise DomainError("t samples must be nonnegative")
    if not np.all(model.measure.contains(z)):
        raise DomainError("z samples outside the label space")

    entries: dict[str, ConditionEntry] = {}
    probe = np.array([x[0] / 10.0, x[-1] * 10.0])
    X, Tt, Z = np.meshgrid(x, t, z, indexing="ij")
    beta = model.beta(X, Tt)
    phi = model.phi(X, Tt, Z)

    def growth(name, ratio_fn, fmt):
        r = ratio_fn(x)
        c_in = float(np.max(r))
        r_out = ratio_fn(probe)
        k = int(np.argmax(r_out))
        if not np.isfinite(c_in):
            entries[name] = ConditionEntry(name, "fail", None, None, "non-finite ratio on samples")
        elif r_out[k] > c_in * (1 + 1e-6) + rel_tol:
            entries[name] = ConditionEntry(
                name, "fail", c_in, (float(probe[k]), float(t[0]), float(z[0])),
                f"{fmt} keeps growing beyond the sampled range ({r_out[k]:.6g} > {c_in:.6g})")
        else:
            entries[name] = ConditionEntry(name, "pass", c_in)

    def m2_ratio(xs):
        XX, TT, ZZ = np.meshgrid(xs, t, z, indexing="ij")
        v = (model.beta(XX, TT) ** 2 + model.phi(XX, TT, ZZ) ** 2) / XX ** 2
        return v.reshape(xs.size, -1).max(axis=1)

    growth("M2", m2_ratio, "(beta^2 + phi^2)/x^2")

    # M3: Lipschitz constant over adjacent x samples, probes extend the grid
    def lip(xs_sorted):
        XX, TT, ZZ = np.meshgrid(xs_sorted, t, z, indexing="ij")
        b = model.beta(XX, TT)
        p = model.phi(XX, TT, ZZ)
        dx = np.diff(xs_sorted)[:, None, None]
        return (np.abs(np.diff(b, axis=0)) + np.abs(np.diff(p, axis=0))) / dx

    if x.size >= 2:
        s_in = lip(x)
        c3 = float(np.max(s_in))
        ext = lip(np.concatenate([[probe[0]], x, [probe[1]]]))
        edge = np.array([ext[0].max(), ext[-1].max()])
        if edge.max() > c3 * (1 + 1e-6) + rel_tol:
            k = int(np.argmax(edge))
            entries["M3"] = ConditionEntry(
                "M3", "fail", c3, (float(probe[k]), float(t[0]), float(z[0])),
                "Lipschitz quotient grows beyond the sampled range")
        else:
            entries["M3"] = ConditionEntry("M3", "pass", c3)
    else:
        entries["M3"] = ConditionEntry("M3", "not-applicable", detail="needs two x samples")

    # M4: phi > gamma * x
    slack = phi - model.gamma * X
    best_gamma = float(np.min(phi / X))
    k = np.unravel_index(np.argmin(slack), slack.shape)
    if slack[k] <= 0:
        entries["M4"] = ConditionEntry(
            "M4", "fail", best_gamma, (float(X[k]), float(Tt[k]), float(Z[k])),
            f"phi <= gamma*x with gamma={model.gamma}")
    else:
        entries["M4"] = ConditionEntry("M4", "pass", best_gamma,
                                       detail="constant is inf phi/x on the samples")

    # erlander / palme along x for every (t, z)
    P = np.moveaxis(phi, 0, -1)  # (t, z, x)
    if x.size >= 3:
        d2 = _second_differences(x, P)
        scale = _roundoff_scale(x, P, rel_tol)
        centre = P[..., 1:-1]
        pos = np.any(P > 0, axis=-1)
        neg = np.any(P < 0, axis=-1)
        mixed = pos & neg
        erl_bad = ((centre > 0) & (d2 < -scale)) | ((centre < 0) & (d2 > scale))
        if np.any(mixed):
            it, iz = np.argwhere(mixed)[0]
            row = P[it, iz]
            ic = int(np.argmax(np.sign(row[1:]) * np.sign(row[:-1]) < 0)) if np.any(
                np.sign(row[1:]) * np.sign(row[:-1]) < 0) else int(np.argmax(row < 0))
            entries["erlander"] = ConditionEntry(
                "erlander", "fail", None, (float(x[ic]), float(t[it]), float(z[iz])),
                "phi changes sign in x at fixed (t, z)")
        elif np.any(erl_bad):
            it, iz, ic = np.argwhere(erl_bad)[0]
            entries["erlander"] = ConditionEntry(
                "erlander", "fail", float(d2[it, iz, ic]),
                (float(x[ic + 1]), float(t[it]), float(z[iz])),
                "phi not convex where positive (or not concave where negative)")
        else:
            entries["erlander"] = ConditionEntry("erlander", "pass")
        prod = d2 * centre
        pal_bad = prod < -scale * np.abs(centre)
        if np.any(pal_bad):
            it, iz, ic = np.argwhere(pal_bad)[0]
            entries["palme"] = ConditionEntry(
                "palme", "fail", float(prod[it, iz, ic]),
                (float(x[ic + 1]), float(t[it]), float(z[iz])), "phi_xx * phi < 0")
        else:
            entries["palme"] = ConditionEntry("palme", "pass")
    else:
        for name in ("erlander", "palme"):
            entries[name] = ConditionEntry(name, "not-applicable", detail="needs three x samples")

    # G-conditions integrate against m over the quadrature window
    if isinstance(model.measure, LebesgueUnit) or isinstance(model.measure, Atoms):
        zq, wq = model.measure.quadrature(n_quad)
        wider = None
    else:
        m = model.measure
        lo, hi = m._range()
        zq, wq = m.quadrature(n_quad)
        wider = m.restrict(lo * 1e-3, hi * 10.0) if m.support is None else None

    def integral(xs, ts, power, zs, ws, diff=None):
        XX, TT, ZZ = np.meshgrid(xs, ts, zs, indexing="ij")
        f = model.phi(XX, TT, ZZ)
        if diff is not None:
            f = np.diff(f, axis=0)
        return np.sum(np.abs(f) ** power * ws, axis=-1)

    def converged(power):
        if wider is None:
            return True
        zw, ww = wider.quadrature(4 * n_quad)
        a = integral(x, t, power, zq, wq)
        b = integral(x, t, power, zw, ww)
        return bool(np.all(np.abs(b - a) <= 1e-4 * np.maximum(np.abs(b), 1e-12)))

    ratio_g2 = (np.max(beta[:, :, 0] ** 2, axis=1) + integral(x, t, 2, zq, wq).max(axis=1)) / x ** 2
    g2_ok = converged(2)
    entries["G2"] = ConditionEntry(
        "G2", "pass" if g2_ok else "fail", float(ratio_g2.max()), None if g2_ok else
        (float(x[0]), float(t[0]), float(zq[0])),
        "" if g2_ok else "integral of phi^2 m(dz) not converged on the quadrature window")
    if x.size >= 2:
        XX, TT = np.meshgrid(x, t, indexing="ij")
        db = np.diff(model.beta(XX, TT), axis=0) ** 2
        dphi = integral(x, t, 2, zq, wq, diff=True)
        c_g3 = float(np.max((db + dphi) / np.diff(x)[:, None] ** 2))
        entries["G3"] = ConditionEntry("G3", "pass", c_g3)
    else:
        entries["G3"] = ConditionEntry("G3", "not-applicable", detail="needs two x samples")
    consts = []
    bad = None
    for p in range(2, 9):
        ip = integral(x, t, p, zq, wq).max(axis=1)
        consts.append(float(np.max(ip / (1 + x ** p))))
        if bad is None and not converged(p):
            bad = p
    entries["G5"] = ConditionEntry(
        "G5", "pass" if bad is None else "fail", max(consts),
        None if bad is None else (float(x[0]), float(t[0]), float(zq[0])),
        "max C_p over p=2..8" if bad is None else f"moment integral p={bad} not converged")

    resolution = {"n_x": int(x.size), "n_t": int(t.size), "n_z": int(z.size),
                  "x_range": [float(x[0]), float(x[-1])],
                  "min_dx": float(np.min(np.diff(x))) if x.size > 1 else None,
                  "z_quadrature_nodes": int(np.size(zq))}
    return ConditionReport(entries, resolution, rel_tol)


# --------------------------------------------------------------------------
# truncation of infinite-activity models
# --------------------------------------------------------------------------

def _lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the points, evaluated at ``x``."""
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (x[i] - x[a]) * (y[b] - y[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    h = np.interp(x, x[hull], y[hull])
    return np.minimum(h, y)


def convex_minorant_with_cap(x: np.ndarray, y: np.ndarray, cap: float) -> np.ndarray:
    """Greatest convex f <= y on the grid with right-slopes <= cap.

    ``x[0]`` is the left anchor. The result is the hull followed by the
    inf-convolution ``f_i = min(h_i, f_{i-1} + cap*(x_i - x_{i-1}))``.
    """
    h = _lower_hull(x, y)
    f = h.copy()
    for i in range(1, x.size):
        f[i] = min(h[i], f[i - 1] + cap * (x[i] - x[i - 1]))
    return f


def truncate_model(model: Model, n: int, x_grid, t_grid=(0.0,), z_nodes: int = 64,
                   sign_tol: float = 0.0) -> Model:
    """Finite-intensity approximation of a model driven by a Radon measure.

    Restricts the measure to ``[1/n, n]`` and replaces phi per (t, z) by its
    capped convex minorant (where phi >= 0) or capped concave majorant (where
    phi <= 0), anchored at phi(0+) = 0 and tabulated on ``x_grid``.
    """
    if isinstance(model.measure, LebesgueUnit):
        raise ValueError("model already has finite intensity on [0, 1]; nothing to truncate")
    n = int(n)
    if n < 1:
        raise ValueError("n must be a positive integer")
    xg = _arr(x_grid)
    _strictly_increasing(xg, "x_grid")
    if xg[0] <= 0:
        raise DomainError("x_grid must be positive")
    lo, hi = 1.0 / n, float(n)
    if n == 1 and isinstance(model.measure, Density):
        raise ValueError("n=1 restricts a density to the single point z=1, which has no mass")
    measure = model.measure.restrict(lo, hi)
    zq, _ = measure.quadrature(z_nodes)
    tg = _arr(t_grid)
    xs = np.concatenate([[0.0], xg])
    table = np.zeros((tg.size, xs.size, zq.size))
    up_cap = float(n)
    down_cap = (n - 1.0) / n  # slope floor (1-n)/n for the concave branch, mirrored
    for k, t in enumerate(tg):
        vals = model.phi(xg[:, None], t, zq[None, :])  # (x, z)
        for j in range(zq.size):
            col = np.concatenate([[0.0], vals[:, j]])
            if np.all(col >= -sign_tol):
                table[k, :, j] = convex_minorant_with_cap(xs, np.maximum(col, 0.0), up_cap)
            elif np.all(col <= sign_tol):
                table[k, :, j] = -convex_minorant_with_cap(xs, np.maximum(-col, 0.0), down_cap)
            else:
                bad = int(np.argmax(col < 0)) if col[1] > 0 else int(np.argmax(col > 0))
                raise DomainError(
                    f"phi changes sign in x at t={t}, z={zq[j]:.6g} (near x={xs[bad]:.6g});"
                    " the convex/concave dichotomy does not hold")
    phi_n = TabulatedXZ(tuple(xs), tuple(zq), tuple(tg), table)
    return model.with_(phi=phi_n, measure=measure, label=f"{model.label}|n={n}")


def jump_compensator(phi, x, t, zq: np.ndarray, wq: np.ndarray) -> np.ndarray:
    """``sum_k w_k phi(x, t, z_k)``, the quadrature of ``int phi m(dz)``.

    Separable families reduce to one scalar integral; tables are integrated
    column-wise once and interpolated in x, which commutes with the
    quadrature because both are linear.
    """
    x = _arr(x)
    if isinstance(phi, ZeroJump):
        return np.zeros(x.shape)
    if not phi.depends_on_z:
        return phi(x, t, zq[0]) * float(np.sum(wq))
    if isinstance(phi, RelativeOfZ):
        return x * float(np.sum(wq * phi.zeta(zq)))
    if isinstance(phi, Separable):
        return phi.psi(x, t) * float(np.sum(wq * phi.zeta(zq)))
    if isinstance(phi, TabulatedXZ) and len(phi.t_grid) == 1:
        inside = (zq >= phi.z_grid[0]) & (zq <= phi.z_grid[-1])
        if np.all(inside) and np.array_equal(zq, np.array(phi.z_grid)):
            col = phi.table[0] @ wq
            xg = np.array(phi.x_grid)
            i = np.clip(np.searchsorted(xg, x, side="right") - 1, 0, xg.size - 2)
            w = (x - xg[i]) / (xg[i + 1] - xg[i])
            return (1 - w) * col[i] + w * col[i + 1]
    vals = phi(x[..., None], t, zq)
    return vals @ wq
