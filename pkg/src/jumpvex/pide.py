"""Finite-difference solution of u_tau = L u in time-to-maturity tau = T - t.

L u = a u_xx + lambda int (u(x + phi) - u - phi u_x) m(dz),  a = beta^2 / 2.

Time stepping is IMEX Euler: the jump integral is explicit, diffusion and the
compensator drift are implicit and tridiagonal. The drift uses central
differences where that keeps the matrix an M-matrix and upwinds otherwise,
so the scheme is monotone whenever ``lambda * m(Z) * dtau <= 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .model import DomainError, Model, jump_compensator

__all__ = ["StabilityError", "Grid", "SchemeConfig", "PriceSurface", "apply_generator",
           "explicit_step", "generator_pointwise", "solve_pide", "solve_bermudan",
           "default_grid", "step_doubling", "max_jump_factor", "write_surface_csv"]


class StabilityError(ValueError):
    """The explicit jump term would be unstable for the chosen time step."""


@dataclass(frozen=True, eq=False)
class Grid:
    x_nodes: np.ndarray
    T: float
    n_t: int
    spacing: str = "custom"

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("grid needs at least 3 x nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x nodes must be strictly increasing")
        if x[0] <= 0:
            raise ValueError("x_min must be positive")
        if self.n_t < 2:
            raise ValueError("grid needs at least 2 time nodes")
        if not self.T > 0:
            raise ValueError("T must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "x_nodes", x)

    @classmethod
    def uniform(cls, x_min: float, x_max: float, n_x: int, T: float, n_t: int) -> "Grid":
        return cls(np.linspace(x_min, x_max, n_x), float(T), int(n_t), "uniform")

    @classmethod
    def geometric(cls, x_min: float, x_max: float, n_x: int, T: float, n_t: int,
                  anchor: float | None = None) -> "Grid":
        """Log-spaced nodes; ``anchor`` (inside the range) is made an exact node."""
        lo, hi = math.log(x_min), math.log(x_max)
        if anchor is None or not (x_min < anchor < x_max):
            x = np.exp(np.linspace(lo, hi, n_x))
        else:
            a = math.log(anchor)
            k = min(max(int(round((a - lo) / (hi - lo) * (n_x - 1))), 1), n_x - 2)
            left = np.linspace(lo - a, 0.0, k + 1)
            right = np.linspace(0.0, hi - a, n_x - k)[1:]
            x = anchor * np.exp(np.concatenate([left, right]))
        return cls(x, float(T), int(n_t), "geometric")

    @property
    def n_x(self) -> int:
        return self.x_nodes.size

    @property
    def x_min(self) -> float:
        return float(self.x_nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def dtau(self) -> float:
        return self.T / (self.n_t - 1)

    @property
    def tau_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t)

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t)

    def refine(self) -> "Grid":
        """Midpoints added in x, time step halved; every coarse node survives."""
        x = self.x_nodes
        if self.spacing == "geometric":
            mid = np.sqrt(x[1:] * x[:-1])
        else:
            mid = 0.5 * (x[1:] + x[:-1])
        fine = np.empty(2 * x.size - 1)
        fine[0::2] = x
        fine[1::2] = mid
        return Grid(fine, self.T, 2 * (self.n_t - 1) + 1, self.spacing)

    def to_dict(self):
        return {"spacing": self.spacing, "x_min": self.x_min, "x_max": self.x_max,
                "n_x": self.n_x, "T": self.T, "n_t": self.n_t}


@dataclass(frozen=True)
class SchemeConfig:
    z_quadrature_nodes: int = 64
    boundary: str = "linear"  # or "payoff" (Dirichlet u = g at both ends)
    smoothing_startup_steps: int = 4
    interpolation: str = "linear"

    def __post_init__(self):
        if self.z_quadrature_nodes < 2:
            raise ValueError("z_quadrature_nodes must be >= 2")
        if self.boundary not in ("linear", "payoff"):
            raise ValueError("boundary must be 'linear' or 'payoff'")
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation is supported")

    def to_dict(self):
        return {"z_quadrature_nodes": self.z_quadrature_nodes, "boundary": self.boundary,
                "smoothing_startup_steps": self.smoothing_startup_steps,
                "interpolation": self.interpolation}


@dataclass(frozen=True, eq=False)
class PriceSurface:
    """``values[i, j] = u(x_i, tau_j)``; column 0 is the payoff."""

    values: np.ndarray
    grid: Grid
    model_label: str
    payoff: str

    def slice(self, j: int = -1) -> np.ndarray:
        return self.values[:, j]

    def value(self, x: float, j: int = -1) -> float:
        """Linear interpolation of slice ``j`` (default tau = T) at ``x``."""
        xs = self.grid.x_nodes
        if not xs[0] <= x <= xs[-1]:
            raise DomainError(f"x={x} outside the grid [{xs[0]}, {xs[-1]}]")
        return float(np.interp(x, xs, self.values[:, j]))


def _interp_linear_extrap(x: np.ndarray, u: np.ndarray, q: np.ndarray) -> np.ndarray:
    v = np.interp(q, x, u)
    lo = q < x[0]
    hi = q > x[-1]
    if lo.any():
        v[lo] = u[0] + (q[lo] - x[0]) * (u[1] - u[0]) / (x[1] - x[0])
    if hi.any():
        v[hi] = u[-1] + (q[hi] - x[-1]) * (u[-1] - u[-2]) / (x[-1] - x[-2])
    return v


def _jump_terms(model: Model, u: np.ndarray, x: np.ndarray, t: float, zq, wq):
    """``J = lambda sum_k w_k (u(x+phi_k) - u)`` and the drift ``lambda sum_k w_k phi_k``."""
    lam = float(model.intensity(t))
    if lam == 0.0 or getattr(model.phi, "kind", "") == "zero":
        return np.zeros_like(u), np.zeros_like(u)
    phi = model.phi(x[:, None], t, zq[None, :])
    dest = x[:, None] + phi
    if np.any(dest <= 0):
        i, k = np.argwhere(dest <= 0)[0]
        raise DomainError(
            f"jump destination x+phi <= 0 at x={x[i]:.6g}, z={zq[k]:.6g}, t={t:.6g}")
    shifted = _interp_linear_extrap(x, u, dest.ravel()).reshape(dest.shape)
    J = lam * ((shifted - u[:, None]) @ wq)
    mu = lam * jump_compensator(model.phi, x, t, zq, wq)
    return J, mu


def _derivatives(x: np.ndarray, u: np.ndarray):
    """Three-point u_x and u_xx at interior nodes (nonuniform weights)."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    ux = (-hp / (hm * (hm + hp)) * u[:-2] + (hp - hm) / (hm * hp) * u[1:-1]
          + hm / (hp * (hm + hp)) * u[2:])
    uxx = 2.0 * (hm * u[2:] - (hm + hp) * u[1:-1] + hp * u[:-2]) / (hm * hp * (hm + hp))
    return ux, uxx


def apply_generator(model: Model, u_slice, grid: Grid, t: float,
                    config: SchemeConfig = SchemeConfig()) -> np.ndarray:
    """``(L u)(x_i, t)`` on the grid nodes.

    Boundary nodes take u_xx = 0 and one-sided u_x; jump destinations outside
    the grid are read off the linear extrapolation of the slice.
    """
    u = np.asarray(u_slice, dtype=float)
    x = grid.x_nodes
    if u.shape != x.shape:
        raise ValueError("u_slice must have one value per x node")
    zq, wq = model.quadrature(config.z_quadrature_nodes)
    J, mu = _jump_terms(model, u, x, t, zq, wq)
    ux_i, uxx_i = _derivatives(x, u)
    ux = np.concatenate([[(u[1] - u[0]) / (x[1] - x[0])], ux_i,
                         [(u[-1] - u[-2]) / (x[-1] - x[-2])]])
    uxx = np.concatenate([[0.0], uxx_i, [0.0]])
    a = 0.5 * model.beta(x, t) ** 2
    return a * uxx + J - mu * ux


def explicit_step(model: Model, u_slice, grid: Grid, t: float, dt: float,
                  config: SchemeConfig = SchemeConfig()) -> np.ndarray:
    return np.asarray(u_slice, dtype=float) + dt * apply_generator(model, u_slice, grid, t, config)


def generator_pointwise(model: Model, f, fx, fxx, x, t: float, z_nodes: int = 64) -> np.ndarray:
    """``(L f)(x)`` for a function known in closed form, at arbitrary points."""
    x = np.asarray(x, dtype=float)
    a = 0.5 * model.beta(x, t) ** 2
    out = a * fxx(x)
    lam = float(model.intensity(t))
    if lam > 0 and getattr(model.phi, "kind", "") != "zero":
        zq, wq = model.quadrature(z_nodes)
        phi = model.phi(x[..., None], t, zq)
        if np.any(x[..., None] + phi <= 0):
            raise DomainError("jump destination x+phi <= 0")
        integrand = f(x[..., None] + phi) - f(x)[..., None] - phi * fx(x)[..., None]
        out = out + lam * (integrand @ wq)
    return out


def _tridiag_coefficients(x: np.ndarray, a: np.ndarray, mu: np.ndarray):
    """Lower/upper weights of ``a u_xx - mu u_x`` at interior nodes, both >= 0."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    s = hm + hp
    dl = 2.0 * a / (hm * s)
    du = 2.0 * a / (hp * s)
    cl = dl + mu * hp / (hm * s)
    cu = du - mu * hm / (hp * s)
    central_ok = (cl >= 0) & (cu >= 0)
    cl = np.where(central_ok, cl, dl + np.maximum(mu, 0.0) / hm)
    cu = np.where(central_ok, cu, du + np.maximum(-mu, 0.0) / hp)
    return cl, cu


class _Stepper:
    def __init__(self, model: Model, payoff, grid: Grid, config: SchemeConfig):
        if not model.finite_activity:
            raise DomainError(f"model {model.label!r} has infinite jump activity; truncate it first")
        self.model, self.grid, self.config = model, grid, config
        self.x = grid.x_nodes
        self.g = np.asarray(payoff(self.x), dtype=float)
        self.zq, self.wq = model.quadrature(config.z_quadrature_nodes)
        mass = float(np.sum(self.wq))
        lam_max = float(np.max(model.intensity(grid.t_nodes)))
        if lam_max * mass * grid.dtau > 1.0:
            need = math.ceil(lam_max * mass * grid.T) + 1
            raise StabilityError(
                f"explicit jump term unstable: lambda*m(Z)*dtau = {lam_max * mass * grid.dtau:.4g} > 1"
                f" at dtau={grid.dtau:.4g}; use n_t >= {need}")

    def step(self, u: np.ndarray, tau: float, h: float) -> np.ndarray:
        model, x, T = self.model, self.x, self.grid.T
        t = T - tau
        J, mu = _jump_terms(model, u, x, t, self.zq, self.wq)
        a = 0.5 * model.beta(x[1:-1], t) ** 2
        cl, cu = _tridiag_coefficients(x, a, mu[1:-1])
        rhs = u[1:-1] + h * J[1:-1]
        lo, hi = (u[0], u[-1]) if self.config.boundary == "linear" else (self.g[0], self.g[-1])
        rhs[0] += h * cl[0] * lo
        rhs[-1] += h * cu[-1] * hi
        n = rhs.size
        ab = np.zeros((3, n))
        ab[0, 1:] = -h * cu[:-1]
        ab[1] = 1.0 + h * (cl + cu)
        ab[2, :-1] = -h * cl[1:]
        out = np.empty_like(u)
        out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
        if self.config.boundary == "linear":
            # lagged boundary data, then the time value u - g is extended
            # linearly past the last interior node (u_xx = 0 on linear wings)
            w = out[1:-1] - self.g[1:-1]
            if w.size == 1:
                out[0], out[-1] = self.g[0] + w[0], self.g[-1] + w[0]
            else:
                out[0] = self.g[0] + w[0] + (w[0] - w[1]) * (x[1] - x[0]) / (x[2] - x[1])
                out[-1] = self.g[-1] + w[-1] + (w[-1] - w[-2]) * (x[-1] - x[-2]) / (x[-2] - x[-3])
        else:
            out[0], out[-1] = self.g[0], self.g[-1]
        return out


def _solve(model: Model, payoff, grid: Grid, config: SchemeConfig,
           exercise_idx: set[int]) -> PriceSurface:
    st = _Stepper(model, payoff, grid, config)
    values = np.empty((grid.n_x, grid.n_t))
    u = st.g.copy()
    values[:, 0] = u
    dtau = grid.dtau
    for j in range(1, grid.n_t):
        tau0 = (j - 1) * dtau
        if j <= config.smoothing_startup_steps:
            u = st.step(u, tau0, 0.5 * dtau)
            u = st.step(u, tau0 + 0.5 * dtau, 0.5 * dtau)
        else:
            u = st.step(u, tau0, dtau)
        if j in exercise_idx:
            u = np.maximum(u, st.g)
        values[:, j] = u
    values.setflags(write=False)
    return PriceSurface(values, grid, model.label, payoff.describe())


def solve_pide(model: Model, payoff, grid: Grid, config: SchemeConfig = SchemeConfig()) -> PriceSurface:
    """European price surface from the payoff slice at tau = 0 to tau = T."""
    return _solve(model, payoff, grid, config, set())


def solve_bermudan(model: Model, payoff, grid: Grid, config: SchemeConfig = SchemeConfig(),
                   exercise_times=()) -> PriceSurface:
    """Like :func:`solve_pide` with ``max(u, g)`` at each exercise time.

    Exercise times are calendar times and must sit on the time grid.
    """
    idx = set()
    for t in exercise_times:
        tau = grid.T - float(t)
        j = int(round(tau / grid.dtau))
        if not (0 <= j < grid.n_t) or abs(j * grid.dtau - tau) > 1e-9 * grid.T:
            raise ValueError(f"exercise time {t} is not a grid time")
        idx.add(j)
    return _solve(model, payoff, grid, config, idx)


def max_jump_factor(model: Model, x_lo: float, x_hi: float, T: float,
                    z_nodes: int = 64, n: int = 513) -> float:
    """Largest relative upward jump ``phi / x`` over a sample of the domain."""
    if getattr(model.phi, "kind", "") == "zero":
        return 0.0
    x = np.exp(np.linspace(math.log(x_lo), math.log(x_hi), n))
    zq, _ = model.quadrature(z_nodes)
    best = 0.0
    for t in (0.0, 0.5 * T, T):
        r = model.phi(x[:, None], t, zq[None, :]) / x[:, None]
        best = max(best, float(np.max(r)))
    return best


def default_grid(model: Model, x0: float, T: float, n_x: int = 401, min_steps: int = 400,
                 safety: float = 2.0, z_nodes: int = 64, multiple_of: int = 1) -> Grid:
    """Geometric grid on ``[x0/8, 8 x0 (1 + max jump factor)]`` with ``x0`` a node.

    The step count is the larger of ``min_steps`` and the explicit stability
    bound times ``safety``, rounded up to a multiple of ``multiple_of``.
    """
    factor = max_jump_factor(model, x0 / 8.0, 8.0 * x0, T, z_nodes)
    x_max = 8.0 * x0 * (1.0 + factor)
    lam_max = float(np.max(model.intensity(np.linspace(0.0, T, 65))))
    mass = model.jump_mass(z_nodes) if lam_max > 0 else 0.0
    steps = max(min_steps, math.ceil(safety * lam_max * mass * T))
    steps = multiple_of * math.ceil(steps / multiple_of)
    return Grid.geometric(x0 / 8.0, x_max, n_x, T, steps + 1, anchor=x0)


def step_doubling(model: Model, payoff, grid: Grid, config: SchemeConfig = SchemeConfig(),
                  exercise_times=None):
    """Coarse and refined surfaces plus the max |difference| on the final slice."""
    solve = (lambda g: solve_pide(model, payoff, g, config)) if exercise_times is None else (
        lambda g: solve_bermudan(model, payoff, g, config, exercise_times))
    coarse = solve(grid)
    fine = solve(grid.refine())
    diff = np.abs(fine.values[0::2, -1] - coarse.values[:, -1])
    return coarse, fine, float(diff.max())


def write_surface_csv(surface: PriceSurface, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x", "tau", "u"])
    x, tau = surface.grid.x_nodes, surface.grid.tau_nodes
    for j in range(tau.size):
        for i in range(x.size):
            w.writerow([f"{x[i]:.17g}", f"{tau[j]:.17g}", f"{surface.values[i, j]:.17g}"])
