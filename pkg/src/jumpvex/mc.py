"""Monte Carlo simulation of the jump-diffusion and price estimation.

Euler steps with Poisson jump counts per step. Every random draw is a pure
function of ``(seed, path_index, step, slot)`` through a splitmix64 hash, so
a path is reproducible on its own and block-parallel runs match sequential
ones bit for bit.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .model import DomainError, Model, jump_compensator

__all__ = ["MCConfig", "Path", "MCEstimate", "X_FLOOR", "BLOCK_SIZE",
           "simulate_path", "simulate_terminal", "price_mc", "write_paths_csv",
           "thread_count"]

X_FLOOR = 1e-12
BLOCK_SIZE = 4096

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SLOT_NORMAL, _SLOT_COUNT, _SLOT_LABEL0 = 0, 1, 2
_MAX_SLOTS = 1 << 16


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _path_keys(seed: int, path_index: np.ndarray) -> np.ndarray:
    s = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return _mix(s ^ _mix(path_index.astype(np.uint64)))


def _uniform(keys: np.ndarray, step: int, slot: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1)."""
    h = _mix(keys ^ np.uint64(step * _MAX_SLOTS + slot))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def _poisson(u: np.ndarray, mean: float) -> np.ndarray:
    """Inverse-CDF Poisson counts for a common mean."""
    count = np.zeros(u.shape, dtype=np.int64)
    if mean <= 0:
        return count
    p = math.exp(-mean)
    cdf = p
    k = 0
    while cdf < 1.0 - 1e-16 and k < _MAX_SLOTS - _SLOT_LABEL0 - 1:
        count += u > cdf
        k += 1
        p *= mean / k
        cdf += p
        if p == 0.0:
            break
    return count


def thread_count() -> int:
    env = os.environ.get("JUMPVEX_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 100_000
    n_steps: int = 256
    seed: int = 42
    antithetic: bool = False
    z_quadrature_nodes: int = 64

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")

    def to_dict(self):
        return {"n_paths": self.n_paths, "n_steps": self.n_steps, "seed": self.seed,
                "antithetic": self.antithetic, "z_quadrature_nodes": self.z_quadrature_nodes}


@dataclass(frozen=True)
class Path:
    times: tuple[float, ...]
    values: tuple[float, ...]
    jump_times: tuple[float, ...] = ()
    floor_events: int = 0


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    model_label: str
    payoff: str
    n_steps: int = 0
    floor_events: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "seed": self.seed, "model": self.model_label, "payoff": self.payoff,
                "n_steps": self.n_steps, "floor_events": self.floor_events}


class _Stepper:
    """Shared per-run state: quadrature, label sampler, step size."""

    def __init__(self, model: Model, t0: float, T: float, config: MCConfig):
        if not t0 < T:
            raise DomainError(f"need t0 < T, got t0={t0}, T={T}")
        if not model.finite_activity:
            raise DomainError(
                f"model {model.label!r} has infinite jump activity; truncate it first")
        self.model = model
        self.t0, self.T = float(t0), float(T)
        self.n_steps = config.n_steps
        self.dt = (self.T - self.t0) / config.n_steps
        self.zq, self.wq = model.quadrature(config.z_quadrature_nodes)
        self.mass = float(np.sum(self.wq))
        self.jumps = self.mass > 0 and not _is_zero_jump(model)
        self.sampler = model.measure.sampler() if self.jumps else None

    def run(self, keys: np.ndarray, x0: float, sign: float = 1.0, record: bool = False):
        model, dt = self.model, self.dt
        X = np.full(keys.shape, float(x0))
        floors = 0
        trace = [X.copy()] if record else None
        jump_steps = []
        sq = math.sqrt(dt)
        for s in range(self.n_steps):
            t = self.t0 + s * dt
            lam = float(model.intensity(t))
            b = model.beta(X, t)
            dW = sign * sq * ndtri(_uniform(keys, s, _SLOT_NORMAL))
            Xn = X + b * dW
            if self.jumps and lam > 0:
                Xn = Xn - lam * jump_compensator(model.phi, X, t, self.zq, self.wq) * dt
                count = _poisson(_uniform(keys, s, _SLOT_COUNT), lam * self.mass * dt)
                for j in range(int(count.max(initial=0))):
                    hit = count > j
                    z = self.sampler(_uniform(keys[hit], s, _SLOT_LABEL0 + j))
                    Xn[hit] += model.phi(X[hit], t, z)
                if record and count.any():
                    jump_steps.append(self.t0 + (s + 1) * dt)
            low = Xn <= 0
            if low.any():
                floors += int(low.sum())
                Xn[low] = X_FLOOR
            X = Xn
            if record:
                trace.append(X.copy())
        return X, floors, trace, jump_steps


def _is_zero_jump(model: Model) -> bool:
    return getattr(model.phi, "kind", "") == "zero"


def simulate_path(model: Model, x0: float, t0: float, T: float, config: MCConfig,
                  path_index: int) -> Path:
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    st = _Stepper(model, t0, T, config)
    keys = _path_keys(config.seed, np.array([path_index]))
    _, floors, trace, jumps = st.run(keys, x0, record=True)
    times = tuple(t0 + k * st.dt for k in range(config.n_steps + 1))
    return Path(times, tuple(float(v[0]) for v in trace), tuple(jumps), floors)


def _blocks(n_index: int):
    return [(lo, min(lo + BLOCK_SIZE, n_index)) for lo in range(0, n_index, BLOCK_SIZE)]


def simulate_terminal(model: Model, x0: float, t0: float, T: float, config: MCConfig):
    """Terminal values, shape ``(n_index, 2)`` with antithetics else ``(n_index, 1)``,
    plus the floor-event count."""
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    st = _Stepper(model, t0, T, config)
    n_index = config.n_paths // 2 if config.antithetic else config.n_paths
    width = 2 if config.antithetic else 1
    out = np.empty((n_index, width))
    floors = np.zeros(len(_blocks(n_index)), dtype=np.int64)

    def work(item):
        b, (lo, hi) = item
        keys = _path_keys(config.seed, np.arange(lo, hi))
        X, f, _, _ = st.run(keys, x0)
        out[lo:hi, 0] = X
        if config.antithetic:
            Xa, fa, _, _ = st.run(keys, x0, sign=-1.0)
            out[lo:hi, 1] = Xa
            f += fa
        floors[b] = f

    items = list(enumerate(_blocks(n_index)))
    threads = min(thread_count(), len(items))
    if threads <= 1:
        for it in items:
            work(it)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, items))
    return out, int(floors.sum())


def price_mc(model: Model, payoff, x0: float, t0: float, T: float,
             config: MCConfig) -> MCEstimate:
    """Estimate ``E[g(X(T)) | X(t0) = x0]``."""
    XT, floors = simulate_terminal(model, x0, t0, T, config)
    g = payoff(XT).mean(axis=1)  # antithetic pairs averaged
    n = g.size
    mean = float(np.sum(g) / n)
    std = float(np.std(g, ddof=1)) if n > 1 else 0.0
    return MCEstimate(mean, std / math.sqrt(n), config.n_paths, config.seed, model.label,
                      payoff.describe(), config.n_steps, floors)


def write_paths_csv(paths: list[Path], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_index", "time", "value"])
    for i, p in enumerate(paths):
        for t, v in zip(p.times, p.values):
            w.writerow([i, repr(float(t)), repr(float(v))])
