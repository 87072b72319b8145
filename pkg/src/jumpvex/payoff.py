"""Terminal contract functions g(X(T)) and their CLI syntax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DomainError

__all__ = ["Call", "Put", "Linear", "PowerPayoff", "PiecewiseLinear", "SmoothedPut",
           "eval_payoff", "is_convex_payoff", "parse_payoff"]


@dataclass(frozen=True)
class Call:
    strike: float
    growth_degree = 1

    def __call__(self, x):
        return np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0)

    def describe(self) -> str:
        return f"call:K={self.strike!r}"


@dataclass(frozen=True)
class Put:
    strike: float
    growth_degree = 0

    def __call__(self, x):
        return np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)

    def describe(self) -> str:
        return f"put:K={self.strike!r}"


@dataclass(frozen=True)
class Linear:
    slope: float
    intercept: float = 0.0
    growth_degree = 1

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def describe(self) -> str:
        return f"linear:a={self.slope!r},b={self.intercept!r}"


@dataclass(frozen=True)
class PowerPayoff:
    exponent: float
    scale: float = 1.0

    def __post_init__(self):
        if self.exponent < 1:
            raise ValueError("power payoff needs exponent >= 1")

    @property
    def growth_degree(self) -> float:
        return self.exponent

    def __call__(self, x):
        return self.scale * np.power(np.asarray(x, dtype=float), self.exponent)

    def describe(self) -> str:
        return f"power:p={self.exponent!r},c={self.scale!r}"


@dataclass(frozen=True)
class PiecewiseLinear:
    """Linear interpolation through knots; outside, lines with the given
    slopes (defaulting to the end segments' slopes)."""

    knots: tuple[tuple[float, float], ...]
    left_slope: float | None = None
    right_slope: float | None = None
    growth_degree = 1

    def __post_init__(self):
        knots = tuple((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", knots)
        xs = [k[0] for k in knots]
        if len(knots) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("piecewise payoff needs >= 2 strictly increasing knots")
        seg = self.segment_slopes()
        if self.left_slope is None:
            object.__setattr__(self, "left_slope", float(seg[0]))
        if self.right_slope is None:
            object.__setattr__(self, "right_slope", float(seg[-1]))

    def segment_slopes(self) -> np.ndarray:
        k = np.array(self.knots)
        return np.diff(k[:, 1]) / np.diff(k[:, 0])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.array(self.knots)
        y = np.interp(x, k[:, 0], k[:, 1])
        y = np.where(x < k[0, 0], k[0, 1] + self.left_slope * (x - k[0, 0]), y)
        return np.where(x > k[-1, 0], k[-1, 1] + self.right_slope * (x - k[-1, 0]), y)

    def describe(self) -> str:
        return "pwl:" + ",".join(f"{a!r}:{b!r}" for a, b in self.knots)


@dataclass(frozen=True)
class SmoothedPut:
    """Put with the kink replaced by a quadratic on [K - eps, K + eps]."""

    strike: float
    eps: float = 0.0
    growth_degree = 0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("smoothing half-width must be >= 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        put = np.maximum(self.strike - x, 0.0)
        if self.eps == 0:
            return put
        inside = np.abs(x - self.strike) < self.eps
        quad = (self.strike + self.eps - x) ** 2 / (4.0 * self.eps)
        return np.where(inside, quad, put)

    def describe(self) -> str:
        return f"sput:K={self.strike!r},eps={self.eps!r}"


def eval_payoff(g, x):
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError(f"payoff argument must be positive, got {x}")
    out = g(xa)
    return float(out) if np.ndim(out) == 0 else out


def is_convex_payoff(g) -> tuple[bool, float | None]:
    """Exact convexity verdict; the witness is a point where convexity fails."""
    if isinstance(g, (Call, Put, Linear, SmoothedPut)):
        return True, None
    if isinstance(g, PowerPayoff):
        return (True, None) if g.scale >= 0 else (False, 1.0)
    if isinstance(g, PiecewiseLinear):
        slopes = np.concatenate([[g.left_slope], g.segment_slopes(), [g.right_slope]])
        drops = np.flatnonzero(np.diff(slopes) < 0)
        if drops.size:
            return False, g.knots[int(drops[0])][0]
        return True, None
    raise TypeError(f"unknown payoff type {type(g).__name__}")


def _kv(body: str) -> dict[str, float]:
    out = {}
    for part in filter(None, body.split(",")):
        key, _, val = part.partition("=")
        if not _:
            raise ValueError(f"expected key=value in payoff spec, got {part!r}")
        out[key.strip()] = float(val)
    return out


def parse_payoff(text: str):
    """Parse ``call:K=1.0``, ``put:K=1.0``, ``linear:a=1,b=0``, ``power:p=2,c=1``,
    ``pwl:0:0,1:1,2:1.5`` or ``sput:K=1.0,eps=0.01``."""
    kind, _, body = text.strip().partition(":")
    try:
        if kind == "call":
            return Call(_kv(body)["K"])
        if kind == "put":
            return Put(_kv(body)["K"])
        if kind == "linear":
            kv = _kv(body)
            return Linear(kv.get("a", 1.0), kv.get("b", 0.0))
        if kind == "power":
            kv = _kv(body)
            return PowerPayoff(kv["p"], kv.get("c", 1.0))
        if kind == "pwl":
            knots = []
            for pair in body.split(","):
                a, b = pair.split(":")
                knots.append((float(a), float(b)))
            return PiecewiseLinear(tuple(knots))
        if kind == "sput":
            kv = _kv(body)
            return SmoothedPut(kv["K"], kv.get("eps", 0.0))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed payoff spec {text!r}: {exc}") from None
    raise ValueError(f"unknown payoff kind in {text!r}")
