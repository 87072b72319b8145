"""Verdicts on price surfaces and model pairs: convexity, dominance, LCP probes."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mc import MCConfig, price_mc, thread_count
from .model import Model, check_conditions, model_to_dict
from .payoff import is_convex_payoff
from .pide import Grid, PriceSurface, SchemeConfig, generator_pointwise, solve_pide

__all__ = ["ConvexityReport", "ComparisonReport", "LcpReport", "second_differences",
           "chord_differences",
           "check_convexity", "chord_gap", "hypothesis_screen", "compare_models",
           "lcp_scan", "quartic_probe"]


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


class _Report:
    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"


def second_differences(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Nonuniform three-point second derivative along axis 0."""
    hm = (x[1:-1] - x[:-2])[:, None]
    hp = (x[2:] - x[1:-1])[:, None]
    v = values if values.ndim == 2 else values[:, None]
    d2 = 2.0 * ((v[2:] - v[1:-1]) / hp - (v[1:-1] - v[:-2]) / hm) / (hm + hp)
    return d2 if values.ndim == 2 else d2[:, 0]


def chord_differences(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Undivided second differences ``2 (chord_{i-1,i+1}(x_i) - u_i)`` along axis 0.

    On a uniform grid this is ``u[i+1] - 2 u[i] + u[i-1]``; it carries the units
    of u, so tolerances can be stated relative to the size of the surface.
    """
    hm = (x[1:-1] - x[:-2])
    hp = (x[2:] - x[1:-1])
    if values.ndim == 2:
        hm, hp = hm[:, None], hp[:, None]
    v = values
    return 2.0 * (hp * v[:-2] + hm * v[2:] - (hm + hp) * v[1:-1]) / (hm + hp)


@dataclass(frozen=True)
class ConvexityReport(_Report):
    slice_convex: tuple[bool, ...]
    slice_min: tuple[float, ...]
    is_convex: bool
    min_second_difference: float
    location: tuple[float, float]  # (x, tau)
    tolerance: float
    grid: dict
    model_label: str = ""
    payoff: str = ""

    def to_dict(self):
        return {"verdict": "convex" if self.is_convex else "not-convex",
                "is_convex": self.is_convex,
                "min_second_difference": self.min_second_difference,
                "witness": {"x": self.location[0], "tau": self.location[1]},
                "tolerance": self.tolerance,
                "slices_not_convex": int(sum(not c for c in self.slice_convex)),
                "provenance": {"grid": self.grid, "model": self.model_label,
                               "payoff": self.payoff}}

    def to_text(self) -> str:
        verdict = "convex" if self.is_convex else "NOT convex"
        return (f"{verdict}: min second difference {self.min_second_difference:.6g} at "
                f"x={self.location[0]:.6g}, tau={self.location[1]:.6g} (tolerance {self.tolerance:.3g})")


def check_convexity(surface: PriceSurface, tolerance: float = 0.0) -> ConvexityReport:
    """Per-slice minimum of :func:`chord_differences`; a slice is convex when
    that minimum is ``>= -tolerance``."""
    x = surface.grid.x_nodes
    d2 = chord_differences(x, np.asarray(surface.values))
    mins = d2.min(axis=0)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    convex = tuple(bool(m >= -tolerance) for m in mins)
    return ConvexityReport(convex, tuple(float(m) for m in mins), all(convex), float(d2[i, j]),
                           (float(x[i + 1]), float(surface.grid.tau_nodes[j])), float(tolerance),
                           surface.grid.to_dict(), surface.model_label, surface.payoff)


def chord_gap(surface: PriceSurface, a: float, x: float, b: float, j: int = -1) -> float:
    """``u(x) - chord(a, b)(x)``; positive means u lies above its chord."""
    ua, ux, ub = (surface.value(p, j) for p in (a, x, b))
    return ux - (ua + (ub - ua) * (x - a) / (b - a))


@dataclass(frozen=True)
class ComparisonReport(_Report):
    dominated: bool
    max_violation: float
    location: tuple[float, float] | None
    deltas: tuple[str, ...]
    method: str
    tolerance: float
    hypotheses_met: bool
    unmet: tuple[str, ...]
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"verdict": "dominated" if self.dominated else "violated",
                "dominated": self.dominated, "max_violation": self.max_violation,
                "witness": None if self.location is None else
                {"x": self.location[0], "tau": self.location[1]},
                "deltas": list(self.deltas), "method": self.method,
                "tolerance": self.tolerance,
                "hypotheses": "met" if self.hypotheses_met else "hypotheses unmet",
                "unmet": list(self.unmet), "provenance": self.details}

    def to_text(self) -> str:
        head = "dominated" if self.dominated else "NOT dominated"
        hyp = "" if self.hypotheses_met else f" [hypotheses unmet: {'; '.join(self.unmet)}]"
        return (f"{head} ({self.method}): max(u_lo - u_hi) = {self.max_violation:.6g}, "
                f"tolerance {self.tolerance:.3g}, differs in {','.join(self.deltas) or 'nothing'}{hyp}")


def hypothesis_screen(model_hi: Model, model_lo: Model, x_samples, t_samples,
                      z_nodes: int = 64) -> tuple[list[str], list[str]]:
    """Unmet ordering hypotheses and the list of parameters that differ."""
    x = np.asarray(x_samples, dtype=float)
    t = np.asarray(t_samples, dtype=float)
    d_hi, d_lo = model_to_dict(model_hi), model_to_dict(model_lo)
    deltas = [k for k in ("beta", "lambda", "phi", "measure") if d_hi[k] != d_lo[k]]
    unmet = []
    X, Tt = np.meshgrid(x, t, indexing="ij")
    b_hi, b_lo = np.abs(model_hi.beta(X, Tt)), np.abs(model_lo.beta(X, Tt))
    if np.any(b_lo > b_hi * (1 + 1e-12) + 1e-15):
        unmet.append("|beta_lo| <= |beta_hi| fails")
    if np.any(model_lo.intensity(t) > model_hi.intensity(t) * (1 + 1e-12) + 1e-15):
        unmet.append("lambda_lo <= lambda_hi fails")
    lo_zero = getattr(model_lo.phi, "kind", "") == "zero"
    if not lo_zero:
        if d_hi["measure"] != d_lo["measure"]:
            unmet.append("label measures differ")
        z, _ = model_lo.measure.quadrature(z_nodes)
        Xz, Tz, Zz = np.meshgrid(x, t, z, indexing="ij")
        p_hi, p_lo = model_hi.phi(Xz, Tz, Zz), model_lo.phi(Xz, Tz, Zz)
        nz = p_lo != 0
        if np.any(nz & (p_hi * p_lo < p_lo ** 2 * (1 - 1e-12))):
            unmet.append("phi_hi / phi_lo >= 1 fails")
    zs = []
    for m in (model_hi, model_lo):
        zq, _ = m.measure.quadrature(min(z_nodes, 16))
        zs.append(zq)
    erl = [check_conditions(m, x, t, zq)["erlander"].status == "pass"
           for m, zq in zip((model_hi, model_lo), zs)]
    if not any(erl):
        unmet.append("neither jump size is convex where positive / concave where negative")
    return unmet, deltas


def compare_models(model_hi: Model, model_lo: Model, payoff, grid: Grid,
                   config: SchemeConfig = SchemeConfig(), method: str = "fd",
                   x0: float | None = None, mc_config: MCConfig | None = None,
                   tolerance: float | None = None) -> ComparisonReport:
    """Check ``u_lo <= u_hi`` for a convex payoff.

    FD: both models on ``grid``; the default tolerance is twice the larger
    step-doubling estimate. MC: both at ``x0`` with a shared seed ladder and a
    tolerance of three combined standard errors.
    """
    convex, witness = is_convex_payoff(payoff)
    if not convex:
        raise ValueError(f"payoff {payoff.describe()} is not convex (witness x={witness}); "
                         "the ordering result does not apply")
    if method not in ("fd", "mc"):
        raise ValueError("method must be 'fd' or 'mc'")
    xs = grid.x_nodes[:: max(1, grid.n_x // 100)]
    ts = np.linspace(0.0, grid.T, 5)
    unmet, deltas = hypothesis_screen(model_hi, model_lo, xs, ts, config.z_quadrature_nodes)

    if method == "fd":
        jobs = [(model_hi, grid), (model_lo, grid)]
        if tolerance is None:
            fine = grid.refine()
            jobs += [(model_hi, fine), (model_lo, fine)]
        with ThreadPoolExecutor(max_workers=max(1, min(thread_count(), len(jobs)))) as pool:
            surfaces = list(pool.map(lambda job: solve_pide(job[0], payoff, job[1], config), jobs))
        hi, lo = surfaces[0], surfaces[1]
        if tolerance is None:
            est = [float(np.max(np.abs(f.values[0::2, -1] - c.values[:, -1])))
                   for c, f in zip(surfaces[:2], surfaces[2:])]
            tolerance = 2.0 * max(est)
            details = {"step_doubling": {"hi": est[0], "lo": est[1]}}
        else:
            details = {}
        gap = np.asarray(lo.values) - np.asarray(hi.values)
        i, j = np.unravel_index(np.argmax(gap), gap.shape)
        viol = float(gap[i, j])
        loc = (float(grid.x_nodes[i]), float(grid.tau_nodes[j]))
        details["grid"] = grid.to_dict()
        if x0 is not None:
            details["u_hi_x0"] = hi.value(x0)
            details["u_lo_x0"] = lo.value(x0)
    else:
        if x0 is None:
            raise ValueError("mc comparison needs x0")
        cfg = mc_config or MCConfig()
        e_hi = price_mc(model_hi, payoff, x0, 0.0, grid.T, cfg)
        e_lo = price_mc(model_lo, payoff, x0, 0.0, grid.T, cfg)
        viol = e_lo.mean - e_hi.mean
        if tolerance is None:
            tolerance = 3.0 * math.hypot(e_hi.stderr, e_lo.stderr)
        loc = (float(x0), float(grid.T))
        details = {"mc": cfg.to_dict(), "hi": e_hi.to_dict(), "lo": e_lo.to_dict()}
    details.update(model_hi=model_hi.label, model_lo=model_lo.label, payoff=payoff.describe())
    return ComparisonReport(bool(viol <= tolerance), viol, loc, tuple(deltas), method,
                            float(tolerance), not unmet, tuple(unmet), details)


def quartic_probe(x0: float, w: float):
    """``f(x) = w ((x - x0)/w)^4`` with its first two derivatives."""
    f = lambda x: w * ((x - x0) / w) ** 4
    fx = lambda x: 4.0 * ((x - x0) / w) ** 3
    fxx = lambda x: 12.0 * (x - x0) ** 2 / w ** 3
    return f, fx, fxx


_FD4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


@dataclass(frozen=True)
class LcpReport(_Report):
    points: tuple[dict, ...]
    violated: bool
    witness: dict | None

    @property
    def verdict(self) -> str:
        return "violated" if self.violated else "no-violation-found"

    def to_dict(self):
        return {"verdict": self.verdict, "witness": self.witness,
                "points": list(self.points),
                "note": "necessary-condition probe over a quartic family"}

    def to_text(self) -> str:
        if not self.violated:
            return f"no-violation-found over {len(self.points)} probe points"
        w = self.witness
        return (f"LCP violated at x0={w['x0']:.6g}, t0={w['t0']:.6g}, width={w['width']:.6g}: "
                f"d2(Lf) = {w['value']:.6g}")


def lcp_scan(model: Model, x_points, t_points, family_widths, h_frac: float = 0.02,
             z_nodes: int = 64) -> LcpReport:
    """Probe ``d^2/dx^2 (L f)(x0, t0)`` over quartic test functions flat at x0.

    ``L f`` is evaluated in closed form at the five stencil points
    ``x0 + k h`` (``h = h_frac * width``) and differentiated with the
    fourth-order central stencil; values below the stencil's roundoff bound
    count as violations.
    """
    pts = []
    witness = None
    for t0 in t_points:
        for x0 in x_points:
            best = None
            for w in family_widths:
                h = min(h_frac * w, 0.25 * x0)
                f, fx, fxx = quartic_probe(x0, w)
                stencil = x0 + h * np.arange(-2, 3)
                F = generator_pointwise(model, f, fx, fxx, stencil, float(t0), z_nodes)
                val = float(_FD4 @ F) / h ** 2
                tol = 64 * np.finfo(float).eps * float(np.max(np.abs(F))) / h ** 2
                if best is None or val < best["value"]:
                    best = {"x0": float(x0), "t0": float(t0), "width": float(w),
                            "value": val, "tolerance": tol}
            pts.append(best)
            if best["value"] < -best["tolerance"] and (witness is None or best["value"] < witness["value"]):
                witness = best
    return LcpReport(tuple(pts), witness is not None, witness)
