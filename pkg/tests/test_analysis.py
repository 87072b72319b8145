from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpvex.analysis import (check_convexity, chord_differences, chord_gap, compare_models, lcp_scan,
                              quartic_probe, second_differences)
from jumpvex.mc import MCConfig, price_mc
from jumpvex.model import (Atoms, Constant, Model, PiecewiseLinearInX, Power, Proportional,
                           RelativeConstant, Separable, AffineZ, ZeroJump, counterexample_model)
from jumpvex.payoff import Call, Linear, PiecewiseLinear, Put
from jumpvex.pide import Grid, PriceSurface, default_grid, solve_pide

from oracles import merton_call

ATOM = Atoms((1.0,), (1.0,))


def model(beta=Proportional(0.2), phi=ZeroJump(), lam=1.0, label="m"):
    return Model(beta=beta, phi=phi, lam=Constant(lam), measure=ATOM, label=label)


JUMP = model(phi=RelativeConstant(0.1), label="rc")
GRID = Grid.geometric(0.125, 12.0, 201, 1.0, 201, anchor=1.0)


# ---- convexity ----------------------------------------------------------------

def test_second_differences_exact_on_quadratics():
    x = np.sort(np.random.default_rng(0).uniform(0.1, 5.0, 40))
    assert np.allclose(second_differences(x, 3 * x ** 2 - x + 2), 6.0)


def test_chord_differences():
    x = np.linspace(0.5, 2.0, 7)
    u = np.exp(x)
    assert np.allclose(chord_differences(x, u), u[2:] - 2 * u[1:-1] + u[:-2], rtol=1e-13)
    xn = np.array([0.5, 0.7, 1.5, 1.6, 3.0])
    assert np.allclose(chord_differences(xn, 4 * xn - 1), 0.0, atol=1e-14)
    # for x^2 the chord sits h- h+ above the curve
    hm, hp = np.diff(xn)[:-1], np.diff(xn)[1:]
    assert np.allclose(chord_differences(xn, xn ** 2), 2 * hm * hp, rtol=1e-12)


def test_linear_surface_is_convex():
    s = solve_pide(JUMP, Linear(1.0, 0.0), GRID)
    rep = check_convexity(s, 1e-9)
    assert rep.is_convex
    assert abs(rep.min_second_difference) <= 1e-9


def test_counterexample_not_convex():
    g = Grid.uniform(0.05, 3.0, 1181, 1.0, 401)
    s = solve_pide(counterexample_model(), Put(1.0), g)
    assert s.value(0.5) == 0.5 and s.value(1.0) == 0.0
    assert chord_gap(s, 0.5, 0.6, 1.0) > 0.04
    rep = check_convexity(s, 1e-6)
    assert not rep.is_convex
    assert 0.5 <= rep.location[0] <= 1.0
    assert rep.slice_convex[0]  # the payoff itself is convex


def test_jump_model_convex_everywhere_and_mc_chords():
    s = solve_pide(JUMP, Call(1.0), default_grid(JUMP, 1.0, 1.0))
    rep = check_convexity(s, 1e-6 * float(np.max(np.abs(s.values))))
    assert rep.is_convex and all(rep.slice_convex)
    # MC chord tests at five points: u(x) <= chord within sampling noise
    cfg = MCConfig(n_paths=40_000, n_steps=64)
    for a, b in ((0.7, 1.1), (0.8, 1.2), (0.9, 1.3), (1.0, 1.4), (0.6, 1.6)):
        ua, um, ub = (price_mc(JUMP, Call(1.0), x, 0.0, 1.0, cfg) for x in (a, (a + b) / 2, b))
        gap = um.mean - 0.5 * (ua.mean + ub.mean)
        assert gap <= 3 * np.sqrt(um.stderr ** 2 + 0.25 * (ua.stderr ** 2 + ub.stderr ** 2))


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_convexity_invariant_under_affine_shift(a, b):
    s = solve_pide(JUMP, Call(1.0), GRID)
    shifted = PriceSurface(s.values + (a * GRID.x_nodes + b)[:, None], GRID, s.model_label, s.payoff)
    r1, r2 = check_convexity(s, 1e-8), check_convexity(shifted, 1e-8)
    assert r1.is_convex == r2.is_convex
    assert np.allclose(r1.slice_min, r2.slice_min, atol=1e-12 * (1 + abs(a) + abs(b)) * 1e4)


def test_convexity_report_serialization():
    s = solve_pide(JUMP, Call(1.0), GRID)
    d = json.loads(check_convexity(s, 1e-8).to_json())
    assert d["verdict"] == "convex"
    assert set(d) >= {"verdict", "witness", "tolerance", "provenance"}


def test_slice_flags_match_tolerance():
    s = solve_pide(counterexample_model(), Put(1.0), Grid.uniform(0.05, 3.0, 591, 1.0, 201))
    rep = check_convexity(s, 1e-3)
    for flag, m in zip(rep.slice_convex, rep.slice_min):
        assert flag == (m >= -1e-3)


def test_payoff_scaling_preserves_verdict():
    a = solve_pide(JUMP, Call(1.0), GRID)
    b = solve_pide(JUMP, PiecewiseLinear(((0.5, 0.0), (1.0, 0.0), (2.0, 2.0))), GRID)
    assert np.allclose(b.values, 2 * a.values, rtol=1e-10, atol=1e-14)
    assert check_convexity(a, 1e-8).is_convex == check_convexity(b, 2e-8).is_convex


# ---- comparison -----------------------------------------------------------------

def test_compare_reflexive():
    rep = compare_models(JUMP, JUMP, Call(1.0), GRID)
    assert rep.dominated and rep.max_violation == 0.0
    assert rep.hypotheses_met and rep.deltas == ()


def test_black_scholes_lower_bound():
    rep = compare_models(JUMP, JUMP.with_(phi=ZeroJump(), label="bs"), Call(1.0), GRID)
    assert rep.dominated
    assert rep.hypotheses_met
    assert rep.deltas == ("phi",)


def test_intensity_ordering_with_strict_gap():
    lo = JUMP.with_(lam=Constant(0.5), label="half")
    grid = default_grid(JUMP, 1.0, 1.0)
    rep = compare_models(JUMP, lo, Call(1.0), grid, x0=1.0)
    assert rep.dominated and rep.hypotheses_met
    gap = rep.details["u_hi_x0"] - rep.details["u_lo_x0"]
    assert gap > rep.tolerance
    exact = (merton_call(1, 1, 0.2, 1.0, 0.1, 1) - merton_call(1, 1, 0.2, 0.5, 0.1, 1))
    assert gap == pytest.approx(exact, abs=2e-4)


def test_compare_antisymmetry():
    lo = JUMP.with_(lam=Constant(0.5), label="half")
    ab = compare_models(JUMP, lo, Call(1.0), GRID, tolerance=1e-6)
    ba = compare_models(lo, JUMP, Call(1.0), GRID, tolerance=1e-6)
    ua = solve_pide(JUMP, Call(1.0), GRID).values
    ub = solve_pide(lo, Call(1.0), GRID).values
    assert ab.max_violation == pytest.approx(-np.min(ua - ub), abs=1e-15)
    assert ba.max_violation == pytest.approx(np.max(ua - ub), abs=1e-15)
    assert not ba.dominated and not ba.hypotheses_met


def test_compare_rejects_nonconvex_payoff():
    with pytest.raises(ValueError, match="not convex"):
        compare_models(JUMP, JUMP, PiecewiseLinear(((0, 0), (1, 1), (2, 1.5))), GRID)


def test_compare_runs_under_unmet_hypotheses():
    # both jump sizes are non-convex bumps: erlander fails for both
    hi, lo = counterexample_model(), counterexample_model().with_(label="copy")
    g = Grid.uniform(0.05, 3.0, 119, 1.0, 41)
    rep = compare_models(hi, lo, Put(1.0), g, tolerance=1e-9)
    assert not rep.hypotheses_met
    assert any("convex" in u for u in rep.unmet)
    assert rep.dominated


def test_compare_mc():
    lo = JUMP.with_(phi=ZeroJump(), label="bs")
    rep = compare_models(JUMP, lo, Call(1.0), GRID, method="mc", x0=1.0,
                         mc_config=MCConfig(n_paths=20_000, n_steps=32))
    assert rep.method == "mc" and rep.dominated
    d = json.loads(rep.to_json())
    assert d["verdict"] == "dominated"


# ---- LCP --------------------------------------------------------------------------

def test_quartic_probe_flat_at_center():
    f, fx, fxx = quartic_probe(1.0, 0.3)
    assert f(1.0) == fx(1.0) == fxx(1.0) == 0.0
    assert fxx(1.2) > 0


@pytest.mark.parametrize("m", [model(), model(beta=Power(0.3, 0.7)), JUMP,
                               model(phi=RelativeConstant(-0.4), lam=2.0),
                               Model(beta=Proportional(0.1),
                                     phi=Separable(Proportional(1.0), AffineZ(0.05, 0.1)),
                                     lam=Constant(1.0), measure=Atoms((0.5, 2.0), (1.0, 0.3)),
                                     label="sep")])
def test_lcp_no_violation_for_linear_phi(m):
    rep = lcp_scan(m, np.linspace(0.3, 3.0, 10), [0.0, 0.5], [0.05, 0.2, 1.0])
    assert rep.verdict == "no-violation-found"
    assert rep.witness is None


def test_lcp_detects_counterexample():
    rep = lcp_scan(counterexample_model(), np.linspace(0.45, 0.8, 15), [0.0], [0.02, 0.05, 0.1])
    assert rep.verdict == "violated"
    w = rep.witness
    assert w["value"] < -w["tolerance"]
    assert {"x0", "t0", "width", "value"} <= set(w)


BETAS = st.one_of(
    st.builds(Constant, st.floats(0.01, 1.0)),
    st.builds(Proportional, st.floats(0.01, 1.0)),
    st.builds(Power, st.floats(0.01, 1.0), st.floats(0.2, 2.0)),
    st.builds(lambda a, b: PiecewiseLinearInX(((0.5, a), (2.0, b))),
              st.floats(0.01, 1.0), st.floats(0.01, 1.0)),
)


@settings(max_examples=25, deadline=None)
@given(BETAS)
def test_lcp_diffusion_only_never_violates(beta):
    rep = lcp_scan(model(beta=beta), np.linspace(0.3, 3.0, 7), [0.0], [0.05, 0.5])
    assert rep.verdict == "no-violation-found"
