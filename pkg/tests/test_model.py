from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpvex.model import (AffineZ, Atoms, BumpInX, Constant, Density, DomainError,
                           LebesgueUnit, Model, PiecewiseLinearInT, PiecewiseLinearInX,
                           Proportional, RelativeConstant, RelativeOfZ, Separable,
                           Tabulated, TimeModulated, Zero, ZeroJump, check_conditions,
                           convex_minorant_with_cap, counterexample_model, evaluate,
                           model_from_dict, model_to_dict, truncate_model)

XS = np.geomspace(0.01, 100, 41)
TS = np.array([0.0, 0.5, 1.0])


def bs_model(**kw):
    base = dict(beta=Proportional(0.2), phi=ZeroJump(), lam=Constant(1.0),
                measure=Atoms((1.0,), (1.0,)), label="bs")
    base.update(kw)
    return Model(**base)


def density_model(c=0.05):
    return Model(beta=Proportional(0.2), phi=RelativeOfZ(AffineZ(0.0, c)), lam=Constant(1.0),
                 measure=Density(c=1.0, alpha=0.5, kappa=1.0), label="dens")


# ---- evaluation -------------------------------------------------------------

def test_eval_diffusion_only():
    assert evaluate(bs_model(), 2.0, 0.5, 0.3, T=1.0) == pytest.approx((0.4, 0.0, 1.0))


def test_eval_counterexample_off_bump():
    _, phi, _ = evaluate(counterexample_model(), 0.5, 0.0, 0.5, T=1.0)
    assert phi == 0.0


def test_eval_relative_constant():
    _, phi, _ = evaluate(bs_model(phi=RelativeConstant(0.1)), 1.5, 0.2, 1.0, T=1.0)
    assert phi == pytest.approx(0.15)


@pytest.mark.parametrize("x,t,z", [(0.0, 0.5, 1.0), (-1.0, 0.5, 1.0), (1.0, 2.0, 1.0),
                                   (1.0, -0.1, 1.0)])
def test_eval_domain_errors(x, t, z):
    with pytest.raises(DomainError):
        evaluate(bs_model(), x, t, z, T=1.0)


def test_eval_label_outside_space():
    with pytest.raises(DomainError):
        evaluate(counterexample_model(), 1.0, 0.0, 1.5, T=1.0)
    with pytest.raises(DomainError):
        evaluate(density_model(), 1.0, 0.0, 0.0, T=1.0)


def test_model_validation():
    with pytest.raises(ValueError):
        bs_model(gamma=-1.0)
    with pytest.raises(ValueError):
        bs_model(lam=Constant(-1.0))
    with pytest.raises(ValueError):
        bs_model(lam=Proportional(1.0))
    with pytest.raises(ValueError):
        PiecewiseLinearInX(((1.0, 0.0), (0.5, 1.0)))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.0, 1.0), st.floats(1e-3, 10.0))
def test_evaluation_is_pure(x, t, z):
    m = Model(beta=TimeModulated(Proportional(0.3), PiecewiseLinearInT(((0.0, 1.0), (1.0, 2.0)))),
              phi=Separable(Proportional(1.0), AffineZ(0.1, 0.02)),
              lam=TimeModulated(Constant(1.0), PiecewiseLinearInT(((0.0, 0.5), (1.0, 1.5)))),
              measure=Density(), label="p")
    a = evaluate(m, x, t, z, T=1.0)
    b = evaluate(m, x, t, z, T=1.0)
    assert a == b


def test_coefficient_families():
    x = np.array([0.5, 1.0, 2.0])
    assert np.array_equal(Zero()(x, 0.0), np.zeros(3))
    assert np.allclose(PiecewiseLinearInX(((1.0, 1.0), (2.0, 3.0)))(x, 0.0), [1.0, 1.0, 3.0])
    tab = Tabulated((1.0, 2.0), (0.0, 1.0), ((0.0, 1.0), (2.0, 3.0)))
    assert tab(1.5, 0.5) == pytest.approx(1.5)
    bump = BumpInX(0.5, 0.55, 0.70, 0.75, 1.2)
    assert bump.lipschitz == pytest.approx(24.0)


def test_json_roundtrip():
    for m in (bs_model(), counterexample_model(), density_model(),
              truncate_model(density_model(), 2, np.geomspace(0.1, 10, 11))):
        d = model_to_dict(m)
        back = model_from_dict(json.loads(json.dumps(d)))
        assert model_to_dict(back) == d


# ---- conditions ---------------------------------------------------------------

def test_conditions_diffusion_only():
    rep = check_conditions(bs_model(), XS, TS, [1.0])
    for name in ("M2", "M3", "M4", "erlander"):
        assert rep[name].status == "pass", name


def test_conditions_counterexample_erlander_fails():
    rep = check_conditions(counterexample_model(), np.linspace(0.3, 1.0, 141), TS,
                           np.linspace(0.0, 1.0, 5))
    e = rep["erlander"]
    assert e.status == "fail"
    assert 0.5 < e.witness[0] < 0.75


def test_conditions_negative_linear_jump():
    rep = check_conditions(bs_model(phi=RelativeConstant(-0.5), gamma=-0.6), XS, TS, [1.0])
    assert rep["erlander"].status == "pass"
    assert rep["M4"].status == "pass"


def test_m4_fails_below_gamma():
    rep = check_conditions(bs_model(phi=RelativeConstant(-0.5), gamma=-0.4), XS, TS, [1.0])
    assert rep["M4"].status == "fail"
    assert rep["M4"].witness is not None


def test_fail_entries_carry_witnesses():
    rep = check_conditions(counterexample_model(), np.linspace(0.3, 1.0, 141), TS,
                           np.linspace(0.0, 1.0, 5))
    for name in rep.failures:
        assert rep[name].witness is not None


# ---- counterexample -----------------------------------------------------------

def test_counterexample_values():
    m = counterexample_model()
    assert m.phi(0.6, 0.0, 0.5) == pytest.approx(1.2)
    assert m.phi(1.0, 0.0, 0.5) == 0.0
    assert m.phi.bump.lipschitz == pytest.approx(24.0)
    x = np.linspace(1e-4, 5.0, 100_001)
    assert np.all(x + m.phi(x, 0.0, 0.5) > 0)


def test_counterexample_lipschitz_sampled():
    x = np.linspace(0.4, 0.8, 40_001)
    f = counterexample_model().phi(x, 0.0, 0.5)
    assert np.max(np.abs(np.diff(f) / np.diff(x))) == pytest.approx(24.0, rel=1e-6)


# ---- truncation -----------------------------------------------------------------

def test_truncation_slope_cap():
    m = Model(beta=Zero(), phi=RelativeConstant(2.0), lam=Constant(1.0),
              measure=Atoms((1.0,), (1.0,)), label="2x")
    x = np.linspace(0.1, 5.0, 50)
    t = truncate_model(m, 1, x)
    assert np.allclose(t.phi(x, 0.0, 1.0), x, atol=1e-12)


def test_truncation_zero_outside_window():
    t = truncate_model(density_model(), 4, np.geomspace(0.1, 10, 21))
    assert np.all(t.phi(np.array([0.5, 1.0, 3.0]), 0.0, 0.2) == 0.0)
    assert np.all(t.phi(np.array([0.5, 1.0, 3.0]), 0.0, 5.0) == 0.0)
    assert t.measure.support == (0.25, 4.0)


def test_truncation_keeps_admissible_phi():
    c, n = 0.05, 4
    x = np.geomspace(0.1, 10, 21)
    t = truncate_model(density_model(c), n, x)
    z = np.array(t.phi.z_grid)
    got = t.phi(x[:, None], 0.0, z[None, :])
    assert np.allclose(got, x[:, None] * c * z[None, :], rtol=1e-12, atol=1e-14)


def test_truncation_rejects_finite_and_mixed():
    with pytest.raises(ValueError):
        truncate_model(counterexample_model(), 2, np.linspace(0.1, 1, 5))
    mixed = Model(beta=Zero(), phi=Separable(PiecewiseLinearInX(((0.5, -1.0), (2.0, 1.0))),
                                             AffineZ(1.0, 0.0)),
                  lam=Constant(1.0), measure=Density(), label="mixed")
    with pytest.raises(DomainError):
        truncate_model(mixed, 2, np.linspace(0.1, 3, 30))


def test_truncation_of_lebesgue_measure_is_error():
    m = Model(beta=Zero(), phi=RelativeConstant(0.1), lam=Constant(1.0), measure=LebesgueUnit(),
              label="leb")
    with pytest.raises(ValueError):
        truncate_model(m, 2, [1.0, 2.0])


def _brute_capped_minorant(x, y, cap):
    """Pointwise sup over chords and capped tangent lines through sample pairs.

    The greatest convex minorant with right-slopes <= cap is the supremum of
    the affine functions below the data with slope <= cap; every extreme one
    touches the data at one or two samples.
    """
    best = np.full_like(y, -np.inf)
    for i in range(x.size):
        for s in np.concatenate([[cap], (y - y[i]) / np.where(x != x[i], x - x[i], 1.0)]):
            if s > cap:
                continue
            line = y[i] + s * (x - x[i])
            if np.all(line <= y + 1e-12):
                best = np.maximum(best, line)
    return best


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=4, max_size=12), st.floats(0.2, 4.0))
def test_capped_minorant_matches_brute_force(ys, cap):
    x = np.concatenate([[0.0], np.linspace(0.2, 2.0, len(ys))])
    y = np.concatenate([[0.0], ys])
    f = convex_minorant_with_cap(x, y, cap)
    assert np.allclose(f, _brute_capped_minorant(x, y, cap), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.9, 2.0), st.floats(-0.5, 0.5), st.integers(2, 8),
       st.sampled_from(["pos", "neg"]))
def test_truncation_invariants(a, b, n, sign):
    # phi = s * psi(x) * zeta(z) with psi a non-convex positive profile
    psi = PiecewiseLinearInX(((0.2, 0.1), (0.8, 1.5 + a), (1.5, 1.6), (3.0, 4.0 + b)))
    s = 1.0 if sign == "pos" else -0.3
    m = Model(beta=Zero(), phi=Separable(psi, AffineZ(s * 0.5, s * 0.1)), lam=Constant(1.0),
              measure=Density(), label="inv")
    x = np.linspace(0.1, 4.0, 40)
    tm = truncate_model(m, n, x, z_nodes=8)
    xs = np.array(tm.phi.x_grid)
    z = np.array(tm.phi.z_grid)
    phi = m.phi(xs[1:, None], 0.0, z[None, :])
    phin = tm.phi.table[0][1:]
    if sign == "pos":
        assert np.all(phin >= -1e-15) and np.all(phin <= phi + 1e-12)
    else:
        assert np.all(phin <= 1e-15) and np.all(phin >= phi - 1e-12)
    nz = phin != 0
    assert np.all(phi[nz] / phin[nz] >= 1 - 1e-12)
    full = tm.phi.table[0]
    slopes = np.diff(full, axis=0) / np.diff(xs)[:, None]
    d2 = np.diff(slopes, axis=0)
    if sign == "pos":
        assert np.all(slopes <= n + 1e-12)
        assert np.all(d2 >= -1e-12)
    else:
        assert np.all(slopes >= (1.0 - n) / n - 1e-12)
        assert np.all(d2 <= 1e-12)


def test_quadrature_finite_vs_infinite():
    with pytest.raises(DomainError):
        density_model().quadrature(16)
    t = truncate_model(density_model(), 4, np.geomspace(0.1, 10, 11))
    z, w = t.quadrature(64)
    expected = t.measure.mass_on(0.25, 4.0, n=8192)
    assert np.sum(w) == pytest.approx(expected, rel=1e-6)
