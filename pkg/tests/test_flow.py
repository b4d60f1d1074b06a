import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinflow import flow as fl
from spinflow import functionals as fn
from spinflow import spinor as sp
from spinflow import variation as va
from spinflow.geometry import GeometryCache, WeightedOps, deturck_vector, lie_derivative_metric
from spinflow.grid import Grid

seeds = st.integers(0, 10_000)
G16 = Grid(2, 16)
G32 = Grid(2, 32)
FORWARD = fn.FlowConstants(tau=1.0, lam=0.0, c=2.0)


def sup(a):
    return float(np.max(np.abs(a)))


def perturbed(seed, grid=G32, const=FORWARD, amp=0.05):
    return fl.perturbed_flat_state(grid, const, seed=seed, amp=amp)


def generic(seed, grid=G32, const=FORWARD):
    g, f, psi = fn.random_configuration(grid, seed)
    return fl.FlowState(grid, g, f, psi, 0.0, const, np.broadcast_to(
        np.eye(2)[:, :, None, None], g.shape).copy())


def test_perturbed_state_constraints():
    s = perturbed(3)
    assert sup(np.sum(np.abs(s.psi) ** 2, 0) - FORWARD.c) < 1e-13
    mass = fl.monitor(s).mass
    assert mass == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("rhs", [fl.gauged_rhs, fl.ungauged_rhs])
def test_critical_state_is_stationary(rhs):
    s = fl.critical_state(G16, FORWARD)
    k = rhs(s)
    assert max(sup(k.g_dot), sup(k.f_dot), sup(k.psi_dot)) < 1e-12
    nxt = fl.step_rk4(s, 1e-3, rhs=rhs)
    assert np.allclose(nxt.g, s.g, atol=1e-14) and np.allclose(nxt.psi, s.psi, atol=1e-14)


@pytest.mark.parametrize("rhs", [fl.gauged_rhs, fl.ungauged_rhs])
def test_lambda_only_rhs(rhs):
    tau, lam = 0.8, 0.6
    s = fl.critical_state(G16, fn.FlowConstants(tau=tau, lam=lam, c=2.0))
    k = rhs(s)
    assert np.allclose(k.g_dot, lam / tau * s.g, atol=1e-12)
    assert np.allclose(k.f_dot, lam * 2 / (2 * tau), atol=1e-12)
    assert sup(k.psi_dot) < 1e-12


def test_lambda_only_step_is_exponential_to_fifth_order():
    tau, lam = 0.8, 0.6
    s = fl.critical_state(G16, fn.FlowConstants(tau=tau, lam=lam, c=2.0))
    errs = []
    for dt in (0.2, 0.1):
        nxt = fl.step_rk4(s, dt)
        errs.append(sup(nxt.g - math.exp(lam * dt / tau) * s.g))
        assert np.allclose(nxt.f, s.f + lam * dt / tau, atol=1e-13)
    assert errs[0] / errs[1] == pytest.approx(32, rel=0.1)


@settings(max_examples=5)
@given(seed=seeds)
def test_gauged_metric_is_ungauged_plus_lie_derivative(seed):
    s = generic(seed)
    x = fl.gauge_vector(s)
    diff = fl.gauged_rhs(s).g_dot - fl.ungauged_rhs(s).g_dot
    assert sup(diff - lie_derivative_metric(G32, x, s.g)) < 1e-10 * sup(diff)


@settings(max_examples=5)
@given(seed=seeds)
def test_gauged_f_and_psi_are_pushed_along_gauge_vector(seed):
    """With |psi|^2 = c the gauged f and psi equations are the ungauged ones plus X f and L_X psi."""
    s = perturbed(seed)
    x = fl.gauge_vector(s)
    geo = GeometryCache(G32, s.g, frame=s.frame)
    a, b = fl.gauged_rhs(s), fl.ungauged_rhs(s)
    xf = np.einsum("i...,i...->...", x, geo.d(s.f))
    assert sup(a.f_dot - b.f_dot - xf) < 1e-8 * (1 + sup(xf))
    lx = sp.kosmann_lie(x, s.psi, geo)
    assert sup(a.psi_dot - b.psi_dot - lx) < 1e-8 * (1 + sup(lx))


@settings(max_examples=5)
@given(seed=seeds)
def test_spinor_norm_evolution(seed):
    s = generic(seed)
    snap = s.snapshot()
    mod2 = snap.mod2
    lap = snap.wops.laplacian(mod2)
    rate = 2 * np.sum(np.real(s.psi.conj() * fl.ungauged_rhs(s).psi_dot), 0)
    assert sup(rate - lap) < 1e-9 * sup(lap)
    st_ = snap.tensors()
    w = deturck_vector(G32, s.g, s.g0)
    x = w - 2 / s.const.tau * st_.U + (1 - mod2 / s.const.tau) * snap.wops.grad_f
    expected = lap + np.einsum("i...,i...->...", x, snap.geo.d(mod2))
    rate = 2 * np.sum(np.real(s.psi.conj() * fl.gauged_rhs(s).psi_dot), 0)
    assert sup(rate - expected) < 1e-9 * sup(expected)


@settings(max_examples=4)
@given(seed=seeds)
def test_entropy_rate_is_dissipation_plus_trace_defect(seed):
    s = perturbed(seed)
    k = fl.ungauged_rhs(s)
    d = va.VariationDirection(k.g_dot, k.f_dot, k.psi_dot)
    rate = va.first_variation_rhs(G32, s.g, s.f, s.psi, s.const, d, frame=s.frame)
    defect = fl.trace_defect(s)
    diss = fl.monitor(s).dissipation
    assert rate == pytest.approx(-diss + defect.entropy_term, rel=1e-9)
    mass_rate = va.measure_rate(s.snapshot(), d)
    assert s.snapshot().integrate(mass_rate) == pytest.approx(defect.mass_rate, rel=1e-9)


def test_lower_order_decomposition_constant_data():
    tau, lam = 0.8, 0.6
    s = fl.critical_state(G16, fn.FlowConstants(tau=tau, lam=lam, c=2.0))
    F, G, H = fl.lower_order_decomposition(s)
    assert np.allclose(F, lam / tau * s.g, atol=1e-12)
    assert np.allclose(G, lam * 2 / (2 * tau), atol=1e-12)
    assert sup(H) < 1e-12


@pytest.mark.parametrize("N", [2, 4, 8])
def test_lower_order_terms_have_no_principal_part(N):
    grid = Grid(2, 64)
    base = fl.critical_state(grid, FORWARD)
    eps = 1e-4
    wave = np.sin(2 * np.pi * N * grid.coords[0])
    eta = np.array([[0.3, 0.5], [0.5, -0.2]])[:, :, None, None]
    s = replace(base, g=base.g + eps * eta * wave, frame=None)
    F, _, _ = fl.lower_order_decomposition(s)
    # what remains is quadratic in eps; the principal part would be O(1) here
    assert sup(F) / sup(fl.gauged_rhs(s).g_dot) < 20 * eps
    psi = base.psi.copy()
    psi[1] = 1j * eps * wave
    psi *= np.sqrt(FORWARD.c / np.sum(np.abs(psi) ** 2, 0))
    s = replace(base, psi=psi)
    _, _, H = fl.lower_order_decomposition(s)
    assert sup(H) / sup(fl.gauged_rhs(s).psi_dot) < 20 * eps


def test_rk4_is_fourth_order():
    s0 = fl.perturbed_flat_state(G16, FORWARD, seed=1, amp=0.01)
    dt0 = fl.default_dt(G16, FORWARD)
    finals = []
    for level in range(4):
        s = s0
        for _ in range(8 * 2**level):
            s = fl.step_rk4(s, dt0 / 2**level)
        finals.append(s)
    errs = [max(sup(a.g - finals[-1].g), sup(a.f - finals[-1].f), sup(a.psi - finals[-1].psi))
            for a in finals[:-1]]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4, abs=0.5)


def test_default_dt_cap():
    grid = Grid(2, 32)
    assert fl.default_dt(grid) == pytest.approx(0.1 * grid.h**2)
    capped = fl.default_dt(grid, FORWARD)
    assert capped < fl.default_dt(grid)
    radius = 2 * (np.pi * 32) ** 2 * 2.0
    assert capped == pytest.approx(0.8 * fl.RK4_REAL_LIMIT / radius)


@pytest.mark.parametrize("c", [0.5, 1.0])
def test_forward_marching_refused_outside_forward_regime(c):
    s = fl.critical_state(G16, fn.FlowConstants(tau=1.0, c=c))
    with pytest.raises(fl.RegimeError, match="backward parabolic"):
        fl.step_rk4(s, 1e-4)
    with pytest.raises(fl.RegimeError):
        fl.run_with_monitors(s, 1e-4, 2)


def test_step_rejections():
    s = fl.critical_state(G16, FORWARD)
    with pytest.raises(ValueError):
        fl.step_rk4(s, 0.0)
    vanishing = replace(s, psi=np.zeros_like(s.psi))
    with pytest.raises(fl.StepRejected):
        fl.gauged_rhs(vanishing)
    rough = perturbed(2, amp=0.05)
    with pytest.raises(fl.StepRejected):
        fl.step_rk4(rough, 1.0)


def test_run_records_rejection_instead_of_raising():
    run = fl.run_with_monitors(perturbed(2, amp=0.05), dt=1.0, n_steps=3)
    assert run.error is not None and not run.monotone
    assert not run.records[-1].step_accepted


def test_short_run_monitors_and_csv(tmp_path):
    s = fl.perturbed_flat_state(G16, FORWARD, seed=4, amp=0.01)
    seen = []
    run = fl.run_with_monitors(s, n_steps=20, callback=seen.append)
    assert len(seen) == 20 and run.error is None
    assert run.monotone and run.max_gap < 5e-3 and run.max_psi_dev < 1e-6
    w = [r.W_lambda for r in run.records]
    assert all(b <= a + 1e-12 for a, b in zip(w, w[1:]))
    rates = np.array([r.mass_rate for r in run.records])
    dt = fl.default_dt(G16, FORWARD)
    assert run.mass_drift == pytest.approx(np.sum(0.5 * (rates[1:] + rates[:-1])) * dt, rel=1e-2)
    path = tmp_path / "flow.csv"
    fl.write_csv(path, run.records, "abc123")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc123"
    rows = list(csv.DictReader(lines[1:]))
    assert tuple(rows[0]) == fl.CSV_COLUMNS and len(rows) == 21
    assert float(rows[-1]["W_lambda"]) == w[-1]
    assert float(rows[0]["regime_coeff"]) == 1 - FORWARD.c / FORWARD.tau


def test_monitor_at_critical_state():
    rec = fl.monitor(fl.critical_state(G16, FORWARD))
    assert rec.W_lambda == 0 and rec.dissipation == 0 and rec.mass == pytest.approx(1.0)
    assert rec.mass_rate == 0 and rec.regime_coeff == -1.0
