import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinflow import symbols as sy
from spinflow.clifford import build_rep
from spinflow.functionals import FlowConstants

seeds = st.integers(0, 2**31)
dims = st.sampled_from([2, 3])


def probe(seed, n=2, c=1.0, **kw):
    return sy.random_probe(np.random.default_rng(seed), n, c=c, **kw)


def test_ricci_symbol_example():
    p = sy.SymbolProbe(xi=[1.0, 0.0], eta=np.diag([1.0, 0.0]), s=[0, 0], psi=[1, 0])
    ric, R, _ = sy.symbol_metric_block(p)
    assert np.allclose(ric, 0)


@given(seed=seeds, n=dims)
def test_deturck_cancellation(seed, n):
    p = probe(seed, n)
    assert np.allclose(sy.symbol_gauged_metric(p), -(p.xi @ p.xi) * p.eta, atol=1e-12)


@given(seed=seeds, n=dims)
def test_scalar_curvature_symbol(seed, n):
    p = probe(seed, n)
    _, R, _ = sy.symbol_metric_block(p)
    assert R == pytest.approx((p.xi @ p.xi) * np.trace(p.eta) - p.xi @ p.eta @ p.xi)
    ric, _, _ = sy.symbol_metric_block(p)
    # at a flat background the linearized R is the trace of the linearized Ricci
    assert np.trace(ric) == pytest.approx(R)


@pytest.mark.parametrize("convention", sy.CONVENTIONS)
@given(seed=seeds)
def test_spinor_block_without_metric_direction(convention, seed):
    p = probe(seed, tangent=False)
    p.eta = np.zeros((2, 2))
    u, w, lap, div = sy.symbol_spinor_block(p, convention=convention)
    x2 = p.xi @ p.xi
    assert np.allclose(lap, -x2 * p.s)
    assert div == pytest.approx(x2 * np.real(np.vdot(p.psi, p.s)))
    assert np.allclose(w, 0)


@given(seed=seeds, n=dims, c=st.floats(0.1, 5.0))
def test_pairing_identities(seed, n, c):
    assert sy.pairing_identities(probe(seed, n, c)).max() < 1e-12


def test_unknown_convention_and_ordering():
    p = probe(0)
    with pytest.raises(ValueError):
        sy.symbol_spinor_block(p, convention="other")
    with pytest.raises(ValueError):
        sy.a_endomorphism(p.psi, build_rep(2), 1.0, ordering="other")


def test_probe_validation():
    with pytest.raises(sy.SymbolError):
        sy.SymbolProbe(xi=[0, 0], eta=np.eye(2), s=[0, 0], psi=[1, 0])
    with pytest.raises(sy.SymbolError):
        sy.SymbolProbe(xi=[1, 0], eta=[[0, 1], [0, 0]], s=[0, 0], psi=[1, 0])


# -- A(psi) ---------------------------------------------------------------------------

@pytest.mark.parametrize("ordering", sy.ORDERINGS)
def test_a_reduces_to_identity_without_spinor(ordering):
    blk = sy.a_endomorphism(np.zeros(2, complex), build_rep(2), 1.0, ordering=ordering)
    assert blk.coercivity == pytest.approx(1.0)


@given(seed=seeds, n=dims, coef=st.sampled_from([0.5, 1.0]), tau=st.floats(0.2, 4.0))
def test_coercive_ordering_quadratic_form(seed, n, coef, tau):
    p = probe(seed, n, c=2.0)
    rep = build_rep(n)
    blk = sy.a_endomorphism(p.psi, rep, tau, ordering="coercive", coefficient=coef)
    cxi = np.einsum("a,apq->pq", p.xi, rep.gammas)
    r2 = sum(np.real(np.vdot(p.psi, rep.gammas[a] @ cxi @ p.s)) ** 2 for a in range(n))
    form = sy.quadratic_form(blk, p.xi, p.s)
    base = (p.xi @ p.xi) * np.real(np.vdot(p.s, p.s))
    assert form == pytest.approx(base + coef / tau * r2, rel=1e-10)
    assert form >= base * (1 - 1e-12)


@settings(max_examples=10)
@given(seed=seeds, theta=st.floats(0, 2 * np.pi))
def test_coercivity_is_phase_invariant(seed, theta):
    p = probe(seed, c=2.0)
    rep = build_rep(2)
    a = sy.a_endomorphism(p.psi, rep, 1.0, ordering="coercive", coefficient=0.5).coercivity
    b = sy.a_endomorphism(np.exp(1j * theta) * p.psi, rep, 1.0, ordering="coercive",
                          coefficient=0.5).coercivity
    assert a == pytest.approx(b, abs=1e-10) and a == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("c,expected", [(2.0, -1.0), (0.5, 0.5)])
def test_literal_ordering_is_not_coercive(c, expected):
    """Measured: the literal ordering gives |xi|^2|s|^2 - (1/tau) sum r^2."""
    p = probe(3, c=c)
    blk = sy.a_endomorphism(p.psi, build_rep(2), 1.0, ordering="literal", coefficient=1.0)
    assert blk.coercivity == pytest.approx(expected, abs=1e-9)


@given(seed=seeds, n=dims, c=st.floats(0.1, 5.0))
def test_bessel_bound_behind_the_spectral_radius(seed, n, c):
    p = probe(seed, n, c=c, tangent=False)
    rep = build_rep(n)
    cxi = np.einsum("a,apq->pq", p.xi, rep.gammas)
    r2 = sum(np.real(np.vdot(p.psi, rep.gammas[a] @ cxi @ p.s)) ** 2 for a in range(n))
    assert r2 <= c * (p.xi @ p.xi) * np.real(np.vdot(p.s, p.s)) * (1 + 1e-12)


@pytest.mark.parametrize("c,coef,f_type,verdict", [
    (2.0, 1.0, "forward", "fully_forward"),
    (0.5, -0.5, "backward", "backward_forward"),
    (1.0, 0.0, "degenerate", "degenerate"),
])
def test_parabolicity_report(c, coef, f_type, verdict):
    rep = sy.parabolicity_report(FlowConstants(tau=1.0, c=c))
    assert rep.f_coefficient == coef and rep.f_type == f_type and rep.verdict == verdict
    assert rep.spinor_ellipticity == pytest.approx(1.0)
    assert json.loads(rep.to_json())["verdict"] == verdict


def test_spectral_radius_bound():
    assert sy.spectral_radius_bound(FlowConstants(tau=1.0, c=2.0)) == 2.0
    assert sy.spectral_radius_bound(FlowConstants(tau=1.0, c=0.5)) == 1.25
    assert sy.spectral_radius_bound(FlowConstants(tau=1.0, c=9.0)) == 8.0


# -- grid probes ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def int_probe():
    return probe(0, c=2.0, integer_xi=True)


@pytest.mark.parametrize("tag", sy.OPERATOR_TAGS)
def test_geometric_closed_forms_match_grid_probe(int_probe, tag):
    cmp_ = sy.compare(tag, int_probe, N=4, convention="geometric")
    assert cmp_.rel_error < 1e-6


@pytest.mark.parametrize("tag", ["Ric", "R", "LieW", "LapSpinor", "DivU", "GaugedMetric"])
def test_stated_forms_that_match_grid_probe(int_probe, tag):
    assert sy.compare(tag, int_probe, N=4, convention="stated").rel_error < 1e-6


def test_stated_kosmann_w_form_is_off_by_minus_half(int_probe):
    ext = sy.numeric_symbol_probe("KosmannW", int_probe, 4)
    cf = sy.closed_form("KosmannW", int_probe, convention="stated")
    assert np.allclose(ext, -0.5 * cf, atol=1e-8 * np.abs(cf).max())
    assert sy.relative_error(ext, cf) > 1.0


def test_probe_errors(int_probe):
    with pytest.raises(sy.SymbolError):
        sy.numeric_symbol_probe("Weyl", int_probe, 4)
    with pytest.raises(sy.SymbolError):
        sy.numeric_symbol_probe("R", int_probe, 4, eps=1.0)
    with pytest.raises(sy.SymbolError):
        sy.numeric_symbol_probe("R", probe(1), 4)
    with pytest.raises(sy.SymbolError):
        sy.numeric_symbol_probe("R", int_probe, 8, res=16)


def test_symbol_report_json(int_probe):
    rep = sy.symbol_report(int_probe, Ns=(2,), tags=("R", "KosmannU"), conventions=("geometric",))
    data = json.loads(rep.to_json())
    assert [c["operator"] for c in data["comparisons"]] == ["R", "KosmannU"]
    assert all(c["rel_error"] < 1e-6 for c in data["comparisons"])
    assert math.isfinite(data["comparisons"][1]["closed_form"]["re"][0])
