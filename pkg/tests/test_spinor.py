import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinflow import spinor as sp
from spinflow.clifford import inner, spin_lift
from spinflow.functionals import random_configuration
from spinflow.geometry import GeometryCache, WeightedOps
from spinflow.grid import Grid, identity_field

seeds = st.integers(0, 10_000)
G32 = Grid(2, 32)


def setup(seed, grid=G32, amp=0.05):
    g, f, psi = random_configuration(grid, seed, amp)
    geo = GeometryCache(grid, g)
    return g, f, psi, geo, WeightedOps(geo, f)


@given(seed=seeds)
def test_weitzenbock_identity(seed):
    _, f, psi, geo, w = setup(seed)
    res = sp.weitzenbock_residual(psi, geo, w)
    assert np.abs(res).max() < 1e-10 * (1 + np.abs(sp.laplacian_f_spinor(psi, geo, f)).max())


@settings(max_examples=10)
@given(seed=seeds)
def test_div_f_T_identity(seed):
    _, f, psi, geo, w = setup(seed)
    t = sp.spinor_tensors(psi, geo, f)
    res = sp.div_f_T_identity_residual(psi, geo, w, tensors=t)
    scale = np.abs(w.divergence_tensor3(t.T)).max() + 2 * np.abs(t.P).max() + np.abs(t.S).max()
    assert np.abs(res).max() < 1e-10 * scale


@given(seed=seeds)
def test_V_equals_V_f(seed):
    _, f, psi, geo, _ = setup(seed)
    t = sp.spinor_tensors(psi, geo, f)
    assert np.allclose(t.V, t.Vf, atol=1e-12)
    assert np.allclose(t.T, np.swapaxes(t.T, 1, 2))
    assert np.allclose(t.S, np.swapaxes(t.S, 0, 1)) and np.allclose(t.P, np.swapaxes(t.P, 0, 1))


@given(seed=seeds)
def test_dirac_operators_are_symmetric(seed):
    g, f, psi, geo, _ = setup(seed)
    phi = G32.random_band_limited(seed + 9, 2, 1.0, "spinor")
    for op, dens in ((lambda u: sp.dirac(u, geo), geo.volume),
                     (lambda u: sp.dirac_f(u, geo, f), geo.volume * np.exp(-f))):
        diff = inner(op(phi), psi) - inner(phi, op(psi))
        assert abs(G32.integrate(diff.real, dens)) < 1e-11
        assert abs(G32.integrate(diff.imag, dens)) < 1e-11


@given(seed=seeds)
def test_weighted_laplacian_is_nonpositive(seed):
    _, f, psi, geo, _ = setup(seed)
    w = geo.volume * np.exp(-f)
    val = G32.integrate(np.real(inner(psi, sp.laplacian_f_spinor(psi, geo, f))), w)
    jet = sp.covariant_derivative_spinor(psi, geo)
    assert val == pytest.approx(-G32.integrate(jet.norm2, w), rel=1e-10)


def test_plane_wave_on_flat_torus():
    grid = Grid(2, 16)
    geo = GeometryCache(grid, identity_field(grid))
    k = np.array([1, -2])
    phase = np.exp(2j * np.pi * np.einsum("i,i...->...", k, grid.coords))
    chi = np.array([0.6, 0.8j])
    psi = chi[:, None, None] * phase
    expected = np.einsum("apq,a,q->p", geo.rep.gammas, 2j * np.pi * k, chi)[:, None, None] * phase
    assert np.allclose(sp.dirac(psi, geo), expected, atol=1e-11)
    assert np.allclose(sp.laplacian_f_spinor(psi, geo, np.zeros(grid.shape)),
                       -(2 * np.pi) ** 2 * (k @ k) * psi, atol=1e-9)


def test_frame_rotation_covariance():
    """A local change of frame acts on spinors through the spin lift and commutes with D."""
    grid = G32
    g, f, psi = random_configuration(grid, 5, 0.05)
    geo = GeometryCache(grid, g)
    theta = grid.random_band_limited(6, 2, 0.5)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])  # rot[a, b] field
    frame = np.einsum("ab...,ai...->bi...", rot, geo.frame)
    geo2 = GeometryCache(grid, g, frame=frame)
    lifts = np.array([[spin_lift(geo.rep, rot[:, :, i, j]) for j in range(grid.res)]
                      for i in range(grid.res)])
    inv = np.moveaxis(np.linalg.inv(lifts), (-2, -1), (0, 1))
    psi2 = np.einsum("pq...,q...->p...", inv, psi)
    out = np.einsum("pq...,q...->p...", inv, sp.dirac_f(psi, geo, f))
    assert np.allclose(sp.dirac_f(psi2, geo2, f), out, atol=1e-8)


def test_kosmann_along_killing_field_is_directional_derivative():
    grid = Grid(2, 16)
    geo = GeometryCache(grid, identity_field(grid))
    psi = grid.random_band_limited(1, 2, 1.0, "spinor")
    x = np.broadcast_to(np.array([0.4, -1.1])[:, None, None], (2,) + grid.shape)
    expected = np.einsum("i...,ip...->p...", x, grid.gradient(psi))
    assert np.allclose(sp.kosmann_lie(x, psi, geo), expected, atol=1e-12)


def test_kosmann_preserves_pointwise_norm_rate():
    """X |psi|^2 = 2 Re<L_X psi, psi> because the two-form part is skew."""
    g, f, psi, geo, _ = setup(3)
    x = G32.random_band_limited(4, 2, 1.0, "vector")
    lhs = np.einsum("i...,i...->...", x, geo.d(np.sum(np.abs(psi) ** 2, 0)))
    rhs = 2 * np.sum(np.real(psi.conj() * sp.kosmann_lie(x, psi, geo)), 0)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_parallel_spinor_is_harmonic():
    grid = Grid(2, 16)
    geo = GeometryCache(grid, identity_field(grid))
    psi = np.ones((2,) + grid.shape, complex)
    jet = sp.covariant_derivative_spinor(psi, geo)
    assert np.abs(jet.norm2).max() == 0 and np.abs(sp.dirac(psi, geo)).max() == 0


def test_rank_mismatch():
    grid = Grid(2, 8)
    geo = GeometryCache(grid, identity_field(grid))
    with pytest.raises(ValueError):
        sp.covariant_derivative_spinor(np.ones((3,) + grid.shape, complex), geo)


def test_fd4_scheme_weitzenbock_converges():
    errs = []
    for res in (32, 64):
        grid = Grid(2, res)
        g, f, psi = random_configuration(grid, 2, 0.05)
        geo = GeometryCache(grid, g, "fd4")
        errs.append(np.abs(sp.weitzenbock_residual(psi, geo, WeightedOps(geo, f))).max())
    assert errs[1] < errs[0] / 8
