"""Spinor differential operators and the auxiliary tensors built from them.

Spinor fields have shape ``(m,) + grid``.  Clifford contractions happen in
the orthonormal frame; tensors are converted to coordinate components once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryCache, WeightedOps, lie_derivative_metric


def _re(spec: str, *ops) -> np.ndarray:
    return np.real(np.einsum(spec, *ops))


def gamma_apply(geo: GeometryCache, va: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Clifford product with a frame-component vector field ``va``."""
    return np.einsum("apq,a...,q...->p...", geo.rep.gammas, va, psi)


def connection_apply(geo: GeometryCache, i: int, psi: np.ndarray) -> np.ndarray:
    return np.einsum("pq...,q...->p...", geo.connection[i], psi)


def covariant_coords(psi: np.ndarray, geo: GeometryCache) -> np.ndarray:
    """``nabla_i psi = d_i psi + 1/4 omega_iab gamma_a gamma_b psi``; shape ``(n, m) + grid``."""
    dpsi = geo.d(psi)
    return dpsi + np.einsum("ipq...,q...->ip...", geo.connection, psi)


@dataclass
class SpinorJet:
    value: np.ndarray
    coords: np.ndarray      # nabla_{d_i} psi
    covariant_derivative: np.ndarray  # nabla_{e_a} psi

    @property
    def norm2(self) -> np.ndarray:
        """``|nabla psi|^2``."""
        return np.sum(np.abs(self.covariant_derivative) ** 2, axis=(0, 1))


def covariant_derivative_spinor(psi: np.ndarray, geo: GeometryCache) -> SpinorJet:
    if psi.shape[0] != geo.rep.m:
        raise ValueError("spinor rank does not match the Clifford representation")
    geo.grid.check(psi, 1)
    nab = covariant_coords(psi, geo)
    return SpinorJet(psi, nab, np.einsum("ai...,ip...->ap...", geo.frame, nab))


def dirac(psi: np.ndarray, geo: GeometryCache, jet: SpinorJet | None = None) -> np.ndarray:
    jet = jet or covariant_derivative_spinor(psi, geo)
    return np.einsum("apq,aq...->p...", geo.rep.gammas, jet.covariant_derivative)


def grad_frame(geo: GeometryCache, f: np.ndarray) -> np.ndarray:
    """Frame components ``e_a(f)`` of ``grad f``."""
    return np.einsum("ai...,i...->a...", geo.frame, geo.d(f))


def dirac_f(psi: np.ndarray, geo: GeometryCache, f: np.ndarray, jet: SpinorJet | None = None) -> np.ndarray:
    """``D_f psi = D psi - 1/2 grad f . psi``."""
    return dirac(psi, geo, jet) - 0.5 * gamma_apply(geo, grad_frame(geo, f), psi)


def rough_laplacian(psi: np.ndarray, geo: GeometryCache, jet: SpinorJet | None = None) -> np.ndarray:
    """``tr nabla^2 psi = g^ij (nabla_i nabla_j psi - Gamma^k_ij nabla_k psi)``."""
    jet = jet or covariant_derivative_spinor(psi, geo)
    nab = jet.coords
    second = geo.d(nab) + np.einsum("ipq...,jq...->ijp...", geo.connection, nab)
    second = second - np.einsum("kij...,kp...->ijp...", geo.christoffel, nab)
    return np.einsum("ij...,ijp...->p...", geo.g_inv, second)


def laplacian_f_spinor(psi: np.ndarray, geo: GeometryCache, f: np.ndarray,
                       jet: SpinorJet | None = None) -> np.ndarray:
    """``Delta_f psi = -nabla^* nabla psi - nabla_{grad f} psi``."""
    jet = jet or covariant_derivative_spinor(psi, geo)
    grad_f = geo.gradient(f)
    return rough_laplacian(psi, geo, jet) - np.einsum("i...,ip...->p...", grad_f, jet.coords)


def kosmann_lie(x: np.ndarray, psi: np.ndarray, geo: GeometryCache,
                jet: SpinorJet | None = None) -> np.ndarray:
    """Spinorial Lie derivative ``nabla_X psi - 1/4 sum_{a<b} (dX^flat)_ab e_a e_b psi``.

    ``(dX^flat)_ab = nabla_a X_b - nabla_b X_a`` in the orthonormal frame; the
    Christoffel terms cancel in the antisymmetrization so coordinate partials
    suffice.
    """
    jet = jet or covariant_derivative_spinor(psi, geo)
    dx = geo.d(geo.lower(x))  # dx[i, j] = d_i X_j
    curl = dx - np.swapaxes(dx, 0, 1)
    curl_frame = np.einsum("ai...,bj...,ij...->ab...", geo.frame, geo.frame, curl)
    # sum over a<b equals half the unrestricted sum
    two_form = 0.125 * np.einsum("ab...,abpq,q...->p...", curl_frame, geo.rep.pairs, psi)
    return np.einsum("i...,ip...->p...", x, jet.coords) - two_form


@dataclass
class SpinorTensors:
    T: np.ndarray   # T_psi, coordinate components, symmetric in the last two slots
    P: np.ndarray   # Re<nabla_i psi, nabla_j psi>
    S: np.ndarray
    V: np.ndarray   # sum_a Re<psi, e_a . D_f psi> e_a
    U: np.ndarray   # sum_a Re<psi, e_a . D psi> e_a
    Vf: np.ndarray  # U + |psi|^2/2 grad f


def spinor_tensors(psi: np.ndarray, geo: GeometryCache, f: np.ndarray,
                   jet: SpinorJet | None = None) -> SpinorTensors:
    jet = jet or covariant_derivative_spinor(psi, geo)
    rep = geo.rep
    nab_a = jet.covariant_derivative
    d_psi = dirac(psi, geo, jet)
    df_psi = d_psi - 0.5 * gamma_apply(geo, grad_frame(geo, f), psi)

    P = _re("ip...,jp...->ij...", jet.coords.conj(), jet.coords)

    s_ab = _re("p...,apq,bq...->ab...", df_psi.conj(), rep.gammas, nab_a)
    S = geo.sym2_from_frame(s_ab + np.swapaxes(s_ab, 0, 1))

    V = geo.from_frame(_re("p...,apq,q...->a...", psi.conj(), rep.gammas, df_psi))
    U = geo.from_frame(_re("p...,apq,q...->a...", psi.conj(), rep.gammas, d_psi))
    Vf = U + 0.5 * np.sum(np.abs(psi) ** 2, axis=0) * geo.gradient(f)

    # c(e_a ^ e_b) psi, indexed [a, b, p]
    wedge = 0.5 * (rep.pairs - np.swapaxes(rep.pairs, 0, 1))
    w_psi = np.einsum("abpq,q...->abp...", wedge, psi)
    half = _re("abp...,cp...->abc...", w_psi.conj(), nab_a)
    t_abc = 0.5 * (half + np.swapaxes(half, 1, 2))
    T = np.einsum("ai...,bj...,ck...,abc...->ijk...", geo.coframe, geo.coframe, geo.coframe, t_abc)
    return SpinorTensors(T=T, P=P, S=S, V=V, U=U, Vf=Vf)


def weitzenbock_residual(psi: np.ndarray, geo: GeometryCache, wops: WeightedOps) -> np.ndarray:
    """``D_f^2 psi + Delta_f psi - R_f psi / 4``; vanishes identically."""
    f = wops.f
    d2 = dirac_f(dirac_f(psi, geo, f), geo, f)
    return d2 + laplacian_f_spinor(psi, geo, f) - 0.25 * wops.R_f * psi


def div_f_T_identity_residual(psi: np.ndarray, geo: GeometryCache, wops: WeightedOps,
                              jet: SpinorJet | None = None,
                              tensors: SpinorTensors | None = None) -> np.ndarray:
    """LHS - RHS of the weighted-divergence identity for ``T_psi``."""
    jet = jet or covariant_derivative_spinor(psi, geo)
    st = tensors or spinor_tensors(psi, geo, wops.f, jet)
    mod2 = np.sum(np.abs(psi) ** 2, axis=0)
    lhs = wops.divergence_tensor3(st.T)
    rhs = (-0.5 * wops.ric_f * mod2 + 0.5 * geo.hessian(mod2) - 2 * st.P + st.S
           + 0.5 * lie_derivative_metric(geo.grid, st.V, geo.g, geo.scheme))
    return lhs - rhs
