"""Metric-derived data on the torus.

Index conventions (component axes precede grid axes):

* ``frame[a, i]``: coordinate component ``i`` of the orthonormal frame vector ``e_a``
* ``coframe[a, i]``: ``theta^a(d_i)``, so ``d_i = sum_a coframe[a, i] e_a``
* ``christoffel[k, i, j]`` = Gamma^k_ij
* ``omega[i, a, b]`` = g(nabla_{d_i} e_a, e_b)
* vectors are stored with an upper index, covectors with a lower one
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clifford import CliffordRep, build_rep
from .grid import Grid, GridError, fieldwise, pointwise

SPD_FLOOR = 1e-6


class NotSPDError(GridError):
    pass


def _eigh(g: np.ndarray):
    w, q = np.linalg.eigh(pointwise(g, 2))
    if np.any(w <= SPD_FLOOR):
        raise NotSPDError(f"metric eigenvalue {w.min():.3e} below {SPD_FLOOR}")
    return w, q


def metric_inverse(g: np.ndarray) -> np.ndarray:
    _eigh(g)
    return fieldwise(np.linalg.inv(pointwise(g, 2)), 2)


def orthonormal_frame(g: np.ndarray) -> np.ndarray:
    """Frame from the symmetric positive root ``g^{-1/2}``."""
    w, q = _eigh(g)
    root = np.einsum("...ia,...a,...ja->...ij", q, w**-0.5, q)
    return fieldwise(root, 2)


def cholesky_frame(g: np.ndarray) -> np.ndarray:
    """Alternative gauge: rows of ``L^{-1}`` with ``g = L L^T``."""
    _eigh(g)
    lower = np.linalg.cholesky(pointwise(g, 2))
    return fieldwise(np.linalg.inv(lower), 2)


def transported_frame(g_start: np.ndarray, frame_start: np.ndarray, g_end: np.ndarray) -> np.ndarray:
    """Carry a frame along the straight path ``g_start -> g_end``.

    The transport solves ``d/dt e_a = -1/2 g^{-1} gdot (e_a)``; along a linear
    path it integrates to ``e_a(1) = (g_start^{-1} g_end)^{-1/2} e_a(0)``.
    This identifies spinors across metrics without an extra rotation.
    """
    # (g0^{-1} g1)^{-1/2} = g0^{-1/2} (g0^{-1/2} g1 g0^{-1/2})^{-1/2} g0^{1/2}
    w0, q0 = _eigh(g_start)
    r = np.einsum("...ia,...a,...ja->...ij", q0, w0**-0.5, q0)
    rinv = np.einsum("...ia,...a,...ja->...ij", q0, w0**0.5, q0)
    mid = r @ pointwise(g_end, 2) @ r
    w, q = np.linalg.eigh(mid)
    if np.any(w <= SPD_FLOOR):
        raise NotSPDError("end metric is not positive definite")
    h = r @ np.einsum("...ia,...a,...ja->...ij", q, w**-0.5, q) @ rinv
    # frame rows are vectors: e_a^i -> h^i_j e_a^j
    return fieldwise(np.einsum("...ij,...aj->...ai", h, pointwise(frame_start, 2)), 2)


def christoffel_symbols(grid: Grid, g: np.ndarray, g_inv: np.ndarray | None = None,
                        scheme: str = "spectral") -> np.ndarray:
    if g_inv is None:
        g_inv = metric_inverse(g)
    dg = grid.gradient(g, scheme)  # dg[l, i, j] = d_l g_ij
    low = 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)
    return np.einsum("kl...,lij...->kij...", g_inv, low)


def deturck_vector(grid: Grid, g: np.ndarray, g0: np.ndarray, scheme: str = "spectral") -> np.ndarray:
    """``W^k = g^{ij} (Gamma^k_ij(g) - Gamma^k_ij(g0))``."""
    g_inv = metric_inverse(g)
    diff = christoffel_symbols(grid, g, g_inv, scheme) - christoffel_symbols(grid, g0, None, scheme)
    return np.einsum("ij...,kij...->k...", g_inv, diff)


def lie_derivative_metric(grid: Grid, x: np.ndarray, g: np.ndarray, scheme: str = "spectral") -> np.ndarray:
    """``(L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k``."""
    dg = grid.gradient(g, scheme)
    dx = grid.gradient(x, scheme)  # dx[i, k] = d_i X^k
    term = np.einsum("kj...,ik...->ij...", g, dx)
    return np.einsum("k...,kij...->ij...", x, dg) + term + np.swapaxes(term, 0, 1)


@dataclass
class GeometryCache:
    """Everything derived from ``g`` that the spinor and curvature code needs."""

    grid: Grid
    g: np.ndarray
    scheme: str = "spectral"
    rep: CliffordRep | None = None
    frame: np.ndarray | None = None
    g_inv: np.ndarray = field(init=False)
    coframe: np.ndarray = field(init=False)
    christoffel: np.ndarray = field(init=False)
    omega: np.ndarray = field(init=False)
    connection: np.ndarray = field(init=False)
    ric: np.ndarray = field(init=False)
    R: np.ndarray = field(init=False)
    volume: np.ndarray = field(init=False)

    def __post_init__(self):
        grid, g = self.grid, self.g
        grid.check(g, 2)
        if self.rep is None:
            self.rep = build_rep(grid.n)
        self.g_inv = metric_inverse(g)
        if self.frame is None:
            self.frame = orthonormal_frame(g)
        self.coframe = np.einsum("aj...,ji...->ai...", self.frame, g)
        self.volume = np.sqrt(np.linalg.det(pointwise(g, 2)))
        self.christoffel = christoffel_symbols(grid, g, self.g_inv, self.scheme)
        dframe = self.d(self.frame)  # dframe[i, a, k] = d_i e_a^k
        nabla_e = dframe + np.einsum("kij...,aj...->iak...", self.christoffel, self.frame)
        self.omega = np.einsum("iak...,bk...->iab...", nabla_e, self.coframe)
        self.connection = 0.25 * np.einsum("iab...,abpq->ipq...", self.omega, self.rep.pairs)
        self.ric, self.R = self._curvature()

    def d(self, a: np.ndarray) -> np.ndarray:
        return self.grid.gradient(a, self.scheme)

    def _curvature(self):
        gam = self.christoffel
        dgam = self.d(gam)  # dgam[m, k, i, j] = d_m Gamma^k_ij
        ric = (np.einsum("kkij...->ij...", dgam)
               - np.einsum("jkik...->ij...", dgam)
               + np.einsum("kkl...,lij...->ij...", gam, gam)
               - np.einsum("kjl...,lik...->ij...", gam, gam))
        ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))
        return ric, np.einsum("ij...,ij...->...", self.g_inv, ric)

    # -- index gymnastics ---------------------------------------------------
    def lower(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,j...->i...", self.g, x)

    def raise_(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,j...->i...", self.g_inv, w)

    def to_frame(self, x: np.ndarray) -> np.ndarray:
        """Frame components ``x^a = theta^a(x)`` of a vector field."""
        return np.einsum("ai...,i...->a...", self.coframe, x)

    def from_frame(self, xa: np.ndarray) -> np.ndarray:
        return np.einsum("ai...,a...->i...", self.frame, xa)

    def sym2_from_frame(self, t: np.ndarray) -> np.ndarray:
        return np.einsum("ai...,bj...,ab...->ij...", self.coframe, self.coframe, t)

    def sym2_to_frame(self, t: np.ndarray) -> np.ndarray:
        return np.einsum("ai...,bj...,ij...->ab...", self.frame, self.frame, t)

    def pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pointwise ``<a, b>_g`` for covariant 2-tensors."""
        return np.einsum("ik...,jl...,ij...,kl...->...", self.g_inv, self.g_inv, a, b)

    def trace(self, a: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,ij...->...", self.g_inv, a)

    def norm2_vector(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,i...,j...->...", self.g, x, x)

    # -- scalar calculus ----------------------------------------------------
    def gradient(self, phi: np.ndarray) -> np.ndarray:
        """``grad phi`` with upper index."""
        return self.raise_(self.d(phi))

    def hessian(self, phi: np.ndarray) -> np.ndarray:
        dphi = self.d(phi)
        return self.d(dphi) - np.einsum("kij...,k...->ij...", self.christoffel, dphi)

    def laplacian(self, phi: np.ndarray) -> np.ndarray:
        return self.trace(self.hessian(phi))

    def divergence(self, x: np.ndarray) -> np.ndarray:
        """``div X = d_i X^i + Gamma^i_ik X^k``."""
        return (np.einsum("ii...->...", self.d(x))
                + np.einsum("iik...,k...->...", self.christoffel, x))

    def divergence_sym2(self, h: np.ndarray) -> np.ndarray:
        """Covector ``(div h)_j = g^{ik} nabla_i h_kj``."""
        gam = self.christoffel
        nab = (self.d(h)
               - np.einsum("lik...,lj...->ikj...", gam, h)
               - np.einsum("lij...,kl...->ikj...", gam, h))
        return np.einsum("ik...,ikj...->j...", self.g_inv, nab)

    def divergence_tensor3(self, t: np.ndarray) -> np.ndarray:
        """``(div T)_jk = g^{il} nabla_l T_ijk`` (first slot)."""
        gam = self.christoffel
        nab = (self.d(t)
               - np.einsum("mli...,mjk...->lijk...", gam, t)
               - np.einsum("mlj...,imk...->lijk...", gam, t)
               - np.einsum("mlk...,ijm...->lijk...", gam, t))
        return np.einsum("il...,lijk...->jk...", self.g_inv, nab)


@dataclass
class WeightedOps:
    """Operators twisted by the weight ``e^{-f}``."""

    geo: GeometryCache
    f: np.ndarray
    grad_f: np.ndarray = field(init=False)
    hess_f: np.ndarray = field(init=False)
    ric_f: np.ndarray = field(init=False)
    R_f: np.ndarray = field(init=False)

    def __post_init__(self):
        geo = self.geo
        self.grad_f = geo.gradient(self.f)
        self.hess_f = geo.hessian(self.f)
        self.ric_f = geo.ric + self.hess_f
        self.R_f = geo.R + 2 * geo.trace(self.hess_f) - geo.norm2_vector(self.grad_f)

    def laplacian(self, phi: np.ndarray) -> np.ndarray:
        return self.geo.laplacian(phi) - np.einsum("i...,i...->...", self.grad_f, self.geo.d(phi))

    def divergence(self, x: np.ndarray) -> np.ndarray:
        return self.geo.divergence(x) - np.einsum("i...,i...->...", x, self.geo.d(self.f))

    def divergence_sym2(self, h: np.ndarray) -> np.ndarray:
        return self.geo.divergence_sym2(h) - np.einsum("i...,ij...->j...", self.grad_f, h)

    def divergence_tensor3(self, t: np.ndarray) -> np.ndarray:
        return self.geo.divergence_tensor3(t) - np.einsum("i...,ijk...->jk...", self.grad_f, t)

    def double_divergence(self, h: np.ndarray) -> np.ndarray:
        """``div_f div_f h`` for a symmetric 2-tensor."""
        return self.divergence(self.geo.raise_(self.divergence_sym2(h)))


def weighted_scalar_ops(geo: GeometryCache, f: np.ndarray) -> WeightedOps:
    return WeightedOps(geo, f)
