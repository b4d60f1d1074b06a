"""Complex Clifford representation with ``e_a e_b + e_b e_a = -2 delta_ab``.

Gamma matrices are skew-Hermitian, so Clifford multiplication by a real
vector is skew-adjoint for the Hermitian spinor product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, logm

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


@dataclass(frozen=True)
class CliffordRep:
    n: int
    gammas: np.ndarray  # (n, m, m)

    @property
    def m(self) -> int:
        return self.gammas.shape[1]

    def conjugated(self, u: np.ndarray) -> "CliffordRep":
        """Unitarily equivalent representation ``u gamma u^dagger``."""
        return CliffordRep(self.n, np.einsum("pq,aqr,sr->aps", u, self.gammas, u.conj()))

    @property
    def pairs(self) -> np.ndarray:
        """``pairs[a, b] = gamma_a gamma_b``."""
        return np.einsum("apq,bqr->abpr", self.gammas, self.gammas)


def build_rep(n: int) -> CliffordRep:
    if n not in (2, 3):
        raise ValueError(f"no Clifford representation implemented for n={n}")
    return CliffordRep(n, 1j * PAULI[:n])


def inner(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Hermitian product ``<phi, psi>``, antilinear in ``phi``; spinor axis first."""
    return np.sum(phi.conj() * psi, axis=0)


def re_inner(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return np.sum(phi.real * psi.real + phi.imag * psi.imag, axis=0)


def clifford_vector(rep: CliffordRep, v: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``v . psi`` for orthonormal-frame components ``v`` (axis 0) and spinor ``psi``.

    Works pointwise (``v`` shape ``(n,)``, ``psi`` shape ``(m,)``) or on fields.
    """
    v = np.asarray(v)
    if v.shape[0] != rep.n or psi.shape[0] != rep.m:
        raise ValueError("dimension mismatch between vector, spinor and representation")
    return np.einsum("apq,a...,q...->p...", rep.gammas, v, psi)


def two_form_action(rep: CliffordRep, v: np.ndarray, w: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``c(v ^ w) psi = (v.w.psi - w.v.psi) / 2``."""
    return 0.5 * (clifford_vector(rep, v, clifford_vector(rep, w, psi))
                  - clifford_vector(rep, w, clifford_vector(rep, v, psi)))


def spin_lift(rep: CliffordRep, rotation: np.ndarray) -> np.ndarray:
    """Spin matrix ``s`` with ``s gamma_b s^-1 = sum_a rotation[a, b] gamma_a``.

    Changing the frame ``e'_b = sum_a rotation[a, b] e_a`` maps the spinor
    components ``psi`` to ``s^-1 psi``.  The sign of the lift is the one
    continuously connected to the identity through the principal logarithm.
    """
    gen = np.real(logm(rotation))
    return expm(-0.25 * np.einsum("ab,abpq->pq", gen, rep.pairs))
