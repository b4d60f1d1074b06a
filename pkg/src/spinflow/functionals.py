"""Entropy functionals, constraint integrals and the Dirac ground eigenvalue."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sps

from .geometry import GeometryCache, WeightedOps
from .grid import Grid
from . import spinor as sp


@dataclass(frozen=True)
class FlowConstants:
    tau: float
    lam: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")


@dataclass
class Snapshot:
    """Geometry, weighted operators and the spinor jet for one configuration.

    ``frame`` overrides the symmetric-root frame; needed when spinors are
    compared across metrics.
    """

    grid: Grid
    g: np.ndarray
    f: np.ndarray
    psi: np.ndarray
    tau: float
    scheme: str = "spectral"
    frame: np.ndarray | None = None
    rep: object = None
    geo: GeometryCache = field(init=False)
    wops: WeightedOps = field(init=False)
    jet: sp.SpinorJet = field(init=False)
    density: np.ndarray = field(init=False)

    def __post_init__(self):
        self.geo = GeometryCache(self.grid, self.g, self.scheme, rep=self.rep, frame=self.frame)
        self.wops = WeightedOps(self.geo, self.f)
        self.jet = sp.covariant_derivative_spinor(self.psi, self.geo)
        self.density = self.grid.weighted_measure(self.g, self.f, self.tau)

    def integrate(self, phi: np.ndarray) -> float:
        return self.grid.integrate(phi, self.density)

    @property
    def mod2(self) -> np.ndarray:
        return np.sum(np.abs(self.psi) ** 2, axis=0)

    def dirac_f(self) -> np.ndarray:
        return sp.dirac_f(self.psi, self.geo, self.f, self.jet)

    def dirac_f2(self) -> np.ndarray:
        return sp.dirac_f(self.dirac_f(), self.geo, self.f)

    def tensors(self) -> sp.SpinorTensors:
        return sp.spinor_tensors(self.psi, self.geo, self.f, self.jet)


def snapshot(grid, g, f, psi, tau, **kw) -> Snapshot:
    return Snapshot(grid, g, f, psi, tau, **kw)


def w_lambda_integrand(s: Snapshot, lam: float) -> np.ndarray:
    n = s.grid.n
    return 4 * s.jet.norm2 + s.wops.R_f * (s.mod2 - s.tau) - lam * (s.f - n)


def w_lambda(grid, g, f, psi, const: FlowConstants, **kw) -> float:
    """``int {4|nabla psi|^2 + R_f (|psi|^2 - tau) - lambda (f - n)} dOmega``."""
    s = snapshot(grid, g, f, psi, const.tau, **kw)
    return s.integrate(w_lambda_integrand(s, const.lam))


def w_lambda_dirac_form(grid, g, f, psi, const: FlowConstants, **kw) -> float:
    """Same value written through ``|D_f psi|^2``; differs only by a divergence."""
    s = snapshot(grid, g, f, psi, const.tau, **kw)
    geo = s.geo
    dfpsi = s.dirac_f()
    scal = geo.R + geo.norm2_vector(s.wops.grad_f)
    integrand = (4 * np.sum(np.abs(dfpsi) ** 2, axis=0) - const.tau * scal
                 - const.lam * (f - grid.n))
    return s.integrate(integrand)


def classical_functionals(grid: Grid, g, f, tau: float, scheme: str = "spectral") -> tuple[float, float]:
    """Perelman's ``F(g, f)`` (unnormalized) and ``W(g, f, tau)``."""
    geo = GeometryCache(grid, g, scheme)
    wops = WeightedOps(geo, f)
    dens = np.exp(-f) * geo.volume
    F = grid.integrate(wops.R_f, dens)
    scal = geo.R + geo.norm2_vector(wops.grad_f)
    W = (4 * np.pi * tau) ** (-grid.n / 2) * grid.integrate(tau * scal + f - grid.n, dens)
    return F, W


def bo_energy(grid: Grid, g, f, psi, scheme: str = "spectral") -> float:
    """``int {4|nabla psi|^2 + R_f (|psi|^2 - 1)} e^{-f} dmu_g``."""
    s = snapshot(grid, g, f, psi, 1.0 / (4 * np.pi), scheme=scheme)
    return s.integrate(4 * s.jet.norm2 + s.wops.R_f * (s.mod2 - 1))


def bo_energy_dirac_form(grid: Grid, g, f, psi, scheme: str = "spectral") -> float:
    """``int 4|D_f psi|^2 e^{-f} dmu_g - F(g, f)``."""
    s = snapshot(grid, g, f, psi, 1.0 / (4 * np.pi), scheme=scheme)
    F, _ = classical_functionals(grid, g, f, 1.0, scheme)
    return s.integrate(4 * np.sum(np.abs(s.dirac_f()) ** 2, axis=0)) - F


def constraint_integrals(grid, g, f, psi, const: FlowConstants) -> tuple[float, float]:
    """``(int dOmega, int |psi|^2 dOmega)``."""
    dens = grid.weighted_measure(g, f, const.tau)
    return grid.integrate(np.ones(grid.shape), dens), grid.integrate(np.sum(np.abs(psi) ** 2, axis=0), dens)


@dataclass
class FunctionalReport:
    W_lambda: float
    W_lambda_dirac_form: float
    perelman_F: float
    perelman_W: float
    bo_E: float
    mass: float
    spinor_mass: float

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def functional_report(grid, g, f, psi, const: FlowConstants) -> FunctionalReport:
    F, W = classical_functionals(grid, g, f, const.tau)
    mass, smass = constraint_integrals(grid, g, f, psi, const)
    return FunctionalReport(
        W_lambda=w_lambda(grid, g, f, psi, const),
        W_lambda_dirac_form=w_lambda_dirac_form(grid, g, f, psi, const),
        perelman_F=F, perelman_W=W, bo_E=bo_energy(grid, g, f, psi),
        mass=mass, spinor_mass=smass,
    )


# -- Dirac spectrum ------------------------------------------------------------

def _spectral_matrix(res: int) -> np.ndarray:
    """Dense periodic spectral first-derivative matrix on ``res`` points of [0, 1)."""
    eye = np.eye(res)
    grid_k = np.fft.fftfreq(res, d=1.0 / res) * 2 * np.pi
    grid_k[res // 2] = 0.0
    return np.real(np.fft.ifft(1j * grid_k[:, None] * np.fft.fft(eye, axis=0), axis=0))


def dirac_matrix(geo: GeometryCache) -> sps.csr_matrix:
    """Sparse collocation matrix of ``D`` acting on the flattened spinor ``psi[p, x]``."""
    grid, rep = geo.grid, geo.rep
    n, res, m = grid.n, grid.res, rep.m
    npts = res**n
    d1 = sps.csr_matrix(_spectral_matrix(res))
    partials = []
    for i in range(n):
        factors = [sps.identity(res, format="csr")] * n
        factors[i] = d1
        op = factors[0]
        for fac in factors[1:]:
            op = sps.kron(op, fac, format="csr")
        partials.append(op)
    # coefficient blocks: sum_a gamma_a e_a^i, shape (i, p, q, x)
    coef = np.einsum("apq,ai...->ipq...", rep.gammas, geo.frame).reshape(n, m, m, npts)
    zeroth = np.einsum("ipq...,iqr...->pr...", coef.reshape((n, m, m) + grid.shape),
                       geo.connection).reshape(m, m, npts)
    blocks = [[None] * m for _ in range(m)]
    for p in range(m):
        for q in range(m):
            blk = sps.diags(zeroth[p, q])
            for i in range(n):
                blk = blk + sps.diags(coef[i, p, q]) @ partials[i]
            blocks[p][q] = blk
    return sps.bmat(blocks, format="csr")


def _plane_wave_basis(grid: Grid, kmax: int) -> np.ndarray:
    """Orthonormal columns ``exp(2 pi i k.x) / sqrt(N)`` for ``|k_i| <= kmax``."""
    x = np.arange(grid.res) / grid.res
    ks = np.arange(-kmax, kmax + 1)
    one = np.exp(2j * np.pi * np.outer(x, ks)) / np.sqrt(grid.res)
    basis = one
    for _ in range(grid.n - 1):
        basis = np.kron(basis, one)
    return basis


def dirac_spectrum(geo: GeometryCache, count: int = 8, kmax: int | None = None,
                   max_dim: int = 6000) -> np.ndarray:
    """Smallest ``count`` values of ``|lambda|`` for ``D``, ascending.

    ``D`` is self-adjoint for ``dmu_g``.  The collocation matrix is conjugated
    by the square root of the volume density, projected onto plane waves with
    ``|k_i| <= kmax`` (default ``res/2 - 1``, which drops the Nyquist modes
    whose odd derivative is undefined) and the Hermitian part diagonalized.
    """
    grid = geo.grid
    kmax = grid.res // 2 - 1 if kmax is None else kmax
    if not 0 <= kmax < grid.res // 2:
        raise ValueError(f"kmax={kmax} must be below res/2={grid.res // 2}")
    m = geo.rep.m
    q = _plane_wave_basis(grid, kmax)
    dim = m * q.shape[1]
    if dim > max_dim:
        raise ValueError(f"reduced Dirac matrix of size {dim} exceeds max_dim={max_dim}")
    w = np.tile(np.sqrt(geo.volume.ravel()), m)
    herm = sps.diags(w) @ dirac_matrix(geo) @ sps.diags(1 / w)
    qq = sps.block_diag([sps.csr_matrix(q)] * m, format="csr")
    red = (qq.conj().T @ (herm @ qq)).toarray()
    red = 0.5 * (red + red.conj().T)
    ev = np.linalg.eigvalsh(red)
    return np.sort(np.abs(ev))[:count]


def dirac_lambda1(geo: GeometryCache, **kw) -> float:
    return float(dirac_spectrum(geo, count=1, **kw)[0])


def least_nonzero(values: np.ndarray, tol: float = 1e-6) -> float:
    nz = values[values > tol]
    if nz.size == 0:
        raise ValueError("no nonzero eigenvalue in the computed window")
    return float(nz.min())


@dataclass
class FriedrichCheck:
    lambda1: float
    min_R_f: float
    bound: float
    holds: bool


def friedrich_check(geo: GeometryCache, f: np.ndarray, tol: float = 1e-8) -> FriedrichCheck:
    """``lambda_1(D)^2 >= n / (4 (n - 1)) min R_f``."""
    n = geo.grid.n
    lam1 = dirac_lambda1(geo)
    rmin = float(WeightedOps(geo, f).R_f.min())
    bound = n / (4 * (n - 1)) * rmin
    return FriedrichCheck(lam1, rmin, bound, lam1**2 >= bound - tol)


# -- seeded test configurations --------------------------------------------------

def random_configuration(grid: Grid, seed: int, amp: float = 0.05, kmax: int = 2,
                         psi_amp: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``g = delta + amp h``, ``f = amp phi`` and a generic spinor, all band-limited."""
    g = grid.random_band_limited(seed, kmax, amp, "sym2", spd=True)
    f = grid.random_band_limited(seed + 1, kmax, amp)
    psi = grid.random_band_limited(seed + 2, kmax, psi_amp, "spinor")
    psi[0] += 1.0
    return g, f, psi


def conformal_kernel_configuration(grid: Grid, seed: int, amp: float = 0.05, kmax: int = 2,
                                   chi=(0.6, 0.8j)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``g = e^{2u} delta`` with ``psi = e^{f/2 - (n-1)u/2} chi``, so ``D_f psi = 0``.

    Uses conformal covariance of ``D`` for the symmetric-root frame
    ``e_a = e^{-u} d_a`` and ``D_f (e^{f/2} phi) = e^{f/2} D phi``.
    """
    u = grid.random_band_limited(seed, kmax, amp)
    f = grid.random_band_limited(seed + 1, kmax, amp)
    n = grid.n
    g = np.exp(2 * u) * np.eye(n).reshape((n, n) + (1,) * n)
    chi = np.asarray(chi, dtype=complex).reshape((-1,) + (1,) * n)
    return g, f, np.exp(f / 2 - (n - 1) * u / 2) * chi
