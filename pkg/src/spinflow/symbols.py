"""Principal symbols of the linearized flow operators.

Closed forms are evaluated at a flat orthonormal background, so frame and
coordinate components coincide.  ``numeric_symbol_probe`` extracts the same
quantity from the grid operators by oscillatory perturbation, giving an
independent check of each closed form.

Sign convention: ``sigma_xi(L) u = (i^k / k!) L(phi^k u)`` with ``d phi = xi``,
so ``sigma_xi(Delta) = -|xi|^2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .clifford import CliffordRep, build_rep
from .functionals import FlowConstants
from .geometry import GeometryCache, deturck_vector, lie_derivative_metric, transported_frame
from .grid import Grid
from . import spinor as sp


class SymbolError(ValueError):
    pass


@dataclass
class SymbolProbe:
    """Covector ``xi``, metric direction ``eta``, spinor direction ``s`` and
    scalar direction ``h`` at the constant background ``(delta, f, psi)``."""

    xi: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    psi: np.ndarray
    h: float = 0.0
    f: float = 0.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.s = np.asarray(self.s, dtype=complex)
        self.psi = np.asarray(self.psi, dtype=complex)
        if not np.linalg.norm(self.xi) > 0:
            raise SymbolError("xi must be nonzero")
        if not np.allclose(self.eta, self.eta.T):
            raise SymbolError("eta must be symmetric")

    @property
    def n(self) -> int:
        return self.xi.shape[0]


def random_probe(rng: np.random.Generator, n: int = 2, c: float = 1.0,
                 tangent: bool = True, integer_xi: bool = False) -> SymbolProbe:
    """Seeded probe with ``|psi|^2 = c``; ``tangent`` enforces ``Re<psi, s> = 0``."""
    m = build_rep(n).m
    psi = rng.normal(size=m) + 1j * rng.normal(size=m)
    psi *= math.sqrt(c) / np.linalg.norm(psi)
    s = rng.normal(size=m) + 1j * rng.normal(size=m)
    if tangent:
        s -= np.real(np.vdot(psi, s)) * psi / c
    if integer_xi:
        xi = np.zeros(n)
        while not np.any(xi):
            xi = rng.integers(-1, 2, size=n).astype(float)
    else:
        xi = rng.normal(size=n)
    a = rng.normal(size=(n, n))
    return SymbolProbe(xi=xi, eta=0.5 * (a + a.T), s=s, psi=psi, h=float(rng.normal()))


# -- Clifford helpers (pointwise) -----------------------------------------------

def _cl(rep: CliffordRep, v: np.ndarray) -> np.ndarray:
    """Matrix of Clifford multiplication by the frame vector ``v``."""
    return np.einsum("a,apq->pq", v, rep.gammas)


def _re(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


def two_form_matrix(rep: CliffordRep, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``c(v ^ w) = (v.w - w.v) / 2``."""
    cv, cw = _cl(rep, v), _cl(rep, w)
    return 0.5 * (cv @ cw - cw @ cv)


def _eta_xi(p: SymbolProbe) -> np.ndarray:
    return p.eta @ p.xi


# -- metric block -------------------------------------------------------------------

def symbol_metric_block(p: SymbolProbe) -> tuple[np.ndarray, float, np.ndarray]:
    """``(sigma(D Ric), sigma(D R), sigma(D L_W g))`` at ``(xi, eta)``."""
    xi, eta = p.xi, p.eta
    ex = _eta_xi(p)
    x2 = xi @ xi
    tr = np.trace(eta)
    cross = np.outer(xi, ex) + np.outer(ex, xi) - np.outer(xi, xi) * tr
    ric = 0.5 * x2 * eta - 0.5 * cross
    R = x2 * tr - xi @ ex
    return ric, float(R), -cross


# -- spinor block -----------------------------------------------------------------------

def _offdiag(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


CONVENTIONS = ("stated", "geometric")


def symbol_spinor_block(p: SymbolProbe, rep: CliffordRep | None = None, convention: str = "stated"):
    """``(sigma(D L_U psi), sigma(D L_W psi), sigma(D Delta psi), sigma(D div U))``.

    ``convention="stated"`` evaluates the closed forms as stated, term by term, with
    explicit ``j != k`` sums; they correspond to a Kosmann two-form term
    ``-1/4 sum_{i,j} (curl X)_ij e_i e_j`` and drop the ``i^2`` of the
    second-order ``eta`` terms.  ``"geometric"`` is the symbol of the Kosmann
    derivative as implemented (``sum_{i<j}``): the ``eta`` parts of both Lie
    terms become ``-1/2`` times the stated ones and the ``s`` part ``+1/2``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    rep = rep or build_rep(p.n)
    xi, eta, s, psi = p.xi, p.eta, p.s, p.psi
    gam, pairs = rep.gammas, rep.pairs
    n = p.n
    off = _offdiag(n)
    x2 = xi @ xi
    cxi = _cl(rep, xi)

    # quartic coefficients q[b, i, j, k] = Re<psi, e_b e_i e_j e_k psi>
    quad = np.einsum("bpq,iqr,jrs,kst->bijkpt", gam, gam, gam, gam)
    q = np.real(np.einsum("p,bijkpt,t->bijk", psi.conj(), quad, psi))
    # t[b] = sum_i sum_{j != k} xi_j eta_ik q[b, i, j, k]
    t = np.einsum("j,ik,jk,bijk->b", xi, eta, off, q)
    ab_psi = np.einsum("abpq,q->abp", pairs, psi)
    u_eta = (-1 / 16 * np.einsum("a,b,abp->p", xi, t, ab_psi)
             + 1 / 16 * np.einsum("b,a,abp->p", xi, t, ab_psi))
    r = np.array([_re(psi, gam[a] @ cxi @ s) for a in range(n)])
    u_s = (-0.25 * np.einsum("b,a,abp->p", xi, r, ab_psi)
           + 0.25 * np.einsum("a,b,abp->p", xi, r, ab_psi))
    sym_u = u_eta + u_s if convention == "stated" else 0.5 * (u_s - u_eta)

    ex = _eta_xi(p)
    coef_w = np.outer(xi, ex) - np.outer(ex, xi)  # [i, j] = sum_k xi_i xi_k eta_jk - xi_j xi_k eta_ik
    sym_w = -0.25 * np.einsum("ij,ij,ijp->p", coef_w, off, ab_psi)
    if convention == "geometric":
        sym_w = -0.5 * sym_w

    lap_coef = np.einsum("i,j,ik->jk", xi, xi, eta) * off
    sym_lap = -0.25 * np.einsum("jk,jkp->p", lap_coef, ab_psi) - x2 * s

    mod2 = _re(psi, psi)
    pair_re = np.real(np.einsum("p,jkp->jk", psi.conj(), ab_psi))
    sym_div = (0.25 * np.sum(lap_coef * pair_re) + x2 * _re(psi, s)
               + 0.25 * x2 * np.trace(eta) * mod2 - 0.25 * (xi @ ex) * mod2)
    return sym_u, sym_w, sym_lap, float(sym_div)


def symbol_gauged_spinor(p: SymbolProbe, tau: float, rep: CliffordRep | None = None,
                         convention: str = "stated") -> np.ndarray:
    """Closed-form symbol of the gauged spinor equation assembled from the block."""
    sym_u, sym_w, sym_lap, _ = symbol_spinor_block(p, rep, convention)
    return sym_lap + sym_w - 2 / tau * sym_u


def symbol_gauged_metric(p: SymbolProbe) -> np.ndarray:
    ric, _, lie = symbol_metric_block(p)
    return -2 * ric + lie


# -- pairing identities (pure Clifford algebra) ----------------------------------------

@dataclass
class PairingCheck:
    kosmann_u: float
    kosmann_w: float
    laplacian: float
    div_u: float

    def max(self) -> float:
        return max(abs(self.kosmann_u), abs(self.kosmann_w), abs(self.laplacian), abs(self.div_u))


def pairing_identities(p: SymbolProbe, rep: CliffordRep | None = None) -> PairingCheck:
    """Differences between the pairings of the closed forms with ``s`` (and ``h``)
    and their simplified expressions, valid for ``Re<psi, s> = 0``."""
    rep = rep or build_rep(p.n)
    sym_u, sym_w, sym_lap, sym_div = symbol_spinor_block(p, rep)
    psi, s, xi = p.psi, p.s, p.xi
    mod2 = _re(psi, psi)
    cwedge = two_form_matrix(rep, _eta_xi(p), xi)
    base = _re(psi, cwedge @ s)
    cxi = _cl(rep, xi)
    r2 = sum(_re(psi, rep.gammas[a] @ cxi @ s) ** 2 for a in range(p.n))
    x2 = xi @ xi
    u = _re(sym_u, s) - (-0.125 * mod2 * base + 0.5 * r2)
    w = _re(sym_w, s) - (-0.5 * base)
    lap = _re(sym_lap, s) - (-0.25 * base - x2 * _re(s, s))
    div = sym_div * p.h - (0.25 * x2 * np.trace(p.eta) * p.h * mod2
                           - 0.25 * (xi @ _eta_xi(p)) * p.h * mod2)
    return PairingCheck(u, w, lap, float(div))


# -- A(psi) endomorphism ---------------------------------------------------------------------

ORDERINGS = ("literal", "coercive")


@dataclass
class EndomorphismBlock:
    """``blocks[k, l]`` is the ``m x m`` real-linear map ``A(psi)^{kl}`` acting on
    ``(Re s, Im s)``, hence stored as ``2m x 2m`` real matrices."""

    blocks: np.ndarray
    coercivity: float
    ordering: str
    coefficient: float

    def apply(self, xi: np.ndarray, s: np.ndarray) -> np.ndarray:
        a = np.einsum("k,l,klpq->pq", xi, xi, self.blocks)
        m = s.shape[0]
        v = a @ np.concatenate([s.real, s.imag])
        return v[:m] + 1j * v[m:]


def _realify(mat: np.ndarray) -> np.ndarray:
    return np.block([[mat.real, -mat.imag], [mat.imag, mat.real]])


def a_endomorphism(psi: np.ndarray, rep: CliffordRep, tau: float, g: np.ndarray | None = None,
                   ordering: str = "literal", coefficient: float = 1.0,
                   n_samples: int = 0, seed: int = 0) -> EndomorphismBlock:
    """``A(psi)^{kl} s = g^{kl} s + (coefficient/tau) Re<psi, e_a e_l s> e_a e_k psi``.

    ``ordering="coercive"`` uses ``e_k e_a psi`` in the second factor, which is
    the ordering produced by linearizing the Kosmann term.  The coercivity
    constant is ``min <A^{kl} xi_k xi_l s, s> / (|xi|^2 |s|^2)`` over the
    tangent directions ``Re<psi, s> = 0``; computed exactly per ``xi`` from the
    restricted quadratic form, minimized over a ``xi`` sweep.
    """
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}")
    n, m = rep.n, rep.m
    g = np.eye(n) if g is None else np.asarray(g, dtype=float)
    g_inv = np.linalg.inv(g)
    frame = np.linalg.inv(np.linalg.cholesky(g))  # rows e_a in coordinates, g-orthonormal
    # c^k = sum_a e_a^k gamma_a, Clifford multiplication by the raised covector dx^k
    cup = np.einsum("ak,apq->kpq", frame, rep.gammas)
    blocks = np.zeros((n, n, 2 * m, 2 * m))
    eye = np.eye(2 * m)
    for k in range(n):
        for l in range(n):
            blk = g_inv[k, l] * eye
            for a in range(n):
                left = rep.gammas[a] @ cup[l]   # s -> e_a e_l s
                if ordering == "literal":
                    out = rep.gammas[a] @ cup[k] @ psi
                else:
                    out = cup[k] @ rep.gammas[a] @ psi
                # functional s -> Re<psi, left s> as a row on (Re s, Im s)
                row = _realify(left).T @ np.concatenate([psi.real, psi.imag])
                col = np.concatenate([out.real, out.imag])
                blk = blk + coefficient / tau * np.outer(col, row)
            blocks[k, l] = blk
    block = EndomorphismBlock(blocks, math.nan, ordering, coefficient)
    block.coercivity = coercivity_constant(block, psi, n_samples=n_samples, seed=seed, g=g)
    return block


def quadratic_form(block: EndomorphismBlock, xi: np.ndarray, s: np.ndarray) -> float:
    return _re(s, block.apply(xi, s))


def coercivity_constant(block: EndomorphismBlock, psi: np.ndarray, n_samples: int = 0,
                        seed: int = 0, g: np.ndarray | None = None) -> float:
    """Minimum of the symmetrized form over unit ``xi`` and unit tangent ``s``.

    The ``s``-minimum is an eigenvalue problem; ``xi`` is swept on a fixed
    angular grid (plus ``n_samples`` random directions).
    """
    n = block.blocks.shape[0]
    m2 = block.blocks.shape[2]
    g = np.eye(n) if g is None else g
    g_inv = np.linalg.inv(g)
    pr = np.concatenate([psi.real, psi.imag])
    if np.linalg.norm(pr) > 0:
        u = pr / np.linalg.norm(pr)
        tangent = np.linalg.svd(np.eye(m2) - np.outer(u, u))[0][:, : m2 - 1]
    else:
        tangent = np.eye(m2)
    if n == 2:
        th = np.linspace(0, np.pi, 181)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        th, ph = np.meshgrid(np.linspace(0, np.pi, 37), np.linspace(0, 2 * np.pi, 73))
        dirs = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    if n_samples:
        dirs = np.concatenate([dirs, np.random.default_rng(seed).normal(size=(n_samples, n))])
    best = math.inf
    for xi in dirs:
        x2 = xi @ g_inv @ xi
        a = np.einsum("k,l,klpq->pq", xi, xi, block.blocks)
        sym = tangent.T @ (0.5 * (a + a.T)) @ tangent
        best = min(best, float(np.linalg.eigvalsh(sym)[0] / x2))
    return best


# -- parabolicity -------------------------------------------------------------------------------

@dataclass
class ParabolicityReport:
    tau: float
    c: float
    f_coefficient: float
    f_type: str
    metric_ellipticity: float
    spinor_ellipticity: float
    spinor_ellipticity_literal: float
    verdict: str

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def parabolicity_report(const: FlowConstants, psi: np.ndarray | None = None, n: int = 2) -> ParabolicityReport:
    """Principal coefficient of the ``f``-equation and ellipticity of the ``(g, psi)`` block.

    The ``f``-equation reads ``f_t = -(1 - c/tau) Delta f + ...``; forward
    parabolic needs a positive coefficient of ``Delta``, i.e. ``c > tau``.
    """
    rep = build_rep(n)
    if psi is None:
        psi = np.zeros(rep.m, dtype=complex)
        psi[0] = math.sqrt(const.c)
    coef = const.c / const.tau - 1
    if coef > 0:
        f_type, verdict = "forward", "fully_forward"
    elif coef < 0:
        f_type, verdict = "backward", "backward_forward"
    else:
        f_type, verdict = "degenerate", "degenerate"
    coercive = a_endomorphism(psi, rep, const.tau, ordering="coercive", coefficient=0.5)
    literal = a_endomorphism(psi, rep, const.tau, ordering="literal", coefficient=1.0)
    return ParabolicityReport(const.tau, const.c, coef, f_type, 1.0, coercive.coercivity,
                              literal.coercivity, verdict)


def spectral_radius_bound(const: FlowConstants, a_coefficient: float = 0.5) -> float:
    """Upper bound on the largest eigenvalue of the principal symbol, per unit ``|xi|^2``.

    The vectors ``e_a psi`` are orthogonal for ``Re<.,.>`` with norm ``c``, so
    Bessel gives ``sum_a Re<psi, e_a xi s>^2 <= c |xi|^2 |s|^2`` for the spinor
    block; the ``f`` block contributes ``|c/tau - 1|``.
    """
    return max(1.0, abs(const.c / const.tau - 1), 1 + a_coefficient * const.c / const.tau)


# -- numeric probes ------------------------------------------------------------------------------

OPERATOR_TAGS = ("Ric", "R", "LieW", "KosmannU", "KosmannW", "LapSpinor", "DivU",
                 "GaugedMetric", "GaugedSpinor")
EPS_BRACKET = (1e-6, 1e-2)


def _probe_grid(p: SymbolProbe, N: int, res: int | None) -> Grid:
    need = N * int(np.max(np.abs(p.xi)))
    if res is None:
        res = 4 * need
    if need >= res // 2:
        raise SymbolError(f"frequency {need} is beyond Nyquist for res={res}")
    return Grid(p.n, res)


def _operator(tag: str, grid: Grid, g: np.ndarray, f: np.ndarray, psi: np.ndarray,
              g_bg: np.ndarray, frame_bg: np.ndarray, tau: float) -> np.ndarray:
    frame = transported_frame(g_bg, frame_bg, g)
    geo = GeometryCache(grid, g, frame=frame)
    if tag == "Ric":
        return geo.sym2_to_frame(geo.ric)
    if tag == "R":
        return geo.R
    if tag == "LieW":
        w = deturck_vector(grid, g, g_bg)
        return geo.sym2_to_frame(lie_derivative_metric(grid, w, g))
    if tag == "KosmannW":
        return sp.kosmann_lie(deturck_vector(grid, g, g_bg), psi, geo)
    if tag == "LapSpinor":
        return sp.rough_laplacian(psi, geo)
    jet = sp.covariant_derivative_spinor(psi, geo)
    tensors = sp.spinor_tensors(psi, geo, f, jet)
    if tag == "KosmannU":
        return sp.kosmann_lie(tensors.U, psi, geo, jet)
    if tag == "DivU":
        return geo.divergence(tensors.U)
    from .flow import FlowState, gauged_rhs
    const = FlowConstants(tau=tau, c=max(float(np.sum(np.abs(psi[:, (0,) * grid.n]) ** 2)), 1e-12))
    rhs = gauged_rhs(FlowState(grid, g, f, psi, 0.0, const, g_bg, frame=frame))
    if tag == "GaugedMetric":
        return geo.sym2_to_frame(rhs.g_dot)
    if tag == "GaugedSpinor":
        return rhs.psi_dot
    raise SymbolError(f"unknown operator tag {tag!r}; expected one of {OPERATOR_TAGS}")


def numeric_symbol_probe(tag: str, p: SymbolProbe, N: int, eps: float = 1e-4,
                         tau: float = 1.0, res: int | None = None):
    """Extract ``sigma_xi`` of the linearized operator ``tag`` on the grid.

    The background is ``(delta, f, psi)``; ``(eta, h, s) sin(2 pi N xi.x)`` is
    added at amplitude ``+-eps``, the central difference is projected on the
    probe harmonic and divided by ``-(2 pi N)^2`` times the sign fixed by the
    convention ``sigma(Delta) = -|xi|^2``.
    """
    if tag not in OPERATOR_TAGS:
        raise SymbolError(f"unknown operator tag {tag!r}; expected one of {OPERATOR_TAGS}")
    if not EPS_BRACKET[0] <= eps <= EPS_BRACKET[1]:
        raise SymbolError(f"eps={eps} outside the stable bracket {EPS_BRACKET}")
    if not np.allclose(p.xi, np.round(p.xi)):
        raise SymbolError("grid probes need an integer xi for periodicity")
    grid = _probe_grid(p, N, res)
    n = grid.n
    phase = 2 * np.pi * N * np.einsum("i,i...->...", p.xi, grid.coords)
    wave = np.sin(phase)
    ones = (1,) * n
    g_bg = np.broadcast_to(np.eye(n).reshape((n, n) + ones), (n, n) + grid.shape).copy()
    frame_bg = g_bg.copy()
    f_bg = np.full(grid.shape, p.f)
    psi_bg = np.broadcast_to(p.psi.reshape((-1,) + ones), (p.psi.shape[0],) + grid.shape)

    def evaluate(sign):
        e = sign * eps
        g = g_bg + e * p.eta.reshape((n, n) + ones) * wave
        f = f_bg + e * p.h * wave
        psi = psi_bg + e * p.s.reshape((-1,) + ones) * wave
        return _operator(tag, grid, g, f, psi, g_bg, frame_bg, tau)

    lin = (evaluate(1) - evaluate(-1)) / (2 * eps)
    coef = 2 * np.mean(lin * wave, axis=tuple(range(-n, 0)))
    return coef / (2 * np.pi * N) ** 2


def closed_form(tag: str, p: SymbolProbe, tau: float = 1.0, rep: CliffordRep | None = None,
                convention: str = "stated"):
    """Closed-form symbol for ``tag`` (frame components)."""
    if tag in ("Ric", "R", "LieW"):
        ric, R, lie = symbol_metric_block(p)
        return {"Ric": ric, "R": R, "LieW": lie}[tag]
    if tag in ("KosmannU", "KosmannW", "LapSpinor", "DivU"):
        u, w, lap, div = symbol_spinor_block(p, rep, convention)
        return {"KosmannU": u, "KosmannW": w, "LapSpinor": lap, "DivU": div}[tag]
    if tag == "GaugedMetric":
        return symbol_gauged_metric(p)
    if tag == "GaugedSpinor":
        return symbol_gauged_spinor(p, tau, rep, convention)
    raise SymbolError(f"unknown operator tag {tag!r}")


def relative_error(extracted, closed) -> float:
    extracted, closed = np.asarray(extracted), np.asarray(closed)
    scale = max(np.linalg.norm(closed), np.linalg.norm(extracted), 1e-300)
    return float(np.linalg.norm(extracted - closed) / scale)


@dataclass
class SymbolComparison:
    operator: str
    closed_form: list
    extracted: list
    rel_error: float
    N: int
    epsilon: float
    convention: str = "stated"


def _to_list(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}
    return a.tolist()


def compare(tag: str, p: SymbolProbe, N: int, eps: float = 1e-4, tau: float = 1.0,
            convention: str = "stated") -> SymbolComparison:
    ext = numeric_symbol_probe(tag, p, N, eps, tau)
    cf = closed_form(tag, p, tau, convention=convention)
    return SymbolComparison(tag, _to_list(cf), _to_list(ext), relative_error(ext, cf), N, eps,
                            convention)


@dataclass
class SymbolReport:
    comparisons: list[SymbolComparison] = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps({"comparisons": [asdict(c) for c in self.comparisons]}, **kw)


def symbol_report(p: SymbolProbe, Ns=(8, 16, 32), eps: float = 1e-4, tau: float = 1.0,
                  tags=OPERATOR_TAGS, conventions=CONVENTIONS) -> SymbolReport:
    return SymbolReport([compare(t, p, N, eps, tau, c) for c in conventions
                         for t in tags for N in Ns])
