"""First variation of the entropy, finite-difference oracles, Euler-Lagrange
residuals and the regime classification of critical points.

Spinors at different metrics are compared through the frame carried along
the straight metric path by ``d/dt e_a = -1/2 g^{-1} gdot e_a``.  Holding
the frame components of ``psi`` fixed in that frame is what the variation
formulas mean by "``psi`` varies by ``psi_dot``".
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .functionals import FlowConstants, Snapshot, snapshot, w_lambda_integrand
from .geometry import lie_derivative_metric, orthonormal_frame, transported_frame
from .grid import Grid
from . import spinor as sp


@dataclass
class VariationDirection:
    g_dot: np.ndarray
    f_dot: np.ndarray
    psi_dot: np.ndarray
    tau_dot: float = 0.0

    def scaled(self, s: float) -> "VariationDirection":
        return VariationDirection(s * self.g_dot, s * self.f_dot, s * self.psi_dot, s * self.tau_dot)


def random_direction(grid: Grid, seed: int, kmax: int = 2, amp: float = 1.0,
                     tau_dot: float = 0.0, tangent_to: np.ndarray | None = None) -> VariationDirection:
    """Seeded band-limited direction; ``tangent_to=psi`` removes the radial part."""
    g_dot = grid.random_band_limited(seed, kmax, amp, "sym2")
    f_dot = grid.random_band_limited(seed + 1, kmax, amp)
    psi_dot = grid.random_band_limited(seed + 2, kmax, amp, "spinor")
    if tangent_to is not None:
        psi_dot = unit_bundle_projection(tangent_to, psi_dot)
    return VariationDirection(g_dot, f_dot, psi_dot, tau_dot)


def unit_bundle_projection(psi: np.ndarray, psi_dot: np.ndarray) -> np.ndarray:
    """Subtract ``Re<psi_dot, psi>/|psi|^2 psi`` pointwise."""
    mod2 = np.sum(np.abs(psi) ** 2, axis=0)
    radial = np.sum(np.real(psi_dot.conj() * psi), axis=0) / mod2
    return psi_dot - radial * psi


def measure_rate(s: Snapshot, d: VariationDirection) -> np.ndarray:
    """``1/2 tr_g g_dot - f_dot - n tau_dot / (2 tau)``, the log-rate of ``dOmega``."""
    return 0.5 * s.geo.trace(d.g_dot) - d.f_dot - s.grid.n * d.tau_dot / (2 * s.tau)


def _re_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(np.real(a.conj() * b), axis=0)


# -- path machinery ------------------------------------------------------------

@dataclass
class LinearPath:
    """``(g + t g_dot, f + t f_dot, psi + t psi_dot, tau + t tau_dot)`` with transported frame."""

    grid: Grid
    g: np.ndarray
    f: np.ndarray
    psi: np.ndarray
    tau: float
    direction: VariationDirection
    scheme: str = "spectral"
    frame: np.ndarray | None = None

    def __post_init__(self):
        if self.frame is None:
            self.frame = orthonormal_frame(self.g)

    def at(self, t: float) -> Snapshot:
        d = self.direction
        g_t = self.g + t * d.g_dot
        frame_t = self.frame if t == 0 else transported_frame(self.g, self.frame, g_t)
        tau_t = self.tau + t * d.tau_dot
        if tau_t <= 0:
            raise ValueError("path leaves tau > 0")
        return snapshot(self.grid, g_t, self.f + t * d.f_dot, self.psi + t * d.psi_dot, tau_t,
                        scheme=self.scheme, frame=frame_t)


def central_difference(fun, path: LinearPath, eps: float) -> float:
    return (fun(path.at(eps)) - fun(path.at(-eps))) / (2 * eps)


# -- first variation -------------------------------------------------------------

def first_variation_integrand(s: Snapshot, const: FlowConstants, d: VariationDirection) -> np.ndarray:
    geo, wops = s.geo, s.wops
    tau, lam, n = s.tau, const.lam, s.grid.n
    st = s.tensors()
    d2 = s.dirac_f2()
    ric_term = wops.ric_f - lam / (2 * tau) * s.g
    lie_v = lie_derivative_metric(s.grid, st.V, s.g, s.scheme)
    rate = measure_rate(s, d)
    return (geo.pair(tau * d.g_dot - d.tau_dot * s.g, ric_term)
            - geo.pair(d.g_dot, lie_v + 2 * st.S)
            + 8 * _re_pair(d2, d.psi_dot)
            + rate * (4 * _re_pair(d2, s.psi) - tau * wops.R_f - lam * (s.f - n - 1)))


def first_variation_rhs(grid, g, f, psi, const: FlowConstants, d: VariationDirection, **kw) -> float:
    """Closed-form directional derivative of the entropy along ``d``."""
    s = snapshot(grid, g, f, psi, const.tau, **kw)
    return s.integrate(first_variation_integrand(s, const, d))


def _w_of(const: FlowConstants):
    return lambda s: s.integrate(w_lambda_integrand(s, const.lam))


def first_variation_fd(grid, g, f, psi, const: FlowConstants, d: VariationDirection,
                       eps: float, scheme: str = "spectral") -> float:
    """Central difference of the entropy along the linear path with transported frame."""
    path = LinearPath(grid, g, f, psi, const.tau, d, scheme)
    return central_difference(_w_of(const), path, eps)


@dataclass
class VariationCheck:
    formula: float
    eps: list[float]
    numeric: list[float]
    rel_errors: list[float]
    order: float  # observed convergence order between the two largest eps


def first_variation_check(grid, g, f, psi, const, d, eps=(1e-2, 1e-3, 1e-4)) -> VariationCheck:
    formula = first_variation_rhs(grid, g, f, psi, const, d)
    numeric = [first_variation_fd(grid, g, f, psi, const, d, e) for e in eps]
    errs = [abs(formula - x) / (abs(formula) + 1) for x in numeric]
    order = float(np.log(errs[0] / errs[1]) / np.log(eps[0] / eps[1])) if errs[1] > 0 else float("inf")
    return VariationCheck(formula, list(eps), numeric, errs, order)


# -- integral evolution formulas ---------------------------------------------------

def _evolution_terms(s: Snapshot, d: VariationDirection):
    """Functionals and their closed-form rates along ``d``, keyed by name."""
    geo, wops = s.geo, s.wops
    rate = measure_rate(s, d)
    st = s.tensors()
    d2 = s.dirac_f2()
    lap_psi = sp.laplacian_f_spinor(s.psi, geo, s.f, s.jet)
    ddiv = wops.double_divergence(d.g_dot)
    div_t = wops.divergence_tensor3(st.T)
    n = s.grid.n
    return {
        "R_f": (wops.R_f, rate * wops.R_f - geo.pair(d.g_dot, wops.ric_f)),
        "R_f_psi2": (wops.R_f * s.mod2,
                     -geo.pair(d.g_dot, wops.ric_f) * s.mod2 + s.mod2 * ddiv
                     + 2 * wops.R_f * _re_pair(d.psi_dot, s.psi)
                     + 4 * rate * (_re_pair(d2, s.psi) - s.jet.norm2)),
        "grad_psi2": (s.jet.norm2,
                      rate * s.jet.norm2 - 2 * _re_pair(d.psi_dot, lap_psi)
                      - geo.pair(d.g_dot, 0.5 * div_t + st.P)),
        "f_minus_n": (s.f - n, d.f_dot + rate * (s.f - n)),
        "mass": (np.ones(s.grid.shape), rate),
        "spinor_mass": (s.mod2, 2 * _re_pair(d.psi_dot, s.psi) + rate * s.mod2),
    }


EVOLUTION_KEYS = ("R_f", "R_f_psi2", "grad_psi2", "f_minus_n", "mass", "spinor_mass")


@dataclass
class EvolutionResidual:
    name: str
    formula: float
    numeric: float
    residual: float
    relative: float


def integral_evolution_check(grid, g, f, psi, const: FlowConstants, d: VariationDirection,
                             eps: float = 1e-4, scheme: str = "spectral") -> list[EvolutionResidual]:
    """Compare each integral evolution formula against a central difference."""
    path = LinearPath(grid, g, f, psi, const.tau, d, scheme)
    s0 = path.at(0.0)
    terms = _evolution_terms(s0, d)
    sp_, sm = path.at(eps), path.at(-eps)
    plus, minus = _evolution_terms(sp_, d), _evolution_terms(sm, d)
    out = []
    for key in EVOLUTION_KEYS:
        formula = s0.integrate(terms[key][1])
        numeric = (sp_.integrate(plus[key][0]) - sm.integrate(minus[key][0])) / (2 * eps)
        scale = s0.integrate(np.abs(terms[key][1])) + abs(formula) + 1e-300
        out.append(EvolutionResidual(key, formula, numeric, abs(formula - numeric),
                                     abs(formula - numeric) / scale))
    return out


# -- Euler-Lagrange system ---------------------------------------------------------

@dataclass
class ELReport:
    metric_residual: np.ndarray
    spinor_residual: np.ndarray
    eigen_residual: np.ndarray
    scalar_residual: np.ndarray
    lagrange_residual: np.ndarray
    soliton_residual: np.ndarray
    beta: float
    alpha: float
    norms: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps({"beta": self.beta, "alpha": self.alpha, "norms": self.norms}, **kw)


def metric_soliton_operator(s: Snapshot, const: FlowConstants, vector: np.ndarray,
                            tensors: sp.SpinorTensors | None = None) -> np.ndarray:
    """``Ric + L_{grad f / 2 - X / tau} g - (2/tau) S - lambda / (2 tau) g`` for ``X = vector``."""
    st = tensors or s.tensors()
    tau = s.tau
    x = 0.5 * s.wops.grad_f - vector / tau
    return (s.geo.ric + lie_derivative_metric(s.grid, x, s.g, s.scheme)
            - 2 / tau * st.S - const.lam / (2 * tau) * s.g)


def projected_spinor_operator(s: Snapshot, c: float) -> np.ndarray:
    """``Delta_f psi + |nabla psi|^2 / c psi``."""
    return sp.laplacian_f_spinor(s.psi, s.geo, s.f, s.jet) + s.jet.norm2 / c * s.psi


def el_residuals(grid, g, f, psi, const: FlowConstants, **kw) -> ELReport:
    s = snapshot(grid, g, f, psi, const.tau, **kw)
    tau, lam, c, n = const.tau, const.lam, const.c, grid.n
    st = s.tensors()
    mass = s.integrate(np.ones(grid.shape))
    dfpsi = s.dirac_f()
    d2 = s.dirac_f2()
    beta = 4 / c * s.integrate(np.sum(np.abs(dfpsi) ** 2, axis=0))
    combo = tau * s.wops.R_f + lam * (f - n)
    alpha = lam - s.integrate(combo) / mass
    metric = metric_soliton_operator(s, const, st.V, st)
    spinor = projected_spinor_operator(s, c)
    eigen = d2 - beta / 4 * psi
    scalar = combo - (lam - alpha)
    lagrange = (tau * s.wops.R_f + lam * (f - n - 1) + alpha + beta * s.mod2
                - 4 * _re_pair(d2, psi))
    div_t = s.wops.divergence_tensor3(st.T)
    soliton = ((1 - c / tau) * s.wops.ric_f - lam / (2 * tau) * g
               - 2 / tau * div_t - 4 / tau * st.P)
    rep = ELReport(metric, spinor, eigen, scalar, lagrange, soliton, float(beta), float(alpha))
    rep.norms = {
        "metric_residual": float(np.sqrt(s.integrate(s.geo.pair(metric, metric)) / mass)),
        "spinor_residual": float(np.sqrt(s.integrate(np.sum(np.abs(spinor) ** 2, 0)) / mass)),
        "eigen_residual": float(np.sqrt(s.integrate(np.sum(np.abs(eigen) ** 2, 0)) / mass)),
        "scalar_residual": float(np.sqrt(s.integrate(scalar**2) / mass)),
        "soliton_residual": float(np.sqrt(s.integrate(s.geo.pair(soliton, soliton)) / mass)),
    }
    return rep


def constrained_direction(grid, g, f, psi, const: FlowConstants, d: VariationDirection) -> VariationDirection:
    """Adjust ``d`` (with ``tau_dot = 0``) so both constraint integrals are stationary.

    A constant is added to ``f_dot`` to fix ``int dOmega``; then a real
    multiple of ``psi`` is added to ``psi_dot`` to fix ``int |psi|^2 dOmega``.
    """
    s = snapshot(grid, g, f, psi, const.tau)
    d = VariationDirection(d.g_dot, d.f_dot, d.psi_dot, 0.0)
    mass = s.integrate(np.ones(grid.shape))
    f_dot = d.f_dot + s.integrate(measure_rate(s, d)) / mass
    d = VariationDirection(d.g_dot, f_dot, d.psi_dot, 0.0)
    rate = measure_rate(s, d)
    j_rate = s.integrate(2 * _re_pair(d.psi_dot, psi) + rate * s.mod2)
    k = -j_rate / (2 * s.integrate(s.mod2))
    return VariationDirection(d.g_dot, f_dot, d.psi_dot + k * psi, 0.0)


def el_pairing(grid, g, f, psi, const: FlowConstants, report: ELReport, d: VariationDirection) -> float:
    """``int {tau <g_dot, E_g> + 8 Re<E_psi, psi_dot> - rate * E_scalar} dOmega``.

    Equals the first variation on constraint-tangent directions.
    """
    s = snapshot(grid, g, f, psi, const.tau)
    rate = measure_rate(s, d)
    return s.integrate(const.tau * s.geo.pair(d.g_dot, report.metric_residual)
                       + 8 * _re_pair(report.eigen_residual, d.psi_dot)
                       - rate * report.lagrange_residual)


# -- critical point identities and regimes --------------------------------------------

def critical_identities(grid, g, f, psi, const: FlowConstants, **kw) -> tuple[float, float, float, float]:
    s = snapshot(grid, g, f, psi, const.tau, **kw)
    tau, lam, c, n = const.tau, const.lam, const.c, grid.n
    dirac2 = s.integrate(np.sum(np.abs(s.dirac_f()) ** 2, axis=0))
    grad2 = s.integrate(s.jet.norm2)
    lhs1 = s.integrate(s.wops.R_f)
    rhs1 = n * lam / (2 * tau) + 4 / tau * dirac2
    lhs2 = (1 - c / tau) * dirac2
    rhs2 = n * c * lam / (8 * tau) + grad2
    return lhs1, rhs1, lhs2, rhs2


REGIMES = ("fully_forward", "degenerate", "backward_forward")


@dataclass
class RegimeReport:
    regime: str
    f_coefficient: float
    lambda_admissible: bool
    conditions: dict

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def regime_classify(const: FlowConstants, n: int = 2, grad_psi2: float | None = None,
                    rtol: float = 1e-12) -> RegimeReport:
    """Classify ``(c, tau)`` and list what a critical point would have to satisfy.

    ``grad_psi2`` (the value of ``int |nabla psi|^2 dOmega``) is optional and
    only used to evaluate the backward-forward necessary condition.
    """
    tau, c, lam = const.tau, const.c, const.lam
    coeff = c / tau - 1.0
    cond: dict = {}
    if np.isclose(c, tau, rtol=rtol, atol=0):
        regime = "degenerate"
        ok = lam <= 0
        cond["grad_psi2_required"] = -n * lam / 8
        cond["parallel_if_lambda_zero"] = True
    elif c > tau:
        regime = "fully_forward"
        ok = lam <= 0
        cond["parallel_if_lambda_zero"] = True
    else:
        regime = "backward_forward"
        ok = True
        cond["necessary_lower"] = n * c * lam / (8 * tau)
        if lam > 0:
            cond["dirac_energy_lower_bound"] = n * c * lam / (8 * (tau - c))
        if grad_psi2 is not None:
            cond["necessary_condition_holds"] = bool(n * c * lam / (8 * tau) + grad_psi2 >= 0)
            ok = cond["necessary_condition_holds"]
    return RegimeReport(regime, coeff, bool(ok), cond)
