"""Spinorial Ricci flow: ungauged and DeTurck-gauged right-hand sides, RK4
time stepping and per-step monitors.

The state carries an orthonormal frame.  Spinor components are taken in
that frame and the frame follows ``d/dt e_a = -1/2 g^{-1} gdot e_a``, so
``psi_dot`` is the derivative seen by the variation formulas.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .functionals import FlowConstants, Snapshot, snapshot, w_lambda_integrand
from .geometry import (NotSPDError, christoffel_symbols, deturck_vector, lie_derivative_metric,
                       orthonormal_frame)
from .grid import Grid, fieldwise, pointwise
from .symbols import spectral_radius_bound
from .variation import metric_soliton_operator
from . import spinor as sp


class RegimeError(ValueError):
    """Forward marching requested outside the fully forward regime ``c > tau``."""


class StepRejected(RuntimeError):
    pass


PSI_FLOOR = 1e-8  # relative to c


@dataclass(frozen=True)
class FlowState:
    grid: Grid
    g: np.ndarray
    f: np.ndarray
    psi: np.ndarray
    t: float
    const: FlowConstants
    g0: np.ndarray
    frame: np.ndarray | None = None
    scheme: str = "spectral"

    def __post_init__(self):
        if self.frame is None:
            object.__setattr__(self, "frame", orthonormal_frame(self.g))

    def snapshot(self) -> Snapshot:
        return snapshot(self.grid, self.g, self.f, self.psi, self.const.tau,
                        scheme=self.scheme, frame=self.frame)


@dataclass
class FlowRHS:
    g_dot: np.ndarray
    f_dot: np.ndarray
    psi_dot: np.ndarray


def _check_psi(s: Snapshot, c: float) -> None:
    if np.min(s.mod2) < PSI_FLOOR * c:
        raise StepRejected(f"|psi|^2 fell below {PSI_FLOOR * c:.1e}")


def ungauged_rhs(state: FlowState) -> FlowRHS:
    """``g_dot = -2 E_g``, the scalar equation with ``div V_f``, ``psi_dot = P_psi``."""
    s = state.snapshot()
    const = state.const
    _check_psi(s, const.c)
    tau, lam, n = const.tau, const.lam, state.grid.n
    st = s.tensors()
    g_dot = -2 * metric_soliton_operator(s, const, st.Vf, st)
    f_dot = (-s.geo.laplacian(s.f) - s.geo.R + lam * n / (2 * tau)
             + 4 / tau * s.geo.trace(st.S) + 2 / tau * s.geo.divergence(st.Vf))
    psi_dot = (sp.laplacian_f_spinor(s.psi, s.geo, s.f, s.jet)
               + s.jet.norm2 / s.mod2 * s.psi)
    return FlowRHS(g_dot, f_dot, psi_dot)


def gauge_vector(state: FlowState, s: Snapshot | None = None, tensors=None) -> np.ndarray:
    """``X = W - (2/tau) V_f + grad f``: the gauged flow is the ungauged one pushed along ``X``."""
    s = s or state.snapshot()
    st = tensors or s.tensors()
    w = deturck_vector(state.grid, state.g, state.g0, state.scheme)
    return w - 2 / state.const.tau * st.Vf + s.wops.grad_f


def gauged_rhs(state: FlowState) -> FlowRHS:
    s = state.snapshot()
    const = state.const
    _check_psi(s, const.c)
    grid, geo = state.grid, s.geo
    tau, lam, n = const.tau, const.lam, grid.n
    st = s.tensors()
    w = deturck_vector(grid, state.g, state.g0, state.scheme)
    grad_f = s.wops.grad_f
    weight = 1 - s.mod2 / tau
    g_dot = (-2 * geo.ric + lie_derivative_metric(grid, w, state.g, state.scheme)
             + 4 / tau * st.S + lam / tau * state.g)
    f_dot = (-weight * geo.laplacian(s.f) - geo.R + lam * n / (2 * tau)
             + 4 / tau * geo.trace(st.S) + 2 / tau * geo.divergence(st.U)
             + weight * geo.norm2_vector(grad_f)
             + np.einsum("i...,ij...,j...->...", grad_f, state.g, w - 2 / tau * st.U))
    x = w - 2 / tau * st.U
    psi_dot = (sp.laplacian_f_spinor(s.psi, geo, s.f, s.jet)
               + s.jet.norm2 / s.mod2 * s.psi
               + weight * np.einsum("i...,ip...->p...", grad_f, s.jet.coords)
               + sp.kosmann_lie(x, s.psi, geo, s.jet))
    return FlowRHS(g_dot, f_dot, psi_dot)


# -- lower-order decomposition ---------------------------------------------------

def _background_second_derivative(grid: Grid, g0: np.ndarray, field_: np.ndarray,
                                  rank: int, scheme: str) -> np.ndarray:
    """``g^{kl} hat-nabla_k hat-nabla_l`` applied with ``g0``'s Christoffel symbols.

    ``rank`` counts covariant slots (2 for the metric); for spinors pass 0 and
    a leading spinor axis is treated as a passive component index.
    """
    gam = christoffel_symbols(grid, g0, None, scheme)

    def nabla(t, r):
        d = grid.gradient(t, scheme)  # d[l, ...]
        for slot in range(r):
            # subtract Gamma^m_{l slot} t_{.. m ..}
            moved = np.moveaxis(t, slot, 0)
            corr = np.einsum("mls...,m...->ls...", gam, moved)
            d = d - np.moveaxis(corr, 1, slot + 1)
        return d

    first = nabla(field_, rank)
    return first, nabla(first, rank + 1)


def lower_order_decomposition(state: FlowState, a_coefficient: float = 0.5):
    """``(F, G, H)``: gauged right-hand sides minus their principal parts.

    ``F = g_dot - g^{kl} hat-nabla_k hat-nabla_l g``,
    ``G = f_dot + (1 - |psi|^2/tau) Delta f``,
    ``H = psi_dot - A(psi)^{kl} hat-nabla_k hat-nabla_l psi``.

    ``a_coefficient`` multiplies the ``1/tau`` coupling inside ``A``; the
    default ``1/2`` is the value that matches the spinor operator as
    implemented (geometric Kosmann derivative).
    """
    grid = state.grid
    rhs = gauged_rhs(state)
    s = state.snapshot()
    g_inv = s.geo.g_inv
    _, hess_g = _background_second_derivative(grid, state.g0, state.g, 2, state.scheme)
    F = rhs.g_dot - np.einsum("kl...,klij...->ij...", g_inv, hess_g)
    G = rhs.f_dot + (1 - s.mod2 / state.const.tau) * s.geo.laplacian(state.f)
    _, hess_psi = _background_second_derivative(grid, state.g0, state.psi, 0, state.scheme)
    a_term = apply_a(state.psi, s.geo, state.const.tau, hess_psi, a_coefficient)
    H = rhs.psi_dot - a_term
    return F, G, H


def apply_a(psi: np.ndarray, geo, tau: float, hess_psi: np.ndarray, coefficient: float) -> np.ndarray:
    """``A(psi)^{kl} hess_psi[k, l]`` with the coercive ordering ``e_k e_a``.

    ``A^{kl} s = g^{kl} s + (coefficient/tau) sum_a Re<psi, e_a c^l s> c^k e_a psi``
    where ``c^k = sum_b e_b^k gamma_b`` is Clifford multiplication by the
    raised coordinate covector.  ``hess_psi`` has shape ``(n, n, m) + grid``.
    """
    gam = geo.rep.gammas
    ck = np.einsum("bk...,bpq->kpq...", geo.frame, gam)
    base = np.einsum("kl...,klp...->p...", geo.g_inv, hess_psi)
    c_s = np.einsum("lpq...,klq...->kp...", ck, hess_psi)
    ga_c_s = np.einsum("apq,kq...->akp...", gam, c_s)
    v = np.sum(np.real(psi.conj()[None, None] * ga_c_s), axis=2)
    ga_psi = np.einsum("apq,q...->ap...", gam, psi)
    coupling = np.einsum("ak...,kpq...,aq...->p...", v, ck, ga_psi)
    return base + coefficient / tau * coupling


# -- time stepping -----------------------------------------------------------------

def _lowdin(frame: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Closest ``g``-orthonormal frame: ``E <- (E g E^T)^{-1/2} E``."""
    gram = pointwise(np.einsum("ai...,ij...,bj...->ab...", frame, g, frame), 2)
    w, q = np.linalg.eigh(gram)
    root = np.einsum("...ia,...a,...ja->...ij", q, w**-0.5, q)
    return fieldwise(np.einsum("...ab,...bi->...ai", root, pointwise(frame, 2)), 2)


def _frame_rate(frame: np.ndarray, g: np.ndarray, g_dot: np.ndarray) -> np.ndarray:
    """``d/dt e_a^i = -1/2 g^{ij} gdot_jk e_a^k``."""
    g_inv = fieldwise(np.linalg.inv(pointwise(g, 2)), 2)
    return -0.5 * np.einsum("ij...,jk...,ak...->ai...", g_inv, g_dot, frame)


def _advance(state: FlowState, k: FlowRHS, frame_rate: np.ndarray, dt: float) -> FlowState:
    return replace(state, g=state.g + dt * k.g_dot, f=state.f + dt * k.f_dot,
                   psi=state.psi + dt * k.psi_dot, frame=state.frame + dt * frame_rate,
                   t=state.t + dt)


def _stage(state: FlowState, rhs):
    k = rhs(state)
    return k, _frame_rate(state.frame, state.g, k.g_dot)


def require_forward(const: FlowConstants) -> None:
    if not const.c > const.tau:
        raise RegimeError(
            f"c={const.c} <= tau={const.tau}: the f-equation is backward parabolic "
            "(backward-forward regime); forward marching is refused")


def step_rk4(state: FlowState, dt: float, rhs=gauged_rhs, psi_tol: float = 1e-4) -> FlowState:
    """One classical RK4 step of the gauged system."""
    require_forward(state.const)
    if not dt > 0:
        raise ValueError("dt must be positive")
    try:
        k1, r1 = _stage(state, rhs)
        k2, r2 = _stage(_advance(state, k1, r1, dt / 2), rhs)
        k3, r3 = _stage(_advance(state, k2, r2, dt / 2), rhs)
        k4, r4 = _stage(_advance(state, k3, r3, dt), rhs)
    except (NotSPDError, np.linalg.LinAlgError) as exc:
        raise StepRejected(f"intermediate stage lost metric positivity at t={state.t:.6g}") from exc
    comb = FlowRHS(*[(a + 2 * b + 2 * c + d) / 6 for a, b, c, d in zip(
        (k1.g_dot, k1.f_dot, k1.psi_dot), (k2.g_dot, k2.f_dot, k2.psi_dot),
        (k3.g_dot, k3.f_dot, k3.psi_dot), (k4.g_dot, k4.f_dot, k4.psi_dot))])
    frame_rate = (r1 + 2 * r2 + 2 * r3 + r4) / 6
    new = _advance(state, comb, frame_rate, dt)
    g = 0.5 * (new.g + np.swapaxes(new.g, 0, 1))
    if not all(np.all(np.isfinite(a)) for a in (g, new.f, new.psi)):
        raise StepRejected(f"non-finite values at t={new.t:.6g}")
    try:
        frame = _lowdin(new.frame, g)
        orthonormal_frame(g)
    except (NotSPDError, np.linalg.LinAlgError) as exc:
        raise StepRejected(f"metric lost positivity at t={new.t:.6g}") from exc
    dev = np.max(np.abs(np.sum(np.abs(new.psi) ** 2, axis=0) - state.const.c))
    if dev > psi_tol * state.const.c:
        raise StepRejected(f"|psi|^2 drifted by {dev:.3e} at t={new.t:.6g}")
    return replace(new, g=g, frame=frame)


RK4_REAL_LIMIT = 2.785  # stability interval of classical RK4 on the negative real axis


def default_dt(grid: Grid, const: FlowConstants | None = None, sigma: float = 0.1,
               safety: float = 0.8) -> float:
    """``sigma h^2``, capped by the RK4 limit for the stiffest resolved mode.

    With ``const`` the cap uses the spectral Laplacian radius ``n (pi res)^2``
    times the symbol bound of the coupled system, which exceeds ``|xi|^2``
    once the spinor coupling is on.
    """
    dt = sigma * grid.h**2
    if const is not None:
        radius = grid.n * (np.pi * grid.res) ** 2 * spectral_radius_bound(const)
        dt = min(dt, safety * RK4_REAL_LIMIT / radius)
    return dt


# -- monitors --------------------------------------------------------------------------

@dataclass
class MonitorRecord:
    t: float
    W_lambda: float
    dissipation: float
    mass: float
    psi_norm_dev: float
    regime_coeff: float
    mass_rate: float = math.nan
    step_accepted: bool = True
    dW_dt: float = math.nan
    gap: float = math.nan


CSV_COLUMNS = ("t", "W_lambda", "dissipation", "mass", "mass_rate", "psi_norm_dev",
               "regime_coeff", "accepted")


def monitor(state: FlowState) -> MonitorRecord:
    """Entropy, the claimed dissipation rate and constraint diagnostics at ``state``."""
    s = state.snapshot()
    const = state.const
    st = s.tensors()
    metric = metric_soliton_operator(s, const, st.Vf, st)
    spinor = sp.laplacian_f_spinor(s.psi, s.geo, s.f, s.jet) + s.jet.norm2 / s.mod2 * s.psi
    diss = s.integrate(2 * const.tau * s.geo.pair(metric, metric)
                       + 8 * np.sum(np.abs(spinor) ** 2, axis=0))
    return MonitorRecord(
        t=state.t, W_lambda=s.integrate(w_lambda_integrand(s, const.lam)), dissipation=diss,
        mass=s.integrate(np.ones(state.grid.shape)),
        mass_rate=s.integrate(-2 / const.tau * s.geo.trace(st.S)),
        psi_norm_dev=float(np.max(np.abs(s.mod2 - const.c))),
        regime_coeff=1 - const.c / const.tau,
    )


@dataclass
class TraceDefect:
    """Terms the ungauged system adds to the entropy and mass rates.

    ``1/2 tr g_dot - f_dot = -(2/tau) tr S`` pointwise, so ``dOmega`` is not
    preserved and ``dW/dt = -dissipation + entropy_term``.
    """

    entropy_term: float
    mass_rate: float


def trace_defect(state: FlowState) -> TraceDefect:
    s = state.snapshot()
    const = state.const
    tr_s = s.geo.trace(s.tensors().S)
    rate = -2 / const.tau * tr_s
    lagrange = (4 * np.sum(np.real(s.dirac_f2().conj() * s.psi), axis=0)
                - const.tau * s.wops.R_f - const.lam * (s.f - state.grid.n - 1))
    return TraceDefect(s.integrate(rate * lagrange), s.integrate(rate))


@dataclass
class FlowRun:
    records: list[MonitorRecord]
    final: FlowState
    monotone: bool
    max_gap: float
    max_psi_dev: float
    mass_drift: float
    error: str | None = None


def run_with_monitors(state: FlowState, dt: float | None = None, n_steps: int = 200,
                      tol: float = 1e-8, callback=None) -> FlowRun:
    """March the gauged system and record per-step diagnostics.

    ``gap`` compares the forward difference of the entropy over a step with
    the trapezoidal average of the claimed dissipation at its ends.
    """
    require_forward(state.const)
    dt = default_dt(state.grid, state.const) if dt is None else dt
    records = [monitor(state)]
    error = None
    for _ in range(n_steps):
        try:
            state = step_rk4(state, dt)
        except StepRejected as exc:
            records.append(replace(records[-1], step_accepted=False))
            error = str(exc)
            break
        rec = monitor(state)
        prev = records[-1]
        rec.dW_dt = (rec.W_lambda - prev.W_lambda) / dt
        avg = 0.5 * (rec.dissipation + prev.dissipation)
        rec.gap = abs(rec.dW_dt + avg) / abs(avg) if avg != 0 else abs(rec.dW_dt)
        rec.step_accepted = rec.W_lambda <= prev.W_lambda + tol * (1 + abs(prev.W_lambda))
        records.append(rec)
        if callback is not None:
            callback(rec)
    steps = records[1:]
    monotone = all(r.step_accepted for r in steps) and error is None
    gaps = [r.gap for r in steps if not math.isnan(r.gap)]
    return FlowRun(records, state, monotone, max(gaps, default=0.0),
                   max(r.psi_norm_dev for r in records),
                   records[-1].mass - records[0].mass, error)


def write_csv(path, records: list[MonitorRecord], config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([repr(r.t), repr(r.W_lambda), repr(r.dissipation), repr(r.mass),
                        repr(r.mass_rate), repr(r.psi_norm_dev), repr(r.regime_coeff),
                        int(r.step_accepted)])


# -- initial data -------------------------------------------------------------------------

def perturbed_flat_state(grid: Grid, const: FlowConstants, seed: int = 0, amp: float = 1e-2,
                         kmax: int = 2, g0: np.ndarray | None = None) -> FlowState:
    """Seeded start near the flat critical point with ``|psi|^2 = c`` exactly.

    ``g = delta + amp * h``, ``f`` is a perturbation shifted so ``int dOmega = 1``
    and ``psi = sqrt(c) exp(i phi.sigma) chi`` for a band-limited ``phi``.
    """
    from scipy.linalg import expm

    from .clifford import PAULI

    g = grid.random_band_limited(seed, kmax, amp, "sym2") + np.eye(grid.n).reshape(
        (grid.n, grid.n) + (1,) * grid.n)
    f = grid.random_band_limited(seed + 1, kmax, amp)
    dens = grid.weighted_measure(g, f, const.tau)
    f = f + np.log(grid.integrate(np.ones(grid.shape), dens))
    phi = grid.random_band_limited(seed + 2, kmax, amp, "vector") if grid.n == 3 else \
        np.concatenate([grid.random_band_limited(seed + 2, kmax, amp, "vector"),
                        grid.random_band_limited(seed + 3, kmax, amp)[None]])
    gen = np.einsum("a...,apq->...pq", phi, PAULI)
    unit = np.array([expm(1j * h) for h in gen.reshape(-1, 2, 2)]).reshape(gen.shape)
    chi = np.array([1.0, 0.0], dtype=complex)
    psi = math.sqrt(const.c) * np.moveaxis(unit @ chi, -1, 0)
    return FlowState(grid, g, f, psi, 0.0, const, g.copy() if g0 is None else g0)


def critical_state(grid: Grid, const: FlowConstants) -> FlowState:
    """Flat metric, constant ``f`` with unit mass, constant ``psi`` with ``|psi|^2 = c``."""
    g = np.broadcast_to(np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n),
                        (grid.n, grid.n) + grid.shape).copy()
    f = np.full(grid.shape, -0.5 * grid.n * math.log(4 * math.pi * const.tau))
    psi = np.zeros((2,) + grid.shape, dtype=complex)
    psi[0] = math.sqrt(const.c)
    return FlowState(grid, g, f, psi, 0.0, const, g.copy())
