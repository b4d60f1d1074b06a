"""Command-line driver: identity suites, variation oracles, flow runs,
symbol reports, spectra and convergence tables.

Exit status: 0 when every check passes, 1 when any check fails (details in
the report), 2 for configuration or regime errors.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import flow as fl
from . import functionals as fn
from . import spinor as sp
from . import symbols as sy
from . import variation as va
from .clifford import build_rep
from .geometry import GeometryCache, WeightedOps, lie_derivative_metric
from .grid import Grid, GridError, constant_field, identity_field, save_field

COMMANDS = ("verify", "variation", "flow", "symbols", "spectrum", "convergence")

DEFAULTS = {
    "command": "verify",
    "grid": {"n": 2, "res": 64},
    "scheme": "spectral",
    "seeds": [0, 1, 2, 3, 4],
    "amp": 0.05,
    "constants": {"tau": 1.0, "lambda": 0.0, "c": 2.0},
    "flow": {"dt": None, "steps": 200, "amp": 0.01, "start": "perturbed",
             "gap_tol": 5e-3, "psi_tol": 1e-6},
    "variation": {"eps": [1e-2, 1e-3, 1e-4]},
    "symbols": {"N": [8, 16, 32], "epsilon": 1e-4, "pairing_samples": 100},
    "spectrum": {"res": 16, "samples": 20},
    "output_dir": "spinflow_out",
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("spinflow").joinpath("config_schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(raw: dict | None = None, command: str | None = None, output: str | None = None,
                   seed: int | None = None) -> dict:
    """Validate ``raw`` against the schema, apply overrides and fill defaults."""
    raw = dict(raw or {})
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if command is not None:
        cfg["command"] = command
    if output is not None:
        cfg["output_dir"] = output
    if seed is not None:
        cfg["seeds"] = [seed]
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (the output directory does not)."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _constants(cfg: dict) -> fn.FlowConstants:
    c = cfg["constants"]
    return fn.FlowConstants(tau=c["tau"], lam=c["lambda"], c=c["c"])


def _grid(cfg: dict) -> Grid:
    return Grid(cfg["grid"]["n"], cfg["grid"]["res"])


def _check(name: str, value: float, tol: float, **extra) -> dict:
    value = float(value)
    return {"name": name, "value": value, "tol": tol,
            "passed": bool(math.isfinite(value) and value <= tol), **extra}


def _sup(a) -> float:
    return float(np.max(np.abs(a)))


# -- verify -----------------------------------------------------------------------------

def _algebra_checks(n: int) -> list[dict]:
    rep = build_rep(n)
    gam = rep.gammas
    m = rep.m
    anti = np.einsum("apq,bqr->abpr", gam, gam) + np.einsum("bpq,aqr->abpr", gam, gam)
    target = -2 * np.einsum("ab,pr->abpr", np.eye(n), np.eye(m))
    skew = gam + np.conj(np.swapaxes(gam, 1, 2))
    return [_check("clifford_relations", _sup(anti - target), 1e-14),
            _check("clifford_skew_adjoint", _sup(skew), 1e-14)]


def verify_seed(grid: Grid, seed: int, amp: float, scheme: str = "spectral") -> list[dict]:
    """Pointwise and integral identities at one seeded configuration."""
    g, f, psi = fn.random_configuration(grid, seed, amp)
    geo = GeometryCache(grid, g, scheme)
    wops = WeightedOps(geo, f)
    jet = sp.covariant_derivative_spinor(psi, geo)
    st = sp.spinor_tensors(psi, geo, f, jet)
    out = []

    gram = np.einsum("ai...,ij...,bj...->ab...", geo.frame, g, geo.frame)
    out.append(_check("frame_orthonormality", _sup(gram - np.eye(grid.n).reshape(
        (grid.n, grid.n) + (1,) * grid.n)), 1e-12))
    out.append(_check("connection_antisymmetry",
                      _sup(geo.omega + np.swapaxes(geo.omega, 1, 2)) / _sup(geo.omega), 1e-7))
    mod2 = np.sum(np.abs(psi) ** 2, axis=0)
    compat = geo.d(mod2) - 2 * np.sum(np.real(psi.conj()[None] * jet.coords), axis=1)
    out.append(_check("spinor_metric_compatibility", _sup(compat) / _sup(geo.d(mod2)), 1e-7))

    d2 = sp.dirac_f(sp.dirac_f(psi, geo, f, jet), geo, f)
    lap = sp.laplacian_f_spinor(psi, geo, f, jet)
    scale = _sup(d2) + _sup(lap) + _sup(0.25 * wops.R_f * psi)
    out.append(_check("weitzenbock", _sup(sp.weitzenbock_residual(psi, geo, wops)) / scale, 1e-7))

    res_t = sp.div_f_T_identity_residual(psi, geo, wops, jet, st)
    scale = _sup(wops.divergence_tensor3(st.T)) + 2 * _sup(st.P) + _sup(st.S)
    out.append(_check("div_f_T", _sup(res_t) / scale, 1e-7))
    out.append(_check("V_equals_V_f", _sup(st.V - st.Vf) / _sup(st.V), 1e-10))

    const = fn.FlowConstants(tau=0.7, lam=0.3, c=2.0)
    a = fn.w_lambda(grid, g, f, psi, const, scheme=scheme)
    b = fn.w_lambda_dirac_form(grid, g, f, psi, const, scheme=scheme)
    out.append(_check("w_lambda_two_forms", abs(a - b) / abs(a), 1e-9))
    a, b = fn.bo_energy(grid, g, f, psi, scheme), fn.bo_energy_dirac_form(grid, g, f, psi, scheme)
    out.append(_check("bo_energy_two_forms", abs(a - b) / abs(a), 1e-9))
    w0 = fn.w_lambda(grid, g, f, psi, fn.FlowConstants(tau=1.0, lam=0.0), scheme=scheme)
    bo = fn.bo_energy(grid, g, f, psi, scheme)
    out.append(_check("w0_tau1_equals_bo", abs(w0 - (4 * np.pi) ** (-grid.n / 2) * bo) / abs(w0), 1e-9))

    # diffeomorphism invariance: first variation vanishes along (L_X g, X f, L_X psi)
    x = grid.random_band_limited(seed + 7, 2, 1.0, "vector")
    d = va.VariationDirection(lie_derivative_metric(grid, x, g, scheme),
                              np.einsum("i...,i...->...", x, geo.d(f)),
                              sp.kosmann_lie(x, psi, geo, jet))
    s = fn.snapshot(grid, g, f, psi, const.tau, scheme=scheme)
    integrand = va.first_variation_integrand(s, const, d)
    out.append(_check("diffeomorphism_invariance", abs(s.integrate(integrand)) /
                      s.integrate(np.abs(integrand)), 1e-9))

    if grid.n == 2:
        out.append(_check("gauss_bonnet", abs(grid.integrate(geo.R, geo.volume)) /
                          grid.integrate(np.abs(geo.R), geo.volume), 1e-9))

    # restriction identities on Dirac-kernel spinors
    gk, fk, psik = fn.conformal_kernel_configuration(grid, seed, amp)
    geok = GeometryCache(grid, gk, scheme)
    out.append(_check("dirac_kernel", _sup(sp.dirac_f(psik, geok, fk)) / _sup(sp.dirac(psik, geok)), 1e-9))
    tau = 0.4
    F, W = fn.classical_functionals(grid, gk, fk, tau, scheme)
    w1 = fn.w_lambda(grid, gk, fk, psik, fn.FlowConstants(tau=tau, lam=1.0), scheme=scheme)
    out.append(_check("restriction_W1", abs(w1 + W) / abs(W), 1e-9))
    w0 = fn.w_lambda(grid, gk, fk, psik, fn.FlowConstants(tau=tau, lam=0.0), scheme=scheme)
    ref = -tau * (4 * np.pi * tau) ** (-grid.n / 2) * F
    out.append(_check("restriction_W0", abs(w0 - ref) / max(abs(ref), abs(w0)), 1e-9))
    return [dict(c, seed=seed) for c in out]


def _summarize(checks: list[dict]) -> dict:
    names: dict[str, dict] = {}
    for c in checks:
        row = names.setdefault(c["name"], {"name": c["name"], "max_value": 0.0, "tol": c["tol"],
                                           "passed": True, "count": 0})
        row["max_value"] = max(row["max_value"], c["value"])
        row["passed"] = row["passed"] and c["passed"]
        row["count"] += 1
    return {"checks": list(names.values()), "n_checks": len(names),
            "all_passed": all(r["passed"] for r in names.values())}


def cmd_verify(cfg: dict, out: Path) -> dict:
    grid = _grid(cfg)
    checks = _algebra_checks(grid.n)
    for seed in cfg["seeds"]:
        checks += verify_seed(grid, seed, cfg["amp"], cfg["scheme"])
    report = _summarize(checks)
    report["details"] = checks
    return report


# -- variation --------------------------------------------------------------------------

def cmd_variation(cfg: dict, out: Path) -> dict:
    grid, const = _grid(cfg), _constants(cfg)
    eps = cfg["variation"]["eps"]
    checks, cases = [], []
    for seed in cfg["seeds"]:
        g, f, psi = fn.random_configuration(grid, seed, cfg["amp"])
        d = va.random_direction(grid, seed + 100, tau_dot=0.1)
        vc = va.first_variation_check(grid, g, f, psi, const, d, eps=tuple(eps))
        evo = va.integral_evolution_check(grid, g, f, psi, const, d, eps=eps[-1])
        cases.append({"seed": seed, "formula": vc.formula, "eps": vc.eps, "numeric": vc.numeric,
                      "rel_errors": vc.rel_errors, "order": vc.order,
                      "evolution": [e.__dict__ for e in evo]})
        checks.append(_check("first_variation", vc.rel_errors[-1], 1e-5, seed=seed))
        checks.append(_check("first_variation_order", abs(vc.order - 2), 0.2, seed=seed))
        for e in evo:
            checks.append(_check(f"evolution_{e.name}", e.relative, 1e-6, seed=seed))
    report = _summarize(checks)
    report["cases"] = cases
    return report


# -- flow -------------------------------------------------------------------------------

def cmd_flow(cfg: dict, out: Path, chash: str) -> dict:
    grid, const = _grid(cfg), _constants(cfg)
    fl.require_forward(const)
    fcfg = cfg["flow"]
    if fcfg["start"] == "critical":
        state = fl.critical_state(grid, const)
    else:
        state = fl.perturbed_flat_state(grid, const, seed=cfg["seeds"][0], amp=fcfg["amp"])
    dt = fcfg["dt"] if fcfg["dt"] is not None else fl.default_dt(grid, const)
    defect = fl.trace_defect(state)
    run = fl.run_with_monitors(state, dt, fcfg["steps"])
    fl.write_csv(out / "flow.csv", run.records, chash)
    for name, fld, kind in (("g", run.final.g, "sym2"), ("f", run.final.f, "scalar"),
                            ("psi", run.final.psi, "spinor")):
        save_field(out / f"final_{name}", fld, grid, kind)
    w = [r.W_lambda for r in run.records]
    checks = [
        _check("monotone", 0.0 if run.monotone else 1.0, 0.0),
        _check("dissipation_gap", run.max_gap, fcfg["gap_tol"]),
        _check("psi_norm_deviation", run.max_psi_dev, fcfg["psi_tol"]),
    ]
    report = _summarize(checks)
    report.update({
        "dt": dt, "steps_completed": len(run.records) - 1, "error": run.error,
        "W_lambda_initial": w[0], "W_lambda_final": w[-1],
        "mass_initial": run.records[0].mass, "mass_final": run.records[-1].mass,
        "mass_drift": run.mass_drift,
        "normalization_preserved": bool(abs(run.mass_drift) <= 1e-10),
        "initial_trace_defect": defect.__dict__,
    })
    return report


# -- symbols ----------------------------------------------------------------------------

def cmd_symbols(cfg: dict, out: Path) -> dict:
    scfg = cfg["symbols"]
    const = _constants(cfg)
    n = cfg["grid"]["n"]
    if n != 2:
        raise ConfigError("grid symbol probes are implemented for n = 2")
    checks, comparisons = [], []
    rng = np.random.default_rng(cfg["seeds"][0])
    probe = sy.random_probe(rng, n, c=const.c, integer_xi=True)
    for convention in sy.CONVENTIONS:
        for tag in sy.OPERATOR_TAGS:
            errs = []
            for N in scfg["N"]:
                cmp_ = sy.compare(tag, probe, N, scfg["epsilon"], const.tau, convention)
                comparisons.append(cmp_.__dict__)
                errs.append(cmp_.rel_error)
            checks.append(_check(f"symbol_{tag}_{convention}", errs[-1], 0.05))
            growth = max(b - a for a, b in zip(errs, errs[1:])) if len(errs) > 1 else 0.0
            checks.append(_check(f"symbol_{tag}_{convention}_non_increasing", max(growth, 0.0), 1e-7))
    worst = 0.0
    for _ in range(scfg["pairing_samples"]):
        worst = max(worst, sy.pairing_identities(sy.random_probe(rng, n, c=const.c)).max())
    checks.append(_check("pairing_identities", worst, 1e-12))
    rep = build_rep(n)
    coercivity = {}
    for ordering, coef in (("literal", 1.0), ("coercive", 0.5)):
        worst_c = math.inf
        for _ in range(20):
            psi = sy.random_probe(rng, n, c=const.c).psi
            for theta in np.linspace(0, 2 * np.pi, 5)[:-1]:
                blk = sy.a_endomorphism(np.exp(1j * theta) * psi, rep, const.tau,
                                        ordering=ordering, coefficient=coef)
                worst_c = min(worst_c, blk.coercivity)
        checks.append(_check(f"a_coercivity_{ordering}", max(1.0 - worst_c, 0.0), 1e-12,
                             coercivity=worst_c))
        coercivity[ordering] = worst_c
    report = _summarize(checks)
    report["a_coercivity"] = coercivity
    report["comparisons"] = json.loads(json.dumps(comparisons, default=sy._to_list))
    report["parabolicity"] = json.loads(sy.parabolicity_report(const, n=n).to_json())
    report["regime"] = json.loads(va.regime_classify(const, n).to_json())
    return report


# -- spectrum ---------------------------------------------------------------------------

def cmd_spectrum(cfg: dict, out: Path) -> dict:
    n = cfg["grid"]["n"]
    grid = Grid(n, cfg["spectrum"]["res"])
    flat = fn.dirac_spectrum(GeometryCache(grid, identity_field(grid)), count=8)
    checks = [_check("flat_kernel", flat[0], 1e-10),
              _check("flat_least_nonzero", abs(fn.least_nonzero(flat) - 2 * np.pi), 1e-6)]
    diag = np.ones(n)
    diag[-1] = 0.25
    rect = fn.dirac_spectrum(GeometryCache(grid, constant_field(grid, np.diag(diag))), count=8)
    checks.append(_check("rectangular_least_nonzero", abs(fn.least_nonzero(rect) - 2 * np.pi), 1e-6))
    samples = []
    base = cfg["seeds"][0]
    for k in range(cfg["spectrum"]["samples"]):
        g, f, _ = fn.random_configuration(grid, 1000 + base + 3 * k, cfg["amp"])
        fc = fn.friedrich_check(GeometryCache(grid, g), f)
        samples.append(fc.__dict__)
        checks.append(_check("friedrich", 0.0 if fc.holds else 1.0, 0.0, sample=k))
    report = _summarize(checks)
    report.update({"flat_spectrum": flat.tolist(), "rectangular_spectrum": rect.tolist(),
                   "friedrich_samples": samples})
    return report


# -- convergence ------------------------------------------------------------------------

def cmd_convergence(cfg: dict, out: Path) -> dict:
    n, seed, amp = cfg["grid"]["n"], cfg["seeds"][0], cfg["amp"]
    const = _constants(cfg)
    resolutions = [16, 32, 64] if n == 2 else [8, 16, 32]
    table = []
    for res in resolutions:
        grid = Grid(n, res)
        g, f, psi = fn.random_configuration(grid, seed, amp)
        geo = GeometryCache(grid, g)
        wops = WeightedOps(geo, f)
        weitz = _sup(sp.weitzenbock_residual(psi, geo, wops))
        table.append({"res": res, "weitzenbock": weitz,
                      "w_lambda": fn.w_lambda(grid, g, f, psi, const)})
    checks = [_check("weitzenbock_refines", max(table[-1]["weitzenbock"] - table[0]["weitzenbock"], 0.0), 0.0)]
    # time refinement at fixed T for the gauged flow
    if const.c > const.tau:
        grid = Grid(n, 16 if n == 2 else 8)
        state = fl.perturbed_flat_state(grid, const, seed=seed, amp=cfg["flow"]["amp"])
        dt0 = fl.default_dt(grid, const)
        steps0 = 8
        finals = []
        for level in range(4):
            s = state
            dt = dt0 / 2**level
            for _ in range(steps0 * 2**level):
                s = fl.step_rk4(s, dt)
            finals.append(s)
        errs = [max(_sup(a.g - finals[-1].g), _sup(a.psi - finals[-1].psi), _sup(a.f - finals[-1].f))
                for a in finals[:-1]]
        ratios = [a / b for a, b in zip(errs, errs[1:]) if b > 0]
        time_table = {"dt": [dt0 / 2**k for k in range(3)], "errors": errs, "ratios": ratios}
        order = math.log2(ratios[0]) if ratios else math.nan
        time_table["order"] = order
        checks.append(_check("rk4_order", abs(order - 4), 0.5))
    else:
        time_table = None
    report = _summarize(checks)
    report.update({"resolution_table": table, "time_table": time_table})
    return report


# -- driver -----------------------------------------------------------------------------

def _dump(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run(cfg: dict) -> int:
    """Execute the configured command, write artifacts, return the exit status."""
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    command = cfg["command"]
    started = time.time()
    try:
        if command == "verify":
            report = cmd_verify(cfg, out)
        elif command == "variation":
            report = cmd_variation(cfg, out)
        elif command == "flow":
            report = cmd_flow(cfg, out, chash)
        elif command == "symbols":
            report = cmd_symbols(cfg, out)
        elif command == "spectrum":
            report = cmd_spectrum(cfg, out)
        else:
            report = cmd_convergence(cfg, out)
    except fl.RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GridError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    report = {"command": command, "config_hash": chash, "config": body, **report}
    _dump(out / f"{command}.json", report)
    _dump(out / f"{command}.meta.json", {
        "config_hash": chash,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "elapsed_s": time.time() - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
    })
    _print_table(report)
    return 0 if report["all_passed"] else 1


def _print_table(report: dict) -> None:
    print(f"{report['command']}  config_hash={report['config_hash']}")
    for row in report["checks"]:
        flag = "PASS" if row["passed"] else "FAIL"
        print(f"  {flag}  {row['name']:<40} {row['max_value']:.3e}  (tol {row['tol']:.1e})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinflow", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--command", choices=COMMANDS, help="overrides the config's command")
    p.add_argument("--output", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="single seed replacing the config's seed list")
    p.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_schema:
        print(json.dumps(schema(), indent=2))
        return 0
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
        cfg = resolve_config(raw, args.command, args.output, args.seed)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
