"""Command-line interface.

Subcommands: params | lambda | simulate | sweep | montecarlo | verify.
All numeric output uses 17 significant digits so replays are
bit-comparable; every CSV starts with a versioned schema comment.
Derivation failures exit nonzero and name the violated constraint.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .config import (RunConfig, build_experiment, build_map, build_noise,
                     format_float, load_config, resolve_local_bounds)
from .control import run_trajectory, trajectory_rows
from .errors import NoiseStabError
from .experiments import convergence_experiment, report_to_csv, stability_sweep
from .maps import validate_map
from .noise import (NoiseSpec, RngStream, bernoulli, bernoulli_sigma_window,
                    lambda_mc, log_theta_moments, uniform)
from .params import MncPolicy, derive_combined, derive_dwc, derive_mnc

ENV_SEED = "NOISESTAB_SEED"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if v is None:
        return ""
    return str(v)


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _default_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get(ENV_SEED, "0"))


def _load(args) -> RunConfig:
    return load_config(args.config)


def cmd_params(args) -> int:
    cfg = _load(args)
    map_spec = build_map(cfg)
    noise = build_noise(cfg)
    sigma = float(cfg.require("control", "sigma"))
    gamma = float(cfg.get("control", "gamma", 0.9))
    mode = cfg.get("control", "mnc_mode", "strict")

    records: list[tuple[str, object, str]] = []
    mnc = None
    if map_spec.has_expansion():
        mnc = derive_mnc(map_spec, noise, sigma, gamma,
                         MncPolicy(mode=mode, allow_delta_underflow=True))
        eta_m, eta_e = mnc.mantissa_exp10(mnc.log_eta)
        dlt_m, dlt_e = mnc.mantissa_exp10(mnc.log_delta)
        records += [
            ("lambda", mnc.lam, "lambda > 0"),
            ("varsigma", mnc.varsigma, "varsigma < lambda/2"),
            ("epsilon", mnc.epsilon, "epsilon < min(kappa*varsigma/2, lambda-varsigma)"),
            ("theta_sq", mnc.theta_sq, "Var ln|Theta|"),
            ("barN", mnc.barN, "confidence horizon (gamma/2 tail)"),
            ("barN1", mnc.barN1, "remainder-series horizon"),
            ("barN2", mnc.barN2, "max(barN1, barN)"),
            ("barTheta", mnc.barTheta, "barTheta = 1+q+sigma"),
            ("barv", mnc.barv, "barv = max(|ln|1+q-sigma||, ln(1+q+sigma))"),
            ("log_M", mnc.log_M, "M = barTheta^(barN-1)"),
            ("eta", f"{format_float(eta_m)}e{eta_e}", "eta <= envelope prefactor bound"),
            ("delta", f"{format_float(dlt_m)}e{dlt_e}", "delta <= target-radius bound"),
            ("nbar", mnc.nbar, "return steps floor(ln(eta/delta)/varsigma)+1"),
            ("mnc_mode", mnc.mode, "strict or desk"),
        ]

    regime = cfg.get("control", "regime", "mnc_only")
    if regime in ("dwc_then_mnc", "combined") and cfg.get("control", "alpha_scale") is None:
        bounds = resolve_local_bounds(cfg, map_spec)
        delta_cfg = cfg.get("control", "delta")
        if delta_cfg in (None, "auto"):
            if mnc is None or mnc.delta == 0.0:
                raise NoiseStabError(
                    "no usable target radius: set control.delta explicitly "
                    "(the derived value underflows or is unavailable)")
            delta = mnc.delta
        else:
            delta = float(delta_cfg)
        dwc = derive_dwc(bounds, u=float(cfg.get("control", "u", map_spec.u)), delta=delta,
                         a=cfg.get("control", "a"), ell_c=cfg.get("control", "ell_c"),
                         B=cfg.get("control", "B"), mu=cfg.get("control", "mu"),
                         ell=cfg.get("control", "ell"))
        records += [
            ("underline_L", dwc.underline_L, "lower linear bound"),
            ("bar_q", dwc.bar_q, "upper linear bound minus 1"),
            ("a", dwc.a, "a in (1, underline_L/bar_q)"),
            ("epsilon0", dwc.epsilon0, "epsilon0 = underline_L - bar_q*a > 0"),
            ("ell_c", dwc.ell_c, "ell_c < epsilon0/(2 bar_q a + epsilon0)"),
            ("B", dwc.B, "B in (bar_q a^2/(underline_L(1-ell_c)), a/(1+ell_c))"),
            ("rho", dwc.rho, "rho in (0, 1)"),
            ("mu", dwc.mu, "mu in (0, 1-rho)"),
            ("ell", dwc.ell, "ell <= (1-rho-mu) delta"),
            ("k_delta_u", dwc.k_delta_u, "floor(log_a(u/delta))"),
            ("k", dwc.k, "k_delta_u + 1"),
            ("barm", dwc.barm, "per-level step bound"),
            ("step_bound", dwc.step_bound, "ln(delta/u)/ln(1-mu)"),
        ]
    iota = cfg.get("control", "iota")
    if iota is not None:
        delta_cfg = cfg.get("control", "delta")
        delta = (mnc.delta if mnc is not None else 0.0) \
            if delta_cfg in (None, "auto") else float(delta_cfg)
        comb = derive_combined(map_spec, noise, sigma, float(iota), delta,
                               beta=cfg.get("control", "beta"))
        records += [
            ("iota", comb.iota, "iota in (0, 1 - q/sigma)"),
            ("p_iota", comb.p_iota, "P{xi in (1-iota, 1]} > 0"),
            ("underline_theta_iota", comb.underline_theta_iota, "|1+q-(1-iota)sigma| < 1"),
            ("beta1", comb.beta1, "one-step basin-safety bound"),
            ("beta2", comb.beta2, "forced-contraction bound"),
            ("binding_bound", comb.binding_bound, "min(beta1, beta2)"),
            ("beta", comb.beta, "beta < binding bound"),
            ("H_iota", comb.H_iota, "H < 1"),
            ("bar_s", comb.bar_s, "floor(ln(delta/beta)/ln H)"),
        ]

    if args.format == "json":
        payload = {name: (value if isinstance(value, (int, str)) else float(value))
                   for name, value, _ in records}
        _write(args.out, json.dumps(payload, indent=2) + "\n")
    else:
        lines = ["# noisestab params v1", "name,value,constraint"]
        lines += [f"{name},{_fmt(value)},{constraint}" for name, value, constraint in records]
        _write(args.out, "\n".join(lines) + "\n")
    return 0


def _noise_from_name(name: str) -> NoiseSpec:
    if name == "bernoulli_pm1":
        return bernoulli()
    if name == "uniform_m1_1":
        return uniform()
    raise NoiseStabError(f"lambda subcommand supports bernoulli_pm1 or uniform_m1_1, got {name!r}")


def cmd_lambda(args) -> int:
    noise = _noise_from_name(args.noise)
    mean, var = log_theta_moments(noise, args.q, args.sigma)
    row = {"noise": args.noise, "q": args.q, "sigma": args.sigma,
           "lambda": -mean, "variance": var}
    if args.noise == "bernoulli_pm1":
        lo, hi = bernoulli_sigma_window(args.q)
        row["window_lo"], row["window_hi"] = lo, hi
    if args.mc:
        est, se = lambda_mc(noise, args.q, args.sigma, args.mc,
                            RngStream(_default_seed(args)).child(0, 0))
        row["mc_lambda"], row["mc_stderr"] = -est, se
    lines = ["# noisestab lambda v1",
             ",".join(row.keys()),
             ",".join(_fmt(v) for v in row.values())]
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    _apply_overrides(cfg, args)
    exp = build_experiment(cfg)
    traj = run_trajectory(exp.map_spec, exp.noise, exp.plan, exp.z0,
                          exp.horizon, exp.master_seed, args.trial)
    lines = ["# noisestab trajectory v1",
             "step,z,phase,interval_j,xi,zeta,chi,abs_err"]
    for step, z, phase, j, xi, zeta, chi, err in trajectory_rows(traj):
        lines.append(",".join([
            str(step), format_float(z), phase, "" if j is None else str(j),
            "" if math.isnan(xi) else format_float(xi),
            "" if math.isnan(zeta) else format_float(zeta),
            "" if math.isnan(chi) else format_float(chi),
            format_float(err)]))
    _write(args.out, "\n".join(lines) + "\n")
    if args.emit_svg:
        from .figures import render_trajectory_overlay
        svg = args.emit_svg if isinstance(args.emit_svg, str) else "trajectory.svg"
        render_trajectory_overlay([traj.states], exp.map_spec.K, svg)
    return 0


def _parse_grid(text: str):
    # "a,b,c" enumerates; "lo:hi:step" ranges inclusive of lo, exclusive of hi+step/2
    if ":" in text:
        lo, hi, step = (float(p) for p in text.split(":"))
        out = []
        x = lo
        while x < hi + step / 2:
            out.append(round(x, 12))
            x += step
        return out
    return [float(p) for p in text.split(",")]


def cmd_sweep(args) -> int:
    noise = _noise_from_name(args.noise)
    rows = stability_sweep(noise, _parse_grid(args.q_grid), _parse_grid(args.sigma_grid))
    lines = ["# noisestab sweep v1", "q,sigma,lambda,stabilizable,note"]
    for r in rows:
        lines.append(f"{format_float(r.q)},{format_float(r.sigma)},"
                     f"{_fmt(r.lam)},{_fmt(r.stabilizable)},{r.note}")
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_montecarlo(args) -> int:
    cfg = _load(args)
    _apply_overrides(cfg, args)
    exp = build_experiment(cfg)
    report = convergence_experiment(exp)
    _write(args.out, report_to_csv(report))
    if args.emit_svg:
        from .figures import render_trajectory_overlay
        runs = [run_trajectory(exp.map_spec, exp.noise, exp.plan, exp.z0,
                               exp.horizon, exp.master_seed, t).states
                for t in range(min(exp.trials, args.svg_runs))]
        svg = args.emit_svg if isinstance(args.emit_svg, str) else "montecarlo.svg"
        render_trajectory_overlay(runs, exp.map_spec.K, svg)
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    _apply_overrides(cfg, args)
    failures = 0

    def check(name: str, fn) -> None:
        nonlocal failures
        try:
            detail = fn()
            print(f"PASS {name}" + (f": {detail}" if detail else ""))
        except Exception as exc:  # report, do not abort the suite
            failures += 1
            print(f"FAIL {name}: {exc}")

    map_spec = build_map(cfg)
    noise = build_noise(cfg)

    def _map_invariants():
        report = validate_map(map_spec)
        if not report.passed:
            raise AssertionError("; ".join(str(c) for c in report.checks if not c.passed))
        return f"{len(report.checks)} checks"

    def _derivations():
        exp = build_experiment(cfg)
        if exp.plan.regime != "mnc_only" and cfg.get("control", "alpha_scale") is None:
            resolve_local_bounds(cfg, map_spec)
        return "derived constants satisfy their defining inequalities"

    def _determinism():
        exp = build_experiment(cfg)
        t1 = run_trajectory(exp.map_spec, exp.noise, exp.plan, exp.z0,
                            min(exp.horizon, 200), exp.master_seed, 0)
        t2 = run_trajectory(exp.map_spec, exp.noise, exp.plan, exp.z0,
                            min(exp.horizon, 200), exp.master_seed, 0)
        if not (t1.states == t2.states).all():
            raise AssertionError("replay produced different states")
        return "replay bit-identical"

    if map_spec.has_expansion():
        check("map-invariants", _map_invariants)
    check("derived-constants", _derivations)
    check("determinism", _determinism)
    return 1 if failures else 0


def _apply_overrides(cfg: RunConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.set("experiment", "seed", args.seed)
    elif cfg.get("experiment", "seed") is None:
        cfg.set("experiment", "seed", int(os.environ.get(ENV_SEED, "0")))
    for attr, (section, key) in {"trials": ("experiment", "trials"),
                                 "horizon": ("experiment", "horizon"),
                                 "workers": ("experiment", "workers")}.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisestab",
        description="Stabilize unstable and chaotic 1-d maps by stochastic control.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("-c", "--config", required=True, help="config file (text or JSON)")
        p.add_argument("--seed", type=int, default=None,
                       help=f"master seed (default: ${ENV_SEED} or 0)")
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("params", help="derive and print every constant bundle")
    add_common(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("lambda", help="closed-form and Monte Carlo log-multiplier mean")
    p.add_argument("--noise", required=True, choices=("bernoulli_pm1", "uniform_m1_1"))
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--mc", type=int, default=0, help="also estimate from this many draws")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_lambda)

    p = sub.add_parser("simulate", help="record one trajectory as CSV")
    add_common(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--trials", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--emit-svg", nargs="?", const=True, default=False,
                   help="render the trajectory overlay (optional path)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="lambda sign table over a (q, sigma) grid")
    p.add_argument("--noise", required=True, choices=("bernoulli_pm1", "uniform_m1_1"))
    p.add_argument("--q-grid", required=True, help='"a,b,c" or "lo:hi:step"')
    p.add_argument("--sigma-grid", required=True, help='"a,b,c" or "lo:hi:step"')
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("montecarlo", help="run a convergence campaign")
    add_common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--emit-svg", nargs="?", const=True, default=False)
    p.add_argument("--svg-runs", type=int, default=6)
    p.set_defaults(fn=cmd_montecarlo)

    p = sub.add_parser("verify", help="run the invariant suite for a config")
    add_common(p)
    p.add_argument("--trials", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--horizon", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NoiseStabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
