"""Run configuration: parsing, emission, and assembly of run objects.

The native format is line-oriented ``section.key = value`` text (diff
friendly and language agnostic); JSON with the same section/key structure
is accepted as an alternate input.  Emission is canonical (sorted keys,
shortest round-trip float repr), so emit -> parse is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .control import ControlPlan
from .errors import ConfigurationError
from .experiments import ExperimentConfig
from .maps import LocalBounds, MapSpec, builtin_map, custom_map, local_bounds
from .noise import NoiseSpec, bernoulli, discrete, uniform
from .params import DwcLadder, MncPolicy, derive_dwc, derive_mnc


def format_float(x: float) -> str:
    """17-significant-digit decimal form, bit-exact on round trip."""
    return f"{x:.17g}"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _parse_scalar(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def _parse_value(text: str):
    if "," in text:
        return tuple(_parse_scalar(p) for p in text.split(","))
    return _parse_scalar(text)


@dataclass
class RunConfig:
    """Sectioned key/value configuration with typed access."""

    sections: dict = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigurationError("config-missing", f"missing {section}.{key}")
        return value

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = value

    def emit(self) -> str:
        lines = []
        for section in sorted(self.sections):
            for key in sorted(self.sections[section]):
                lines.append(f"{section}.{key} = {_format_value(self.sections[section][key])}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse the line-oriented format; report offending line numbers."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _from_json(stripped)
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError("config-parse", f"line {lineno}: expected 'section.key = value'")
        lhs, rhs = line.split("=", 1)
        dotted = lhs.strip()
        if "." not in dotted:
            raise ConfigurationError("config-parse", f"line {lineno}: key {dotted!r} needs a section prefix")
        section, key = dotted.split(".", 1)
        cfg.set(section.strip(), key.strip(), _parse_value(rhs.strip()))
    return cfg


def _from_json(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError("config-parse", f"invalid JSON config: {exc}") from exc
    cfg = RunConfig()
    for section, mapping in data.items():
        if not isinstance(mapping, dict):
            raise ConfigurationError("config-parse", f"section {section!r} must be an object")
        for key, value in mapping.items():
            cfg.set(section, key, tuple(value) if isinstance(value, list) else value)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def build_map(cfg: RunConfig) -> MapSpec:
    kind = cfg.require("map", "kind")
    u = cfg.get("map", "u")
    if kind in ("logistic", "ricker"):
        return builtin_map(kind, r=float(cfg.require("map", "r")), u=u,
                           truncate_at_zero=cfg.get("map", "truncate_at_zero"))
    if kind == "kappa_half":
        return builtin_map(kind, u=u, truncate_at_zero=cfg.get("map", "truncate_at_zero"))
    if kind == "custom":
        return custom_map(
            expr=cfg.require("map", "expression"),
            K=float(cfg.require("map", "K")),
            q=cfg.get("map", "q"), C=cfg.get("map", "C"),
            kappa=cfg.get("map", "kappa"), u=u,
            truncate_at_zero=bool(cfg.get("map", "truncate_at_zero", False)))
    raise ConfigurationError("map-kind", f"unknown map kind {kind!r}")


def build_noise(cfg: RunConfig) -> NoiseSpec:
    kind = cfg.require("noise", "kind")
    if kind == "bernoulli_pm1":
        return bernoulli()
    if kind == "uniform_m1_1":
        return uniform()
    if kind == "custom_discrete":
        values = cfg.require("noise", "values")
        probs = cfg.require("noise", "probabilities")
        if not isinstance(values, tuple):
            values, probs = (values,), (probs,)
        return discrete(values, probs)
    raise ConfigurationError("noise-kind", f"unknown noise kind {kind!r}")


def resolve_local_bounds(cfg: RunConfig, map_spec: MapSpec) -> LocalBounds:
    """Explicit map.underline_L / map.bar_q win; otherwise derive them."""
    L = cfg.get("map", "underline_L")
    qb = cfg.get("map", "bar_q")
    if L is not None and qb is not None:
        return LocalBounds(underline_L=float(L), bar_q=float(qb))
    return local_bounds(map_spec)


def resolve_plan(cfg: RunConfig, map_spec: MapSpec, noise: NoiseSpec):
    """Build the control plan, resolving any ``auto`` fields via the
    derivations.  Returns (plan, mnc_params_or_None, resolved: dict)."""
    regime = cfg.get("control", "regime", "mnc_only")
    sigma = float(cfg.require("control", "sigma"))
    gamma = cfg.get("control", "gamma", 0.9)
    mode = cfg.get("control", "mnc_mode", "strict")
    u = cfg.get("control", "u", map_spec.u)
    resolved = {}

    delta = cfg.get("control", "delta")
    mnc = None
    needs_mnc = delta == "auto" or cfg.get("control", "audit_envelope", False)
    if needs_mnc:
        mnc = derive_mnc(map_spec, noise, sigma, gamma,
                         MncPolicy(mode=mode, allow_delta_underflow=True))
        if delta == "auto":
            if mnc.delta == 0.0:
                raise ConfigurationError(
                    "delta-underflow",
                    "auto delta underflows double precision; set control.delta "
                    "explicitly or use control.mnc_mode = desk")
            delta = mnc.delta
            resolved["delta"] = delta

    if regime == "mnc_only":
        plan = ControlPlan(regime=regime, sigma=sigma,
                           delta=None if delta is None else float(delta), u=u)
        return plan, mnc, resolved

    if delta is None:
        raise ConfigurationError("config-missing", "control.delta is required for this regime")
    delta = float(delta)
    beta = cfg.get("control", "beta")
    if regime == "combined" and beta is None:
        raise ConfigurationError("config-missing", "control.beta is required for combined")
    a = cfg.get("control", "a")
    target = float(beta) if regime == "combined" else delta
    alpha_scale = cfg.get("control", "alpha_scale")
    if alpha_scale is not None:
        ladder = DwcLadder.from_scale(u=float(u), delta=target, a=float(a or 1.25),
                                      scale=float(alpha_scale),
                                      ell=float(cfg.get("control", "ell", 0.0)),
                                      ell_c=float(cfg.get("control", "ell_c", 0.0)))
    else:
        bounds = resolve_local_bounds(cfg, map_spec)
        ladder = derive_dwc(bounds, u=float(u), delta=target, a=a,
                            ell_c=cfg.get("control", "ell_c"),
                            B=cfg.get("control", "B"), mu=cfg.get("control", "mu"),
                            ell=cfg.get("control", "ell"))
        resolved.update({"a": ladder.a, "ell_c": ladder.ell_c, "B": ladder.B,
                         "mu": ladder.mu, "ell": ladder.ell})
    plan = ControlPlan(regime=regime, sigma=sigma, delta=delta, u=float(u),
                       beta=None if beta is None else float(beta), ladder=ladder)
    return plan, mnc, resolved


def build_experiment(cfg: RunConfig) -> ExperimentConfig:
    map_spec = build_map(cfg)
    noise = build_noise(cfg)
    plan, mnc, _ = resolve_plan(cfg, map_spec, noise)
    z0 = cfg.get("control", "z0", map_spec.K)
    return ExperimentConfig(
        map_spec=map_spec, noise=noise, plan=plan, z0=z0,
        trials=int(cfg.get("experiment", "trials", 100)),
        horizon=int(cfg.get("experiment", "horizon", 1000)),
        master_seed=int(cfg.get("experiment", "seed", 0)),
        tolerance=float(cfg.get("experiment", "tolerance", 1e-2)),
        gamma=cfg.get("control", "gamma"),
        mnc_params=mnc,
        n_workers=int(cfg.get("experiment", "workers", 1)))
