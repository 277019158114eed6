"""Scenario configuration: ``key = value`` text, validation and presets.

Example::

    preset = fig1-ebc          # start from a built-in scenario
    integrator.t_final = 0.5   # and override single keys
    material.alpha1 = 0
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from phbeam.control import CasimirController, CasimirControllerSetup, EbcController, EbcParams
from phbeam.discretization import DiscreteOperators, Grid, build_operators
from phbeam.dynamics import SCHEMES, BeamState, BeamSystem, BoundaryConditions, Controller
from phbeam.errors import ConfigError, DomainError
from phbeam.model import MaterialParams, ModelSpec, ModelVariant

OUTPUT_ROOT_ENV = "PHBEAM_OUTPUT_ROOT"

REQUIRED = (
    "model",
    "material.EI",
    "material.EA",
    "material.rhoA",
    "material.L",
    "grid.n_nodes",
    "integrator.dt",
    "integrator.t_final",
)

# key -> (parser, default); defaults of None mean "required in context"
_FLOAT, _INT, _STR = "float", "int", "str"
KEYS = {
    "name": (_STR, "scenario"),
    "model": (_STR, None),
    "material.EI": (_FLOAT, None),
    "material.EA": (_FLOAT, None),
    "material.rhoA": (_FLOAT, None),
    "material.L": (_FLOAT, None),
    "material.alpha1": (_FLOAT, 0.0),
    "material.alpha2": (_FLOAT, 0.0),
    "grid.n_nodes": (_INT, None),
    "grid.order": (_INT, 2),
    "bc.w1": (_STR, "clamped"),
    "bc.w2": (_STR, "fixed"),
    "integrator.scheme": (_STR, "ImplicitMidpoint"),
    "integrator.dt": (_FLOAT, None),
    "integrator.t_final": (_FLOAT, None),
    "integrator.stride": (_INT, 1),
    "integrator.newton_tol": (_FLOAT, 1e-10),
    "integrator.jacobian": (_STR, "analytic"),
    "controller.type": (_STR, "none"),
    "initial.type": (_STR, "rest"),
    "initial.modes": (_STR, "1"),
    "initial.amplitudes": (_STR, "0"),
    "initial.w2_amplitudes": (_STR, "0"),
    "initial.file": (_STR, ""),
    "seed": (_INT, 0),
    "output.dir": (_STR, ""),
}
for _k in ("c1", "c2", "c3", "k1", "k2", "k3", "a", "b"):
    KEYS[f"ebc.{_k}"] = (_FLOAT, None)
for _k in ("c1", "c2", "c3", "a", "b"):
    KEYS[f"casimir.{_k}"] = (_FLOAT, None)
for _k, _v in (("m4", 1.0), ("m5", 1.0), ("m6", 1.0), ("r4", 1000.0), ("r5", 100.0), ("r6", 100.0)):
    KEYS[f"casimir.{_k}"] = (_FLOAT, _v)
for _k in ("g4", "g5", "g6"):
    # default: g^2 m / r equals the EBC damping gains (2200, 1, 1)
    KEYS[f"casimir.{_k}"] = (_FLOAT, None)

_FIG1_BEAM = {
    "model": "NonlinearStructural",
    "material.EI": "14.97",
    "material.EA": "50",
    "material.rhoA": "2.1",
    "material.L": "0.54",
    "material.alpha1": "1e-3",
    "material.alpha2": "1e-3",
    "grid.n_nodes": "201",
    "grid.order": "2",
    "bc.w1": "free",
    "bc.w2": "fixed",
    "integrator.scheme": "ImplicitMidpoint",
    "integrator.dt": "1e-4",
    "integrator.t_final": "2",
    "integrator.stride": "100",
    "initial.type": "rest",
}

PRESETS = {
    "fig1-ebc": {
        **_FIG1_BEAM,
        "name": "fig1-ebc",
        "controller.type": "ebc",
        "ebc.c1": "2e8", "ebc.c2": "1000", "ebc.c3": "8e4",
        "ebc.k1": "2200", "ebc.k2": "1", "ebc.k3": "1",
        "ebc.a": "0.01", "ebc.b": "0.01",
    },
    "fig1-casimir": {
        **_FIG1_BEAM,
        "name": "fig1-casimir",
        "controller.type": "casimir",
        "casimir.c1": "2e8", "casimir.c2": "1000", "casimir.c3": "8e4",
        "casimir.a": "0.01", "casimir.b": "0.01",
    },
    "free-decay": {
        **_FIG1_BEAM,
        "name": "free-decay",
        "bc.w1": "clamped",
        "integrator.t_final": "0.5",
        "integrator.stride": "10",
        "initial.type": "fourier",
        "initial.modes": "1,2",
        "initial.amplitudes": "0.05,0.01",
        "initial.w2_amplitudes": "0.001",
    },
    "undamped-decay": {
        **_FIG1_BEAM,
        "name": "undamped-decay",
        "model": "NonlinearUndamped",
        "material.alpha1": "0",
        "material.alpha2": "0",
        "bc.w1": "clamped",
        "integrator.t_final": "0.5",
        "integrator.stride": "10",
        "initial.type": "fourier",
        "initial.modes": "1,2",
        "initial.amplitudes": "0.05,0.01",
        "initial.w2_amplitudes": "0.001",
    },
    "linear-mode1": {
        **_FIG1_BEAM,
        "name": "linear-mode1",
        "model": "LinearViscous",
        "material.alpha1": "0",
        "material.alpha2": "0",
        "bc.w1": "clamped",
        "integrator.t_final": "1",
        "integrator.stride": "10",
        "initial.type": "cantilever_mode",
        "initial.amplitudes": "0.01",
    },
}

CANTILEVER_BETA_L = 1.8751040687119611


def cantilever_mode_shape(z, L: float) -> np.ndarray:
    """First clamped-free Euler-Bernoulli mode, scaled to unit tip deflection."""
    bl = CANTILEVER_BETA_L
    x = bl * np.asarray(z) / L
    sigma = (np.cosh(bl) + np.cos(bl)) / (np.sinh(bl) + np.sin(bl))
    phi = np.cosh(x) - np.cos(x) - sigma * (np.sinh(x) - np.sin(x))
    return phi / phi[-1]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


@dataclass
class ScenarioConfig:
    """Validated scenario. ``values`` keeps the raw key/value strings."""

    values: dict
    model: ModelSpec
    n_nodes: int
    order: int
    bc: BoundaryConditions
    scheme: str
    dt: float
    t_final: float
    stride: int
    newton_tol: float
    jacobian: str
    controller_type: str
    ebc: EbcParams | None = None
    casimir: CasimirControllerSetup | None = None
    seed: int = 0
    name: str = "scenario"
    _ops: DiscreteOperators | None = field(default=None, repr=False)

    @property
    def material(self) -> MaterialParams:
        return self.model.material

    @property
    def ops(self) -> DiscreteOperators:
        if self._ops is None:
            self._ops = build_operators(Grid(self.n_nodes, self.material.L), self.order)
        return self._ops

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def output_dir(self) -> Path:
        if self.values.get("output.dir"):
            return Path(self.values["output.dir"])
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.name

    def build_controller(self) -> Controller:
        if self.controller_type == "ebc":
            return EbcController(self.ebc, self.material.L)
        if self.controller_type == "casimir":
            return CasimirController(self.casimir)
        return Controller()

    def build_system(self) -> BeamSystem:
        return BeamSystem(self.model, self.ops, self.bc, self.build_controller())

    def initial_state(self, system: BeamSystem) -> BeamState:
        v = self.values
        kind = v.get("initial.type", "rest")
        z, L = self.ops.grid.z, self.material.L
        n = self.n_nodes
        if kind == "rest":
            return BeamState.zeros(n)
        if kind == "file":
            return read_initial_state(v["initial.file"], n)
        amps = _floats(v.get("initial.amplitudes", "0"))
        if kind == "cantilever_mode":
            return system.project(BeamState(amps[0] * cantilever_mode_shape(z, L), np.zeros(n), np.zeros(n), np.zeros(n)))
        # fourier: quarter-wave cosines satisfy w = w_1 = 0 at z = 0
        modes = [int(m) for m in _floats(v.get("initial.modes", "1"))]
        w2_amps = _floats(v.get("initial.w2_amplitudes", "0"))
        w1 = np.zeros(n)
        w2 = np.zeros(n)
        for i, k in enumerate(modes):
            arg = (2 * k - 1) * np.pi * z / (2 * L)
            if i < len(amps):
                w1 += amps[i] * (1 - np.cos(arg))
            if i < len(w2_amps):
                w2 += w2_amps[i] * np.sin(arg)
        return system.project(BeamState(w1, w2, np.zeros(n), np.zeros(n)))

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        vals = dict(self.values)
        vals.update({k: (v if isinstance(v, str) else repr(v)) for k, v in overrides.items()})
        return build_config(vals)

    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))


def read_initial_state(path: str, n: int) -> BeamState:
    """Last snapshot of a ``states.csv`` file."""
    from phbeam.cli import read_states_csv

    t, states = read_states_csv(path)
    if states.shape[2] != n:
        raise ConfigError([("initial.file", None, f"file has {states.shape[2]} nodes, grid has {n}")])
    return BeamState(*states[-1])


def _convert(key, kind, text, line, issues):
    try:
        if kind == _FLOAT:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
            return val
        if kind == _INT:
            f = float(text)
            if f != int(f):
                raise ValueError
            return int(f)
        return text
    except ValueError:
        issues.append((key, line, f"cannot read {text!r} as {kind}"))
        return None


def parse_lines(text: str):
    """Raw ``{key: (value, line)}``, resolving a ``preset`` key first."""
    issues = []
    entries = {}
    preset = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            issues.append((line, lineno, "expected 'key = value'"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                issues.append((key, lineno, f"unknown preset {value!r}; known: {', '.join(sorted(PRESETS))}"))
            preset = value
            continue
        if key not in KEYS:
            issues.append((key, lineno, "unknown key"))
            continue
        if key in entries:
            issues.append((key, lineno, f"duplicate key (first set on line {entries[key][1]})"))
            continue
        if not value:
            issues.append((key, lineno, "empty value"))
            continue
        entries[key] = (value, lineno)
    merged = {k: (v, None) for k, v in PRESETS.get(preset, {}).items()}
    merged.update(entries)
    return merged, issues


def parse_config(text: str, overrides: dict | None = None) -> ScenarioConfig:
    """Validate ``key = value`` text; raises :class:`ConfigError` listing every problem.

    ``overrides`` replace keys after the text (and any preset) is applied.
    """
    entries, issues = parse_lines(text)
    for key, value in (overrides or {}).items():
        entries[key] = (str(value).strip(), None)
    return build_config({k: v for k, (v, _) in entries.items()}, {k: ln for k, (_, ln) in entries.items()}, issues)


def preset_config(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError([("preset", None, f"unknown preset {name!r}")])
    cfg = build_config(dict(PRESETS[name]))
    return cfg.with_overrides(**overrides) if overrides else cfg


def build_config(values: dict, lines: dict | None = None, issues: list | None = None) -> ScenarioConfig:
    lines = lines or {}
    issues = list(issues or [])
    for k in values:
        if k not in KEYS:
            issues.append((k, lines.get(k), "unknown key"))
    missing = [k for k in REQUIRED if k not in values]
    issues += [(k, None, "required key missing") for k in missing]

    def get(key):
        kind, default = KEYS[key]
        if key in values:
            return _convert(key, kind, values[key], lines.get(key), issues)
        return default

    def require(key):
        if key not in values:
            issues.append((key, None, "required for this controller"))
            return None
        return get(key)

    model_name = get("model")
    variant = None
    if model_name is not None:
        try:
            variant = ModelVariant.parse(model_name)
        except ValueError:
            issues.append(("model", lines.get("model"), f"unknown model {model_name!r}; expected one of "
                           + ", ".join(v.value for v in ModelVariant)))

    mat_keys = ("material.EI", "material.EA", "material.rhoA", "material.L", "material.alpha1", "material.alpha2")
    mat_vals = [get(k) for k in mat_keys]
    for key, val in zip(mat_keys, mat_vals):
        if val is None:
            continue
        if key.endswith(("alpha1", "alpha2")):
            if val < 0:
                issues.append((key, lines.get(key), "damping coefficient must be nonnegative"))
        elif val <= 0:
            issues.append((key, lines.get(key), "must be positive"))

    n_nodes, order = get("grid.n_nodes"), get("grid.order")
    if order not in (2, 4, None):
        issues.append(("grid.order", lines.get("grid.order"), "order must be 2 or 4"))
    if n_nodes is not None and n_nodes < 9:
        issues.append(("grid.n_nodes", lines.get("grid.n_nodes"), "need at least 9 nodes"))

    bc_w1, bc_w2 = get("bc.w1"), get("bc.w2")
    if bc_w1 not in ("clamped", "free"):
        issues.append(("bc.w1", lines.get("bc.w1"), "expected 'clamped' or 'free'"))
    if bc_w2 not in ("fixed", "free"):
        issues.append(("bc.w2", lines.get("bc.w2"), "expected 'fixed' or 'free'"))

    scheme = get("integrator.scheme")
    if scheme not in SCHEMES:
        issues.append(("integrator.scheme", lines.get("integrator.scheme"), f"expected one of {', '.join(SCHEMES)}"))
    dt, t_final = get("integrator.dt"), get("integrator.t_final")
    if dt is not None and dt <= 0:
        issues.append(("integrator.dt", lines.get("integrator.dt"), "dt must be positive"))
    if t_final is not None and t_final <= 0:
        issues.append(("integrator.t_final", lines.get("integrator.t_final"), "t_final must be positive"))
    if dt and t_final and dt > 0 and t_final > 0 and abs(t_final / dt - round(t_final / dt)) > 1e-6 * t_final / dt:
        issues.append(("integrator.t_final", lines.get("integrator.t_final"), "t_final must be a multiple of dt"))
    stride = get("integrator.stride")
    if stride is not None and stride < 1:
        issues.append(("integrator.stride", lines.get("integrator.stride"), "stride must be >= 1"))
    tol = get("integrator.newton_tol")
    if tol is not None and tol <= 0:
        issues.append(("integrator.newton_tol", lines.get("integrator.newton_tol"), "must be positive"))
    jac = get("integrator.jacobian")
    if jac not in ("analytic", "fd"):
        issues.append(("integrator.jacobian", lines.get("integrator.jacobian"), "expected 'analytic' or 'fd'"))

    init = get("initial.type")
    if init not in ("rest", "fourier", "cantilever_mode", "file"):
        issues.append(("initial.type", lines.get("initial.type"), "expected rest, fourier, cantilever_mode or file"))
    for key in ("initial.modes", "initial.amplitudes", "initial.w2_amplitudes"):
        if key in values:
            try:
                _floats(values[key])
            except ValueError:
                issues.append((key, lines.get(key), "expected a comma-separated list of numbers"))
    if init == "file" and not values.get("initial.file"):
        issues.append(("initial.file", lines.get("initial.file"), "required for initial.type = file"))

    ctype = get("controller.type")
    ebc = casimir = None
    if ctype not in ("none", "ebc", "casimir"):
        issues.append(("controller.type", lines.get("controller.type"), "expected none, ebc or casimir"))
    elif ctype == "ebc":
        vals = {k: require(f"ebc.{k}") for k in ("c1", "c2", "c3", "k1", "k2", "k3", "a", "b")}
        if all(v is not None for v in vals.values()):
            try:
                ebc = EbcParams(**vals)
            except ConfigError as exc:
                issues += [(k, lines.get(k), r) for k, _, r in exc.issues]
    elif ctype == "casimir":
        c = [require(f"casimir.{k}") for k in ("c1", "c2", "c3")]
        a, b = require("casimir.a"), require("casimir.b")
        m = [get(f"casimir.m{i}") for i in (4, 5, 6)]
        r = [get(f"casimir.r{i}") for i in (4, 5, 6)]
        g = [get(f"casimir.g{i}") for i in (4, 5, 6)]
        for i, (mi, ri) in enumerate(zip(m, r), start=4):
            if mi is not None and mi <= 0:
                issues.append((f"casimir.m{i}", lines.get(f"casimir.m{i}"), "must be positive"))
            if ri is not None and ri < 0:
                issues.append((f"casimir.r{i}", lines.get(f"casimir.r{i}"), "must be nonnegative"))
        for i, ci in enumerate(c, start=1):
            if ci is not None and ci <= 0:
                issues.append((f"casimir.c{i}", lines.get(f"casimir.c{i}"), "gain must be positive"))
        ok = not issues and mat_vals[3] is not None
        if ok:
            default_g = np.sqrt(np.array([2200.0, 1.0, 1.0]) * np.array(r) / np.array(m))
            g = [gd if gi is None else gi for gi, gd in zip(g, default_g)]
            casimir = CasimirControllerSetup.default(mat_vals[3], c=c, a=a, b=b, m=m, r=r, g=g)

    model = None
    if variant is not None and all(v is not None for v in mat_vals) and not any(
            k.startswith("material.") for k, _, _ in issues):
        try:
            model = ModelSpec(variant, MaterialParams(*mat_vals))
        except DomainError as exc:
            issues.append(("material", None, str(exc)))

    if issues:
        raise ConfigError(issues)
    return ScenarioConfig(
        values=dict(values),
        model=model,
        n_nodes=n_nodes,
        order=order,
        bc=BoundaryConditions(bc_w1, bc_w2),
        scheme=scheme,
        dt=dt,
        t_final=t_final,
        stride=stride,
        newton_tol=tol,
        jacobian=jac,
        controller_type=ctype,
        ebc=ebc,
        casimir=casimir,
        seed=get("seed"),
        name=get("name"),
    )
