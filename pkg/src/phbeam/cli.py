"""Command line: run scenarios, audit results, convergence and structural checks.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from phbeam.config import PRESETS, ScenarioConfig, parse_config, preset_config
from phbeam.control import verify_casimir_conditions
from phbeam.diagnostics import (
    BalanceAudit,
    audit_energy_balance,
    casimir_drift,
    convergence_study,
    variational_oracle,
)
from phbeam.dynamics import Trajectory, simulate
from phbeam.errors import ConfigError, DomainError, PhBeamError, StateError, StepFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3
FMT = "%.17g"

# per-step thresholds applied by run_scenario
INTERCONNECTION_TOL = 1e-12
CASIMIR_DRIFT_TOL = 1e-8


@dataclass
class RunArtifacts:
    directory: Path
    states: Path
    ports: Path
    energy: Path
    audit: Path
    plotdata: list
    config: Path | None = None
    passed: bool = True
    report: dict | None = None

    @property
    def paths(self) -> list[Path]:
        extra = [self.config] if self.config else []
        return [self.states, self.ports, self.energy, self.audit, *self.plotdata, *extra]


def _write(path: Path, header: list[str], columns: np.ndarray):
    np.savetxt(path, np.atleast_2d(columns), fmt=FMT, delimiter=",", header=",".join(header), comments="")


def state_columns(n: int) -> list[str]:
    return [f"{f}_{i:03d}" for f in ("w1", "w2", "p1", "p2") for i in range(n)]


def energy_table(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    """Columns of ``energy.csv``; interval integrals are attached to the interval's end time."""
    flux = np.concatenate([[0.0], traj.flux_int])
    diss = np.concatenate([[0.0], traj.diss_int])
    residual = np.concatenate([[0.0], np.diff(traj.energy) - traj.flux_int + traj.diss_int])
    header = ["t", "E_h"]
    cols = [traj.t, traj.energy]
    if traj.controller == "ebc":
        header.append("H_d")
        cols.append(traj.storage)
    elif traj.controller == "casimir":
        header.append("H_cl")
        cols.append(traj.storage)
    header += ["boundary_flux", "dissipation", "residual"]
    cols += [flux, diss, residual]
    return header, np.column_stack(cols)


def emit_csv(traj: Trajectory, audit: dict, directory) -> RunArtifacts:
    """Write ``states.csv``, ``ports.csv``, ``energy.csv``, ``audit.json`` and plot data."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PhBeamError(f"cannot create output directory {d}: {exc}") from exc
    n = traj.states.shape[2]
    art = RunArtifacts(d, d / "states.csv", d / "ports.csv", d / "energy.csv", d / "audit.json", [])
    _write(art.states, ["t"] + state_columns(n), np.column_stack([traj.t, traj.states.reshape(len(traj), -1)]))
    _write(art.ports, ["t", "u_hat_1", "u_hat_2", "u_check_1", "y_hat_1", "y_hat_2", "y_check_1"],
           np.column_stack([traj.t, traj.ports]))
    header, table = energy_table(traj)
    _write(art.energy, header, table)
    art.audit.write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")

    tip = d / "tip.dat"
    np.savetxt(tip, np.column_stack([traj.t, traj.traces]), fmt=FMT, header="t w1_L w2_L w1_1_L")
    energy = d / "energy.dat"
    np.savetxt(energy, np.column_stack([traj.t, traj.energy, traj.storage]), fmt=FMT, header="t E_h storage")
    script = d / "plot.py"
    script.write_text(_PLOT_STUB)
    art.plotdata = [tip, energy, script]
    return art


_PLOT_STUB = '''"""Plot the tip traces and energies of this run (needs matplotlib)."""
import numpy as np
import matplotlib.pyplot as plt

tip = np.loadtxt("tip.dat")
energy = np.loadtxt("energy.dat")
fig, ax = plt.subplots(2, 1, sharex=True)
for k, label in enumerate(["w1(L)", "w2(L)", "w1_1(L)"], start=1):
    ax[0].plot(tip[:, 0], tip[:, k], label=label)
ax[0].legend()
ax[1].semilogy(energy[:, 0], energy[:, 1], label="E_h")
ax[1].semilogy(energy[:, 0], energy[:, 2], label="storage")
ax[1].set_xlabel("t [s]")
ax[1].legend()
plt.savefig("plot.png", dpi=120)
'''


def read_states_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """``(t, states)`` with ``states`` of shape (k, 4, n)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = (data.shape[1] - 1) // 4
    return data[:, 0], data[:, 1:].reshape(len(data), 4, n)


def audit_report(cfg: ScenarioConfig, traj: Trajectory, audit: BalanceAudit) -> dict:
    report = {
        "scenario": cfg.name,
        "model": cfg.model.variant.value,
        "controller": cfg.controller_type,
        "n_nodes": cfg.n_nodes,
        "dt": cfg.dt,
        "t_final": float(traj.t[-1]),
        "balance": audit.summary(),
        "step_monotonicity_violations": traj.monotone_violations if traj.passive else None,
        "max_step_storage_increase": traj.max_step_increase,
        "final_tip": dict(zip(("w1_L", "w2_L", "w1_1_L"), map(float, traj.traces[-1]))),
        "newton_iterations": traj.newton_iterations,
    }
    checks = {"balance_splits_agree": audit.splits_agree}
    if traj.passive:
        checks["storage_nonincreasing"] = traj.monotone_violations == 0 and audit.monotonicity_violations == 0
    if cfg.controller_type == "ebc":
        target = cfg.ebc.desired_traces(cfg.material.L)
        report["tip_target"] = target.tolist()
        report["tip_relative_error"] = float(abs(traj.traces[-1, 0] - target[0]) / abs(target[0]))
    if cfg.controller_type == "casimir":
        drift = casimir_drift(traj, cfg.casimir, CASIMIR_DRIFT_TOL)
        report["casimir_drift"] = drift.drift.tolist()
        report["casimir_relative_drift"] = drift.relative
        report["max_interconnection_power"] = traj.max_step_interconnection
        checks["casimir_conserved"] = drift.passed
        checks["interconnection_power_neutral"] = traj.max_step_interconnection < INTERCONNECTION_TOL
    report["checks"] = checks
    report["passed"] = all(checks.values())
    return report


def run_scenario(cfg: ScenarioConfig, output_dir=None, progress=None) -> RunArtifacts:
    """Simulate, audit and write all artifacts; ``passed`` reflects the audit."""
    traj = simulate(cfg, progress=progress)
    audit = audit_energy_balance(traj, cfg.model, cfg.ops)
    report = audit_report(cfg, traj, audit)
    art = emit_csv(traj, report, output_dir or cfg.output_dir)
    art.config = art.directory / "config.txt"
    art.config.write_text(cfg.to_text())
    art.passed = report["passed"]
    art.report = report
    return art


def audit_run_dir(directory, tol: float = 1e-10) -> dict:
    """Re-check an emitted run from its CSV files alone."""
    d = Path(directory)
    with open(d / "energy.csv") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(d / "energy.csv", delimiter=",", skiprows=1, ndmin=2)
    col = {name: data[:, i] for i, name in enumerate(header)}
    residual = np.diff(col["E_h"]) - col["boundary_flux"][1:] + col["dissipation"][1:]
    storage_name = next((h for h in ("H_d", "H_cl") if h in col), None)
    report = {
        "snapshots": int(len(data)),
        "max_residual": float(np.max(np.abs(residual), initial=0.0)),
        "residual_consistent": bool(np.allclose(residual, col["residual"][1:], rtol=1e-9, atol=1e-15)),
        "dissipation_nonnegative": bool(np.all(col["dissipation"] >= 0)),
    }
    if storage_name:
        s = col[storage_name]
        report["storage"] = storage_name
        report["monotonicity_violations"] = int(np.sum(np.diff(s) > tol * abs(s[0])))
    checks = [report["residual_consistent"], report["dissipation_nonnegative"],
              report.get("monotonicity_violations", 0) == 0]
    report["passed"] = all(checks)
    return report


# ---------------------------------------------------------------------------


def _load(path_or_preset: str, overrides=()) -> ScenarioConfig:
    if path_or_preset in PRESETS and not Path(path_or_preset).exists():
        text = f"preset = {path_or_preset}\n"
    else:
        try:
            text = Path(path_or_preset).read_text()
        except OSError as exc:
            raise ConfigError([("<file>", None, f"cannot read {path_or_preset}: {exc}")]) from exc
    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError([(item, None, "override must look like KEY=VALUE")])
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return parse_config(text, pairs)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_run(args) -> int:
    cfg = _load(args.config, args.set)
    art = run_scenario(cfg, args.output)
    _print({"output": str(art.directory), **art.report})
    return EXIT_OK if art.passed else EXIT_AUDIT


def cmd_preset(args) -> int:
    if args.print:
        cfg = preset_config(args.name)
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    args.config = args.name
    return cmd_run(args)


def cmd_audit(args) -> int:
    report = audit_run_dir(args.run_dir)
    _print(report)
    return EXIT_OK if report["passed"] else EXIT_AUDIT


def cmd_converge(args) -> int:
    cfg = _load(args.config, args.set)
    if args.levels < 3:
        raise ConfigError([("--levels", None, "need at least 3 levels")])
    if args.space:
        n0 = cfg.n_nodes
        ns = [(n0 - 1) * 2**k + 1 for k in range(args.levels)]
        rep = convergence_study(cfg, resolutions=ns, expected=float(cfg.order))
    else:
        dts = [cfg.dt / 2**k for k in range(args.levels)]
        expected = 2.0 if cfg.scheme == "ImplicitMidpoint" else 4.0
        rep = convergence_study(cfg, dts=dts, expected=expected)
    _print({"label": rep.label, "pairs": rep.pairs, "order": rep.order, "expected": rep.expected,
            "status": rep.status})
    return EXIT_OK if rep.passed else EXIT_AUDIT


def cmd_verify_casimir(args) -> int:
    cfg = _load(args.config, args.set)
    if cfg.casimir is None:
        raise ConfigError([("controller.type", None, "verify-casimir needs controller.type = casimir")])
    rep = verify_casimir_conditions(cfg.casimir, cfg.model, cfg.ops, args.samples, bc=cfg.bc, rng=cfg.seed)
    _print({"samples": rep.samples, "max_residual": rep.max_residual, "failures": rep.failures[:20],
            "passed": rep.passed})
    return EXIT_OK if rep.passed else EXIT_AUDIT


def cmd_oracle(args) -> int:
    cfg = _load(args.config, args.set)
    res = variational_oracle(cfg.model, cfg.ops, args.trials, rng=cfg.seed)
    bound = 1e-6 if cfg.model.variant.is_nonlinear else 1e-10
    ok = bool(res.interior <= bound and res.boundary <= 1e-10)
    _print({"trials": res.trials, "interior": res.interior, "interior_bound": bound, "boundary": res.boundary,
            "boundary_bound": 1e-10, "passed": ok})
    return EXIT_OK if ok else EXIT_AUDIT


def _sweep_one(path: str) -> tuple[str, int, str]:
    try:
        art = run_scenario(_load(path))
        return path, EXIT_OK if art.passed else EXIT_AUDIT, str(art.directory)
    except ConfigError as exc:
        return path, EXIT_CONFIG, str(exc)
    except (StepFailure, StateError, DomainError) as exc:
        return path, EXIT_NUMERIC, str(exc)


def cmd_sweep(args) -> int:
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_sweep_one, args.configs))
    for path, code, info in results:
        print(f"{path}\t{code}\t{info}")
    return max((code for _, code, _ in results), default=EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phbeam", description="Port-Hamiltonian beam simulator with boundary control.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, name="config", help_text="config file or preset name"):
        sp.add_argument(name, help=help_text)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        return sp

    r = with_config(sub.add_parser("run", help="run a scenario and write CSV artifacts"))
    r.add_argument("-o", "--output", help="output directory")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("preset", help="run (or print) a built-in scenario")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    pr.add_argument("-o", "--output")
    pr.add_argument("--print", action="store_true", help="print the preset's config instead of running it")
    pr.set_defaults(func=cmd_preset)

    a = sub.add_parser("audit", help="re-check the energy balance of an emitted run")
    a.add_argument("run_dir")
    a.set_defaults(func=cmd_audit)

    c = with_config(sub.add_parser("converge", help="self-convergence study in dt (or grid with --space)"))
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("--space", action="store_true")
    c.set_defaults(func=cmd_converge)

    v = with_config(sub.add_parser("verify-casimir", help="check the Casimir structure conditions"))
    v.add_argument("--samples", type=int, default=100)
    v.set_defaults(func=cmd_verify_casimir)

    o = with_config(sub.add_parser("oracle", help="variational-derivative finite-difference oracle"))
    o.add_argument("--trials", type=int, default=100)
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("sweep", help="run several configs concurrently")
    s.add_argument("configs", nargs="+")
    s.add_argument("-j", "--jobs", type=int, default=None)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, StateError, DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
