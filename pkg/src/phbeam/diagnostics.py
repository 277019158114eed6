"""Energy-balance audits, Casimir drift, variational oracle and convergence studies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from phbeam.discretization import (
    DiscreteOperators,
    FieldSet,
    Grid,
    boundary_pairing,
    build_operators,
    discrete_energy,
    nodal_jets,
    variational_derivative,
)
from phbeam.dynamics import BeamState, BeamSystem, Trajectory
from phbeam.errors import StateError
from phbeam.model import ModelSpec, hamiltonian_partials

N_MODES = 5


def random_fourier_field(ops: DiscreteOperators, rng, scale: float = 1.0, modes: int = N_MODES) -> np.ndarray:
    """Band-limited random field: constant plus ``modes`` sine and cosine terms."""
    z = ops.grid.z / ops.grid.L
    k = np.arange(1, modes + 1)
    a, b = rng.standard_normal((2, modes)) / k
    basis = np.pi * np.outer(z, k)
    return scale * (rng.standard_normal() + np.cos(basis) @ a + np.sin(basis) @ b)


def random_fourier_state(ops: DiscreteOperators, rng=None, scale: float = 1.0, momentum_scale: float = 1.0) -> BeamState:
    rng = np.random.default_rng(rng)
    return BeamState(
        w1=random_fourier_field(ops, rng, scale),
        w2=random_fourier_field(ops, rng, scale),
        p1=random_fourier_field(ops, rng, momentum_scale),
        p2=random_fourier_field(ops, rng, momentum_scale),
    )


# ---------------------------------------------------------------------------
# power balance


def _balance_splits(model: ModelSpec, ops: DiscreteOperators, state) -> tuple[float, float]:
    """Instantaneous ``(raw, rewritten)`` power of the state-evaluated forces.

    ``raw`` pairs the velocities with the damping operators directly and uses
    the undamped boundary forces; ``rewritten`` has the nonnegative quadratic
    dissipation and the damping-corrected boundary forces. They agree by
    discrete integration by parts.
    """
    rhoA = model.material.rho_times_A
    a1s, a2s = model.structural_damping
    a1v, a2v = model.viscous_damping
    v1, v2 = state.p1 / rhoA, state.p2 / rhoA
    D1, D2, w = ops.D1, ops.D2, ops.w
    d = hamiltonian_partials(model, nodal_jets(state.w1, state.w2, state.p1, state.p2, ops))
    Q = d.dH_dw1_1 - D1 @ d.dH_dw1_11
    N = d.dH_dw2_1
    M = d.dH_dw1_11
    D1v1, D2v1, D1v2 = D1 @ v1, D2 @ v1, D1 @ v2
    ends = np.array([-1.0, 1.0])
    idx = [0, -1]

    def bsum(vals):
        return float(ends @ vals[idx])

    flux_raw = bsum(v1 * Q + v2 * N + D1v1 * M)
    domain_raw = float(w @ (-(D2 @ (a1s * D2v1)) * v1 + (D1 @ (a2s * D1v2)) * v2) - w @ (a1v * v1**2 + a2v * v2**2))
    Qc = Q - D1 @ (a1s * D2v1)
    Nc = N + a2s * D1v2
    Mc = M + a1s * D2v1
    flux_new = bsum(v1 * Qc + v2 * Nc + D1v1 * Mc)
    domain_new = -float(w @ (a1s * D2v1**2 + a2s * D1v2**2 + a1v * v1**2 + a2v * v2**2))
    return flux_raw + domain_raw, flux_new + domain_new


def balance_splits(model: ModelSpec, ops: DiscreteOperators, state) -> tuple[float, float]:
    return _balance_splits(model, ops, state)


def semidiscrete_balance(system: BeamSystem, y, t: float = 0.0) -> tuple[float, float]:
    """``(dE_h/dt, -v^T K v + u . y)`` at one instant, without time integration."""
    w1, w2, p1, p2 = system.fields(y)
    ydot = system.rate(y, t)
    dfields = system.fields(ydot)
    dstate = FieldSet(*dfields)
    d = variational_derivative(system.model, BeamState(w1, w2, p1, p2), system.ops)
    lhs = float(system.ops.w @ (d.w1 * dstate.w1 + d.w2 * dstate.w2 + d.p1 * dstate.p1 + d.p2 * dstate.p2))
    lhs += boundary_pairing(system.model, BeamState(w1, w2, p1, p2), dstate, system.ops)
    _, u = system.g(y, t)
    rhs = system.port_power(y, u) - system.dissipation(y)
    return lhs, rhs


@dataclass
class BalanceAudit:
    dE: np.ndarray
    boundary_flux_integral: np.ndarray
    domain_dissipation_integral: np.ndarray
    residual: np.ndarray
    split_mismatch: np.ndarray       # |raw - rewritten| power at each snapshot
    storage_increment: np.ndarray    # increments of E_h + controller energy
    max_residual: float
    monotonicity_violations: int
    split_tol: float = 1e-10
    monotone_tol: float = 1e-10

    @property
    def integrated_residual(self) -> float:
        return float(np.sum(np.abs(self.residual)))

    @property
    def splits_agree(self) -> bool:
        return bool(np.all(self.split_mismatch <= self.split_tol))

    def summary(self) -> dict:
        return {
            "steps": int(len(self.dE)),
            "max_residual": float(self.max_residual),
            "integrated_residual": self.integrated_residual,
            "max_split_mismatch": float(np.max(self.split_mismatch, initial=0.0)),
            "splits_agree": self.splits_agree,
            "monotonicity_violations": int(self.monotonicity_violations),
        }


def audit_energy_balance(traj: Trajectory, model: ModelSpec, ops: DiscreteOperators, *,
                         split_tol: float = 1e-10, monotone_tol: float = 1e-10) -> BalanceAudit:
    """Per-interval ``dE - flux + dissipation`` and the balance-form equivalence.

    Monotonicity is counted on the closed-loop storage for passive loops, with
    tolerance ``monotone_tol * |storage(0)|``.
    """
    if len(traj) < 2:
        raise StateError("trajectory needs at least two snapshots")
    dE = np.diff(traj.energy)
    residual = dE - traj.flux_int + traj.diss_int
    mismatch = []
    for k in range(len(traj)):
        raw, new = _balance_splits(model, ops, traj.state(k))
        mismatch.append(abs(raw - new) / max(1.0, abs(raw), abs(new)))
    dS = np.diff(traj.storage)
    thresh = monotone_tol * max(abs(traj.storage[0]), 1e-300)
    violations = int(np.sum(dS > thresh)) if traj.passive else 0
    return BalanceAudit(
        dE=dE,
        boundary_flux_integral=traj.flux_int,
        domain_dissipation_integral=traj.diss_int,
        residual=residual,
        split_mismatch=np.array(mismatch),
        storage_increment=dS,
        max_residual=float(np.max(np.abs(residual), initial=0.0)),
        monotonicity_violations=violations,
        split_tol=split_tol,
        monotone_tol=monotone_tol,
    )


# ---------------------------------------------------------------------------
# Casimir drift


@dataclass
class CasimirDrift:
    drift: np.ndarray        # per-index max |C(t) - C(0)|
    offset: np.ndarray       # C(0)
    scale: float
    threshold: float = 1e-8

    @property
    def relative(self) -> float:
        return float(np.max(self.drift) / self.scale)

    @property
    def passed(self) -> bool:
        return self.relative < self.threshold


def casimir_drift(traj: Trajectory, setup=None, threshold: float = 1e-8) -> CasimirDrift:
    """Drift of ``x_c[i] - trace_i`` for the three tip traces.

    The relative value divides by the largest trace magnitude seen, floored
    by the desired tip traces of ``setup`` when given.
    """
    if traj.xc.shape[1] < 3:
        raise StateError("trajectory carries no controller states")
    C = traj.xc[:, :3] - traj.traces
    drift = np.max(np.abs(C - C[0]), axis=0)
    scale = float(np.max(np.abs(traj.traces)))
    if setup is not None:
        scale = max(scale, float(np.max(np.abs(setup.desired))))
    return CasimirDrift(drift=drift, offset=C[0], scale=max(scale, 1e-300), threshold=threshold)


# ---------------------------------------------------------------------------
# variational derivative oracle


def boundary_vanishing(v: np.ndarray, ops: DiscreteOperators) -> np.ndarray:
    """Project ``v`` so that it and its ``D1`` image vanish at both end nodes."""
    C = np.vstack([np.eye(ops.n)[0], ops.row("D1", "left"), np.eye(ops.n)[-1], ops.row("D1", "right")])
    return v - C.T @ np.linalg.solve(C @ C.T, C @ v)


def _directional_fd(model, ops, state, direction, eps):
    """Five-point centred difference of ``E_h`` along ``direction``; exact for quartic energies."""
    def energy(s):
        shifted = BeamState(state.w1 + s * direction.w1, state.w2 + s * direction.w2, state.p1, state.p2)
        return discrete_energy(model, shifted, ops)

    return (energy(-2 * eps) - 8 * energy(-eps) + 8 * energy(eps) - energy(2 * eps)) / (12 * eps)


@dataclass
class OracleResult:
    interior: float   # max relative discrepancy, boundary-vanishing perturbations
    boundary: float   # max relative mismatch against the predicted boundary term
    trials: int


def variational_oracle(model: ModelSpec, ops: DiscreteOperators, trials: int = 100, rng=None,
                       eps: float = 1e-3, scale: float = 1.0) -> OracleResult:
    """Compare finite differences of ``E_h`` with the quadrature pairing ``sum(W dH v)``."""
    rng = np.random.default_rng(rng)
    worst_in = worst_bd = 0.0
    for _ in range(trials):
        st = random_fourier_state(ops, rng, scale)
        dH = variational_derivative(model, st, ops)
        raw = FieldSet(random_fourier_field(ops, rng), random_fourier_field(ops, rng), 0, 0)
        inner = FieldSet(boundary_vanishing(raw.w1, ops), boundary_vanishing(raw.w2, ops), 0, 0)
        for direction, is_inner in ((inner, True), (raw, False)):
            pairing = float(ops.w @ (dH.w1 * direction.w1 + dH.w2 * direction.w2))
            fd = _directional_fd(model, ops, st, direction, eps)
            if is_inner:
                worst_in = max(worst_in, abs(fd - pairing) / max(abs(fd), 1.0))
            else:
                predicted = boundary_pairing(model, st, direction, ops)
                worst_bd = max(worst_bd, abs((fd - pairing) - predicted) / max(abs(fd), abs(pairing), 1.0))
    return OracleResult(worst_in, worst_bd, trials)


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    resolutions: np.ndarray      # step sizes (h or dt)
    errors: np.ndarray
    order: float
    expected: float
    status: str                  # "pass", "fail", "preasymptotic" or "exact"
    tolerance: float = 0.3
    label: str = ""

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "exact")

    @property
    def pairs(self):
        return list(zip(self.resolutions.tolist(), self.errors.tolist()))


def fit_order(steps: Sequence[float], errors: Sequence[float], expected: float, tolerance: float = 0.3,
              label: str = "") -> ConvergenceReport:
    steps, errors = np.asarray(steps, float), np.asarray(errors, float)
    if len(steps) < 3:
        raise ValueError("need at least three resolutions")
    if np.all(errors == 0):
        return ConvergenceReport(steps, errors, float("inf"), expected, "exact", tolerance, label)
    if np.any(errors <= 0):
        return ConvergenceReport(steps, errors, float("nan"), expected, "preasymptotic", tolerance, label)
    order = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    order_by_step = np.argsort(steps)
    if np.any(np.diff(errors[order_by_step]) <= 0):
        status = "preasymptotic"
    else:
        status = "pass" if abs(order - expected) <= tolerance else "fail"
    return ConvergenceReport(steps, errors, order, expected, status, tolerance, label)


def convergence_study(scenario, resolutions: Sequence[int] | None = None, dts: Sequence[float] | None = None,
                      expected: float = 2.0, run: Callable | None = None) -> ConvergenceReport:
    """Self-convergence of the final state against a refined run.

    Give ``resolutions`` (nested node counts) for a spatial study or ``dts``
    for a temporal one. Time errors are the max norm of the final state;
    grid errors are the weighted L2 norm of the displacements. The reference is one extra refinement by a factor 2
    (space) or 4 (time).
    """
    from phbeam.dynamics import simulate

    run = run or simulate
    if (resolutions is None) == (dts is None):
        raise ValueError("give exactly one of resolutions or dts")
    if dts is not None:
        dts = sorted(dts, reverse=True)
        ref_dt = dts[-1] / 4
        t_final = scenario.t_final

        def final_state(dt):
            sc = scenario.with_overrides(**{"integrator.dt": dt, "integrator.stride": int(round(t_final / dt))})
            tr = run(sc)
            return tr.states[-1]

        ref = final_state(ref_dt)
        errs = [float(np.max(np.abs(final_state(dt) - ref))) for dt in dts]
        return fit_order(dts, errs, expected, label="time step")

    resolutions = sorted(resolutions)
    ref_n = 2 * (resolutions[-1] - 1) + 1
    if any((ref_n - 1) % (n - 1) for n in resolutions):
        raise ValueError("grids must be nested: each n - 1 must divide 2 * (n_max - 1)")

    def final_state(n):
        sc = scenario.with_overrides(**{"grid.n_nodes": n})
        return run(sc).states[-1]

    # weighted L2 error of the displacements on the coarse nodes; boundary
    # traces such as the tip slope see the lower-order boundary closure
    ref = final_state(ref_n)
    L = scenario.material.L
    hs, errs = [], []
    for n in resolutions:
        d = final_state(n)[:2] - ref[:2, :: (ref_n - 1) // (n - 1)]
        w = build_operators(Grid(n, L), scenario.order).w
        hs.append(L / (n - 1))
        errs.append(float(np.sqrt(np.sum(d**2 @ w))))
    return fit_order(hs, errs, expected, label="grid")
