"""Semidiscrete port-Hamiltonian beam, boundary actuation and time stepping.

The discrete system is assembled in "weak" form. With ``E_h`` the discrete
energy and ``v = p / rhoA`` the nodal velocities, the momentum balance reads

    W dp/dt = -grad_w E_h - K v + b_hat u_hat + b_check u_check

projected onto the space admitted by the left-end constraints. ``K`` is the
dual of the dissipation operator (``D2^T W alpha1 D2`` for structural damping,
``W alpha1`` for viscous damping), ``b_hat = e_L`` and ``b_check = D1^T e_L``.
Away from the boundary stencils this is exactly ``dp/dt = -delta H - R(v)``;
at the actuated end the natural boundary forces are replaced by the commanded
inputs, so that

    dE_h/dt = -v^T K v + u_hat . y_hat + u_check . y_check

holds exactly for the semidiscrete system.

Constrained nodal values are eliminated: the integrators work on a reduced
vector ``y = [w1_r, w2_r, p1_r, p2_r, x_c]`` with ``w = P w_r`` and a
constant mass matrix ``M`` such that ``M dy/dt = g(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from phbeam.discretization import DiscreteOperators, discrete_energy
from phbeam.errors import ConfigError, StateError, StepFailure
from phbeam.model import ModelSpec, hamiltonian_hessian, hamiltonian_partials, JetPoint

# order of the boundary measurement vector handed to controllers
MEASUREMENTS = ("w1_L", "w2_L", "w1_1_L", "y_hat_1", "y_hat_2", "y_check_1")
INPUTS = ("u_hat_1", "u_hat_2", "u_check_1")


@dataclass(frozen=True)
class BeamState:
    w1: np.ndarray
    w2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, n: int, t: float = 0.0) -> "BeamState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), t)

    def as_array(self) -> np.ndarray:
        return np.stack([self.w1, self.w2, self.p1, self.p2])


@dataclass(frozen=True)
class BoundaryInput:
    """Commanded shear force, normal force and bending moment at ``z = L``."""

    u_hat_1: float = 0.0
    u_hat_2: float = 0.0
    u_check_1: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("boundary input must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u_hat_1, self.u_hat_2, self.u_check_1], dtype=float)


@dataclass(frozen=True)
class PortValues:
    y_hat_1: float
    y_hat_2: float
    y_check_1: float
    u_hat_1: float = 0.0
    u_hat_2: float = 0.0
    u_check_1: float = 0.0

    @property
    def power(self) -> float:
        return self.u_hat_1 * self.y_hat_1 + self.u_hat_2 * self.y_hat_2 + self.u_check_1 * self.y_check_1


@dataclass(frozen=True)
class BoundaryConditions:
    """Conditions at the unactuated end ``z = 0``.

    ``w1`` is ``"clamped"`` (``w1 = w1_1 = 0``) or ``"free"``; ``w2`` is
    ``"fixed"`` (``w2 = 0``) or ``"free"``. Both choices exchange no power.
    """

    w1: str = "clamped"
    w2: str = "fixed"

    def __post_init__(self):
        if self.w1 not in ("clamped", "free"):
            raise ConfigError([("bc.w1", None, f"expected 'clamped' or 'free', got {self.w1!r}")])
        if self.w2 not in ("fixed", "free"):
            raise ConfigError([("bc.w2", None, f"expected 'fixed' or 'free', got {self.w2!r}")])


# ---------------------------------------------------------------------------
# controllers as seen by the plant


class Controller:
    """Boundary feedback driven by the six measurements in :data:`MEASUREMENTS`.

    The base class applies zero input. Subclasses override what they need;
    ``n_states`` controller states are appended to the integrated vector.
    """

    n_states = 0
    name = "none"
    # whether E_h + storage() must be nonincreasing for this closed loop
    passive = True

    def initial_state(self, meas: np.ndarray) -> np.ndarray:
        return np.zeros(self.n_states)

    def inputs(self, meas, xc, t) -> np.ndarray:
        return np.zeros(3)

    def input_jacobian(self, meas, xc, t):
        return np.zeros((3, 6)), np.zeros((3, self.n_states))

    def state_rhs(self, meas, xc, t) -> np.ndarray:
        return np.zeros(self.n_states)

    def state_jacobian(self, meas, xc, t):
        return np.zeros((self.n_states, 6)), np.zeros((self.n_states, self.n_states))

    def storage(self, meas, xc) -> float:
        return 0.0

    def interconnection_power(self, meas, xc) -> float:
        return 0.0


class OpenLoopInput(Controller):
    """Time-dependent input ``provider(t) -> BoundaryInput``."""

    name = "open-loop"
    passive = False

    def __init__(self, provider: Callable[[float], BoundaryInput]):
        self.provider = provider

    def inputs(self, meas, xc, t):
        return self.provider(t).as_array()


# ---------------------------------------------------------------------------


def _reduction(ops: DiscreteOperators, kind: str):
    """Basis ``P`` of the admissible nodal vectors and the kept node indices."""
    n = ops.n
    if kind == "free":
        return sp.identity(n, format="csr"), np.arange(n)
    if kind == "fixed":
        keep = np.arange(1, n)
        P = sp.csr_matrix((np.ones(n - 1), (keep, np.arange(n - 1))), shape=(n, n - 1))
        return P, keep
    if kind == "clamped":
        # v0 = 0 and (D1 v)_0 = 0; node 1 follows from the first D1 row
        keep = np.arange(2, n)
        row0 = ops.row("D1", "left")
        rows, cols, vals = list(keep), list(range(n - 2)), [1.0] * (n - 2)
        for j in np.nonzero(row0[2:])[0]:
            rows.append(1)
            cols.append(j)
            vals.append(-row0[j + 2] / row0[1])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n - 2)), keep
    raise ValueError(kind)


class BeamSystem:
    """Reduced semidiscrete closed loop ``M dy/dt = g(y, t)``."""

    def __init__(self, model: ModelSpec, ops: DiscreteOperators, bc: BoundaryConditions | None = None,
                 controller: Controller | None = None):
        self.model = model
        self.ops = ops
        self.bc = bc or BoundaryConditions()
        self.controller = controller or Controller()
        n = ops.n
        self.rhoA = model.material.rho_times_A

        self.P1, self.keep1 = _reduction(ops, self.bc.w1)
        self.P2, self.keep2 = _reduction(ops, self.bc.w2)
        self.m1, self.m2 = self.P1.shape[1], self.P2.shape[1]
        self.nc = self.controller.n_states
        m1, m2, nc = self.m1, self.m2, self.nc
        self.slices = {
            "w1": slice(0, m1),
            "w2": slice(m1, m1 + m2),
            "p1": slice(m1 + m2, 2 * m1 + m2),
            "p2": slice(2 * m1 + m2, 2 * m1 + 2 * m2),
            "xc": slice(2 * m1 + 2 * m2, 2 * m1 + 2 * m2 + nc),
        }
        self.dim = 2 * m1 + 2 * m2 + nc

        W = ops.W
        self.P1T, self.P2T = self.P1.T.tocsr(), self.P2.T.tocsr()
        self.Mr1 = (self.P1T @ W @ self.P1).tocsr()
        self.Mr2 = (self.P2T @ W @ self.P2).tocsr()
        self.M = sp.block_diag(
            [sp.identity(m1), sp.identity(m2), self.Mr1, self.Mr2, sp.identity(nc)], format="csc"
        )
        self._Mdiag = self.M.diagonal()
        self._Mlu = None

        # dissipation duals, so that v^T K v is the dissipated power
        a1s, a2s = model.structural_damping
        a1v, a2v = model.viscous_damping
        self.K1 = (a1s * (ops.D2T @ W @ ops.D2) + a1v * W).tocsr()
        self.K2 = (a2s * (ops.D1T @ W @ ops.D1) + a2v * W).tocsr()

        # reduced operators used for gradients / Hessians
        self.D1P1 = (ops.D1 @ self.P1).tocsr()
        self.D2P1 = (ops.D2 @ self.P1).tocsr()
        self.D1P2 = (ops.D1 @ self.P2).tocsr()
        self.D1P1T, self.D2P1T, self.D1P2T = self.D1P1.T.tocsr(), self.D2P1.T.tocsr(), self.D1P2.T.tocsr()
        self.K1r = (self.P1T @ self.K1 @ self.P1).tocsr()
        self.K2r = (self.P2T @ self.K2 @ self.P2).tocsr()

        # input map: columns act on (u_hat_1, u_hat_2, u_check_1)
        eL = np.zeros(n)
        eL[-1] = 1.0
        b_check = ops.row("D1", "right")
        B = np.zeros((self.dim, 3))
        B[self.slices["p1"], 0] = self.P1T @ eL
        B[self.slices["p2"], 1] = self.P2T @ eL
        B[self.slices["p1"], 2] = self.P1T @ b_check
        self.Bin = sp.csr_matrix(B)

        # measurement map y -> MEASUREMENTS
        T = np.zeros((6, self.dim))
        T[0, self.slices["w1"]] = self.P1[-1].toarray().ravel()
        T[1, self.slices["w2"]] = self.P2[-1].toarray().ravel()
        T[2, self.slices["w1"]] = self.D1P1[-1].toarray().ravel()
        T[3, self.slices["p1"]] = self.P1[-1].toarray().ravel() / self.rhoA
        T[4, self.slices["p2"]] = self.P2[-1].toarray().ravel() / self.rhoA
        T[5, self.slices["p1"]] = self.D1P1[-1].toarray().ravel() / self.rhoA
        self.T = sp.csr_matrix(T)

        S = np.zeros((nc, self.dim))
        S[:, self.slices["xc"]] = np.eye(nc)
        self.Sxc = sp.csr_matrix(S)

    # -- conversions -------------------------------------------------------

    def fields(self, y):
        s = self.slices
        return (self.P1 @ y[s["w1"]], self.P2 @ y[s["w2"]], self.P1 @ y[s["p1"]], self.P2 @ y[s["p2"]])

    def to_state(self, y, t=0.0) -> BeamState:
        return BeamState(*self.fields(y), t=t)

    def controller_state(self, y) -> np.ndarray:
        return y[self.slices["xc"]]

    def check_state(self, state: BeamState, rtol: float = 1e-10):
        """Raise :class:`StateError` if ``state`` violates the left-end constraints."""
        self.ops.check(state.w1, state.w2, state.p1, state.p2)
        for name, P, keep in (("w1", self.P1, self.keep1), ("w2", self.P2, self.keep2),
                              ("p1", self.P1, self.keep1), ("p2", self.P2, self.keep2)):
            f = np.asarray(getattr(state, name), dtype=float)
            if not np.all(np.isfinite(f)):
                raise StateError(f"{name} is not finite")
            scale = max(np.max(np.abs(f)), 1e-300)
            if np.max(np.abs(P @ f[keep] - f)) > rtol * scale:
                raise StateError(f"{name} violates the boundary conditions at z=0")

    def reduce(self, state: BeamState, xc=None, check: bool = True) -> np.ndarray:
        if check:
            self.check_state(state)
        parts = [state.w1[self.keep1], state.w2[self.keep2], state.p1[self.keep1], state.p2[self.keep2]]
        if xc is None:
            xc = self.controller.initial_state(self._meas_from_parts(parts))
        return np.concatenate(parts + [np.asarray(xc, dtype=float).reshape(self.nc)])

    def project(self, state: BeamState) -> BeamState:
        """Admissible state obtained by eliminating the constrained nodes."""
        return self.to_state(self.reduce(state, xc=np.zeros(self.nc), check=False), t=state.t)

    def _meas_from_parts(self, parts):
        y = np.concatenate(list(parts) + [np.zeros(self.nc)])
        return self.T @ y

    def measurements(self, y) -> np.ndarray:
        return self.T @ y

    # -- dynamics ----------------------------------------------------------

    def _jets(self, w1, w2, p1, p2):
        ops = self.ops
        return JetPoint(w1=w1, w2=w2, p1=p1, p2=p2, w1_1=ops.D1 @ w1, w2_1=ops.D1 @ w2, w1_11=ops.D2 @ w1)

    def inputs(self, y, t) -> np.ndarray:
        meas = self.T @ y
        return self.controller.inputs(meas, self.controller_state(y), t)

    def g(self, y, t):
        """Right-hand side in mass-matrix form; returns ``(g, u)``."""
        s = self.slices
        w = self.ops.w
        w1, w2, _, _ = self.fields(y)
        q = self._jets(w1, w2, 0.0, 0.0)
        d = hamiltonian_partials(self.model, q)
        meas = self.T @ y
        xc = y[s["xc"]]
        u = self.controller.inputs(meas, xc, t)

        out = np.empty(self.dim)
        out[s["w1"]] = y[s["p1"]] / self.rhoA
        out[s["w2"]] = y[s["p2"]] / self.rhoA
        grad1 = self.D1P1T @ (w * d.dH_dw1_1) + self.D2P1T @ (w * d.dH_dw1_11) + self.P1T @ (w * d.dH_dw1)
        grad2 = self.D1P2T @ (w * d.dH_dw2_1) + self.P2T @ (w * d.dH_dw2)
        out[s["p1"]] = -grad1 - self.K1r @ (y[s["p1"]] / self.rhoA)
        out[s["p2"]] = -grad2 - self.K2r @ (y[s["p2"]] / self.rhoA)
        out[s["xc"]] = self.controller.state_rhs(meas, xc, t)
        out += self.Bin @ u
        return out, u

    def jacobian(self, y, t) -> sp.csr_matrix:
        """Analytic Jacobian of :meth:`g` with respect to ``y``."""
        s = self.slices
        w = self.ops.w
        w1, w2, _, _ = self.fields(y)
        hq = hamiltonian_hessian(self.model, self._jets(w1, w2, 0.0, 0.0))
        H11 = self.D2P1T @ sp.diags(w * hq.d33) @ self.D2P1
        if np.any(hq.d11):
            H11 = H11 + self.D1P1T @ sp.diags(w * hq.d11) @ self.D1P1
        H22 = self.D1P2T @ sp.diags(w * hq.d22) @ self.D1P2
        H12 = self.D1P1T @ sp.diags(w * hq.d12) @ self.D1P2 if np.any(hq.d12) else None
        H21 = H12.T if H12 is not None else None
        nc = self.nc
        blocks = [[None] * 5 for _ in range(5)]
        blocks[2][0] = -H11
        blocks[3][1] = -H22
        if H12 is not None:
            blocks[2][1] = -H12
            blocks[3][0] = -H21
        blocks[2][2] = -self.K1r / self.rhoA
        blocks[3][3] = -self.K2r / self.rhoA
        blocks[0][2] = sp.identity(self.m1) / self.rhoA
        blocks[1][3] = sp.identity(self.m2) / self.rhoA
        blocks[4][4] = sp.csr_matrix((nc, nc))
        blocks[0][0] = sp.csr_matrix((self.m1, self.m1))
        blocks[1][1] = sp.csr_matrix((self.m2, self.m2))
        J = sp.bmat(blocks, format="csr")

        meas = self.T @ y
        xc = y[s["xc"]]
        du_dm, du_dxc = self.controller.input_jacobian(meas, xc, t)
        du_dy = sp.csr_matrix(du_dm) @ self.T
        if nc:
            du_dy = du_dy + sp.csr_matrix(du_dxc) @ self.Sxc
            dg_dm, dg_dxc = self.controller.state_jacobian(meas, xc, t)
            dxc = sp.csr_matrix(dg_dm) @ self.T + sp.csr_matrix(dg_dxc) @ self.Sxc
            J = J + self.Sxc.T @ dxc
        if du_dy.nnz:
            J = J + self.Bin @ du_dy
        return J.tocsr()

    def fd_jacobian(self, y, t, eps: float = 1e-7) -> sp.csr_matrix:
        """Forward-difference Jacobian; slow, for cross-checks and small grids."""
        g0, _ = self.g(y, t)
        cols = []
        for k in range(self.dim):
            step = eps * max(1.0, abs(y[k]))
            yk = y.copy()
            yk[k] += step
            cols.append((self.g(yk, t)[0] - g0) / step)
        return sp.csr_matrix(np.column_stack(cols))

    def rate(self, y, t) -> np.ndarray:
        """``dy/dt = M^-1 g``."""
        if self._Mlu is None:
            self._Mlu = spla.splu(self.M)
        return self._Mlu.solve(self.g(y, t)[0])

    # -- energy bookkeeping -----------------------------------------------

    def energy(self, y) -> float:
        w1, w2, p1, p2 = self.fields(y)
        return discrete_energy(self.model, BeamState(w1, w2, p1, p2), self.ops)

    def storage(self, y) -> float:
        """Closed-loop storage: ``E_h`` plus the controller's energy."""
        return self.energy(y) + self.controller.storage(self.T @ y, self.controller_state(y))

    def dissipation(self, y) -> float:
        """Instantaneous power dissipated in the domain, ``v^T K v >= 0``."""
        s = self.slices
        v1 = y[s["p1"]] / self.rhoA
        v2 = y[s["p2"]] / self.rhoA
        return float(v1 @ (self.K1r @ v1) + v2 @ (self.K2r @ v2))

    def port_values(self, y, t) -> PortValues:
        meas = self.T @ y
        u = self.controller.inputs(meas, self.controller_state(y), t)
        return PortValues(y_hat_1=meas[3], y_hat_2=meas[4], y_check_1=meas[5],
                          u_hat_1=u[0], u_hat_2=u[1], u_check_1=u[2])

    def port_power(self, y, u) -> float:
        meas = self.T @ y
        return float(u @ meas[3:6])

    def traces(self, y) -> np.ndarray:
        """``(w1, w2, w1_1)`` at ``z = L``."""
        return (self.T @ y)[:3]


def rhs(model: ModelSpec, state: BeamState, inp: BoundaryInput, ops: DiscreteOperators,
        bc: BoundaryConditions | None = None) -> BeamState:
    """Time derivative of ``state`` under the constant boundary input ``inp``."""
    system = BeamSystem(model, ops, bc, OpenLoopInput(lambda t: inp))
    y = system.reduce(state)
    return system.to_state(system.rate(y, state.t), t=1.0)


# ---------------------------------------------------------------------------
# time integration

SCHEMES = ("ImplicitMidpoint", "RK4")


@dataclass
class StepResult:
    y: np.ndarray
    flux: float          # time integral of the port power over the step
    dissipation: float   # time integral of the dissipated power over the step
    interconnection: float  # largest |four-term interconnection power| seen at the stages
    newton_iterations: int = 0


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    jacobian: str = "analytic"
    reuse: bool = True


def _stage_terms(system: BeamSystem, y, t):
    gy, u = system.g(y, t)
    meas = system.T @ y
    flux = float(u @ meas[3:6])
    diss = system.dissipation(y)
    ic = abs(system.controller.interconnection_power(meas, system.controller_state(y)))
    return gy, u, flux, diss, ic


# residuals below this multiple of eps * (row magnitude) are roundoff
_ROUNDOFF = 16 * np.finfo(float).eps


def step_midpoint(system: BeamSystem, y, t, dt, newton: NewtonOptions | None = None, guess=None,
                  cache: dict | None = None) -> StepResult:
    """One implicit midpoint step.

    Newton stops once the mass-scaled residual, or the last Newton update,
    falls below ``tol * max|y|``, or once the residual is below its own
    roundoff floor ``eps * (|M| |Y - y| + dt |J| |mid|)``, which the stiff
    bending rows reach on fine grids. With ``newton.reuse`` the factorised Newton
    matrix is kept in ``cache`` across iterations and steps and refreshed
    whenever the iteration contracts slowly.
    """
    newton = newton or NewtonOptions()
    cache = {} if cache is None else cache
    if cache.get("dt") != dt:
        cache.clear()
        cache["dt"] = dt
    M = system.M
    Y = y.copy() if guess is None else guess.copy()
    inv_mdiag = 1.0 / system._Mdiag
    update = prev_update = np.inf
    fresh = False
    for it in range(newton.max_iter + 1):
        mid = 0.5 * (y + Y)
        gm, u, flux, diss, ic = _stage_terms(system, mid, t + 0.5 * dt)
        R = M @ (Y - y) - dt * gm
        scale = max(np.max(np.abs(y)), np.max(np.abs(Y)))
        res = np.max(np.abs(R * inv_mdiag))
        if not np.isfinite(res):
            raise StepFailure("non-finite residual in implicit midpoint step", t=t)
        if res <= newton.tol * scale or update <= newton.tol * scale or res == 0.0:
            return StepResult(Y, dt * flux, dt * diss, ic, it)
        if "absJ" in cache:
            floor = _ROUNDOFF * np.max((cache["absM"] @ np.abs(Y - y) + dt * (cache["absJ"] @ np.abs(mid))) * inv_mdiag)
            if res <= floor:
                return StepResult(Y, dt * flux, dt * diss, ic, it)
        if it == newton.max_iter:
            break
        slow = update > 0.2 * prev_update
        if "lu" not in cache or not newton.reuse or (slow and not fresh):
            Jg = (system.fd_jacobian(mid, t + 0.5 * dt) if newton.jacobian == "fd"
                  else system.jacobian(mid, t + 0.5 * dt))
            cache["absJ"], cache["absM"] = abs(Jg), abs(M)
            try:
                cache["lu"] = spla.splu((M - (0.5 * dt) * Jg).tocsc())
            except RuntimeError as exc:
                raise StepFailure(f"singular Newton matrix: {exc}", t=t) from exc
            fresh = True
        dY = cache["lu"].solve(-R)
        if not np.all(np.isfinite(dY)):
            raise StepFailure("non-finite Newton update", t=t)
        prev_update, update = update, np.max(np.abs(dY))
        Y = Y + dY
    raise StepFailure(f"Newton did not converge in {newton.max_iter} iterations (residual {res:.3e})", t=t)


_RK4_C = (0.0, 0.5, 0.5, 1.0)
_RK4_B = (1 / 6, 1 / 3, 1 / 3, 1 / 6)


def step_rk4(system: BeamSystem, y, t, dt) -> StepResult:
    if system._Mlu is None:
        system._Mlu = spla.splu(system.M)
    solve = system._Mlu.solve
    ks, flux, diss, ic = [], 0.0, 0.0, 0.0
    for i, c in enumerate(_RK4_C):
        ys = y if i == 0 else y + (dt * c) * ks[-1]
        if not np.all(np.isfinite(ys)):
            raise StepFailure("non-finite RK4 stage", t=t)
        gs, _, f, d, icp = _stage_terms(system, ys, t + c * dt)
        ks.append(solve(gs))
        flux += _RK4_B[i] * dt * f
        diss += _RK4_B[i] * dt * d
        ic = max(ic, icp)
    Y = y + dt * sum(b * k for b, k in zip(_RK4_B, ks))
    if not np.all(np.isfinite(Y)):
        raise StepFailure("non-finite state after RK4 step", t=t)
    return StepResult(Y, flux, diss, ic)


def step(integrator: str, model: ModelSpec, state: BeamState, input_provider, ops: DiscreteOperators, dt: float,
         bc: BoundaryConditions | None = None) -> BeamState:
    """Advance a bare beam state by one step under an open-loop input provider."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(input_provider, BoundaryInput):
        const = input_provider
        input_provider = lambda t: const  # noqa: E731
    system = BeamSystem(model, ops, bc, OpenLoopInput(input_provider))
    y = system.reduce(state)
    r = _advance(system, integrator, y, state.t, dt)
    return system.to_state(r.y, t=state.t + dt)


def _advance(system, scheme, y, t, dt, newton=None, guess=None, cache=None) -> StepResult:
    if scheme == "ImplicitMidpoint":
        return step_midpoint(system, y, t, dt, newton, guess, cache)
    if scheme == "RK4":
        return step_rk4(system, y, t, dt)
    raise ConfigError([("integrator.scheme", None, f"unknown scheme {scheme!r}; expected one of {SCHEMES}")])


@dataclass
class Trajectory:
    """Snapshots of one run plus per-interval energy-flow integrals.

    ``flux_int[k]`` and ``diss_int[k]`` integrate the port power and the
    domain dissipation over ``[t[k], t[k+1]]`` with the quadrature matched to
    the integrator (stage values, not snapshots).
    """

    t: np.ndarray
    states: np.ndarray          # (k, 4, n): w1, w2, p1, p2
    ports: np.ndarray           # (k, 6): u_hat_1, u_hat_2, u_check_1, y_hat_1, y_hat_2, y_check_1
    traces: np.ndarray          # (k, 3): w1(L), w2(L), w1_1(L)
    energy: np.ndarray          # E_h
    storage: np.ndarray         # E_h + controller energy
    xc: np.ndarray              # (k, n_c)
    interconnection: np.ndarray  # (k,) |four-term interconnection power| at snapshots
    flux_int: np.ndarray
    diss_int: np.ndarray
    dt: float
    scheme: str
    controller: str = "none"
    passive: bool = True
    max_step_interconnection: float = 0.0
    max_step_increase: float = 0.0   # largest per-step storage increase
    monotone_violations: int = 0
    newton_iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def state(self, k: int) -> BeamState:
        w1, w2, p1, p2 = self.states[k]
        return BeamState(w1, w2, p1, p2, float(self.t[k]))


def integrate(system: BeamSystem, y0: np.ndarray, dt: float, n_steps: int, *, t0: float = 0.0, stride: int = 1,
              scheme: str = "ImplicitMidpoint", newton: NewtonOptions | None = None,
              monotone_rtol: float = 1e-10, progress: Callable[[int, float], None] | None = None) -> Trajectory:
    """Run ``n_steps`` fixed steps and record every ``stride``-th state."""
    if not dt > 0:
        raise ConfigError([("integrator.dt", None, "dt must be positive")])
    stride = max(1, int(stride))
    records = {k: [] for k in ("t", "states", "ports", "traces", "energy", "storage", "xc", "ic")}
    flux_int, diss_int = [], []

    def record(y, t):
        meas = system.T @ y
        xc = system.controller_state(y)
        u = system.controller.inputs(meas, xc, t)
        records["t"].append(t)
        records["states"].append(np.stack(system.fields(y)))
        records["ports"].append(np.concatenate([u, meas[3:6]]))
        records["traces"].append(meas[:3].copy())
        e = system.energy(y)
        records["energy"].append(e)
        records["storage"].append(e + system.controller.storage(meas, xc))
        records["xc"].append(xc.copy())
        records["ic"].append(abs(system.controller.interconnection_power(meas, xc)))

    y = np.asarray(y0, dtype=float).copy()
    t = t0
    record(y, t)
    s_prev = system.storage(y)
    s0 = abs(s_prev)
    f_acc = d_acc = 0.0
    max_ic = 0.0
    max_inc = -math.inf
    violations = 0
    iters = 0
    prev_inc = None
    cache = {}
    for k in range(1, n_steps + 1):
        guess = y + prev_inc if prev_inc is not None else None
        r = _advance(system, scheme, y, t, dt, newton, guess, cache)
        prev_inc = r.y - y
        y = r.y
        t = t0 + k * dt
        f_acc += r.flux
        d_acc += r.dissipation
        max_ic = max(max_ic, r.interconnection)
        iters += r.newton_iterations
        s = system.storage(y)
        inc = s - s_prev
        max_inc = max(max_inc, inc)
        if inc > monotone_rtol * max(s0, 1e-300):
            violations += 1
        s_prev = s
        if k % stride == 0 or k == n_steps:
            record(y, t)
            flux_int.append(f_acc)
            diss_int.append(d_acc)
            f_acc = d_acc = 0.0
            if progress is not None:
                progress(k, t)

    return Trajectory(
        t=np.array(records["t"]),
        states=np.array(records["states"]),
        ports=np.array(records["ports"]),
        traces=np.array(records["traces"]),
        energy=np.array(records["energy"]),
        storage=np.array(records["storage"]),
        xc=np.array(records["xc"]).reshape(len(records["t"]), system.nc),
        interconnection=np.array(records["ic"]),
        flux_int=np.array(flux_int),
        diss_int=np.array(diss_int),
        dt=dt,
        scheme=scheme,
        controller=system.controller.name,
        passive=system.controller.passive,
        max_step_interconnection=max_ic,
        max_step_increase=max_inc if n_steps else 0.0,
        monotone_violations=violations,
        newton_iterations=iters,
    )


def simulate(scenario, progress=None) -> Trajectory:
    """Run a scenario object (see :class:`phbeam.config.ScenarioConfig`)."""
    system = scenario.build_system()
    state0 = scenario.initial_state(system)
    y0 = system.reduce(state0)
    n_steps = int(round(scenario.t_final / scenario.dt))
    traj = integrate(system, y0, scenario.dt, n_steps, stride=scenario.stride, scheme=scenario.scheme,
                     newton=NewtonOptions(tol=scenario.newton_tol, jacobian=scenario.jacobian),
                     progress=progress)
    traj.meta["scenario"] = scenario.name
    return traj
