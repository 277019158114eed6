r"""Summation-by-parts discretisation on a uniform grid.

The first-derivative matrix ``D1`` and the diagonal quadrature ``W`` satisfy

.. math::

    W D_1 + D_1^T W = B, \qquad B = \mathrm{diag}(-1, 0, \dots, 0, 1),

and the second derivative is the wide-stencil square ``D2 = D1 @ D1``. With
these choices every integration by parts used in the energy balances has an
exact discrete counterpart, e.g. for any nodal ``u`` and ``v``

.. math::

    u^T W D_2 v - (D_2 u)^T W v = [u\, D_1 v - (D_1 u)\, v]_0^L .

Boundary terms use the outward convention fixed by ``B``: the right end
counts with ``+1``, the left end with ``-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from phbeam.errors import ConfigError, DimensionError
from phbeam.model import JetPoint, ModelSpec, hamiltonian_density, hamiltonian_partials

MIN_NODES = 9


@dataclass(frozen=True)
class Grid:
    n_nodes: int
    L: float

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < MIN_NODES:
            raise ConfigError([("grid.n_nodes", None, f"need an integer >= {MIN_NODES}, got {self.n_nodes!r}")])
        if not (np.isfinite(self.L) and self.L > 0):
            raise ConfigError([("material.L", None, f"length must be positive, got {self.L!r}")])

    @property
    def h(self) -> float:
        return self.L / (self.n_nodes - 1)

    @cached_property
    def z(self) -> np.ndarray:
        z = np.arange(self.n_nodes) * self.h
        z[-1] = self.L
        return z


# boundary closures of the diagonal-norm operators, left end, in units of 1/h
_CLOSURE_2 = {
    "weights": [0.5],
    "rows": [[-1.0, 1.0]],
    "interior": [-0.5, 0.0, 0.5],
}
_CLOSURE_4 = {
    "weights": [17 / 48, 59 / 48, 43 / 48, 49 / 48],
    "rows": [
        [-24 / 17, 59 / 34, -4 / 17, -3 / 34],
        [-1 / 2, 0.0, 1 / 2],
        [4 / 43, -59 / 86, 0.0, 59 / 86, -4 / 43],
        [3 / 98, 0.0, -59 / 98, 0.0, 32 / 49, -4 / 49],
    ],
    "interior": [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12],
}


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Immutable operator set for one grid.

    ``D1``, ``D2`` and ``B`` are CSR matrices; ``w`` holds the diagonal of ``W``.
    """

    grid: Grid
    order: int
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    w: np.ndarray
    B: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    @cached_property
    def W(self) -> sp.csr_matrix:
        return sp.diags(self.w).tocsr()

    @cached_property
    def D1T(self) -> sp.csr_matrix:
        return self.D1.T.tocsr()

    @cached_property
    def D2T(self) -> sp.csr_matrix:
        return self.D2.T.tocsr()

    @cached_property
    def D3(self) -> sp.csr_matrix:
        return (self.D1 @ self.D2).tocsr()

    def row(self, matrix: str, end: str) -> np.ndarray:
        """Dense row of ``D1``/``D2``/``D3`` at the ``left`` or ``right`` node."""
        idx = _end_index(end, self.n)
        return np.asarray(getattr(self, matrix)[idx].todense()).ravel()

    def check(self, *fields):
        for f in fields:
            if np.shape(f) != (self.n,):
                raise DimensionError(f"field of shape {np.shape(f)} does not match grid with {self.n} nodes")


def _end_index(end: str, n: int) -> int:
    if end == "left":
        return 0
    if end == "right":
        return n - 1
    raise ValueError(f"end must be 'left' or 'right', got {end!r}")


def build_operators(grid: Grid, order: int = 2) -> DiscreteOperators:
    """Diagonal-norm SBP operators with central interior stencils of ``order``."""
    closures = {2: _CLOSURE_2, 4: _CLOSURE_4}
    if order not in closures:
        raise ConfigError([("grid.order", None, f"order must be 2 or 4, got {order!r}")])
    c = closures[order]
    n, h = grid.n_nodes, grid.h
    nb = len(c["rows"])
    if n < 2 * nb + 1:
        raise ConfigError([("grid.n_nodes", None, f"{n} nodes too few for order {order}")])

    D = sp.lil_matrix((n, n))
    half = len(c["interior"]) // 2
    for i in range(nb, n - nb):
        for k, coef in enumerate(c["interior"]):
            if coef:
                D[i, i - half + k] = coef
    for i, row in enumerate(c["rows"]):
        for j, coef in enumerate(row):
            if coef:
                D[i, j] = coef
                D[n - 1 - i, n - 1 - j] = -coef
    D1 = (D.tocsr() / h).tocsr()

    w = np.full(n, h)
    for i, wt in enumerate(c["weights"]):
        w[i] = w[n - 1 - i] = wt * h
    b = np.zeros(n)
    b[0], b[-1] = -1.0, 1.0
    return DiscreteOperators(grid=grid, order=order, D1=D1, D2=(D1 @ D1).tocsr(), w=w, B=sp.diags(b).tocsr())


def quadrature(f, ops: DiscreteOperators) -> float:
    ops.check(f)
    return float(ops.w @ f)


def apply_RA(eta, coeff, ops: DiscreteOperators) -> np.ndarray:
    """Second-order dissipation operator ``D1 (coeff * D1 eta)``."""
    coeff = np.broadcast_to(coeff, (ops.n,))
    ops.check(eta, coeff)
    return ops.D1 @ (coeff * (ops.D1 @ eta))


def apply_RB(eta, coeff, ops: DiscreteOperators) -> np.ndarray:
    """Fourth-order dissipation operator ``D2 (coeff * D2 eta)``."""
    coeff = np.broadcast_to(coeff, (ops.n,))
    ops.check(eta, coeff)
    return ops.D2 @ (coeff * (ops.D2 @ eta))


def nodal_jets(w1, w2, p1, p2, ops: DiscreteOperators) -> JetPoint:
    ops.check(w1, w2, p1, p2)
    return JetPoint(w1=w1, w2=w2, p1=p1, p2=p2, w1_1=ops.D1 @ w1, w2_1=ops.D1 @ w2, w1_11=ops.D2 @ w1)


class FieldSet(NamedTuple):
    w1: np.ndarray
    w2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray


class FieldPair(NamedTuple):
    """One value per deflection field."""

    w1: float
    w2: float


def _fields(state):
    return state.w1, state.w2, state.p1, state.p2


def discrete_energy(model: ModelSpec, state, ops: DiscreteOperators) -> float:
    """``E_h = sum(W * H(jets))`` for anything with ``w1, w2, p1, p2`` fields."""
    return quadrature(hamiltonian_density(model, nodal_jets(*_fields(state), ops)), ops)


def variational_derivative(model: ModelSpec, state, ops: DiscreteOperators) -> FieldSet:
    """Nodewise ``d_a H - D1 (d^1_a H) + D2 (d^11_a H)`` for each field."""
    d = hamiltonian_partials(model, nodal_jets(*_fields(state), ops))
    return FieldSet(
        w1=d.dH_dw1 - ops.D1 @ d.dH_dw1_1 + ops.D2 @ d.dH_dw1_11,
        w2=d.dH_dw2 - ops.D1 @ d.dH_dw2_1,
        p1=np.asarray(d.dH_dp1),
        p2=np.asarray(d.dH_dp2),
    )


def energy_gradient(model: ModelSpec, state, ops: DiscreteOperators) -> FieldSet:
    """Exact gradient of :func:`discrete_energy` with respect to the nodal values.

    Equals ``W * variational_derivative`` plus terms supported on the
    boundary stencils (see :func:`boundary_delta1`, :func:`boundary_delta2`).
    """
    d = hamiltonian_partials(model, nodal_jets(*_fields(state), ops))
    w = ops.w
    return FieldSet(
        w1=w * d.dH_dw1 + ops.D1T @ (w * d.dH_dw1_1) + ops.D2T @ (w * d.dH_dw1_11),
        w2=w * d.dH_dw2 + ops.D1T @ (w * d.dH_dw2_1),
        p1=w * d.dH_dp1,
        p2=w * d.dH_dp2,
    )


def boundary_delta1(model: ModelSpec, state, ops: DiscreteOperators, end: str) -> FieldPair:
    """``d^1_a H - D1 (d^11_a H)`` at the boundary node ``end``.

    At the right end of the nonlinear beam this is the shear force and the
    normal force.
    """
    i = _end_index(end, ops.n)
    d = hamiltonian_partials(model, nodal_jets(*_fields(state), ops))
    return FieldPair(
        w1=float(d.dH_dw1_1[i] - (ops.D1 @ d.dH_dw1_11)[i]),
        w2=float(d.dH_dw2_1[i]),
    )


def boundary_delta2(model: ModelSpec, state, ops: DiscreteOperators, end: str) -> FieldPair:
    """``d^11_a H`` at the boundary node; the bending moment for ``w1``."""
    i = _end_index(end, ops.n)
    d = hamiltonian_partials(model, nodal_jets(*_fields(state), ops))
    # H carries no w2_11 dependence
    return FieldPair(w1=float(d.dH_dw1_11[i]), w2=0.0)


def boundary_pairing(model: ModelSpec, state, direction, ops: DiscreteOperators) -> float:
    """``[v . delta1 + (D1 v) . delta2]_0^L`` for a deflection direction ``v``.

    ``direction`` carries ``w1`` and ``w2`` perturbation fields. This is the
    boundary part of the first variation of :func:`discrete_energy`.
    """
    total = 0.0
    for end, sign in (("left", -1.0), ("right", 1.0)):
        i = _end_index(end, ops.n)
        d1 = boundary_delta1(model, state, ops, end)
        d2 = boundary_delta2(model, state, ops, end)
        v1, v2 = direction.w1, direction.w2
        total += sign * (v1[i] * d1.w1 + v2[i] * d1.w2 + (ops.D1 @ v1)[i] * d2.w1 + (ops.D1 @ v2)[i] * d2.w2)
    return total


def functional_variation(gradient: np.ndarray, ops: DiscreteOperators) -> np.ndarray:
    """Discrete variational derivative ``W^-1 grad F`` of a discrete functional."""
    ops.check(gradient)
    return gradient / ops.w


def total_derivative_gradient(df_dw, df_dw_1, ops: DiscreteOperators) -> np.ndarray:
    """Gradient of ``sum(W * D1 f)`` where ``f`` is nodal in ``(w, D1 w)``.

    ``df_dw``, ``df_dw_1`` are the nodal partials of ``f``. Since
    ``D1^T W 1 = e_L - e_0`` the result is supported on the boundary stencils
    only, which is the discrete form of a total derivative being a null
    Lagrangian.
    """
    ones_flux = ops.D1T @ ops.w
    return df_dw * ones_flux + ops.D1T @ (df_dw_1 * ones_flux)
