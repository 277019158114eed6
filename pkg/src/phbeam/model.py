"""Beam models: Hamiltonian densities, their jet partials and boundary forces.

Three variants share the jet coordinates ``(w1, w2, p1, p2, w1_1, w2_1, w1_11)``:

* ``LINEAR_VISCOUS`` -- linearised beam, pointwise viscous damping.
* ``NONLINEAR_UNDAMPED`` -- von Karman strain, no dissipation.
* ``NONLINEAR_STRUCTURAL`` -- von Karman strain with structural (differential)
  damping ``-alpha1 * dw1/dt_1111`` and ``alpha2 * dw2/dt_11``.

All functions broadcast over numpy arrays, so a :class:`JetPoint` may hold one
value per grid node.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from phbeam.errors import DomainError


class ModelVariant(enum.Enum):
    LINEAR_VISCOUS = "LinearViscous"
    NONLINEAR_UNDAMPED = "NonlinearUndamped"
    NONLINEAR_STRUCTURAL = "NonlinearStructural"

    @classmethod
    def parse(cls, text: str) -> "ModelVariant":
        for v in cls:
            if text in (v.value, v.name):
                return v
        raise ValueError(f"unknown model variant {text!r}")

    @property
    def is_nonlinear(self) -> bool:
        return self is not ModelVariant.LINEAR_VISCOUS


@dataclass(frozen=True)
class MaterialParams:
    """Material and geometry data in SI units.

    ``alpha1``/``alpha2`` are the transverse/axial damping coefficients; their
    meaning (viscous or structural) depends on the model variant.
    """

    E_times_I: float
    E_times_A: float
    rho_times_A: float
    L: float
    alpha1: float = 0.0
    alpha2: float = 0.0

    def __post_init__(self):
        for name in ("E_times_I", "E_times_A", "rho_times_A", "L"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be positive and finite, got {val!r}")
        for name in ("alpha1", "alpha2"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise DomainError(f"{name} must be nonnegative and finite, got {val!r}")


@dataclass(frozen=True)
class ModelSpec:
    variant: ModelVariant
    material: MaterialParams

    @property
    def structural_damping(self) -> tuple[float, float]:
        """``(alpha1, alpha2)`` acting through differential operators."""
        if self.variant is ModelVariant.NONLINEAR_STRUCTURAL:
            return self.material.alpha1, self.material.alpha2
        return 0.0, 0.0

    @property
    def viscous_damping(self) -> tuple[float, float]:
        """``(alpha1, alpha2)`` acting pointwise on the velocities."""
        if self.variant is ModelVariant.LINEAR_VISCOUS:
            return self.material.alpha1, self.material.alpha2
        return 0.0, 0.0


_JET_FIELDS = ("w1", "w2", "p1", "p2", "w1_1", "w2_1", "w1_11")


@dataclass(frozen=True)
class JetPoint:
    """Field values and spatial derivatives at one location (or per node)."""

    w1: float | np.ndarray = 0.0
    w2: float | np.ndarray = 0.0
    p1: float | np.ndarray = 0.0
    p2: float | np.ndarray = 0.0
    w1_1: float | np.ndarray = 0.0
    w2_1: float | np.ndarray = 0.0
    w1_11: float | np.ndarray = 0.0

    @property
    def shape(self):
        return np.broadcast_shapes(*(np.shape(getattr(self, f)) for f in _JET_FIELDS))

    def check_finite(self):
        for name in _JET_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"jet variable {name} is not finite")


@dataclass(frozen=True)
class HamiltonianPartials:
    dH_dp1: float | np.ndarray
    dH_dp2: float | np.ndarray
    dH_dw1_1: float | np.ndarray
    dH_dw2_1: float | np.ndarray
    dH_dw1_11: float | np.ndarray
    dH_dw1: float | np.ndarray
    dH_dw2: float | np.ndarray


@dataclass(frozen=True)
class HamiltonianHessian:
    """Second partials with respect to ``(w1_1, w2_1, w1_11)``.

    Cross terms with ``w1_11`` vanish for every variant and are not stored.
    """

    d11: float | np.ndarray  # w1_1, w1_1
    d12: float | np.ndarray  # w1_1, w2_1
    d22: float | np.ndarray  # w2_1, w2_1
    d33: float | np.ndarray  # w1_11, w1_11


@dataclass(frozen=True)
class InternalForces:
    Q: float | np.ndarray
    N: float | np.ndarray
    M: float | np.ndarray
    variant_corrected: bool = False


def hamiltonian_density(model: ModelSpec, q: JetPoint):
    """Energy density [J/m] at ``q``."""
    q.check_finite()
    m = model.material
    kinetic = (np.square(q.p1) + np.square(q.p2)) / (2.0 * m.rho_times_A)
    bending = 0.5 * m.E_times_I * np.square(q.w1_11)
    if model.variant.is_nonlinear:
        s1 = np.square(q.w1_1)
        axial = 0.5 * m.E_times_A * (np.square(q.w2_1) + 0.25 * s1 * s1 + q.w2_1 * s1)
    else:
        axial = 0.5 * m.E_times_A * np.square(q.w2_1)
    return kinetic + axial + bending


def hamiltonian_partials(model: ModelSpec, q: JetPoint) -> HamiltonianPartials:
    q.check_finite()
    m = model.material
    EA, EI = m.E_times_A, m.E_times_I
    zero = np.zeros(q.shape)
    if model.variant.is_nonlinear:
        dw1_1 = 0.5 * EA * q.w1_1**3 + EA * q.w2_1 * q.w1_1
        dw2_1 = EA * q.w2_1 + 0.5 * EA * np.square(q.w1_1)
    else:
        dw1_1 = zero
        dw2_1 = EA * q.w2_1
    return HamiltonianPartials(
        dH_dp1=q.p1 / m.rho_times_A + zero,
        dH_dp2=q.p2 / m.rho_times_A + zero,
        dH_dw1_1=dw1_1 + zero,
        dH_dw2_1=dw2_1 + zero,
        dH_dw1_11=EI * q.w1_11 + zero,
        dH_dw1=zero,
        dH_dw2=zero.copy(),
    )


def hamiltonian_hessian(model: ModelSpec, q: JetPoint) -> HamiltonianHessian:
    m = model.material
    EA, EI = m.E_times_A, m.E_times_I
    zero = np.zeros(q.shape)
    if model.variant.is_nonlinear:
        return HamiltonianHessian(
            d11=1.5 * EA * np.square(q.w1_1) + EA * q.w2_1,
            d12=EA * q.w1_1 + zero,
            d22=EA + zero,
            d33=EI + zero,
        )
    return HamiltonianHessian(d11=zero, d12=zero.copy(), d22=EA + zero, d33=EI + zero)


def internal_forces(model: ModelSpec, q: JetPoint, w1_111) -> InternalForces:
    """Shear force, normal force and bending moment without damping terms.

    For constant ``EI`` the total derivative of the moment is ``EI * w1_111``.
    """
    if not np.all(np.isfinite(w1_111)):
        raise DomainError("w1_111 is not finite")
    d = hamiltonian_partials(model, q)
    EI = model.material.E_times_I
    return InternalForces(Q=d.dH_dw1_1 - EI * w1_111, N=d.dH_dw2_1, M=d.dH_dw1_11)


def corrected_boundary_forces(model: ModelSpec, q: JetPoint, w1_111, dotw1_111, dotw2_1, dotw1_11) -> InternalForces:
    """Boundary forces including the structural-damping contributions.

    Reduces to :func:`internal_forces` unless the variant is
    ``NONLINEAR_STRUCTURAL`` with nonzero damping.
    """
    for val in (dotw1_111, dotw2_1, dotw1_11):
        if not np.all(np.isfinite(val)):
            raise DomainError("velocity jet is not finite")
    f = internal_forces(model, q, w1_111)
    a1, a2 = model.structural_damping
    return InternalForces(
        Q=f.Q - a1 * dotw1_111,
        N=f.N + a2 * dotw2_1,
        M=f.M + a1 * dotw1_11,
        variant_corrected=True,
    )
